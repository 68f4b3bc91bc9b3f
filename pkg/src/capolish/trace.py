"""Line-delimited run traces: one JSON object per line, UTF-8.

A trace starts with a header (schema version, config echo, backend
manifest hash), then carries one ``candidates`` record per visited
position and one ``iteration`` record per iteration, and ends with a
``summary``. Identical runs produce byte-identical traces; keys are
sorted and floats use Python's shortest round-trip representation.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable

from . import rng
from .core import CandidateSet, IterationSnapshot, RunConfig, RunResult

SCHEMA = "capolish-trace/1"


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_to_dict(config: RunConfig) -> dict:
    w = config.weights
    task = config.control_task
    task_dict = None
    if task is not None:
        task_dict = {"kind": task.kind, "tag": task.tag()}
        if task.kind == "length":
            task_dict["target_length"] = task.target_length
        elif task.kind == "infill":
            task_dict["reference_tokens"] = list(task.infill.reference_tokens)
            task_dict["editable_positions"] = sorted(task.infill.editable_positions)
    return {
        "n": config.n,
        "k": config.k,
        "iterations": config.iterations,
        "alpha": w.alpha,
        "beta": w.beta,
        "gamma": w.gamma,
        "match_temperature": w.match_temperature,
        "control_temperature": w.control_temperature,
        "order_mode": config.order_mode,
        "order_reshuffle_each_iter": config.order_reshuffle_each_iter,
        "seed": config.seed,
        "prompt_text": config.prompt_text,
        "init_mode": config.init_mode,
        "include_prompt_in_match_text": config.include_prompt_in_match_text,
        "keep_incumbent": config.keep_incumbent,
        "renormalize_topk": config.renormalize_topk,
        "clamp_k": config.clamp_k,
        "control_task": task_dict,
    }


def header_record(config: RunConfig, manifest_hash: str) -> dict:
    return {
        "type": "header",
        "schema": SCHEMA,
        "config": config_to_dict(config),
        "backend_manifest_hash": manifest_hash,
        "rng": rng.ALGORITHM,
    }


def candidates_record(iteration: int, record: CandidateSet) -> dict:
    return {
        "type": "candidates",
        "iteration": iteration,
        "position": record.position,
        "token_ids": list(record.token_ids),
        "p_fluency": list(record.p_fluency),
        "p_match": list(record.p_match),
        "p_control": list(record.p_control),
        "fused": list(record.fused),
        "chosen": record.chosen,
    }


def iteration_record(snapshot: IterationSnapshot) -> dict:
    return {
        "type": "iteration",
        "iteration": snapshot.iteration,
        "slots_after": list(snapshot.slots_after),
        "match_score": snapshot.sentence_match_score,
        "changed": snapshot.changed,
    }


def summary_record(result: RunResult) -> dict:
    return {
        "type": "summary",
        "best_iteration": result.best_iteration,
        "best_slots": list(result.best_slots),
        "best_text": result.best_text,
        "prompt_ids": list(result.prompt_ids),
        "calls": result.calls.as_dict(),
    }


class TraceWriter:
    """Stream trace records to a file as the engine produces them."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh: IO[str] = self.path.open("w", encoding="utf-8", newline="\n")

    def _emit(self, record: dict) -> None:
        self._fh.write(_dump(record) + "\n")
        self._fh.flush()

    def write_header(self, config: RunConfig, manifest_hash: str) -> None:
        self._emit(header_record(config, manifest_hash))

    def on_record(self, iteration: int, record: CandidateSet) -> None:
        self._emit(candidates_record(iteration, record))

    def on_snapshot(self, snapshot: IterationSnapshot) -> None:
        self._emit(iteration_record(snapshot))

    def write_summary(self, result: RunResult) -> None:
        self._emit(summary_record(result))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_trace(result: RunResult, path: str | Path) -> None:
    """Serialize a completed run; byte-identical to the streamed trace."""
    with TraceWriter(path) as writer:
        writer.write_header(result.config, result.manifest_hash)
        for snapshot in result.per_iteration:
            for record in snapshot.candidate_records:
                writer.on_record(snapshot.iteration, record)
            writer.on_snapshot(snapshot)
        writer.write_summary(result)


def read_trace(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: bad trace line: {exc}") from exc
    if not records or records[0].get("schema") != SCHEMA:
        raise ValueError(f"{path}: not a {SCHEMA} trace")
    return records


def iteration_series(records: Iterable[dict]) -> list[dict]:
    """Plot-ready per-iteration rows: score and the best seen so far."""
    rows = []
    best = None
    for rec in records:
        if rec.get("type") != "iteration":
            continue
        score = rec["match_score"]
        best = score if best is None or score > best else best
        rows.append(
            {
                "iteration": rec["iteration"],
                "match_score": score,
                "best_so_far": best,
                "changed": rec["changed"],
            }
        )
    return rows
