"""Command-line front door: caption, infill, batch, eval, trace.

Configuration precedence is flags > config file > built-in defaults, and
the effective configuration is echoed into every output record. All
outputs are line-delimited JSON with documented schemas; report commands
can render matplotlib figures to files next to the delimited output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Sequence

from . import plots, trace
from .bridge import RemoteBackend, StdioTransport, TcpTransport
from .control import ControlTask, InfillSpec, build_infill_task, parse_control_tag
from .core import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_GAMMA_CONTROL,
    DEFAULT_ITERATIONS,
    DEFAULT_K,
    DEFAULT_LENGTH,
    DEFAULT_PROMPT,
    FusionWeights,
    RunConfig,
    RunResult,
)
from .engine import run
from .errors import CapolishError, ConfigError
from .metrics import CaptionSet, bleu_n, div_n, matcher_score_summary, vocab_size
from .synthetic import load_backend_dir

ENDPOINT_ENV = "CAPOLISH_ENDPOINT"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_SCORER = 3


def _fail(code: str, message: str, exit_code: int) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")
    return exit_code


def make_backend(spec: str, task: ControlTask | None = None, image: str | None = None):
    """Build a backend from a selector string.

    ``synthetic:DIR`` loads fixture tables; ``tcp:HOST:PORT`` and
    ``stdio:CMD [ARGS...]`` open remote sessions (registering ``image``
    when given).
    """
    kind, _, rest = spec.partition(":")
    if kind == "synthetic":
        if not rest:
            raise ValueError("synthetic backend needs a fixture directory")
        return load_backend_dir(rest, task)
    tag = task.tag() if task is not None else "none"
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError("tcp backend needs HOST:PORT")
        backend = RemoteBackend(TcpTransport(host, int(port)), control_task_tag=tag)
    elif kind == "stdio":
        if not rest:
            raise ValueError("stdio backend needs a command")
        backend = RemoteBackend(StdioTransport(rest.split()), control_task_tag=tag)
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    if task is not None and task.kind in ("style", "pos"):
        backend.require_op("control")
    if image is not None:
        backend.register_image(path=image)
    return backend


_CONFIG_KEYS = {
    "length": int,
    "k": int,
    "iters": int,
    "alpha": float,
    "beta": float,
    "gamma": float,
    "match_temperature": float,
    "control_temperature": float,
    "order": str,
    "reshuffle_each_iter": bool,
    "seed": int,
    "prompt": str,
    "init": str,
    "prompt_in_match": bool,
    "keep_incumbent": bool,
    "renormalize_topk": bool,
    "clamp_k": bool,
    "control": str,
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text("utf-8"))
    unknown = set(data) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_config(flags: dict, file_values: dict) -> tuple[RunConfig, ControlTask | None]:
    """Merge defaults, config-file values and explicit flags into a RunConfig."""
    values = {
        "length": DEFAULT_LENGTH,
        "k": DEFAULT_K,
        "iters": DEFAULT_ITERATIONS,
        "alpha": DEFAULT_ALPHA,
        "beta": DEFAULT_BETA,
        "gamma": None,
        "match_temperature": 1.0,
        "control_temperature": 1.0,
        "order": "shuffle",
        "reshuffle_each_iter": False,
        "seed": 0,
        "prompt": DEFAULT_PROMPT,
        "init": "all_mask",
        "prompt_in_match": True,
        "keep_incumbent": False,
        "renormalize_topk": False,
        "clamp_k": True,
        "control": None,
    }
    values.update(file_values)
    values.update({k: v for k, v in flags.items() if v is not None})
    task = parse_control_tag(values["control"])
    gamma = values["gamma"]
    if gamma is None:
        gamma = DEFAULT_GAMMA_CONTROL if task is not None else 0.0
    weights = FusionWeights(
        alpha=values["alpha"],
        beta=values["beta"],
        gamma=gamma,
        match_temperature=values["match_temperature"],
        control_temperature=values["control_temperature"],
    )
    config = RunConfig(
        n=values["length"],
        k=values["k"],
        iterations=values["iters"],
        weights=weights,
        order_mode=values["order"],
        order_reshuffle_each_iter=values["reshuffle_each_iter"],
        seed=values["seed"],
        prompt_text=values["prompt"],
        init_mode=values["init"],
        include_prompt_in_match_text=values["prompt_in_match"],
        control_task=task,
        keep_incumbent=values["keep_incumbent"],
        renormalize_topk=values["renormalize_topk"],
        clamp_k=values["clamp_k"],
    )
    return config, task


def caption_record(result: RunResult, image_id: str, backend) -> dict:
    final_tokens = list(result.prompt_ids) + list(result.final_slots)
    return {
        "image": image_id,
        "seed": result.config.seed,
        "order": result.config.order_mode,
        "caption": result.best_text,
        "slots": list(result.best_slots),
        "final_caption": backend.vocab.detokenize(
            final_tokens
            if result.config.include_prompt_in_match_text
            else list(result.final_slots)
        ),
        "best_iteration": result.best_iteration,
        "iteration_scores": [
            s.sentence_match_score for s in result.per_iteration
        ],
        "calls": result.calls.as_dict(),
        "config": trace.config_to_dict(result.config),
    }


def _run_with_trace(config: RunConfig, backend, trace_out: str | None) -> RunResult:
    if trace_out is None:
        return run(config, backend)
    with trace.TraceWriter(trace_out) as writer:
        writer.write_header(config, backend.manifest().hash())
        result = run(
            config,
            backend,
            on_record=writer.on_record,
            on_snapshot=writer.on_snapshot,
        )
        writer.write_summary(result)
    return result


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", default=os.environ.get(ENDPOINT_ENV))
    p.add_argument("--image", help="image path to register with a remote backend")
    p.add_argument("--image-id", help="image id recorded in outputs")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--length", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--match-temperature", dest="match_temperature", type=float)
    p.add_argument("--control-temperature", dest="control_temperature", type=float)
    p.add_argument("--order", choices=["sequential", "shuffle"])
    p.add_argument(
        "--reshuffle-each-iter", dest="reshuffle_each_iter",
        action="store_const", const=True,
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--prompt")
    p.add_argument("--init", choices=["all_mask", "random_tokens"])
    p.add_argument(
        "--no-prompt-in-match", dest="prompt_in_match",
        action="store_const", const=False,
    )
    p.add_argument(
        "--keep-incumbent", dest="keep_incumbent", action="store_const", const=True
    )
    p.add_argument(
        "--renormalize-topk", dest="renormalize_topk",
        action="store_const", const=True,
    )
    p.add_argument(
        "--no-clamp-k", dest="clamp_k", action="store_const", const=False
    )
    p.add_argument("--control")
    p.add_argument("--trace-out")
    p.add_argument("--records-out", help="append the caption record to this file")


def _flag_values(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k, None) for k in _CONFIG_KEYS}


def _emit_record(record: dict, records_out: str | None) -> None:
    line = json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    sys.stdout.write(line + "\n")
    if records_out:
        with open(records_out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _close_backend(backend) -> None:
    close = getattr(backend, "close", None)
    if close is not None:
        close()


def cmd_caption(args: argparse.Namespace) -> int:
    if args.backend is None:
        return _fail("CODE_BACKEND", "no backend given (flag or " + ENDPOINT_ENV + ")", EXIT_CONFIG)
    config, task = resolve_config(_flag_values(args), _load_config_file(args.config))
    backend = make_backend(args.backend, task, args.image)
    try:
        result = _run_with_trace(config, backend, args.trace_out)
        image_id = args.image_id or args.image or args.backend
        _emit_record(caption_record(result, image_id, backend), args.records_out)
    finally:
        _close_backend(backend)
    return EXIT_OK


def cmd_infill(args: argparse.Namespace) -> int:
    if args.backend is None:
        return _fail("CODE_BACKEND", "no backend given (flag or " + ENDPOINT_ENV + ")", EXIT_CONFIG)
    flag_values = _flag_values(args)
    flag_values["control"] = None
    config, _ = resolve_config(flag_values, _load_config_file(args.config))
    backend = make_backend(args.backend, None, args.image)
    try:
        reference = backend.encode(args.text)
        editable: set[int] = set()
        if args.mask_positions:
            editable.update(int(p) for p in args.mask_positions.split(","))
        if args.mask_words:
            wanted = {w.lower() for w in args.mask_words.split(",")}
            surfaces = backend.vocab.surface
            editable.update(
                i for i, t in enumerate(reference) if surfaces[t].lower() in wanted
            )
        if not editable:
            return _fail("CODE_NO_MASK", "no masked positions resolved", EXIT_CONFIG)
        spec = InfillSpec(
            reference_tokens=tuple(reference), editable_positions=frozenset(editable)
        )
        config = build_infill_task(spec, config)
        result = _run_with_trace(config, backend, args.trace_out)
        infilled = [
            {"position": i, "word": backend.vocab.surface[result.best_slots[i]]}
            for i in sorted(editable)
        ]
        highlighted = " ".join(
            f"[{backend.vocab.surface[t]}]" if i in editable else backend.vocab.surface[t]
            for i, t in enumerate(result.best_slots)
        )
        record = caption_record(result, args.image_id or args.image or args.backend, backend)
        record["infilled"] = infilled
        record["highlighted"] = highlighted
        _emit_record(record, args.records_out)
    finally:
        _close_backend(backend)
    return EXIT_OK


def _batch_worker_backend(local: threading.local, registry: list, lock, backend_spec: str, task, image):
    key = (backend_spec, image)
    cache = getattr(local, "backends", None)
    if cache is None:
        cache = local.backends = {}
    if key not in cache:
        backend = make_backend(backend_spec, task, image)
        cache[key] = backend
        with lock:
            registry.append(backend)
    return cache[key]


def cmd_batch(args: argparse.Namespace) -> int:
    spec = json.loads(Path(args.jobspec).read_text("utf-8"))
    backend_spec = spec.get("backend")
    if backend_spec is None:
        return _fail("CODE_BACKEND", "jobspec needs a 'backend'", EXIT_CONFIG)
    images = spec.get("images", [])
    seeds = spec.get("seeds", [0])
    overrides = spec.get("config", {})
    output_dir = Path(spec.get("output_dir", "."))
    output_dir.mkdir(parents=True, exist_ok=True)
    completed_path = output_dir / "completed.txt"
    done = set()
    if completed_path.exists():
        done = set(completed_path.read_text("utf-8").split())

    jobs = []
    for entry in images:
        if isinstance(entry, str):
            entry = {"id": entry}
        image_id = entry["id"]
        per_image_backend = entry.get("backend", backend_spec)
        image_path = entry.get("path")
        for seed in seeds:
            key = f"{image_id}:{seed}"
            if key not in done:
                jobs.append((image_id, per_image_backend, image_path, seed))

    results: dict[str, dict] = {}
    failures: dict[str, str] = {}
    lock = threading.Lock()
    local = threading.local()
    opened_backends: list = []

    def one_job(image_id: str, spec_str: str, image_path: str | None, seed: int):
        config, task = resolve_config({"seed": seed}, overrides)
        backend = _batch_worker_backend(
            local, opened_backends, lock, spec_str, task, image_path
        )
        result = run(config, backend)
        return caption_record(result, image_id, backend)

    max_workers = args.jobs or os.cpu_count() or 1
    try:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {
                pool.submit(one_job, image_id, spec_str, image_path, seed): (image_id, seed)
                for image_id, spec_str, image_path, seed in jobs
            }
            for future in as_completed(futures):
                image_id, seed = futures[future]
                key = f"{image_id}:{seed}"
                try:
                    record = future.result()
                except Exception as exc:  # noqa: BLE001 - per-image isolation
                    with lock:
                        failures[key] = f"{type(exc).__name__}: {exc}"
                    continue
                with lock:
                    results[key] = record
                    with completed_path.open("a", encoding="utf-8") as fh:
                        fh.write(key + "\n")
    finally:
        for backend in opened_backends:
            _close_backend(backend)

    # Merge all records (old and new) deterministically.
    captions_path = output_dir / "captions.jsonl"
    existing: dict[str, dict] = {}
    if captions_path.exists():
        for line in captions_path.read_text("utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                existing[f"{rec['image']}:{rec['seed']}"] = rec
    existing.update(results)
    ordered = sorted(existing.values(), key=lambda r: (str(r["image"]), r["seed"]))
    tmp = captions_path.with_suffix(".jsonl.tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for rec in ordered:
            fh.write(
                json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
                + "\n"
            )
    os.replace(tmp, captions_path)

    totals = {"mlm_calls": 0, "match_calls": 0, "control_calls": 0}
    for rec in ordered:
        for k in totals:
            totals[k] += rec["calls"][k]
    summary = {
        "jobs": len(jobs),
        "completed": len(results),
        "skipped": len(done),
        "failed": len(failures),
        "failures": failures,
        "call_totals": totals,
        "captions": str(captions_path),
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_FAILURE if failures else EXIT_OK


def _load_caption_records(paths: Sequence[str]) -> list[dict]:
    records = []
    for path in paths:
        for line in Path(path).read_text("utf-8").splitlines():
            if line.strip():
                records.append(json.loads(line))
    return records


def cmd_eval(args: argparse.Namespace) -> int:
    records = _load_caption_records(args.captions)
    if not records:
        return _fail("CODE_EMPTY", "no caption records to evaluate", EXIT_CONFIG)
    field = "caption" if args.select == "best" else "final_caption"
    texts = [r.get(field) or r["caption"] for r in records]
    caption_set = CaptionSet.from_texts(texts)
    report: dict[str, float] = {
        "captions": float(len(texts)),
        "div_1": div_n(caption_set, 1, on_short="skip"),
        "div_2": div_n(caption_set, 2, on_short="skip"),
        "vocab": float(vocab_size([caption_set])),
    }
    best_scores = [
        r["iteration_scores"][r["best_iteration"]]
        for r in records
        if r.get("iteration_scores")
    ]
    if best_scores:
        summary = matcher_score_summary(best_scores)
        report["match_mean"] = summary["mean"]
        report["match_stddev"] = summary["stddev"]
    if args.references:
        refs = json.loads(Path(args.references).read_text("utf-8"))
        scored = [
            bleu_n(r[field], refs[str(r["image"])], args.bleu_n)
            for r in records
            if str(r["image"]) in refs
        ]
        if scored:
            report[f"bleu_{args.bleu_n}"] = sum(scored) / len(scored)
    for name in sorted(report):
        sys.stdout.write(f"{name}\t{report[name]:.6f}\n")
    if args.out:
        Path(args.out).write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n", "utf-8"
        )
    if args.figure:
        plots.save_metrics_bar(
            {k: v for k, v in report.items() if k != "captions"}, args.figure
        )
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    records = trace.read_trace(args.trace)
    rows = trace.iteration_series(records)
    if not rows:
        return _fail("CODE_EMPTY", "trace has no iteration records", EXIT_CONFIG)
    header = "iteration\tmatch_score\tbest_so_far\tchanged"
    lines = [header] + [
        f"{r['iteration']}\t{r['match_score']!r}\t{r['best_so_far']!r}\t{int(r['changed'])}"
        for r in rows
    ]
    text = "\n".join(lines) + "\n"
    if args.plot_data:
        Path(args.plot_data).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    if args.figure:
        plots.save_score_curve(rows, args.figure)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capolish",
        description="Polish fixed-length token canvases with fused "
        "fluency/match/control scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("caption", help="caption one image")
    _add_run_flags(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("infill", help="rewrite masked positions of a reference text")
    _add_run_flags(p)
    p.add_argument("--text", required=True)
    p.add_argument("--mask-positions", help="comma-separated slot indices")
    p.add_argument("--mask-words", help="comma-separated words to re-open")
    p.set_defaults(func=cmd_infill)

    p = sub.add_parser("batch", help="run a jobspec of images x seeds")
    p.add_argument("--jobspec", required=True)
    p.add_argument("--jobs", type=int, help="worker cap (default: cpu count)")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("eval", help="diversity/accuracy report over caption files")
    p.add_argument("--captions", nargs="+", required=True)
    p.add_argument("--references", help="JSON map image id -> reference captions")
    p.add_argument("--bleu-n", dest="bleu_n", type=int, default=4)
    p.add_argument("--select", choices=["best", "final"], default="best")
    p.add_argument("--out", help="machine-readable report path")
    p.add_argument("--figure", help="render the report as a bar chart PNG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="export per-iteration score series")
    p.add_argument("--trace", required=True)
    p.add_argument("--plot-data", dest="plot_data", help="write TSV here")
    p.add_argument("--figure", help="render the score curve PNG")
    p.set_defaults(func=cmd_trace)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(exc.issues[0].code, str(exc), EXIT_CONFIG)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail("CODE_USAGE", str(exc), EXIT_CONFIG)
    except CapolishError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_SCORER)


if __name__ == "__main__":
    sys.exit(main())
