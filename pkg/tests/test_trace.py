from __future__ import annotations

import json

import pytest

from capolish.core import FusionWeights, RunConfig
from capolish.engine import run
from capolish.trace import (
    SCHEMA,
    TraceWriter,
    iteration_series,
    read_trace,
    write_trace,
)

CONFIG = RunConfig(
    n=3,
    k=7,
    iterations=4,
    weights=FusionWeights(alpha=0.02, beta=2.0),
    order_mode="shuffle",
    seed=9,
    prompt_text="",
)


def run_with_stream(backend, path):
    with TraceWriter(path) as writer:
        writer.write_header(CONFIG, backend.manifest().hash())
        result = run(
            CONFIG, backend, on_record=writer.on_record, on_snapshot=writer.on_snapshot
        )
        writer.write_summary(result)
    return result


class TestTraceFile:
    def test_streamed_equals_post_hoc(self, toy7, tmp_path):
        result = run_with_stream(toy7, tmp_path / "streamed.jsonl")
        write_trace(result, tmp_path / "posthoc.jsonl")
        assert (tmp_path / "streamed.jsonl").read_bytes() == (
            tmp_path / "posthoc.jsonl"
        ).read_bytes()

    def test_two_runs_byte_identical(self, toy7, tmp_path):
        run_with_stream(toy7, tmp_path / "a.jsonl")
        run_with_stream(toy7, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_structure(self, toy7, tmp_path):
        path = tmp_path / "trace.jsonl"
        result = run_with_stream(toy7, path)
        records = read_trace(path)
        header = records[0]
        assert header["schema"] == SCHEMA
        assert header["config"]["k"] == 7
        assert header["config"]["alpha"] == 0.02
        assert header["backend_manifest_hash"] == toy7.manifest().hash()
        assert header["rng"] == "splitmix64"
        kinds = [r["type"] for r in records]
        assert kinds.count("iteration") == CONFIG.iterations
        assert kinds.count("candidates") == CONFIG.iterations * CONFIG.n
        assert kinds[-1] == "summary"
        summary = records[-1]
        assert summary["best_iteration"] == result.best_iteration
        assert summary["calls"] == result.calls.as_dict()

    def test_candidate_records_complete(self, toy7, tmp_path):
        path = tmp_path / "trace.jsonl"
        run_with_stream(toy7, path)
        for rec in read_trace(path):
            if rec["type"] != "candidates":
                continue
            k = len(rec["token_ids"])
            for field in ("p_fluency", "p_match", "p_control", "fused"):
                assert len(rec[field]) == k
            assert 0 <= rec["chosen"] < k

    def test_read_rejects_non_trace(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type":"header","schema":"other/9"}\n', "utf-8")
        with pytest.raises(ValueError):
            read_trace(path)
        path.write_text("not json\n", "utf-8")
        with pytest.raises(ValueError):
            read_trace(path)


class TestIterationSeries:
    def test_best_so_far_monotone_and_scores_match(self, toy7, tmp_path):
        path = tmp_path / "trace.jsonl"
        result = run_with_stream(toy7, path)
        rows = iteration_series(read_trace(path))
        assert len(rows) == CONFIG.iterations
        scores = [s.sentence_match_score for s in result.per_iteration]
        assert [r["match_score"] for r in rows] == scores
        best = [r["best_so_far"] for r in rows]
        assert best == sorted(best) or all(
            best[i] >= best[i - 1] for i in range(1, len(best))
        )
        assert best[-1] == max(scores)

    def test_round_trip_is_json(self, toy7, tmp_path):
        path = tmp_path / "trace.jsonl"
        run_with_stream(toy7, path)
        for line in path.read_text("utf-8").splitlines():
            json.loads(line)
