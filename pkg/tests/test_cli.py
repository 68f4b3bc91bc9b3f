from __future__ import annotations

import json
import sys

import pytest

from capolish.cli import main

TOY = "synthetic:fixtures/toy7"
TWOMODE = "synthetic:fixtures/twomode"


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def caption_args(*extra):
    return (
        "caption",
        "--backend", TOY,
        "--length", "3",
        "--k", "7",
        "--iters", "4",
        "--alpha", "0.02",
        "--beta", "2",
        "--order", "sequential",
        "--seed", "5",
        "--prompt", "",
        *extra,
    )


class TestCaption:
    def test_offline_run_emits_record(self, capsys):
        code, out, err = run_cli(capsys, *caption_args())
        assert code == 0, err
        record = json.loads(out)
        assert record["caption"]
        assert record["order"] == "sequential"
        assert record["config"]["k"] == 7
        assert len(record["iteration_scores"]) == 4
        assert record["calls"]["mlm_calls"] == 12

    def test_defaults_are_paper_scale(self, capsys):
        code, out, _ = run_cli(
            capsys, "caption", "--backend", TOY, "--prompt", "", "--seed", "1"
        )
        assert code == 0
        record = json.loads(out)
        config = record["config"]
        assert config["k"] == 200 and config["iterations"] == 15
        assert config["alpha"] == 0.02 and config["beta"] == 2.0
        assert config["n"] == 12
        assert config["prompt_text"] == ""

    def test_seeded_reruns_identical(self, capsys, tmp_path):
        args = caption_args(
            "--order", "shuffle",
            "--trace-out", str(tmp_path / "t1.jsonl"),
            "--records-out", str(tmp_path / "r1.jsonl"),
        )
        code1, out1, _ = run_cli(capsys, *args)
        args2 = caption_args(
            "--order", "shuffle",
            "--trace-out", str(tmp_path / "t2.jsonl"),
            "--records-out", str(tmp_path / "r2.jsonl"),
        )
        code2, out2, _ = run_cli(capsys, *args2)
        assert code1 == code2 == 0
        assert out1 == out2
        assert (tmp_path / "t1.jsonl").read_bytes() == (tmp_path / "t2.jsonl").read_bytes()
        assert (tmp_path / "r1.jsonl").read_bytes() == (tmp_path / "r2.jsonl").read_bytes()

    def test_style_control_wires_gamma(self, capsys):
        code, out, err = run_cli(
            capsys, *caption_args("--control", "style:positive")
        )
        assert code == 0, err
        record = json.loads(out)
        assert record["config"]["gamma"] == 5.0
        assert record["config"]["control_task"]["tag"] == "style:positive"
        assert record["calls"]["control_calls"] == 12

    def test_pos_control(self, capsys):
        code, out, err = run_cli(
            capsys, *caption_args("--control", "pos:DET NOUN VERB", "--gamma", "5")
        )
        assert code == 0, err
        record = json.loads(out)
        assert record["config"]["control_task"]["tag"] == "pos:DET NOUN VERB"

    def test_missing_backend_fails_cleanly(self, capsys, monkeypatch):
        monkeypatch.delenv("CAPOLISH_ENDPOINT", raising=False)
        code, out, err = run_cli(capsys, "caption", "--prompt", "")
        assert code == 2
        assert json.loads(err)["error"]["code"] == "CODE_BACKEND"

    def test_invalid_config_reports_code(self, capsys):
        code, _, err = run_cli(capsys, *caption_args("--k", "0"))
        assert code == 2
        assert json.loads(err)["error"]["code"] == "CODE_K_RANGE"

    def test_config_file_precedence(self, capsys, tmp_path):
        config_file = tmp_path / "run.json"
        config_file.write_text(json.dumps({"seed": 9, "iters": 2}), "utf-8")
        code, out, _ = run_cli(
            capsys,
            "caption",
            "--backend", TOY,
            "--length", "3",
            "--k", "7",
            "--prompt", "",
            "--config", str(config_file),
            "--seed", "123",
        )
        assert code == 0
        record = json.loads(out)
        assert record["config"]["seed"] == 123  # flag wins
        assert record["config"]["iterations"] == 2  # file beats default

    def test_stdio_backend_round_trip(self, capsys):
        backend = f"stdio:{sys.executable} -m capolish.serve_synthetic fixtures/toy7"
        code, out, err = run_cli(
            capsys,
            "caption",
            "--backend", backend,
            "--image", "fixtures/toy7/bag.txt",
            "--length", "3",
            "--k", "7",
            "--iters", "2",
            "--order", "sequential",
            "--seed", "5",
            "--prompt", "",
        )
        assert code == 0, err
        assert json.loads(out)["caption"]


class TestInfill:
    def test_mask_by_word(self, capsys):
        code, out, err = run_cli(
            capsys,
            "infill",
            "--backend", TOY,
            "--text", "a cat sits",
            "--mask-words", "cat",
            "--k", "7",
            "--iters", "2",
            "--order", "sequential",
            "--seed", "0",
            "--prompt", "",
        )
        assert code == 0, err
        record = json.loads(out)
        assert [w["position"] for w in record["infilled"]] == [1]
        parts = record["highlighted"].split()
        assert parts[0] == "a" and parts[2] == "sits"
        assert parts[1].startswith("[") and parts[1].endswith("]")
        assert record["config"]["control_task"]["kind"] == "infill"

    def test_mask_by_position(self, capsys):
        code, out, _ = run_cli(
            capsys,
            "infill",
            "--backend", TOY,
            "--text", "a cat sits",
            "--mask-positions", "0,2",
            "--k", "7",
            "--iters", "2",
            "--order", "sequential",
            "--seed", "0",
            "--prompt", "",
        )
        assert code == 0
        record = json.loads(out)
        assert [w["position"] for w in record["infilled"]] == [0, 2]
        assert record["highlighted"].split()[1] == "cat"

    def test_no_mask_is_an_error(self, capsys):
        code, _, err = run_cli(
            capsys,
            "infill",
            "--backend", TOY,
            "--text", "a cat sits",
            "--prompt", "",
        )
        assert code == 2
        assert json.loads(err)["error"]["code"] == "CODE_NO_MASK"


def write_jobspec(tmp_path, output_dir, seeds=(0, 1, 2)):
    spec = {
        "backend": TOY,
        "images": [
            "imgA",
            {"id": "imgB", "backend": TWOMODE},
        ],
        "seeds": list(seeds),
        "config": {
            "length": 2, "k": 5, "iters": 2, "order": "shuffle", "prompt": "",
        },
        "output_dir": str(output_dir),
    }
    path = tmp_path / "jobs.json"
    path.write_text(json.dumps(spec), "utf-8")
    return path


class TestBatch:
    def test_runs_all_jobs_and_totals(self, capsys, tmp_path):
        jobspec = write_jobspec(tmp_path, tmp_path / "out")
        code, out, err = run_cli(capsys, "batch", "--jobspec", str(jobspec), "--jobs", "2")
        assert code == 0, err
        summary = json.loads(out)
        assert summary["jobs"] == 6 and summary["completed"] == 6
        records = [
            json.loads(line)
            for line in (tmp_path / "out" / "captions.jsonl").read_text().splitlines()
        ]
        assert len(records) == 6
        keys = [(r["image"], r["seed"]) for r in records]
        assert keys == sorted(keys)
        total = sum(r["calls"]["mlm_calls"] for r in records)
        assert summary["call_totals"]["mlm_calls"] == total == 6 * 2 * 2

    def test_resume_skips_completed(self, capsys, tmp_path):
        jobspec = write_jobspec(tmp_path, tmp_path / "out")
        run_cli(capsys, "batch", "--jobspec", str(jobspec))
        code, out, _ = run_cli(capsys, "batch", "--jobspec", str(jobspec))
        assert code == 0
        summary = json.loads(out)
        assert summary["jobs"] == 0 and summary["skipped"] == 6

    def test_deterministic_output_files(self, capsys, tmp_path):
        spec_a = write_jobspec(tmp_path, tmp_path / "a")
        code, _, _ = run_cli(capsys, "batch", "--jobspec", str(spec_a), "--jobs", "4")
        assert code == 0
        spec_b = tmp_path / "jobs_b.json"
        spec_b.write_text(
            json.loads(json.dumps(spec_a.read_text("utf-8"))).replace(str(tmp_path / "a"), str(tmp_path / "b")),
            "utf-8",
        )
        code, _, _ = run_cli(capsys, "batch", "--jobspec", str(spec_b), "--jobs", "1")
        assert code == 0
        assert (tmp_path / "a" / "captions.jsonl").read_bytes() == (
            tmp_path / "b" / "captions.jsonl"
        ).read_bytes()

    def test_one_failure_does_not_abort(self, capsys, tmp_path):
        spec = {
            "backend": TOY,
            "images": ["good", {"id": "bad", "backend": "synthetic:/nonexistent"}],
            "seeds": [0],
            "config": {"length": 2, "k": 5, "iters": 1, "prompt": ""},
            "output_dir": str(tmp_path / "out"),
        }
        path = tmp_path / "jobs.json"
        path.write_text(json.dumps(spec), "utf-8")
        code, out, _ = run_cli(capsys, "batch", "--jobspec", str(path))
        assert code == 1
        summary = json.loads(out)
        assert summary["completed"] == 1 and summary["failed"] == 1
        assert "bad:0" in summary["failures"]

    def test_empty_jobspec_is_noop_success(self, capsys, tmp_path):
        spec = {"backend": TOY, "images": [], "output_dir": str(tmp_path / "out")}
        path = tmp_path / "jobs.json"
        path.write_text(json.dumps(spec), "utf-8")
        code, out, _ = run_cli(capsys, "batch", "--jobspec", str(path))
        assert code == 0
        assert json.loads(out)["jobs"] == 0


class TestEval:
    def make_captions(self, tmp_path, texts):
        path = tmp_path / "caps.jsonl"
        lines = [
            json.dumps({"image": f"img{i}", "seed": 0, "caption": t})
            for i, t in enumerate(texts)
        ]
        path.write_text("\n".join(lines) + "\n", "utf-8")
        return path

    def test_hand_fixture_div1(self, capsys, tmp_path):
        path = self.make_captions(tmp_path, ["a cat", "a dog"])
        out_path = tmp_path / "metrics.json"
        code, out, err = run_cli(
            capsys, "eval", "--captions", str(path), "--out", str(out_path)
        )
        assert code == 0, err
        report = json.loads(out_path.read_text("utf-8"))
        assert report["div_1"] == 0.75
        assert report["vocab"] == 3.0
        assert "div_1\t0.750000" in out

    def test_empty_input_is_error(self, capsys, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text("", "utf-8")
        code, _, err = run_cli(capsys, "eval", "--captions", str(path))
        assert code == 2
        assert json.loads(err)["error"]["code"] == "CODE_EMPTY"

    def test_references_bleu_and_figure(self, capsys, tmp_path):
        path = self.make_captions(tmp_path, ["a cat", "a dog"])
        refs = tmp_path / "refs.json"
        refs.write_text(json.dumps({"img0": ["a cat"], "img1": ["a cat"]}), "utf-8")
        figure = tmp_path / "report.png"
        code, out, _ = run_cli(
            capsys,
            "eval",
            "--captions", str(path),
            "--references", str(refs),
            "--bleu-n", "1",
            "--figure", str(figure),
        )
        assert code == 0
        assert "bleu_1\t0.750000" in out  # (1.0 + 0.5) / 2
        assert figure.stat().st_size > 0

    def test_report_deterministic(self, capsys, tmp_path):
        path = self.make_captions(tmp_path, ["a cat sits", "a dog runs"])
        code1, out1, _ = run_cli(capsys, "eval", "--captions", str(path))
        code2, out2, _ = run_cli(capsys, "eval", "--captions", str(path))
        assert code1 == code2 == 0
        assert out1 == out2


class TestTraceCommand:
    def make_trace(self, capsys, tmp_path):
        trace_path = tmp_path / "trace.jsonl"
        code, out, _ = run_cli(capsys, *caption_args("--trace-out", str(trace_path)))
        assert code == 0
        return trace_path, json.loads(out)

    def test_series_matches_snapshots(self, capsys, tmp_path):
        trace_path, record = self.make_trace(capsys, tmp_path)
        tsv = tmp_path / "series.tsv"
        code, _, _ = run_cli(
            capsys, "trace", "--trace", str(trace_path), "--plot-data", str(tsv)
        )
        assert code == 0
        lines = tsv.read_text("utf-8").splitlines()
        assert lines[0] == "iteration\tmatch_score\tbest_so_far\tchanged"
        assert len(lines) == 1 + 4  # header + one row per iteration
        scores = [float(line.split("\t")[1]) for line in lines[1:]]
        assert scores == record["iteration_scores"]
        best = [float(line.split("\t")[2]) for line in lines[1:]]
        assert all(b >= a for a, b in zip(best, best[1:]))

    def test_figure_rendered(self, capsys, tmp_path):
        trace_path, _ = self.make_trace(capsys, tmp_path)
        figure = tmp_path / "curve.png"
        code, _, _ = run_cli(
            capsys, "trace", "--trace", str(trace_path), "--figure", str(figure)
        )
        assert code == 0
        assert figure.stat().st_size > 0

    def test_stdout_mode(self, capsys, tmp_path):
        trace_path, _ = self.make_trace(capsys, tmp_path)
        code, out, _ = run_cli(capsys, "trace", "--trace", str(trace_path))
        assert code == 0
        assert out.startswith("iteration\t")
