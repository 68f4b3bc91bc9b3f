#!/usr/bin/env python3
"""Regenerate the golden wire-protocol fixtures under fixtures/protocol/.

The canonical session drives every op type against the toy7 backend and
stores both the byte-level session log and the trace the engine wrote
while talking over it. tests/test_protocol_golden.py replays the session
and pins the fixture hashes; rerun this script only when the protocol or
the toy fixtures intentionally change, and update the pinned hashes.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from capolish.bridge import (  # noqa: E402
    LoopbackTransport,
    ProtocolServer,
    RecordingTransport,
    RemoteBackend,
)
from capolish.control import ControlTask  # noqa: E402
from capolish.core import FusionWeights, RunConfig  # noqa: E402
from capolish.engine import run  # noqa: E402
from capolish.synthetic import load_backend_dir  # noqa: E402
from capolish.trace import write_trace  # noqa: E402

OUT = REPO / "fixtures" / "protocol"

# Must stay in lockstep with tests/test_protocol_golden.py.
SESSION_CONFIG = RunConfig(
    n=3,
    k=5,
    iterations=3,
    weights=FusionWeights(alpha=0.02, beta=2.0, gamma=5.0),
    order_mode="shuffle",
    seed=21,
    prompt_text="a",
    control_task=ControlTask(kind="style", style_target="positive"),
)


def record_session() -> None:
    backend = load_backend_dir(
        REPO / "fixtures" / "toy7", ControlTask(kind="style", style_target="positive")
    )
    session_path = OUT / "session_toy7.jsonl"
    remote = RemoteBackend(
        RecordingTransport(LoopbackTransport(ProtocolServer(backend)), session_path),
        control_task_tag="style:positive",
    )
    remote.register_image(data=b"toy-image")
    remote.encode("a cat sits")
    remote.embed(["a cat", "a dog"])
    result = run(SESSION_CONFIG, remote)
    write_trace(result, OUT / "trace_toy7.jsonl")


def corrupt(reply: str, how: str) -> str:
    obj = json.loads(reply)
    if how == "badjson":
        return "{not json"
    if how == "wrong_id":
        obj["id"] = 99
    elif how == "missing_ok":
        del obj["ok"]
    elif how == "not_descending":
        obj["probs"] = list(reversed(obj["probs"]))
        obj["token_ids"] = list(reversed(obj["token_ids"]))
    elif how == "float_number":
        obj["probs"] = [float(p) for p in obj["probs"]]
    elif how == "length_mismatch":
        obj["probs"] = obj["probs"][:-1]
    elif how == "error_shape":
        obj = {"id": obj["id"], "ok": False, "error": "nope"}
    else:
        raise ValueError(how)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def record_malformed() -> None:
    backend = load_backend_dir(REPO / "fixtures" / "toy7")
    base_path = OUT / "_tmp_small.jsonl"
    remote = RemoteBackend(
        RecordingTransport(LoopbackTransport(ProtocolServer(backend)), base_path)
    )
    remote.mlm_topk([6, 0, 6], 1, 2)
    entries = [json.loads(line) for line in base_path.read_text("utf-8").splitlines()]
    base_path.unlink()
    for how in (
        "badjson",
        "wrong_id",
        "missing_ok",
        "not_descending",
        "float_number",
        "length_mismatch",
        "error_shape",
    ):
        mutated = [dict(e) for e in entries]
        mutated[-1]["data"] = corrupt(mutated[-1]["data"], how)
        path = OUT / f"malformed_{how}.jsonl"
        path.write_text(
            "".join(
                json.dumps(e, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
                for e in mutated
            ),
            "utf-8",
        )


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    record_session()
    record_malformed()
    for name in ("session_toy7.jsonl", "trace_toy7.jsonl"):
        digest = hashlib.sha256((OUT / name).read_bytes()).hexdigest()
        print(f"{name}: sha256 {digest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
