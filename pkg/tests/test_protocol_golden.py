"""Replay of the pinned wire fixtures must reproduce the pinned trace bytes."""

from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from capolish.bridge import RemoteBackend, ReplayTransport
from capolish.control import ControlTask
from capolish.core import FusionWeights, RunConfig
from capolish.engine import run
from capolish.errors import ProtocolError
from capolish.trace import write_trace

PROTOCOL_FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "protocol"

# Pinned by tools/record_protocol_fixture.py; regenerate deliberately.
SESSION_SHA256 = "7c2d4fb8dba8b47939ba64c355479cfbb999a79f4fb7eb270ac3030126472dd1"
TRACE_SHA256 = "a74fa3bbd19f852b20fd487c73ba6e7585be5a92c8ae108cc1b788c7c70a006b"

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


def replay_session(tmp_path) -> Path:
    remote = RemoteBackend(
        ReplayTransport(PROTOCOL_FIXTURES / "session_toy7.jsonl"),
        control_task_tag="style:positive",
    )
    remote.register_image(data=b"toy-image")
    remote.encode("a cat sits")
    remote.embed(["a cat", "a dog"])
    result = run(SESSION_CONFIG, remote)
    out = tmp_path / "replayed_trace.jsonl"
    write_trace(result, out)
    return out


class TestGoldenSession:
    def test_fixture_bytes_pinned(self):
        digest = hashlib.sha256(
            (PROTOCOL_FIXTURES / "session_toy7.jsonl").read_bytes()
        ).hexdigest()
        assert digest == SESSION_SHA256

    def test_replay_reproduces_trace_bytes(self, tmp_path):
        replayed = replay_session(tmp_path)
        pinned = (PROTOCOL_FIXTURES / "trace_toy7.jsonl").read_bytes()
        assert hashlib.sha256(pinned).hexdigest() == TRACE_SHA256
        assert replayed.read_bytes() == pinned

    def test_fixture_covers_all_ops(self):
        data = (PROTOCOL_FIXTURES / "session_toy7.jsonl").read_text("utf-8")
        for op in (
            "handshake",
            "register_image",
            "mlm_topk",
            "match",
            "control",
            "embed",
            "encode",
        ):
            assert f'\\"op\\":\\"{op}\\"' in data or f'"op":"{op}"' in data.replace(
                "\\\"", '"'
            )


MALFORMED = sorted(PROTOCOL_FIXTURES.glob("malformed_*.jsonl"))


class TestMalformedFixtures:
    @pytest.mark.parametrize("path", MALFORMED, ids=lambda p: p.stem)
    def test_malformed_reply_raises_protocol_error(self, path):
        remote = RemoteBackend(ReplayTransport(path))
        with pytest.raises(ProtocolError):
            remote.mlm_topk([6, 0, 6], 1, 2)

    def test_have_the_expected_variants(self):
        assert len(MALFORMED) == 7
