"""Wire schema shared by the scorer client and any scorer server.

One JSON object per line, UTF-8. Requests carry ``op`` and ``id`` plus
op-specific fields; replies echo ``id`` and carry ``ok`` (with result
fields) or ``ok: false`` with an ``error`` object. Scores, probabilities
and embedding components travel as decimal strings with 17 significant
digits so recorded sessions replay byte-for-byte regardless of the JSON
library on either end. PROTOCOL.md is the normative document.
"""

from __future__ import annotations

import json
import math
from typing import Any, Sequence

from .errors import ProtocolError

PROTOCOL_VERSION = 1

OPS = (
    "handshake",
    "register_image",
    "mlm_topk",
    "match",
    "control",
    "embed",
    "encode",
)

ERROR_CODES = (
    "version_mismatch",
    "unsupported_op",
    "unsupported_task",
    "bad_request",
    "stale_handle",
    "decode_error",
    "encode_error",
    "internal",
)


def format_float(x: float) -> str:
    """Serialize a double as decimal with 17 significant digits.

    Round-trips exactly; rejects non-finite values, which the protocol
    never carries.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("wire floats must be finite")
    return format(x, ".17g")


def parse_float(text: Any) -> float:
    if not isinstance(text, str):
        raise ProtocolError(f"expected a float string, got {type(text).__name__}")
    try:
        value = float(text)
    except ValueError as exc:
        raise ProtocolError(f"bad float string {text!r}") from exc
    if not math.isfinite(value):
        raise ProtocolError(f"non-finite float {text!r} on the wire")
    return value


def encode_floats(values: Sequence[float]) -> list[str]:
    return [format_float(v) for v in values]


def parse_floats(values: Any) -> list[float]:
    if not isinstance(values, list):
        raise ProtocolError("expected a list of float strings")
    return [parse_float(v) for v in values]


def dumps(obj: dict) -> str:
    """Canonical one-line JSON: sorted keys, no spaces, raw UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_line(obj: dict) -> bytes:
    return (dumps(obj) + "\n").encode("utf-8")


def parse_line(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"reply is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("wire objects must be JSON objects")
    return obj


def build_request(op: str, request_id: int, **fields: Any) -> dict:
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}")
    return {"op": op, "id": request_id, **fields}


def check_reply(obj: dict, expected_id: int) -> dict:
    """Validate the reply envelope; raise ProtocolError on any violation."""
    if "id" not in obj:
        raise ProtocolError("reply is missing 'id'")
    if obj["id"] != expected_id:
        raise ProtocolError(f"reply id {obj['id']!r} does not echo request id {expected_id}")
    if "ok" not in obj:
        raise ProtocolError("reply is missing 'ok'")
    if obj["ok"] is True:
        return obj
    if obj["ok"] is False:
        err = obj.get("error")
        if not isinstance(err, dict) or "code" not in err:
            raise ProtocolError("error reply without a structured 'error' object")
        exc = ProtocolError(f"server error {err.get('code')}: {err.get('message', '')}")
        exc.code = err.get("code")
        raise exc
    raise ProtocolError("'ok' must be a boolean")


def error_reply(request_id: Any, code: str, message: str) -> dict:
    return {
        "id": request_id if isinstance(request_id, int) else None,
        "ok": False,
        "error": {"code": code, "message": message},
    }


def require(obj: dict, field: str, kind: type) -> Any:
    if field not in obj:
        raise ProtocolError(f"missing field {field!r}")
    value = obj[field]
    if kind is int and isinstance(value, bool):
        raise ProtocolError(f"field {field!r} must be {kind.__name__}")
    if not isinstance(value, kind):
        raise ProtocolError(f"field {field!r} must be {kind.__name__}")
    return value


def require_int_list(obj: dict, field: str) -> list[int]:
    value = require(obj, field, list)
    for v in value:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ProtocolError(f"field {field!r} must be a list of integers")
    return value
