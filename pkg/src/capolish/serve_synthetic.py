"""Serve a synthetic fixture directory over the wire protocol on stdio.

Usage: python -m capolish.serve_synthetic FIXTURE_DIR [--control TASK]

Handy for exercising the stdio transport without a real model server:
    capolish caption --backend "stdio:python -m capolish.serve_synthetic fixtures/toy7" ...
"""

from __future__ import annotations

import argparse

from .bridge import serve_stdio
from .control import parse_control_tag
from .synthetic import load_backend_dir


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="capolish-serve-synthetic")
    parser.add_argument("fixture_dir")
    parser.add_argument("--control", default=None)
    args = parser.parse_args(argv)
    backend = load_backend_dir(args.fixture_dir, parse_control_tag(args.control))
    serve_stdio(backend)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
