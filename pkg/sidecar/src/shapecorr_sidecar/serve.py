"""Entry point: run the sidecar under uvicorn."""
from __future__ import annotations

import argparse
import os

import uvicorn

from .app import MODE_STUB, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="shapecorr-sidecar")
    parser.add_argument("--host", default=os.environ.get("SIDECAR_HOST", "127.0.0.1"))
    parser.add_argument("--port", type=int, default=int(os.environ.get("SIDECAR_PORT", "8008")))
    parser.add_argument("--mode", choices=["stub", "live"], default=os.environ.get("SIDECAR_MODE", MODE_STUB))
    args = parser.parse_args(argv)
    uvicorn.run(create_app(args.mode), host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
