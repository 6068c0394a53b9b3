"""Sidecar entrypoint."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from .mock_backend import MockBackend
from .server import serve


def main() -> None:
    parser = argparse.ArgumentParser(
        description="Model sidecar: embedding and VLM ops over HTTP")
    parser.add_argument("--port", type=int, default=8601)
    parser.add_argument("--mode", choices=["mock"], default="mock",
                        help="Only the deterministic mock backend ships here; real "
                             "model backends plug in behind the same protocol.")
    parser.add_argument("--fixtures", type=Path, default=None,
                        help="JSON fixture script overriding mock VLM outputs.")
    parser.add_argument("--workers", type=int, default=8,
                        help="Maximum concurrent backend calls.")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    backend = (MockBackend.from_fixture_file(args.fixtures) if args.fixtures
               else MockBackend())
    serve(backend, args.port, args.workers)


if __name__ == "__main__":
    main()
