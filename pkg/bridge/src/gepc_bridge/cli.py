"""Command-line entry point for the bridge serve loop."""

from __future__ import annotations

import argparse
import sys

from .serve import parse_stub, serve, serve_forever


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gepc-bridge",
        description="Answer batched denoiser requests over the shared-"
                    "directory file protocol.")
    parser.add_argument("command", choices=["serve"])
    parser.add_argument("--dir", required=True,
                        help="directory holding request-*.gtf/meta pairs")
    parser.add_argument("--stub",
                        help="built-in test backbone, e.g. constant:1")
    parser.add_argument("--once", action="store_true",
                        help="answer pending requests once and exit")
    parser.add_argument("--poll", type=float, default=0.05,
                        help="poll interval in seconds (default 0.05)")
    parser.add_argument("--max-seconds", type=float,
                        help="stop polling after this many seconds")
    args = parser.parse_args(argv)

    if args.stub is None:
        print("error: no backbone configured; pass --stub constant:<v> or "
              "call serve() with your own denoiser", file=sys.stderr)
        return 2
    try:
        denoiser = parse_stub(args.stub)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.once:
        n = serve(args.dir, denoiser)
    else:
        n = serve_forever(args.dir, denoiser, args.poll, args.max_seconds)
    print(f"answered {n} request(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
