"""Command-line entry point: render figures from ringherd CSV artifacts."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .render import FORMATS, KINDS, FigureSpec, SchemaError, render


def _parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="ringherd-plots",
        description="Regenerate publication-style figures from run artifacts",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--in", dest="inputs", required=True, nargs="+",
                   help="input CSV file(s)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--format", default=None, choices=FORMATS,
                   help="image format (default: from the output suffix)")
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    fmt = args.format
    if fmt is None:
        suffix = args.out.rsplit(".", 1)[-1].lower()
        fmt = suffix if suffix in FORMATS else "png"
    try:
        spec = FigureSpec(inputs=args.inputs, kind=args.kind, output=args.out,
                          image_format=fmt)
        meta = render(spec)
    except (SchemaError, ValueError) as exc:
        print(f"render failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {meta['output']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
