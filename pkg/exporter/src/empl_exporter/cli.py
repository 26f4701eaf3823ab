"""Command line: render a labeled shape corpus, export an embedding dump.

Exit codes: 0 success, 1 io or data failure, 2 usage, 3 backend unavailable.
"""

from __future__ import annotations

import argparse
import sys

from .backends import DEFAULT_CLIP, BackendUnavailable
from .export import export_dump
from .render import load_corpus, render_corpus
from .wire import WireError


def cmd_render(args: argparse.Namespace) -> int:
    corpus = render_corpus(
        args.out, classes=args.classes, per_class=args.per_class, seed=args.seed, side=args.side
    )
    print(
        f"wrote {len(corpus.image_paths)} images across {len(corpus.class_names)} classes in {args.out}"
    )
    return 0


def cmd_dump(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.images)
    summary = export_dump(
        corpus.image_paths,
        corpus.labels,
        corpus.class_names,
        args.out,
        backend=args.backend,
        dim=args.dim,
        seed=args.seed,
        model=args.model,
    )
    print(
        f"wrote {summary.records} records (dim {summary.dim}), {summary.classes} classes,"
        f" backend {summary.backend}: {summary.path}"
    )
    return 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="empl-export", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a labeled shape corpus with a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=64)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("dump", help="embed a rendered corpus and write a dump file")
    p.add_argument("--images", required=True, help="directory holding a render manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("toy", "hf"), default="toy")
    p.add_argument("--dim", type=int, default=32, help="toy backend width; hf ignores this")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default=DEFAULT_CLIP, help="hf backend checkpoint name")
    p.set_defaults(fn=cmd_dump)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except BackendUnavailable as exc:
        print(f"backend unavailable: {exc}", file=sys.stderr)
        return 3
    except (WireError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
