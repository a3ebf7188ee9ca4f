"""Command line entry point: ``smmf-bench {run,regret,memory,shape}``.

Exit codes: 0 ok, 2 config/input error, 3 divergence.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .bench import ConfigError, DivergenceError, load_config, regret_track, run_experiment
from .factorize import SIGN_MODES
from .matricize import effective_shape
from .memory import ManifestError, ShapeManifest, report

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

_SIGN_ALIASES = {"packed": SIGN_MODES[0], "byte": SIGN_MODES[1]}


def _run_one(path: str) -> tuple[str, int, str]:
    try:
        config = load_config(path)
        rows = run_experiment(config)
    except ConfigError as exc:
        return path, EXIT_CONFIG, f"config error: {exc}"
    except DivergenceError as exc:
        return path, EXIT_DIVERGED, f"diverged: {exc}"
    final = rows[-1]
    return path, EXIT_OK, f"final loss={final['loss']:.6g} eval_metric={final['eval_metric']:.6g}"


def cmd_run(args) -> int:
    if args.jobs > 1 and len(args.configs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, args.configs))
    else:
        results = [_run_one(p) for p in args.configs]
    code = EXIT_OK
    for path, rc, msg in results:
        print(f"{path}: {msg}", file=sys.stderr if rc else sys.stdout)
        code = max(code, rc)
    return code


def cmd_regret(args) -> int:
    try:
        config = load_config(args.config)
        series = regret_track(config, output=args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"T={len(series.losses)} R(T)={series.total:.6g} R(T)/T={series.total / len(series.losses):.6g}")
    return EXIT_OK


def cmd_memory(args) -> int:
    try:
        manifest = ShapeManifest.load(args.manifest)
    except (OSError, ManifestError) as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rep = report(manifest, bpe=args.bpe, sign_mode=_SIGN_ALIASES[args.signs],
                 adafactor_momentum=not args.no_adafactor_momentum)
    print(rep.to_table())
    if args.csv == "-":
        sys.stdout.write(rep.to_csv())
    elif args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return EXIT_OK


def cmd_shape(args) -> int:
    try:
        dims = [int(d) for d in args.n.lower().split("x")]
        es = effective_shape(dims[0] if len(dims) == 1 else dims)
    except ValueError as exc:
        print(f"bad size {args.n!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{es.n_hat}x{es.m_hat}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smmf-bench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train per JSON config(s), write metrics CSV")
    p.add_argument("configs", nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes for several configs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("regret", help="online run plus post-hoc comparator; reports R(T)")
    p.add_argument("config")
    p.add_argument("--output", help="metrics CSV path (default: config's output)")
    p.set_defaults(func=cmd_regret)

    p = sub.add_parser("memory", help="optimizer-state bytes for a shape manifest")
    p.add_argument("manifest")
    p.add_argument("--bpe", type=int, choices=(4, 8), default=4)
    p.add_argument("--signs", choices=sorted(_SIGN_ALIASES), default="packed")
    p.add_argument("--no-adafactor-momentum", action="store_true")
    p.add_argument("--csv", help="write name,optimizer,bytes CSV here ('-' for stdout)")
    p.set_defaults(func=cmd_memory)

    p = sub.add_parser("shape", help="print the square-matricized shape for N or d1xd2x...")
    p.add_argument("n")
    p.set_defaults(func=cmd_shape)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
