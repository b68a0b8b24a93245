"""Command-line front end.

``lyapwass run NAME`` builds a named experiment, writes its artifacts and
exits 0 iff every embedded check passes (1 otherwise).  ``lyapwass compute``
evaluates one quantity for measure files and prints JSON.  Usage and
schema errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .experiments import (DISTANCE_HEADER, ESTIMATE_HEADER, EXPERIMENTS, RunConfig)
from .io import SchemaError, dumps, load_measure, write_csv, write_json
from .lyapunov import exact_diagonal_lyapunov, furstenberg_lyapunov, mc_lyapunov
from .measure import DiscreteMeasure
from .transport import convergence_diagnostics, w1_with_error

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {"seed": 0, "steps": 10_000, "trials": 32, "bins": 4096}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_param(text: str):
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(val)
    except json.JSONDecodeError:
        return key, val


def _common(p):
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"], help="root seed (default: 0)")
    p.add_argument("--steps", type=int, default=DEFAULTS["steps"],
                   help="Monte Carlo steps per trial (default: 10000)")
    p.add_argument("--trials", type=int, default=DEFAULTS["trials"],
                   help="independent Monte Carlo trials (default: 32)")
    p.add_argument("--bins", type=int, default=DEFAULTS["bins"],
                   help="projective grid size, a power of two (default: 4096)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lyapwass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a named experiment and write its artifacts")
    run.add_argument("name", choices=sorted(EXPERIMENTS))
    _common(run)
    run.add_argument("--tail-tol", type=float, default=None,
                     help="series truncation tolerance (default: per construction, "
                          "1e-10 for thm3 and 1e-8 for the block examples)")
    run.add_argument("--out", type=Path, default=None,
                     help="output directory (default: ./out/NAME)")
    run.add_argument("--param", type=_parse_param, action="append", default=[],
                     metavar="KEY=VALUE", help="construction parameter, e.g. n=10 or gamma=0.3")
    run.add_argument("--measure", default=None, help="FILE[:NAME] for the custom experiment")

    comp = sub.add_parser("compute", help="evaluate one quantity and print JSON")
    csub = comp.add_subparsers(dest="quantity", required=True, parser_class=_Parser)
    ly = csub.add_parser("lyap", help="Lyapunov exponents of a measure")
    ly.add_argument("measure", help="FILE or FILE:NAME")
    ly.add_argument("--method", choices=["mc", "exact", "furstenberg"], default="mc")
    _common(ly)
    w1 = csub.add_parser("w1", help="exact W1 distance between two measures")
    w1.add_argument("mu")
    w1.add_argument("nu")
    w1.add_argument("--plan", action="store_true", help="include the optimal plan")
    dg = csub.add_parser("diag", help="exact exponents of an all-diagonal measure")
    dg.add_argument("measure")
    dn = csub.add_parser("diagnostics", help="convergence diagnostics of a sequence")
    dn.add_argument("limit")
    dn.add_argument("seq", nargs="+")
    dn.add_argument("--radii", type=float, nargs="+", default=[1.0, 10.0, 100.0])
    return parser


def _manifest(args, cfg: RunConfig, res) -> dict:
    return {
        "experiment": res.name,
        "version": __version__,
        "seed": cfg.seed, "steps": cfg.steps, "trials": cfg.trials, "bins": cfg.bins,
        "tail_tol": cfg.tail_tol, "params": cfg.params, "measure": cfg.measure,
        "files": ["measures.json", "expectations.json", "estimates.csv", "distances.csv",
                  "diagnostics.csv", "failures.json"],
        "checks": {"total": len(res.checks), "failed": sum(not c.passed for c in res.checks)},
    }


def cmd_run(args) -> int:
    cfg = RunConfig(args.seed, args.steps, args.trials, args.bins, args.tail_tol,
                    dict(args.param), args.measure)
    try:
        res = EXPERIMENTS[args.name](cfg)
    except SchemaError as exc:
        return _schema_fail(exc)
    except (ValueError, FileNotFoundError) as exc:
        print(f"lyapwass: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or Path("out") / args.name
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "measures.json", res.measures)
    write_json(out / "expectations.json", res.expectations)
    write_csv(out / "estimates.csv", [ESTIMATE_HEADER] + res.estimates)
    write_csv(out / "distances.csv", res.distances or [DISTANCE_HEADER])
    write_csv(out / "diagnostics.csv", res.diagnostics or [["sequence", "n", "provenance"]])
    failures = [c.to_json() for c in res.checks if not c.passed]
    write_json(out / "failures.json", failures)
    write_json(out / "manifest.json", _manifest(args, cfg, res))
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    print(f"{len(res.checks) - len(failures)}/{len(res.checks)} checks passed; artifacts in {out}")
    return EXIT_OK if not failures else EXIT_FAIL


def _schema_fail(exc: SchemaError) -> int:
    print(dumps({"error": "schema", "violations": [{"path": p, "message": m}
                                                   for p, m in exc.errors]}), file=sys.stderr, end="")
    return EXIT_USAGE


def cmd_compute(args) -> int:
    try:
        if args.quantity == "lyap":
            mu, _ = load_measure(args.measure)
            if args.method == "mc":
                est = mc_lyapunov(mu, args.steps, args.trials, args.seed)
            else:
                if not isinstance(mu, DiscreteMeasure):
                    raise ValueError(f"method {args.method} needs a discrete measure")
                est = (exact_diagonal_lyapunov(mu) if args.method == "exact"
                       else furstenberg_lyapunov(mu, args.bins))
            out = est.to_json()
        elif args.quantity == "diag":
            mu, _ = load_measure(args.measure)
            out = exact_diagonal_lyapunov(mu).to_json()
        elif args.quantity == "w1":
            (mu, rm), (nu, rn) = load_measure(args.mu), load_measure(args.nu)
            out = w1_with_error(mu, nu, rm, rn, include_plan=args.plan)
        else:
            limit, _ = load_measure(args.limit)
            seq = [load_measure(s)[0] for s in args.seq]
            d = convergence_diagnostics(seq, limit, radii=args.radii)
            rows = d.csv_rows()
            out = {"verdict": d.verdict,
                   "rows": [dict(zip(rows[0], r)) for r in rows[1:]]}
    except SchemaError as exc:
        return _schema_fail(exc)
    except (ValueError, FileNotFoundError, OverflowError) as exc:
        print(f"lyapwass: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(dumps(out))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return cmd_run(args) if args.command == "run" else cmd_compute(args)


if __name__ == "__main__":
    raise SystemExit(main())
