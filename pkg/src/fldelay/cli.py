"""Command-line front end.

    fldelay gen       --seed 0 --k 50 --out scenario.json
    fldelay optimize  scenario.json --scheme proposed --out alloc.json
    fldelay sweep     --param p_max_dbm --values 0,5,10,15,20 --draws 50 --out sweep.csv
    fldelay train     --synthetic --loss convex --eta 0.5 --rounds 500 --out log.csv
    fldelay verify    --level fast

Exit codes: 0 success, 1 usage, 2 invalid input, 3 infeasible, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fl_sim
from .model import DEFAULTS, LearningConfig, Scenario, ScenarioFormatError, generate_scenario
from .optimizer import EmptyDomainError, InvariantError, Scheme, solve

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3, 4

SWEEP_PARAMS = ("p_max_dbm", "bandwidth_hz", "K", "upload_bits")
SWEEP_COLUMNS = ["parameter_value", "scheme", "mean_delay_s", "std_delay_s", "draws", "error"]

log = logging.getLogger("fldelay")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {val}")
    return val


def _nonneg_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {val}")
    return val


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("value list is empty")
    return vals


def _set_pairs(pairs):
    out = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        if key not in DEFAULTS or key == "c_range":
            raise UsageError(f"unknown scenario parameter {key!r}")
        try:
            out[key] = int(val) if key == "d_samples" else float(val)
        except ValueError:
            raise UsageError(f"--set {key}: not a number: {val!r}") from None
    return out


def _write(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(out)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


# ---------------------------------------------------------------------------
# gen / optimize
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    sc = generate_scenario(args.seed, args.k, **_set_pairs(args.set))
    _write(sc.to_json(), args.out)
    return EXIT_OK


def load_scenario(path: str) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioFormatError("", f"cannot read {path}: {exc.strerror}") from None
    return Scenario.from_json(text)


def cmd_optimize(args) -> int:
    sc = load_scenario(args.scenario)
    alloc = solve(sc, args.scheme)
    alloc.validate(sc)
    doc = {"scenario": str(args.scenario), **alloc.to_dict()}
    if args.timestamp:
        doc["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _draw(param: str, value: float, seed: int, scheme: str):
    kwargs = {}
    K = 50
    if param == "K":
        K = int(value)
    else:
        kwargs[param] = value
    try:
        sc = generate_scenario(seed, K, **kwargs)
        return solve(sc, scheme).validate(sc).total_delay, ""
    except (ValueError, InvariantError, ArithmeticError) as exc:
        return math.nan, f"{type(exc).__name__}: {exc}"


def sweep_rows(param, values, draws, base_seed=0, schemes=("proposed",), jobs=1) -> list[dict]:
    """Mean/std delay per (value, scheme) over seeded draws.

    Draw ``i`` uses seed ``base_seed + i`` for every value and scheme, so the
    schemes are compared on identical channel realisations.
    """
    if param not in SWEEP_PARAMS:
        raise UsageError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    if not values:
        raise UsageError("sweep needs at least one value")
    if draws < 1:
        raise UsageError("draws must be >= 1")
    tasks = [(param, v, base_seed + i, Scheme(s).value) for v in values for s in schemes for i in range(draws)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_draw, *zip(*tasks), chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_draw(*t) for t in tasks]

    rows, it = [], iter(zip(tasks, results))
    for v in values:
        for s in schemes:
            chunk = [next(it) for _ in range(draws)]
            good = [d for _, (d, err) in chunk if not err]
            for (_, _, seed, _), (_, err) in chunk:
                if err:
                    rows.append(dict(parameter_value=v, scheme=Scheme(s).value, mean_delay_s=math.nan,
                                     std_delay_s=math.nan, draws=1, error=f"seed {seed}: {err}"))
            if good:
                rows.append(dict(
                    parameter_value=v,
                    scheme=Scheme(s).value,
                    mean_delay_s=float(np.mean(good)),
                    std_delay_s=float(np.std(good)),
                    draws=len(good),
                    error="",
                ))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_sweep(args) -> int:
    schemes = [Scheme(s).value for s in args.schemes.split(",")]
    rows = sweep_rows(args.param, args.values, args.draws, args.seed, schemes, args.jobs)
    _write(rows_to_csv(rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    loss = fl_sim.Loss(args.loss, args.ridge)
    if args.csv:
        ds = fl_sim.load_csv(args.csv, args.users, args.samples, args.seed)
        if loss.kind is fl_sim.LossKind.CONVEX:
            ds = fl_sim.Dataset(ds.users, fl_sim.optimal_loss(ds, loss))
    else:
        ds = fl_sim.synth_dataset(args.seed, args.users, args.dim, args.samples or 200,
                                  args.condition, noise=args.noise)
        if loss.ridge and loss.kind is fl_sim.LossKind.CONVEX:
            ds = fl_sim.Dataset(ds.users, fl_sim.optimal_loss(ds, loss))
        elif loss.kind is fl_sim.LossKind.NONCONVEX:
            ds = fl_sim.Dataset(ds.users, None)

    if args.lipschitz is None or args.gamma is None:
        if loss.kind is fl_sim.LossKind.CONVEX:
            L, gamma = fl_sim.estimate_smoothness(ds, loss)
        else:
            L, gamma = fl_sim.estimate_smoothness(ds, fl_sim.Loss("convex", loss.ridge))
        L = args.lipschitz if args.lipschitz is not None else L
        gamma = args.gamma if args.gamma is not None else gamma
    else:
        L, gamma = args.lipschitz, args.gamma
    if gamma <= 0:
        raise ValueError("strong convexity estimate is 0; pass --ridge or --gamma")
    cfg = LearningConfig(L, gamma, args.xi, args.delta if args.delta else 1.0 / L, args.epsilon0)

    w0 = None
    if loss.kind is fl_sim.LossKind.NONCONVEX:
        # w = 0 is stationary for the ReLU model under the zero subgradient tie-break
        w0 = args.init_scale * np.random.default_rng(args.seed).standard_normal(ds.dim)
    trace = fl_sim.federated_train(ds, loss, args.eta, cfg, args.rounds, w0=w0,
                                   stop_at_accuracy=not args.no_stop)
    _write(trace.to_csv(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verification import run_checks

    results = run_checks(args.level, echo=lambda line: print(line, file=sys.stderr))
    report = {"level": args.level, "passed": all(r.ok for r in results), "checks": [r.to_dict() for r in results]}
    _write(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK if report["passed"] else EXIT_INTERNAL


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fldelay", description="Delay-minimal federated learning over a wireless uplink.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="draw a random scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k", type=_positive_int, default=50, help="number of users")
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help=f"override a default ({', '.join(k for k in DEFAULTS if k != 'c_range')})")
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_gen)

    o = sub.add_parser("optimize", help="solve one scenario")
    o.add_argument("scenario")
    o.add_argument("--scheme", choices=[s.value for s in Scheme], default="proposed")
    o.add_argument("--out", default="-")
    o.add_argument("--timestamp", action="store_true", help="add a generated_at field")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", help="mean delay over random draws for a parameter ladder")
    s.add_argument("--param", choices=SWEEP_PARAMS, default="p_max_dbm")
    s.add_argument("--values", type=_float_list, default=[0.0, 5.0, 10.0, 15.0, 20.0])
    s.add_argument("--draws", type=_positive_int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--schemes", default="proposed,eb-fdma,fe-fdma,tdma")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train", help="run federated training and log the loss")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--csv", help="numeric CSV, last column is the target")
    src.add_argument("--synthetic", action="store_true", help="planted linear model (default)")
    t.add_argument("--loss", choices=[k.value for k in fl_sim.LossKind], default="convex")
    t.add_argument("--ridge", type=float, default=0.0)
    t.add_argument("--eta", type=float, default=0.5)
    t.add_argument("--rounds", type=_nonneg_int, default=500)
    t.add_argument("--users", type=_positive_int, default=5)
    t.add_argument("--samples", type=int, default=None, help="samples per user")
    t.add_argument("--dim", type=_positive_int, default=10)
    t.add_argument("--condition", type=float, default=10.0)
    t.add_argument("--noise", type=float, default=0.0)
    t.add_argument("--xi", type=float, default=0.1)
    t.add_argument("--delta", type=float, default=None, help="local step (default 1/L)")
    t.add_argument("--epsilon0", type=float, default=1e-3)
    t.add_argument("--lipschitz", type=float, default=None)
    t.add_argument("--gamma", type=float, default=None)
    t.add_argument("--init-scale", type=float, default=0.01)
    t.add_argument("--no-stop", action="store_true", help="ignore the accuracy stopping rule")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="-")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run the oracle and invariant suites")
    v.add_argument("--level", choices=["fast", "full"], default="fast")
    v.add_argument("--out", default="-")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fldelay: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioFormatError as exc:
        print(f"fldelay: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except fl_sim.DatasetError as exc:
        print(f"fldelay: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyDomainError as exc:
        print(f"fldelay: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantError as exc:
        print(f"fldelay: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, OSError) as exc:
        print(f"fldelay: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
