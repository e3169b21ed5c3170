"""Command-line experiment runner.

Subcommands ``bound``, ``diagnose``, ``mc`` and ``selftest``.  Every report
embeds the resolved configuration and its hash; with the same configuration
the output files are byte-identical.

Exit codes: 0 ok, 1 selftest failure, 2 input error, 3 singular covariance,
4 block/grid mismatch, 5 budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import exchange_pairs as ex
from . import families
from . import mc_lab
from . import stein_bounds as sb
from .chaos_algebra import evaluate, from_kernel, multiply
from .grid_kernel import BudgetExceededError, GridMismatchError, Kernel

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_INPUT = 2
EXIT_SINGULAR = 3
EXIT_MISMATCH = 4
EXIT_BUDGET = 5

FAMILIES = ("qvar", "offdiag-rand", "pair2d", "gaussian")

DEFAULTS: dict[str, Any] = {
    "family": "qvar",
    "kernel": None,
    "n": 64,
    "m": None,
    "p": 3,
    "seed": 0,
    "pair": "mehler",
    "n_grid": None,
    "t_grid": list(ex.DEFAULT_T_GRID),
    "N": 100_000,
    "bins": mc_lab.DEFAULT_BINS,
    "workers": 1,
    "out": None,
    "plot_data": False,
}


class InputError(ValueError):
    """Malformed configuration or kernel file."""


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaoslab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    # defaults stay None so that config-file values are only overridden by explicit flags
    common.add_argument("--config", help="JSON file with configuration fields")
    common.add_argument("--family", choices=FAMILIES)
    common.add_argument("--kernel", help="JSON file holding a serialized Kernel or ChaosVector")
    common.add_argument("--n", type=int, help="qvar / pair2d block count")
    common.add_argument("--m", type=int, help="grid size")
    common.add_argument("--p", type=int, help="chaos order for offdiag-rand")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory for report.json / report.csv")
    common.add_argument("--plot-data", action="store_true", default=None,
                        help="also write a tidy long-format plot_data.csv")
    for name, help_text in [("bound", "compute normal-approximation bounds"),
                            ("diagnose", "exchangeable-pair rate tables"),
                            ("mc", "Monte Carlo distances against the bounds")]:
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        if name == "diagnose":
            cmd.add_argument("--pair", choices=("mehler", "gibbs"))
            cmd.add_argument("--t-grid", type=_floats)
            cmd.add_argument("--n-grid", type=_ints)
        if name == "mc":
            cmd.add_argument("--n-grid", type=_ints, help="sweep of qvar block counts")
            cmd.add_argument("--N", type=int)
            cmd.add_argument("--bins", type=int)
            cmd.add_argument("--workers", type=int)
    sub.add_parser("selftest", help="exact-identity checks at small sizes")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    config = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InputError("config must be a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"command"}
        if unknown:
            raise InputError(f"unknown config fields: {sorted(unknown)}")
        config.update({k: v for k, v in loaded.items() if k != "command"})
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    config["command"] = args.command
    _validate(config)
    return config


def _validate(config: dict) -> None:
    if config["family"] not in FAMILIES:
        raise InputError(f"unknown family {config['family']!r}")
    for key in ("n", "p", "N", "bins", "workers"):
        if not isinstance(config[key], int) or config[key] < 1:
            raise InputError(f"{key} must be a positive integer")
    if config["m"] is not None and (not isinstance(config["m"], int) or config["m"] < 1):
        raise InputError("m must be a positive integer")
    if any(t <= 0 for t in config["t_grid"]):
        raise InputError("t-grid values must be positive")
    if config["n_grid"] is not None and any(n < 1 for n in config["n_grid"]):
        raise InputError("n-grid values must be positive")


def config_hash(config: dict) -> str:
    payload = {k: v for k, v in config.items() if k not in ("out", "plot_data", "workers")}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def load_input(config: dict, n: int | None = None) -> Kernel | sb.ChaosVector:
    """The kernel or vector named by the configuration."""
    if config["kernel"]:
        try:
            data = json.loads(Path(config["kernel"]).read_text())
            if "components" in data:
                return sb.ChaosVector.from_dict(data)
            return Kernel.from_dict(data)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"cannot read kernel file {config['kernel']}: {exc}") from exc
    n = config["n"] if n is None else n
    family = config["family"]
    if family == "qvar":
        return families.qvar(n, config["m"])
    if family == "pair2d":
        return families.pair2d(n, config["m"])
    if family == "gaussian":
        return families.gaussian(config["m"] or 1)
    return families.offdiag_rand(config["p"], config["m"] or 8, config["seed"])


def _as_vector(obj: Kernel | sb.ChaosVector) -> sb.ChaosVector:
    return obj if isinstance(obj, sb.ChaosVector) else sb.ChaosVector([(obj.order, obj)])


def cmd_bound(config: dict) -> dict:
    v = _as_vector(load_input(config))
    reports: list[sb.BoundReport] = []
    if v.d == 1:
        p, f = v.components[0]
        reports.extend(sb.tv_report(f, p))
    else:
        reports.append(sb.wasserstein_bound(v))
        reports.append(sb.nprr_bound(v))
    return {"bounds": [r.to_dict() for r in reports], "_csv": sb.reports_to_csv(reports),
            "_table": [(r.name, r.value) for r in reports]}


def cmd_diagnose(config: dict) -> dict:
    obj = load_input(config)
    if isinstance(obj, sb.ChaosVector):
        raise InputError("diagnose needs a single kernel")
    p = obj.order
    if config["pair"] == "mehler":
        report = ex.mehler_rate_table(obj, p, config["t_grid"])
    else:
        n_grid = config["n_grid"] or [n for n in (1, 2, 4, 8, 16, 32, 64) if obj.grid.m % n == 0]
        report = ex.gibbs_rate_table(obj, p, n_grid)
    plot = [{"construction": r["construction"], "parameter": r["parameter"], "quantity": "distance",
             "value": r["distance"]} for r in report.rows]
    return {"diagnostics": report.to_dict(), "_csv": report.to_csv(), "_plot": plot,
            "_table": [(f"{r['construction']} @ {r['parameter']:g}", r["distance"]) for r in report.rows]}


def _mc_scalar(f: Kernel, config: dict, label: str) -> tuple[list[dict], list[mc_lab.DistanceEstimate]]:
    p = f.order
    F = from_kernel(p, f)
    s2 = sb.pure_variance(f, p)
    batch = mc_lab.sample(F, config["N"], config["seed"], workers=config["workers"])
    ests = [mc_lab.tv_binned(batch, s2, config["bins"]), mc_lab.w1_empirical(batch, s2),
            mc_lab.ks_statistic(batch, s2)]
    tv = sb.tv_bound(f, p)
    rows = []
    for e in ests:
        row = {"input": label, **e.to_dict()}
        if e.name == "tv_binned":
            row["bound"] = tv
            row["dominated"] = bool(e.value <= tv + 0.01 + 4 * e.stderr)
        rows.append(row)
    return rows, ests


def cmd_mc(config: dict) -> dict:
    rows: list[dict] = []
    ests: list[mc_lab.DistanceEstimate] = []
    if config["family"] == "qvar" and not config["kernel"] and config["n_grid"]:
        for n in config["n_grid"]:
            r, e = _mc_scalar(load_input(config, n), config, f"qvar n={n}")
            rows.extend(r)
            ests.extend(e)
    else:
        obj = load_input(config)
        if isinstance(obj, Kernel):
            r, e = _mc_scalar(obj, config, config["family"] if not config["kernel"] else "kernel")
            rows.extend(r)
            ests.extend(e)
        else:
            sigma = sb.covariance(obj)
            batch = mc_lab.sample_vector(obj, config["N"], config["seed"], workers=config["workers"])
            for gid in mc_lab.battery(obj.d):
                e = mc_lab.smooth_discrepancy(batch, sigma, gid)
                bound = sb.smooth_bound(obj, e.params["M2"])
                rows.append({"input": "vector", **e.to_dict(), "bound": bound,
                             "dominated": bool(e.value <= bound + 4 * e.stderr)})
                ests.append(e)
    plot = [{"input": r["input"], "estimator": r["estimator"], "quantity": q, "value": r[q]}
            for r in rows for q in ("value", "bound") if r.get(q) is not None]
    return {"estimates": rows, "_csv": _rows_csv(rows), "_plot": plot,
            "_table": [(f"{r['input']} {r['estimator']}", r["value"]) for r in rows]}


def _rows_csv(rows: list[dict]) -> str:
    cols = list(mc_lab.CSV_COLUMNS) + ["input", "bound", "dominated"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        out = []
        for c in cols:
            v = r.get(c)
            if v is None:
                out.append("")
            elif c == "params":
                out.append(json.dumps(v, sort_keys=True))
            elif c == "estimator" or isinstance(v, (str, bool, int)):
                out.append(str(v))
            else:
                out.append(repr(float(v)))
        writer.writerow(out)
    return buf.getvalue()


def _check(name: str, fn: Callable[[], float], tol: float) -> dict:
    err = float(fn())
    return {"check": name, "error": err, "tolerance": tol, "pass": bool(err <= tol)}


def run_selftest() -> list[dict]:
    """Product formula, conditional Mehler identity, the kappa identity and the bound ordering."""
    rng = np.random.default_rng(20240611)
    m = 4
    fs = {p: families.random_symmetric(p, m, rng) for p in (1, 2, 3)}

    def product() -> float:
        xi = rng.standard_normal((20, m))
        worst = 0.0
        for p, q in [(1, 2), (2, 2), (2, 3), (3, 3)]:
            F, G = from_kernel(p, fs[p]), from_kernel(q, fs[q])
            lhs, rhs = evaluate(multiply(F, G), xi), evaluate(F, xi) * evaluate(G, xi)
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs)))))
        return worst

    def mehler() -> float:
        worst = 0.0
        for p, f in fs.items():
            for t in (1.0, 0.1):
                F = from_kernel(p, f)
                cond = ex.condition_on_first_half(ex.mehler_transport(F, t))
                worst = max(worst, float(np.max(np.abs(cond.terms[p].coeffs - math.exp(-p * t) * f.coeffs))))
        return worst

    def kappa_identity() -> float:
        worst = 0.0
        for p in (2, 3):
            k1, k2 = sb.kappa(fs[p], p), sb.kappa_via_gradient(fs[p], p)
            worst = max(worst, abs(k1 - k2) / max(abs(k1), 1e-300))
        return worst

    def ordering() -> float:
        return max(max(sb.intermediate_bound(fs[p], p) - sb.tv_bound(fs[p], p), 0.0) for p in (2, 3))

    return [
        _check("product_formula", product, 1e-9),
        _check("mehler_conditional", mehler, 1e-12),
        _check("kappa_identity", kappa_identity, 1e-10),
        _check("intermediate_le_tv", ordering, 0.0),
    ]


COMMANDS = {"bound": cmd_bound, "diagnose": cmd_diagnose, "mc": cmd_mc}


def _print_table(rows: list[tuple[str, float]], stream) -> None:
    width = max((len(name) for name, _ in rows), default=0)
    for name, value in rows:
        print(f"{name:<{width}}  {value:.10g}", file=stream)


def _write_outputs(config: dict, result: dict) -> dict:
    report = {"command": config["command"], "config": config, "config_hash": config_hash(config),
              **{k: v for k, v in result.items() if not k.startswith("_")}}
    if config["out"]:
        out = Path(config["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(sb._jsonable(report), indent=2, sort_keys=True) + "\n")
        (out / "report.csv").write_text(result["_csv"])
        if config["plot_data"] and "_plot" in result:
            buf = io.StringIO()
            rows = result["_plot"]
            writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
            (out / "plot_data.csv").write_text(buf.getvalue())
    return report


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if args.command == "selftest":
        results = run_selftest()
        for r in results:
            status = "PASS" if r["pass"] else "FAIL"
            print(f"{status}  {r['check']:<20} error={r['error']:.3e} tol={r['tolerance']:.0e}")
        return EXIT_OK if all(r["pass"] for r in results) else EXIT_SELFTEST
    try:
        config = resolve_config(args)
        result = COMMANDS[args.command](config)
        _write_outputs(config, result)
    except sb.SingularCovarianceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (families.BlockMismatchError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"# {config['command']}  config_hash={config_hash(config)}")
    _print_table(result["_table"], sys.stdout)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
