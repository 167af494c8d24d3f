"""Command-line front end.

Every subcommand is a *task*: a function from a parameter dict to a table
(or a JSON document).  ``sweep`` runs one task over the cartesian product of
a parameter grid and writes the stacked tables in long format, which is how
the plot configs under ``configs/`` are produced.

Exit status: 0 on success, 2 for bad usage or input, 3 when the problem is
infeasible, 4 on numerical failure.  Nothing is written on failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .bounds import csit_perfect, csit_quantized, infinite_diversity
from .continuous_alloc import capacity_maximizing_power, min_expected_distortion_continuous
from .convex_cost import CostSpec, minimize_cost
from .discrete_alloc import Allocation, db_to_linear, minimize_expected_distortion, snr_sweep
from .errors import InfeasibleError, LayercastError, NumericalError, ValidationError
from .fading import ContinuousFading, DiscreteFading, discrete_view, fading_from_dict
from .montecarlo import simulate
from .two_layer import TwoLayerParams, optimal_split

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# tables and formatting
# ---------------------------------------------------------------------------


@dataclass
class Table:
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    comments: List[str] = field(default_factory=list)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def table_to_csv(table: Table) -> str:
    buf = io.StringIO()
    for line in table.comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([fmt(row.get(c)) for c in table.columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


def to_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2) + "\n"


# ---------------------------------------------------------------------------
# parameter helpers
# ---------------------------------------------------------------------------


def load_json_arg(value) -> Any:
    """Inline JSON (starting with ``{`` or ``[``), a file path, or an already-parsed object."""
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if text.startswith(("{", "[")):
            return json.loads(text)
        return json.loads(Path(text).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read {value!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {value!r}: {exc}") from exc


def float_list(value) -> List[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        items = [s for s in value.replace(" ", "").split(",") if s]
    else:
        items = list(value)
    try:
        out = [float(s) for s in items]
    except ValueError as exc:
        raise ValidationError(f"not a list of numbers: {value!r}") from exc
    if not out:
        raise ValidationError("empty number list")
    return out


def _require(params: Mapping[str, Any], *keys):
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise ValidationError("missing parameter(s): " + ", ".join(missing))


def _positive_b(params) -> float:
    b = float(params["b"])
    if not b > 0:
        raise ValidationError("b must be positive")
    return b


def thread_count() -> int:
    raw = os.environ.get("LAYERCAST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValidationError(f"LAYERCAST_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ValidationError("LAYERCAST_THREADS must be >= 0")
    if n == 0:
        return os.cpu_count() or 1
    return n


def _discrete(desc) -> DiscreteFading:
    return discrete_view(load_json_arg(desc))


def _continuous(desc) -> ContinuousFading:
    fading = fading_from_dict(load_json_arg(desc))
    if not isinstance(fading, ContinuousFading):
        raise ValidationError("this task needs a continuous fading law (rayleigh, erlang or tabulated)")
    return fading


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def task_two_layer(params) -> Table:
    """``p_high`` is a shorthand for ``w = p_high, u = 1 - p_high``."""
    params = dict(params)
    if params.get("p_high") is not None:
        params["w"] = float(params["p_high"])
        params["u"] = 1.0 - params["w"]
    if params.get("total_power") is not None:
        powers = float_list(params["total_power"])
        if any(P < 0 for P in powers):
            raise ValidationError("total power must be nonnegative")
        params["snr_db"] = [10.0 * math.log10(P) if P > 0 else -math.inf for P in powers]
    else:
        _require(params, "snr_db")
        powers = [float(db_to_linear(s)) for s in float_list(params["snr_db"])]
    _require(params, "u", "w", "alpha", "beta", "b")
    tp = TwoLayerParams(
        u=float(params["u"]),
        w=float(params["w"]),
        alpha=float(params["alpha"]),
        beta=float(params["beta"]),
        b=_positive_b(params),
    )
    table = Table(["snr_db", "total_power", "ceiling", "assigned_high", "min_distortion", "aggregate_weight", "unconstrained"])
    for snr, P in zip(params["snr_db"] if isinstance(params["snr_db"], list) else float_list(params["snr_db"]), powers):
        s = optimal_split(tp, P)
        table.rows.append(
            dict(
                snr_db=snr,
                total_power=P,
                ceiling=s.ceiling,
                assigned_high=s.assigned_high,
                min_distortion=s.min_distortion,
                aggregate_weight=s.aggregate_weight,
                unconstrained=s.unconstrained,
            )
        )
    return table


def _discrete_results(params):
    _require(params, "fading", "snr_db", "b")
    fading = _discrete(params["fading"])
    b = _positive_b(params)
    snrs = float_list(params["snr_db"])
    return fading, b, snrs, snr_sweep(fading, b, snrs, threads=thread_count())


def task_alloc_discrete(params) -> Table:
    fading, b, snrs, results = _discrete_results(params)
    if params.get("summary"):
        table = Table(["snr_db", "total_power", "expected_distortion", "outage_prob", "active_layers", "lowest_active_gamma"])
        for snr, r in zip(snrs, results):
            active = np.flatnonzero(r.allocation.per_layer > 0)
            table.rows.append(
                dict(
                    snr_db=snr,
                    total_power=r.total_power,
                    expected_distortion=r.expected_distortion,
                    outage_prob=fading.outage_prob,
                    active_layers=int(active.size),
                    lowest_active_gamma=float(fading.gammas[active[0]]) if active.size else None,
                )
            )
        return table
    table = Table(["snr_db", "layer", "gamma", "prob", "power", "cumulative_power", "realized_distortion", "expected_distortion"])
    for snr, r in zip(snrs, results):
        for k in range(fading.num_states):
            table.rows.append(
                dict(
                    snr_db=snr,
                    layer=k + 1,
                    gamma=fading.gammas[k],
                    prob=fading.probs[k],
                    power=r.allocation.per_layer[k],
                    cumulative_power=r.allocation.cumulative[k],
                    realized_distortion=r.realized_distortions[k + 1],
                    expected_distortion=r.expected_distortion,
                )
            )
    return table


def doc_alloc_discrete(params) -> dict:
    fading, b, snrs, results = _discrete_results(params)
    return {
        "b": b,
        "gammas": fading.gammas,
        "probs": fading.probs,
        "outage_prob": fading.outage_prob,
        "results": [
            {
                "snr_db": snr,
                "total_power": r.total_power,
                "expected_distortion": r.expected_distortion,
                "per_layer": r.allocation.per_layer,
                "cumulative": r.allocation.cumulative,
                "realized_distortions": r.realized_distortions,
            }
            for snr, r in zip(snrs, results)
        ],
    }


def _capacity_density(fading, g, step):
    lo = max(g - step, 0.5 * g)
    return -(capacity_maximizing_power(fading, g + step) - capacity_maximizing_power(fading, lo)) / (g + step - lo)


def task_alloc_continuous(params) -> Table:
    _require(params, "fading", "b", "snr_db")
    fading = _continuous(params["fading"])
    b = _positive_b(params)
    snrs = float_list(params["snr_db"])
    sols = [min_expected_distortion_continuous(fading, b, float(db_to_linear(s))) for s in snrs]
    if params.get("summary"):
        table = Table(["snr_db", "gamma_o", "gamma_P", "ED_star", "valid", "power_absorbed"])
        for snr, sol in zip(snrs, sols):
            table.rows.append(
                dict(
                    snr_db=snr,
                    gamma_o=sol.gamma_o,
                    gamma_P=sol.gamma_P,
                    ED_star=sol.min_expected_distortion,
                    valid=sol.valid,
                    power_absorbed=sol.power_absorbed,
                )
            )
        return table
    n = int(params.get("grid", 101))
    if n < 2:
        raise ValidationError("grid needs at least two points")
    step = 1e-5 * fading.mean
    table = Table(["snr_db", "gamma", "U", "rho", "D", "U_capacity", "rho_capacity"])
    for snr, sol in zip(snrs, sols):
        table.comments.append(
            f"snr_db={fmt(snr)},gamma_o={fmt(sol.gamma_o)},gamma_P={fmt(sol.gamma_P)},"
            f"ED_star={fmt(sol.min_expected_distortion)},valid={fmt(sol.valid)}"
        )
        gammas = np.linspace(sol.band_start, sol.gamma_o, n)
        U, rho, D = sol.U(gammas), sol.rho(gammas), sol.D(gammas)
        for g, u, r, d in zip(gammas, U, rho, D):
            table.rows.append(
                dict(
                    snr_db=snr,
                    gamma=g,
                    U=u,
                    rho=r,
                    D=d,
                    U_capacity=capacity_maximizing_power(fading, g),
                    rho_capacity=_capacity_density(fading, g, step),
                )
            )
    return table


def _cost_spec(params) -> CostSpec:
    caps = params.get("cap") or {}
    if isinstance(caps, (list, tuple)):
        parsed = {}
        for item in caps:
            try:
                k, v = str(item).split("=", 1)
                parsed[int(k)] = float(v)
            except ValueError as exc:
                raise ValidationError(f"cap must look like k=value, got {item!r}") from exc
        caps = parsed
    caps = {int(k): float(v) for k, v in dict(caps).items()}
    phi = float(params.get("phi") or 0.0)
    return CostSpec(
        kind="risk_sensitive" if phi > 0 else "expected",
        phi=phi,
        max_expected=None if params.get("dmax") is None else float(params["dmax"]),
        max_variance=None if params.get("vmax") is None else float(params["vmax"]),
        caps=caps,
    )


def _min_cost(params):
    _require(params, "fading", "snr_db", "b")
    fading = _discrete(params["fading"])
    snr = float_list(params["snr_db"])
    if len(snr) != 1:
        raise ValidationError("min-cost takes a single SNR")
    result = minimize_cost(fading, float(db_to_linear(snr[0])), _positive_b(params), _cost_spec(params))
    return fading, snr[0], result


def doc_min_cost(params) -> dict:
    fading, snr, r = _min_cost(params)
    return {
        "snr_db": snr,
        "phi": float(params.get("phi") or 0.0),
        "distortions": r.distortions,
        "per_layer": r.allocation.per_layer,
        "cumulative": r.allocation.cumulative,
        "cost": r.cost,
        "expected_distortion": r.expected,
        "variance": r.variance,
        "power_used": r.power_used,
        "kkt_residual": r.kkt_residual,
    }


def task_min_cost(params) -> Table:
    fading, snr, r = _min_cost(params)
    if params.get("summary"):
        table = Table(["snr_db", "cost", "expected_distortion", "variance", "power_used", "kkt_residual"])
        table.rows.append(
            dict(snr_db=snr, cost=r.cost, expected_distortion=r.expected, variance=r.variance, power_used=r.power_used, kkt_residual=r.kkt_residual)
        )
        return table
    table = Table(["layer", "gamma", "power", "realized_distortion", "cost", "expected_distortion", "variance", "kkt_residual"])
    for k in range(fading.num_states):
        table.rows.append(
            dict(
                layer=k + 1,
                gamma=fading.gammas[k],
                power=r.allocation.per_layer[k],
                realized_distortion=r.distortions[k],
                cost=r.cost,
                expected_distortion=r.expected,
                variance=r.variance,
                kkt_residual=r.kkt_residual,
            )
        )
    return table


BOUND_CHOICES = ("all", "csit-q", "csit-p", "inf-div", "no-csit")


def task_bounds(params) -> Table:
    _require(params, "fading", "b", "snr_db")
    desc = load_json_arg(params["fading"])
    b = _positive_b(params)
    which = params.get("which", "all")
    if which not in BOUND_CHOICES:
        raise ValidationError(f"--which must be one of {', '.join(BOUND_CHOICES)}")
    try:
        disc = discrete_view(desc)
    except ValidationError:
        disc = None
    law = fading_from_dict(desc)
    cont = law if isinstance(law, ContinuousFading) else None
    mean = (cont or disc).mean

    def no_csit(P):
        if disc is not None:
            return minimize_expected_distortion(disc, P, b).expected_distortion
        return min_expected_distortion_continuous(cont, b, P).min_expected_distortion

    curves: Dict[str, Callable[[float], float]] = {}
    if which in ("all", "csit-q"):
        if disc is None:
            if which == "csit-q":
                raise ValidationError("csit-q needs a discrete pmf (discrete, or rayleigh with truncation/levels)")
        else:
            curves["csit_quantized"] = lambda P: csit_quantized(disc, P, b)
    if which in ("all", "csit-p"):
        if cont is None:
            if which == "csit-p":
                raise ValidationError("csit-p needs a continuous fading law")
        else:
            curves["csit_perfect"] = lambda P: csit_perfect(cont, P, b)
    if which in ("all", "inf-div"):
        curves["infinite_diversity"] = lambda P: infinite_diversity(mean, P, b)
    if which in ("all", "no-csit"):
        curves["no_csit"] = no_csit
    table = Table(["snr_db", "total_power"] + list(curves))
    for snr in float_list(params["snr_db"]):
        P = float(db_to_linear(snr))
        row = dict(snr_db=snr, total_power=P)
        row.update({name: fn(P) for name, fn in curves.items()})
        table.rows.append(row)
    return table


def _allocation_from_doc(doc, snr_db: Optional[float]) -> Allocation:
    if isinstance(doc, Mapping) and "results" in doc:
        results = doc["results"]
        if snr_db is not None:
            results = [r for r in results if math.isclose(float(r["snr_db"]), snr_db)]
        if len(results) != 1:
            raise ValidationError("allocation file holds several results; pick one with --snr-db")
        doc = results[0]
    if isinstance(doc, Mapping) and "per_layer" in doc:
        return Allocation.from_per_layer(doc["per_layer"])
    if isinstance(doc, (list, tuple)):
        return Allocation.from_per_layer(doc)
    raise ValidationError("allocation JSON needs a 'per_layer' list")


def doc_montecarlo(params) -> dict:
    _require(params, "fading", "b", "samples", "seed")
    desc = load_json_arg(params["fading"])
    b = _positive_b(params)
    snrs = float_list(params["snr_db"]) if params.get("snr_db") is not None else None
    if snrs is not None and len(snrs) != 1:
        raise ValidationError("montecarlo takes a single SNR")
    snr = snrs[0] if snrs else None
    threads = thread_count()
    law = fading_from_dict(desc)
    try:
        disc = discrete_view(desc)
    except ValidationError:
        disc = None
    analytic = None
    layers = None
    if params.get("alloc") is not None:
        alloc = _allocation_from_doc(load_json_arg(params["alloc"]), snr)
        if disc is not None:
            target = disc
        else:
            if params.get("layers") is None:
                raise ValidationError("a discrete allocation over continuous fading needs --layers")
            layers = _discrete(params["layers"])
            target = law
    else:
        if snr is None:
            raise ValidationError("give --alloc or --snr-db")
        P = float(db_to_linear(snr))
        if disc is not None:
            result = minimize_expected_distortion(disc, P, b)
            target, alloc, analytic = disc, result.allocation, result.expected_distortion
        else:
            alloc = min_expected_distortion_continuous(law, b, P)
            target, analytic = law, alloc.min_expected_distortion
    est = simulate(target, alloc, b, int(params["samples"]), int(params["seed"]), layers=layers, threads=threads)
    doc = {
        "mean": est.mean,
        "std_error": est.std_error,
        "var_estimate": est.var_estimate,
        "samples": est.samples,
        "seed": est.seed,
    }
    if analytic is not None:
        doc["analytic_expected_distortion"] = analytic
    return doc


TABLE_TASKS: Dict[str, Callable[[Mapping[str, Any]], Table]] = {
    "two-layer": task_two_layer,
    "alloc-discrete": task_alloc_discrete,
    "alloc-continuous": task_alloc_continuous,
    "min-cost": task_min_cost,
    "bounds": task_bounds,
}


def run_sweep(config: Mapping[str, Any]) -> Table:
    """Run ``config["task"]`` over the cartesian product of ``config["grid"]``.

    Grid keys become leading columns.  Runs are spread over
    ``LAYERCAST_THREADS`` workers and stacked in grid order.
    """
    task_name = config.get("task")
    if task_name not in TABLE_TASKS:
        raise ValidationError(f"sweep task must be one of {', '.join(TABLE_TASKS)}")
    base = dict(config.get("params", {}))
    grid = dict(config.get("grid", {}))
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ValidationError(f"grid entry {k!r} must be a nonempty list")
    combos = list(itertools.product(*(grid[k] for k in keys))) if keys else [()]
    task = TABLE_TASKS[task_name]

    def run(combo):
        params = dict(base)
        params.update(zip(keys, combo))
        return task(params)

    threads = thread_count()
    if threads > 1 and len(combos) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tables = list(pool.map(run, combos))
    else:
        tables = [run(c) for c in combos]

    label_cols = [k for k in keys if k not in tables[0].columns]
    out = Table(label_cols + tables[0].columns)
    for combo, table in zip(combos, tables):
        labels = {k: _grid_label(v) for k, v in zip(keys, combo) if k in label_cols}
        for row in table.rows:
            out.rows.append({**labels, **row})
    return out


def _grid_label(value):
    """Scalar grid values label rows directly; a fading descriptor by its most specific field."""
    if isinstance(value, Mapping):
        for key in ("label", "levels", "L", "mean", "kind"):
            if key in value:
                return value[key]
        return json.dumps(value, sort_keys=True)
    return value


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p, fading=True, snr=True, b=True):
    if fading:
        p.add_argument("--fading", required=True, help="fading descriptor: JSON file or inline JSON")
    if b:
        p.add_argument("--b", type=float, required=True, help="bandwidth ratio (channel uses per source symbol)")
    if snr:
        p.add_argument("--snr-db", required=True, help="comma-separated SNR values in dB")
    p.add_argument("--out", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layercast", description="Layered broadcast coding power allocation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("two-layer", help="optimal split between two layers")
    for name in ("u", "w", "alpha", "beta"):
        p.add_argument(f"--{name}", type=float, required=name in ("alpha", "beta"))
    p.add_argument("--p-high", type=float, help="sets w = p_high and u = 1 - p_high")
    _add_common(p, fading=False, snr=False)
    level = p.add_mutually_exclusive_group(required=True)
    level.add_argument("--snr-db", help="comma-separated total power values in dB")
    level.add_argument("--total-power", help="comma-separated total power values (linear)")

    p = sub.add_parser("alloc-discrete", help="minimum expected distortion over a discrete pmf")
    _add_common(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--summary", action="store_true", help="one row per SNR instead of one per layer")

    p = sub.add_parser("alloc-continuous", help="optimal power distribution for a continuous law")
    _add_common(p)
    p.add_argument("--grid", type=int, default=101, help="gain grid points across the active band")
    p.add_argument("--summary", action="store_true", help="band edges and E[D]* only")

    p = sub.add_parser("min-cost", help="minimize E[D] + phi VAR[D] under optional constraints")
    _add_common(p)
    p.add_argument("--phi", type=float, default=0.0)
    p.add_argument("--dmax", type=float, help="upper bound on E[D]")
    p.add_argument("--vmax", type=float, help="upper bound on VAR[D]")
    p.add_argument("--cap", action="append", default=[], metavar="K=V", help="upper bound V on the distortion of state K")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--summary", action="store_true", help="with csv: one row with cost, E[D] and VAR[D]")

    p = sub.add_parser("bounds", help="CSIT and diversity reference curves")
    _add_common(p)
    p.add_argument("--which", choices=BOUND_CHOICES, default="all")

    p = sub.add_parser("montecarlo", help="sampled E[D] and VAR[D]")
    _add_common(p, snr=False)
    p.add_argument("--snr-db", help="solve for the optimal allocation at this SNR (when --alloc is absent)")
    p.add_argument("--alloc", help="allocation JSON (from alloc-discrete or min-cost)")
    p.add_argument("--layers", help="discrete descriptor of the layer gains when --fading is continuous")
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="run a task over a parameter grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output CSV (default: stdout)")
    return parser


def _params(args) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k not in ("command", "out", "format")}


def _render(args) -> str:
    cmd = args.command
    if cmd == "sweep":
        return table_to_csv(run_sweep(load_json_arg(args.config)))
    params = _params(args)
    if cmd == "alloc-discrete" and args.format == "json":
        return to_json(doc_alloc_discrete(params))
    if cmd == "min-cost" and args.format == "json":
        return to_json(doc_min_cost(params))
    if cmd == "montecarlo":
        return to_json(doc_montecarlo(params))
    return table_to_csv(TABLE_TASKS[cmd](params))


def _fail(code: int, payload: Dict[str, Any]) -> int:
    sys.stderr.write(json.dumps(_jsonable(payload)) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = _render(args)
    except InfeasibleError as exc:
        return _fail(EXIT_INFEASIBLE, {"error": "infeasible", "message": str(exc), "constraint": exc.constraint, "violation": exc.violation})
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, {"error": "numerical", "message": str(exc), "diagnostics": exc.diagnostics})
    except (ValidationError, LayercastError) as exc:
        return _fail(EXIT_USAGE, {"error": "usage", "message": str(exc)})
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
