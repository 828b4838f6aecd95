"""Command-line front end and the sensitivity-study harness.

Subcommands: generate-network, generate-scenarios, clear, aggregate,
scalarize, approximate, export-lp, sweep.  Exit codes: 0 ok, 2 infeasible
risk specification, 3 solver failure, 4 configuration error.

The sweep harness reruns the approximation over a list of parameter values
(threshold fraction, default-cost parameters, a connectivity entry, the first
group's size, or the scenario count), writing per-run corner CSVs, per-run
metadata JSON, and one summary table CSV.  Runs are deterministic given the
configured seed; timings appear in the outputs but are not reproducible.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import benson, clearing, lpformat, scalarize, scenarios as scen_mod
from .errors import (
    InfeasibleSpec,
    NoConvergence,
    SolverFailure,
    SysriskError,
    UpperBoundNotMember,
)
from .network import load_network, save_network
from .scenarios import (
    GeneratorConfig,
    Grouping,
    RiskSpec,
    config_from_json_dict,
    expected_aggregate,
    generate_network,
    generate_scenarios,
    load_scenarios,
    save_scenarios,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4

_SIG = ".12g"


def _fmt(v: float) -> str:
    return f"{v:{_SIG}}"


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _parse_groups(text: str) -> Grouping:
    return Grouping.from_sizes([int(v) for v in text.split(",")])


def _load_config(path: str, seed_override: int | None) -> GeneratorConfig:
    cfg = config_from_json_dict(json.loads(Path(path).read_text()))
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    return cfg


def _json_value(v) -> object:
    if isinstance(v, float) and not math.isfinite(v):
        return "-inf" if v < 0 else "inf"
    return v


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")


def _clearing_result_json(res: clearing.ClearingResult) -> dict:
    return {
        "p": None if res.p is None else res.p.tolist(),
        "s": None if res.s is None else res.s.tolist(),
        "aggregate": _json_value(res.aggregate),
        "residual": res.residual,
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_generate_network(args) -> int:
    cfg = _load_config(args.config, args.seed)
    net = generate_network(cfg)
    out = Path(args.out) if args.out else Path(args.output) / "network.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_network(net, out)
    print(out)
    return EXIT_OK


def _cmd_generate_scenarios(args) -> int:
    cfg = _load_config(args.config, args.seed)
    scen = generate_scenarios(cfg, cfg.n, args.k)
    out = Path(args.out) if args.out else Path(args.output) / "scenarios.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenarios(scen, out)
    print(out)
    return EXIT_OK


def _cmd_clear(args) -> int:
    net = load_network(args.network)
    scen = load_scenarios(args.cash_flows)
    x = scen.X[args.scenario_index]
    weights = _parse_floats(args.weights) if args.weights else None
    res = clearing.clearing_milp(net, x, weights)
    out = Path(args.out) if args.out else Path(args.output) / "clearing.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, _clearing_result_json(res))
    print(out)
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    net = load_network(args.network)
    scen = load_scenarios(args.scenarios)
    grouping = _parse_groups(args.groups)
    z = _parse_floats(args.z)
    value = expected_aggregate(net, scen, grouping, z)
    payload: dict = {"expected_aggregate": _json_value(value)}
    if args.gamma_p is not None:
        spec = RiskSpec(gamma_p=args.gamma_p)
        payload["gamma"] = spec.gamma(net)
        payload["member"] = bool(value >= spec.gamma(net) - scen_mod.MEMBER_TOL)
    out = Path(args.out) if args.out else Path(args.output) / "aggregate.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    print(out)
    return EXIT_OK


def _build_scalarization(args, net, scen, grouping, spec):
    if args.kind == "z1":
        if args.group is None:
            raise ValueError("--kind z1 requires --group")
        return scalarize.build_weighted_sum(net, scen, grouping, spec, group=args.group)
    if args.anchor is None:
        raise ValueError("--kind z2 requires --anchor")
    return scalarize.build_min_step(net, scen, grouping, spec, _parse_floats(args.anchor))


def _cmd_scalarize(args) -> int:
    net = load_network(args.network)
    scen = load_scenarios(args.scenarios)
    grouping = _parse_groups(args.groups)
    spec = RiskSpec(gamma_p=args.gamma_p)
    prob = _build_scalarization(args, net, scen, grouping, spec)
    if args.export_lp:
        lpformat.write_lp(prob.model, args.export_lp)
    res = scalarize.solve_scalarization(prob)
    payload = {
        "kind": args.kind,
        "status": res.status,
        "gamma": prob.gamma,
        "value": _json_value(res.value),
    }
    if res.status == "optimal":
        if res.z is not None:
            payload["z"] = res.z.tolist()
        if res.mu is not None:
            payload["mu"] = res.mu
        payload["per_scenario"] = {"p": res.p.tolist(), "s": res.s.tolist()}
    out = Path(args.out) if args.out else Path(args.output) / "scalarization.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    print(out)
    if res.status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_export_lp(args) -> int:
    net = load_network(args.network)
    if args.kind == "clearing":
        scen = load_scenarios(args.cash_flows or args.scenarios)
        x = scen.X[args.scenario_index]
        if net.is_rv:
            model = clearing.clearing_model_rv(net, x)
        else:
            model = clearing.clearing_model_en(net, x)
    else:
        scen = load_scenarios(args.scenarios)
        grouping = _parse_groups(args.groups)
        spec = RiskSpec(gamma_p=args.gamma_p)
        model = _build_scalarization(args, net, scen, grouping, spec).model
    out = Path(args.out) if args.out else Path(args.output) / "model.lp"
    out.parent.mkdir(parents=True, exist_ok=True)
    lpformat.write_lp(model, out)
    print(out)
    return EXIT_OK


def _corners_csv(pair: benson.ApproximationPair) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    G = pair.z_ub.shape[0]
    w.writerow(["kind"] + [f"g{l + 1}" for l in range(G)])
    for p in pair.inner_points:
        w.writerow(["inner"] + [_fmt(v) for v in p])
    for c in pair.outer.corners:
        w.writerow(["outer"] + [_fmt(v) for v in c])
    return buf.getvalue()


def _polyline_csv(pair: benson.ApproximationPair) -> str:
    pts = benson.staircase_polyline(list(pair.inner_points) + [pair.z_ub], pair.z_ub)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["g1", "g2"])
    for p in pts:
        w.writerow([_fmt(p[0]), _fmt(p[1])])
    return buf.getvalue()


def _metadata(pair: benson.ApproximationPair, total_seconds: float) -> dict:
    times = [rec.seconds for rec in pair.history]
    return {
        "iterations": pair.iterations,
        "min_step_problems": len(pair.history),
        "inner_corners": len(pair.inner_points),
        "outer_corners": len(pair.outer.corners),
        "epsilon": pair.epsilon,
        "gamma": pair.gamma,
        "z_ideal": pair.z_ideal.tolist(),
        "z_ub": pair.z_ub.tolist(),
        "mu_values": [rec.mu for rec in pair.history],
        "step_seconds": times,
        "avg_step_seconds": sum(times) / len(times) if times else 0.0,
        "total_seconds": total_seconds,
    }


def _run_approximation(net, scen, grouping, spec, batch, outdir: Path, prefix: str) -> dict:
    t0 = time.perf_counter()
    pair = benson.approximate(net, scen, grouping, spec, batch=batch)
    total = time.perf_counter() - t0
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{prefix}corners.csv").write_text(_corners_csv(pair))
    meta = _metadata(pair, total)
    _write_json(outdir / f"{prefix}metadata.json", meta)
    if pair.z_ub.shape[0] == 2:
        (outdir / f"{prefix}polyline.csv").write_text(_polyline_csv(pair))
    return meta


def _cmd_approximate(args) -> int:
    net = load_network(args.network)
    scen = load_scenarios(args.scenarios)
    grouping = _parse_groups(args.groups)
    z_ub = "auto" if args.z_ub == "auto" else _parse_floats(args.z_ub)
    spec = RiskSpec(gamma_p=args.gamma_p, epsilon=args.epsilon, z_ub=z_ub)
    meta = _run_approximation(net, scen, grouping, spec, args.batch, Path(args.output), "")
    print(json.dumps({"inner_corners": meta["inner_corners"],
                      "outer_corners": meta["outer_corners"],
                      "min_step_problems": meta["min_step_problems"]}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Sweep harness
# ---------------------------------------------------------------------------

_SWEEP_RE = re.compile(r"^q_con\[(\d+)\]\[(\d+)\]$")


@dataclass(frozen=True)
class RunConfig:
    """Configuration of one sensitivity study (possibly a single run)."""

    generator: GeneratorConfig | None
    network_path: str | None
    scenarios_path: str | None
    n_scenarios: int
    group_sizes: tuple
    gamma_p: float
    epsilon: float
    z_ub: object
    batch: bool
    sweep_parameter: str | None
    sweep_values: tuple


def load_run_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    data = json.loads(Path(path).read_text())
    gen = None
    if data.get("generator"):
        gen = config_from_json_dict(data["generator"])
        if seed_override is not None:
            gen = replace(gen, seed=seed_override)
    if data.get("seed") is not None and gen is not None and seed_override is None:
        gen = replace(gen, seed=int(data["seed"]))
    sweep = data.get("sweep") or None
    param, values = None, ()
    if sweep:
        param = sweep["parameter"]
        values = tuple(sweep["values"])
        if param != "gamma_p" and not _SWEEP_RE.match(param) and param not in (
            "alpha", "beta", "n_1", "K"
        ):
            raise ValueError(f"unknown sweep parameter {param!r}")
    group_sizes = tuple(data["groups"]) if data.get("groups") else (
        gen.group_sizes if gen else ()
    )
    if not group_sizes:
        raise ValueError("run config needs groups or an inline generator")
    z_ub = data.get("z_ub", "auto")
    if not isinstance(z_ub, str):
        z_ub = np.asarray(z_ub, dtype=float)
    return RunConfig(
        generator=gen,
        network_path=data.get("network"),
        scenarios_path=data.get("scenarios"),
        n_scenarios=int(data.get("n_scenarios", 0)),
        group_sizes=group_sizes,
        gamma_p=float(data["gamma_p"]),
        epsilon=float(data.get("epsilon", 1.0)),
        z_ub=z_ub,
        batch=bool(data.get("batch", False)),
        sweep_parameter=param,
        sweep_values=values,
    )


def _instantiate(cfg: RunConfig, param: str | None, value) -> tuple:
    """Materialize (net, scen, grouping, spec) for one sweep point."""
    gen = cfg.generator
    gamma_p = cfg.gamma_p
    group_sizes = list(cfg.group_sizes)
    n_scen = cfg.n_scenarios

    if param == "gamma_p":
        gamma_p = float(value)
    elif param in ("alpha", "beta") and gen is not None:
        gen = replace(gen, **{param: float(value)})
    elif param is not None and _SWEEP_RE.match(param):
        a, b = (int(g) for g in _SWEEP_RE.match(param).groups())
        if gen is None:
            raise ValueError("q_con sweeps need an inline generator")
        q = gen.q_con.copy()
        q[a, b] = float(value)
        gen = replace(gen, q_con=q)
    elif param == "n_1":
        if gen is None:
            raise ValueError("group-size sweeps need an inline generator")
        total = sum(gen.group_sizes)
        sizes = list(gen.group_sizes)
        sizes[0] = int(value)
        sizes[-1] = total - sum(sizes[:-1])
        if sizes[-1] < 1:
            raise ValueError(f"n_1 = {value} leaves an empty group")
        gen = replace(gen, group_sizes=tuple(sizes))
        group_sizes = sizes
    elif param == "K":
        n_scen = int(value)

    if cfg.network_path and param not in ("n_1",) and not (
        param is not None and _SWEEP_RE.match(param)
    ):
        net = load_network(cfg.network_path)
        if param == "alpha":
            net = net.with_costs(float(value), net.beta if net.beta is not None else 1.0)
        elif param == "beta":
            net = net.with_costs(net.alpha if net.alpha is not None else 1.0, float(value))
    else:
        if gen is None:
            raise ValueError("run config needs a network path or an inline generator")
        net = generate_network(gen)

    if cfg.scenarios_path and param != "K" and param != "n_1":
        scen = load_scenarios(cfg.scenarios_path)
    else:
        if gen is None:
            raise ValueError("run config needs a scenarios path or an inline generator")
        if n_scen <= 0:
            raise ValueError("n_scenarios must be set when generating scenarios")
        scen = generate_scenarios(gen, gen.n, n_scen)

    grouping = Grouping.from_sizes(group_sizes)
    spec = RiskSpec(gamma_p=gamma_p, epsilon=cfg.epsilon, z_ub=cfg.z_ub)
    return net, scen, grouping, spec


def _execute_run(payload: tuple) -> dict:
    cfg, param, value, outdir, prefix = payload
    net, scen, grouping, spec = _instantiate(cfg, param, value)
    return _run_approximation(net, scen, grouping, spec, cfg.batch, Path(outdir), prefix)


def run_sweep(cfg: RunConfig, output_dir: str | Path, jobs: int = 1) -> Path:
    """Run every sweep point, write per-run artifacts and the summary table.

    Returns the summary CSV path.  Columns: the sweep value, inner/outer
    corner counts, number of minimum-step problems, average seconds per
    problem, and total seconds (timings are informational only).
    """
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.sweep_parameter is None:
        points = [(None, None)]
    else:
        points = [(cfg.sweep_parameter, v) for v in cfg.sweep_values]
    payloads = []
    for idx, (param, value) in enumerate(points):
        tag = "run" if param is None else f"{param}_{value:g}" if isinstance(value, float) else f"{param}_{value}"
        tag = re.sub(r"[^A-Za-z0-9_.-]", "_", tag)
        payloads.append((cfg, param, value, str(outdir), f"{idx:03d}_{tag}_"))

    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            metas = list(pool.map(_execute_run, payloads))
    else:
        metas = [_execute_run(p) for p in payloads]

    summary = outdir / "summary.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["sweep_value", "inner_corners", "outer_corners", "min_step_problems",
         "avg_step_seconds", "total_seconds"]
    )
    for (param, value), meta in zip(points, metas):
        w.writerow(
            [
                "" if value is None else (_fmt(value) if isinstance(value, float) else value),
                meta["inner_corners"],
                meta["outer_corners"],
                meta["min_step_problems"],
                f"{meta['avg_step_seconds']:.6f}",
                f"{meta['total_seconds']:.6f}",
            ]
        )
    summary.write_text(buf.getvalue())
    return summary


def _cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    summary = run_sweep(cfg, args.output, jobs=args.jobs)
    print(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _common(sub, *, config=False):
    sub.add_argument("--seed", type=int, default=None, help="override the configured seed")
    sub.add_argument("--output", default=".", help="output directory")
    if config:
        sub.add_argument("--config", required=True, help="configuration JSON path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sysrisk",
        description="Clearing vectors and set-valued systemic risk measures via MILP.",
    )
    sp = ap.add_subparsers(dest="command", required=True)

    g = sp.add_parser("generate-network", help="draw a random interbank network")
    _common(g, config=True)
    g.add_argument("--out", help="output network JSON path")
    g.set_defaults(func=_cmd_generate_network)

    g = sp.add_parser("generate-scenarios", help="draw cash-flow scenarios")
    _common(g, config=True)
    g.add_argument("--k", type=int, required=True, help="number of scenarios")
    g.add_argument("--out", help="output scenario CSV path")
    g.set_defaults(func=_cmd_generate_scenarios)

    g = sp.add_parser("clear", help="solve one clearing problem")
    _common(g)
    g.add_argument("--network", required=True)
    g.add_argument("--cash-flows", required=True, help="scenario CSV holding the cash flows")
    g.add_argument("--scenario-index", type=int, default=0)
    g.add_argument("--weights", help="comma-separated objective weights")
    g.add_argument("--out")
    g.set_defaults(func=_cmd_clear)

    g = sp.add_parser("aggregate", help="expected aggregate payment at a capital vector")
    _common(g)
    g.add_argument("--network", required=True)
    g.add_argument("--scenarios", required=True)
    g.add_argument("--groups", required=True, help="comma-separated group sizes")
    g.add_argument("--z", required=True, help="comma-separated group capital vector")
    g.add_argument("--gamma-p", type=float, default=None)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_aggregate)

    g = sp.add_parser("scalarize", help="solve one scalarization MILP")
    _common(g)
    g.add_argument("--network", required=True)
    g.add_argument("--scenarios", required=True)
    g.add_argument("--groups", required=True)
    g.add_argument("--kind", choices=["z1", "z2"], required=True)
    g.add_argument("--group", type=int, default=None, help="group index for --kind z1 (0-based)")
    g.add_argument("--anchor", default=None, help="comma-separated anchor for --kind z2")
    g.add_argument("--gamma-p", type=float, required=True)
    g.add_argument("--export-lp", default=None, help="also dump the model in LP format")
    g.add_argument("--out")
    g.set_defaults(func=_cmd_scalarize)

    g = sp.add_parser("approximate", help="inner/outer approximation of the risk set")
    _common(g)
    g.add_argument("--network", required=True)
    g.add_argument("--scenarios", required=True)
    g.add_argument("--groups", required=True)
    g.add_argument("--gamma-p", type=float, required=True)
    g.add_argument("--epsilon", type=float, required=True)
    g.add_argument("--z-ub", default="auto", help='"auto" or comma-separated point')
    g.add_argument("--batch", action="store_true")
    g.set_defaults(func=_cmd_approximate)

    g = sp.add_parser("export-lp", help="write a model in LP format without solving")
    _common(g)
    g.add_argument("--network", required=True)
    g.add_argument("--kind", choices=["clearing", "z1", "z2"], required=True)
    g.add_argument("--cash-flows", help="scenario CSV for --kind clearing")
    g.add_argument("--scenarios", help="scenario CSV for scalarization kinds")
    g.add_argument("--scenario-index", type=int, default=0)
    g.add_argument("--groups")
    g.add_argument("--group", type=int, default=None)
    g.add_argument("--anchor", default=None)
    g.add_argument("--gamma-p", type=float, default=1.0)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_export_lp)

    g = sp.add_parser("sweep", help="sensitivity study over one parameter")
    _common(g, config=True)
    g.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    g.set_defaults(func=_cmd_sweep)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleSpec, UpperBoundNotMember) as exc:
        print(json.dumps({"error": "infeasible-spec", "detail": str(exc)}), file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverFailure, NoConvergence) as exc:
        print(json.dumps({"error": "solver-failure", "detail": str(exc)}), file=sys.stderr)
        return EXIT_SOLVER
    except (SysriskError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "config", "detail": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
