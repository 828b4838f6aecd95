"""Joint scenario-expanded MILPs for the risk-set scalarizations.

Two scalarization families, each for both clearing variants:

* weighted-sum: minimize one group's capital subject to the acceptance
  constraint (expected aggregate payment >= gamma), used for the ideal point;
* minimum step-length: smallest mu such that ``anchor + mu * 1`` enters the
  risk set, the workhorse query of the approximation loop.

Every model carries finite boxes on the capital (or step) variables, with the
constants taken from the boundedness results for these formulations: the
weighted-sum optimum is at most ``|X| + |pbar|`` (Eisenberg-Noe) or
``|X| + |pbar| / alpha`` (Rogers-Veraart), the step optimum adds ``|v|``, and
the lower box ends come from the matching infeasibility constructions (where
``|.|`` is the max-abs norm over all scenario cells / components).

All four MILPs are feasible exactly when ``gamma <= sum(pbar)``.  Identical
scenario rows are merged (probabilities summed) before the model is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import milp
from .errors import DimensionMismatch, SolverFailure
from .network import FinancialNetwork
from .scenarios import Grouping, RiskSpec, ScenarioSet

VALUE_BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class ScalarizationBounds:
    """The big-M constant (if the formulation uses one) and the decision box."""

    big_m: float | None
    var_lo: float
    var_hi: float
    value_upper_bound: float | None


@dataclass(frozen=True)
class ScalarizationProblem:
    """A built scalarization MILP plus the layout needed to read solutions back.

    ``kind`` is ``"weighted_sum"`` (objective: one group's capital, or a
    general nonnegative combination) or ``"min_step"`` (objective: the step
    length toward the risk set from ``anchor``).
    """

    kind: str
    model: milp.MilpModel
    bounds: ScalarizationBounds
    gamma: float
    group: int | None
    weights: np.ndarray | None
    anchor: np.ndarray | None
    n: int
    K: int
    G: int
    dec_count: int  # G capital variables, or 1 step variable

    def p_index(self, k: int, i: int) -> int:
        return self.dec_count + 2 * self.n * k + i

    def s_index(self, k: int, i: int) -> int:
        return self.dec_count + 2 * self.n * k + self.n + i


@dataclass(frozen=True)
class ScalarizationResult:
    status: str  # "optimal" or "infeasible"
    value: float
    z: np.ndarray | None
    mu: float | None
    p: np.ndarray | None  # K x n payments per (collapsed) scenario
    s: np.ndarray | None  # K x n default indicators
    problem: ScalarizationProblem


def collapse_scenarios(scen: ScenarioSet) -> ScenarioSet:
    """Merge identical cash-flow rows, summing probabilities (order-preserving)."""
    seen: dict[bytes, int] = {}
    rows: list[np.ndarray] = []
    q: list[float] = []
    for k in range(scen.K):
        key = scen.X[k].tobytes()
        if key in seen:
            q[seen[key]] += float(scen.q[k])
        else:
            seen[key] = len(rows)
            rows.append(scen.X[k])
            q.append(float(scen.q[k]))
    if len(rows) == scen.K:
        return scen
    return ScenarioSet(X=np.array(rows), q=np.array(q))


def _check(net: FinancialNetwork, scen: ScenarioSet, grouping: Grouping) -> None:
    if scen.n != net.n or grouping.n != net.n:
        raise DimensionMismatch("network, scenarios and grouping sizes disagree")


def _scenario_block(
    model: milp.MilpModel, net: FinancialNetwork, scen: ScenarioSet, gamma: float
) -> tuple[list[list[int]], list[list[int]]]:
    """Add p/s variables and the acceptance (expectation) row; return index maps."""
    n, K = net.n, scen.K
    p_idx = [[model.add_variable(f"p_{k}_{i}", 0.0, float(net.pbar[i])) for i in range(n)]
             for k in range(K)]
    s_idx = [[model.add_variable(f"s_{k}_{i}", binary=True) for i in range(n)]
             for k in range(K)]
    expect = {p_idx[k][i]: float(scen.q[k]) for k in range(K) for i in range(n)}
    model.add_constraint(expect, ">=", gamma, name="acceptance")
    return p_idx, s_idx


def build_weighted_sum_en(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    group: int | None = None,
    weights: np.ndarray | None = None,
) -> ScalarizationProblem:
    """Weighted-sum MILP for the signed Eisenberg-Noe risk set.

    With ``group`` given, minimizes that group's capital (the unit-weight
    case consumed by the approximation algorithm).  A general nonnegative
    ``weights`` objective is accepted but is not oracle-tested.
    """
    if net.is_rv:
        raise ValueError("network must be the Eisenberg-Noe variant")
    _check(net, scen, grouping)
    scen = collapse_scenarios(scen)
    gamma = spec.gamma(net)
    n, K, G = net.n, scen.K, grouping.group_count
    Xn = scen.sup_norm
    Pn = float(net.pbar.max())
    M = 2.0 * Xn + (n + 1) * Pn
    z_hi = Xn + Pn
    z_lo = -2.0 * M

    model = milp.MilpModel()
    z_idx = [model.add_variable(f"z_{l}", z_lo, z_hi) for l in range(G)]
    p_idx, s_idx = _scenario_block(model, net, scen, gamma)
    g = grouping.assignment
    for k in range(K):
        for i in range(n):
            xki = float(scen.X[k][i])
            inflow = {p_idx[k][j]: float(net.pi[j, i]) for j in range(n) if net.pi[j, i] != 0.0}
            row = {idx: -c for idx, c in inflow.items()}
            row[p_idx[k][i]] = row.get(p_idx[k][i], 0.0) + 1.0
            row[z_idx[g[i]]] = row.get(z_idx[g[i]], 0.0) - 1.0
            row[s_idx[k][i]] = M
            model.add_constraint(row, "<=", xki + M)
            model.add_constraint(
                {p_idx[k][i]: 1.0, s_idx[k][i]: -float(net.pbar[i])}, "<=", 0.0
            )
            row4 = dict(inflow)
            row4[z_idx[g[i]]] = row4.get(z_idx[g[i]], 0.0) + 1.0
            row4[s_idx[k][i]] = row4.get(s_idx[k][i], 0.0) - M
            model.add_constraint(row4, "<=", -xki)
    w = _objective_weights(model, z_idx, group, weights, G)
    bounds = ScalarizationBounds(M, z_lo, z_hi, z_hi if group is not None else None)
    return ScalarizationProblem(
        "weighted_sum", model, bounds, gamma, group, w, None, n, K, G, G
    )


def build_weighted_sum_rv(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    group: int | None = None,
    weights: np.ndarray | None = None,
) -> ScalarizationProblem:
    """Weighted-sum MILP for the Rogers-Veraart risk set.

    Adds the positivity rows ``X_i(w^k) + z_{group(i)} >= 0`` that keep the
    aggregation value defined in every scenario.
    """
    if not net.is_rv:
        raise ValueError("network must be the Rogers-Veraart variant")
    _check(net, scen, grouping)
    scen = collapse_scenarios(scen)
    gamma = spec.gamma(net)
    n, K, G = net.n, scen.K, grouping.group_count
    Xn = scen.sup_norm
    Pn = float(net.pbar.max())
    alpha, beta = net.alpha, net.beta
    z_hi = Xn + Pn / alpha
    z_lo = -(Xn + (n + 1) * Pn / alpha)

    model = milp.MilpModel()
    z_idx = [model.add_variable(f"z_{l}", z_lo, z_hi) for l in range(G)]
    p_idx, s_idx = _scenario_block(model, net, scen, gamma)
    g = grouping.assignment
    for k in range(K):
        for i in range(n):
            xki = float(scen.X[k][i])
            row1 = {p_idx[k][j]: -beta * float(net.pi[j, i]) for j in range(n) if net.pi[j, i] != 0.0}
            row1[p_idx[k][i]] = row1.get(p_idx[k][i], 0.0) + 1.0
            row1[z_idx[g[i]]] = row1.get(z_idx[g[i]], 0.0) - alpha
            row1[s_idx[k][i]] = -float(net.pbar[i])
            model.add_constraint(row1, "<=", alpha * xki)
            row2 = {p_idx[k][j]: -float(net.pi[j, i]) for j in range(n) if net.pi[j, i] != 0.0}
            row2[z_idx[g[i]]] = row2.get(z_idx[g[i]], 0.0) - 1.0
            row2[s_idx[k][i]] = row2.get(s_idx[k][i], 0.0) + float(net.pbar[i])
            model.add_constraint(row2, "<=", xki)
            model.add_constraint({z_idx[g[i]]: -1.0}, "<=", xki)
    w = _objective_weights(model, z_idx, group, weights, G)
    bounds = ScalarizationBounds(None, z_lo, z_hi, z_hi if group is not None else None)
    return ScalarizationProblem(
        "weighted_sum", model, bounds, gamma, group, w, None, n, K, G, G
    )


def build_min_step_en(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    anchor: np.ndarray,
) -> ScalarizationProblem:
    """Minimum-step MILP for the signed Eisenberg-Noe risk set at ``anchor``."""
    if net.is_rv:
        raise ValueError("network must be the Eisenberg-Noe variant")
    _check(net, scen, grouping)
    anchor = _check_anchor(grouping, anchor)
    scen = collapse_scenarios(scen)
    gamma = spec.gamma(net)
    n, K, G = net.n, scen.K, grouping.group_count
    Xn = scen.sup_norm
    Pn = float(net.pbar.max())
    Vn = float(np.abs(anchor).max())
    M = 2.0 * Xn + 2.0 * Vn + (n + 1) * Pn
    mu_hi = Xn + Vn + Pn
    mu_lo = -2.0 * M

    model = milp.MilpModel()
    mu_idx = model.add_variable("mu", mu_lo, mu_hi)
    p_idx, s_idx = _scenario_block(model, net, scen, gamma)
    va = grouping.spread(anchor)
    for k in range(K):
        for i in range(n):
            base = float(scen.X[k][i]) + float(va[i])
            inflow = {p_idx[k][j]: float(net.pi[j, i]) for j in range(n) if net.pi[j, i] != 0.0}
            row = {idx: -c for idx, c in inflow.items()}
            row[p_idx[k][i]] = row.get(p_idx[k][i], 0.0) + 1.0
            row[mu_idx] = -1.0
            row[s_idx[k][i]] = M
            model.add_constraint(row, "<=", base + M)
            model.add_constraint(
                {p_idx[k][i]: 1.0, s_idx[k][i]: -float(net.pbar[i])}, "<=", 0.0
            )
            row4 = dict(inflow)
            row4[mu_idx] = 1.0
            row4[s_idx[k][i]] = row4.get(s_idx[k][i], 0.0) - M
            model.add_constraint(row4, "<=", -base)
    model.set_objective("min", {mu_idx: 1.0})
    bounds = ScalarizationBounds(M, mu_lo, mu_hi, mu_hi)
    return ScalarizationProblem(
        "min_step", model, bounds, gamma, None, None, anchor, n, K, G, 1
    )


def build_min_step_rv(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    anchor: np.ndarray,
) -> ScalarizationProblem:
    """Minimum-step MILP for the Rogers-Veraart risk set at ``anchor``."""
    if not net.is_rv:
        raise ValueError("network must be the Rogers-Veraart variant")
    _check(net, scen, grouping)
    anchor = _check_anchor(grouping, anchor)
    scen = collapse_scenarios(scen)
    gamma = spec.gamma(net)
    n, K, G = net.n, scen.K, grouping.group_count
    Xn = scen.sup_norm
    Pn = float(net.pbar.max())
    Vn = float(np.abs(anchor).max())
    alpha, beta = net.alpha, net.beta
    mu_hi = Xn + Vn + Pn / alpha
    mu_lo = -(Xn + Vn + (n + 1) * Pn / alpha)

    model = milp.MilpModel()
    mu_idx = model.add_variable("mu", mu_lo, mu_hi)
    p_idx, s_idx = _scenario_block(model, net, scen, gamma)
    va = grouping.spread(anchor)
    for k in range(K):
        for i in range(n):
            base = float(scen.X[k][i]) + float(va[i])
            row1 = {p_idx[k][j]: -beta * float(net.pi[j, i]) for j in range(n) if net.pi[j, i] != 0.0}
            row1[p_idx[k][i]] = row1.get(p_idx[k][i], 0.0) + 1.0
            row1[mu_idx] = -alpha
            row1[s_idx[k][i]] = -float(net.pbar[i])
            model.add_constraint(row1, "<=", alpha * base)
            row2 = {p_idx[k][j]: -float(net.pi[j, i]) for j in range(n) if net.pi[j, i] != 0.0}
            row2[mu_idx] = -1.0
            row2[s_idx[k][i]] = row2.get(s_idx[k][i], 0.0) + float(net.pbar[i])
            model.add_constraint(row2, "<=", base)
            model.add_constraint({mu_idx: -1.0}, "<=", base)
    model.set_objective("min", {mu_idx: 1.0})
    bounds = ScalarizationBounds(None, mu_lo, mu_hi, mu_hi)
    return ScalarizationProblem(
        "min_step", model, bounds, gamma, None, None, anchor, n, K, G, 1
    )


def build_weighted_sum(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    group: int | None = None,
    weights: np.ndarray | None = None,
) -> ScalarizationProblem:
    """Variant dispatch for the weighted-sum builders."""
    build = build_weighted_sum_rv if net.is_rv else build_weighted_sum_en
    return build(net, scen, grouping, spec, group, weights)


def build_min_step(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    anchor: np.ndarray,
) -> ScalarizationProblem:
    """Variant dispatch for the minimum-step builders."""
    build = build_min_step_rv if net.is_rv else build_min_step_en
    return build(net, scen, grouping, spec, anchor)


def _check_anchor(grouping: Grouping, anchor) -> np.ndarray:
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (grouping.group_count,):
        raise DimensionMismatch(
            f"anchor has shape {anchor.shape}, expected ({grouping.group_count},)"
        )
    return anchor


def _objective_weights(model, z_idx, group, weights, G) -> np.ndarray | None:
    if (group is None) == (weights is None):
        raise ValueError("give exactly one of group or weights")
    if group is not None:
        if not 0 <= group < G:
            raise ValueError(f"group must be in [0, {G})")
        model.set_objective("min", {z_idx[group]: 1.0})
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (G,) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    model.set_objective("min", {z_idx[l]: float(w[l]) for l in range(G) if w[l] != 0.0})
    return w


def solve_scalarization(
    prob: ScalarizationProblem,
    limits: milp.SolveLimits | None = None,
    backend: milp.SolverBackend | None = None,
) -> ScalarizationResult:
    """Solve a built scalarization; infeasibility is reported, not raised.

    On an optimal solve the value is checked against the formulation's upper
    bound (when one applies); violating it indicates a solver failure.
    """
    sol = milp.solve(prob.model, limits, backend)
    if sol.status == milp.Status.INFEASIBLE:
        return ScalarizationResult("infeasible", math.inf, None, None, None, None, prob)
    if sol.status != milp.Status.OPTIMAL:
        raise SolverFailure(f"scalarization solve ended with status {sol.status.value}")
    ub = prob.bounds.value_upper_bound
    if ub is not None and sol.objective > ub + VALUE_BOUND_SLACK:
        raise SolverFailure(
            f"scalarization value {sol.objective:g} exceeds its proven bound {ub:g}"
        )
    n, K = prob.n, prob.K
    p = np.array([[sol.x[prob.p_index(k, i)] for i in range(n)] for k in range(K)])
    s = np.round(
        np.array([[sol.x[prob.s_index(k, i)] for i in range(n)] for k in range(K)])
    ).astype(int)
    if prob.kind == "weighted_sum":
        z = sol.x[: prob.G].copy()
        return ScalarizationResult("optimal", float(sol.objective), z, None, p, s, prob)
    mu = float(sol.x[0])
    return ScalarizationResult("optimal", float(sol.objective), None, mu, p, s, prob)
