"""Clearing maps, Picard iteration, MILP clearing, and clearing-axiom checks.

Two clearing mechanisms are supported.  The signed Eisenberg-Noe map clips
``pi^T p + x`` into ``[0, pbar]`` componentwise, which adds an immediate-default
branch for nodes whose cash position is nonpositive.  The Rogers-Veraart map
pays in full when possible and otherwise pays ``alpha * x + beta * pi^T p``,
the liquid fraction available to a defaulting node.

Both maps are monotone on the box ``[0, pbar]``, so iterating from ``pbar``
produces a nonincreasing sequence converging to the greatest clearing vector.
The MILP formulations maximize a strictly increasing linear objective, and any
optimal payment vector equals that greatest clearing vector; the solved result
therefore carries a fixed-point residual that must vanish to tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import milp
from .errors import (
    DimensionMismatch,
    NegativeCashFlow,
    NoConvergence,
    SolverFailure,
)
from .network import EN, RV, FinancialNetwork

FIXED_POINT_TOL = 1e-6   # residual bound for solver-produced clearing vectors
PICARD_TOL = 1e-10       # oracle convergence tolerance, strictly tighter
PICARD_MAX_ITER = 10_000


def clearing_map_en(net: FinancialNetwork, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """One application of the signed Eisenberg-Noe clearing map.

    Componentwise: 0 where ``pi^T p + x <= 0``, the cash position itself where
    it lies in ``(0, pbar]``, and ``pbar`` above.
    """
    x = net.check_cash_flow(x)
    p = _check_payments(net, p)
    w = net.pi.T @ p + x
    return np.clip(w, 0.0, net.pbar)


def clearing_map_rv(net: FinancialNetwork, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """One application of the Rogers-Veraart clearing map (requires ``x >= 0``).

    Pays ``pbar_i`` when ``pbar_i <= x_i + (pi^T p)_i``; otherwise the node
    defaults and pays ``alpha * x_i + beta * (pi^T p)_i``.
    """
    x = net.check_cash_flow(x)
    p = _check_payments(net, p)
    if np.any(x < 0):
        raise NegativeCashFlow("Rogers-Veraart clearing requires nonnegative cash flows")
    inflow = net.pi.T @ p
    full = net.pbar <= x + inflow
    return np.where(full, net.pbar, net.alpha * x + net.beta * inflow)


def _check_payments(net: FinancialNetwork, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (net.n,):
        raise DimensionMismatch(f"payment vector has shape {p.shape}, expected ({net.n},)")
    return p


def _map_for(net: FinancialNetwork):
    return clearing_map_rv if net.is_rv else clearing_map_en


def picard_clearing(
    net: FinancialNetwork,
    x: np.ndarray,
    tol: float = PICARD_TOL,
    max_iter: int = PICARD_MAX_ITER,
) -> np.ndarray:
    """Greatest clearing vector by monotone iteration from ``pbar``.

    The iterates are checked to be nonincreasing at every step; the limit is
    the greatest fixed point of the variant's clearing map.

    Raises
    ------
    NoConvergence
        If the infinity-norm step stays above ``tol`` for ``max_iter`` rounds.
    """
    step = _map_for(net)
    p = net.pbar.astype(float).copy()
    slack = 1e-12 * (1.0 + float(net.pbar.max()))
    for _ in range(max_iter):
        p_next = step(net, x, p)
        if np.any(p_next > p + slack):
            raise AssertionError("clearing iterates are not monotone nonincreasing")
        if float(np.abs(p_next - p).max()) <= tol:
            return p_next
        p = p_next
    raise NoConvergence(f"no fixed point within {max_iter} iterations at tol {tol:g}")


@dataclass(frozen=True)
class ClearingResult:
    """Solved clearing state: payments, default indicators, aggregate, residual.

    ``aggregate`` is the weighted total payment (the aggregation value); it is
    ``-inf`` with ``p``/``s``/``residual`` set to None when the Rogers-Veraart
    aggregation is undefined (some cash flow component negative).
    """

    p: np.ndarray | None
    s: np.ndarray | None
    aggregate: float
    residual: float | None

    @property
    def defined(self) -> bool:
        return math.isfinite(self.aggregate)


def _default_weights(net: FinancialNetwork, weights) -> np.ndarray:
    if weights is None:
        return np.ones(net.n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (net.n,):
        raise DimensionMismatch(f"weights have shape {w.shape}, expected ({net.n},)")
    if np.any(w <= 0):
        raise ValueError("objective weights must be strictly positive")
    return w


def en_big_m(net: FinancialNetwork, x: np.ndarray) -> float:
    """Big-M for the signed Eisenberg-Noe clearing MILP: n*max(pbar) + max|x|."""
    return net.n * float(net.pbar.max()) + float(np.abs(x).max())


def clearing_model_en(
    net: FinancialNetwork,
    x: np.ndarray,
    weights: np.ndarray | None = None,
) -> milp.MilpModel:
    """Build (without solving) the signed Eisenberg-Noe clearing MILP.

    Maximizes the weighted total payment subject to, per node i with binary
    default indicator s_i and M = n*max(pbar) + max|x|::

        p_i <= sum_j pi[j,i] p_j + x_i + M (1 - s_i)
        p_i <= pbar_i s_i
        sum_j pi[j,i] p_j + x_i <= M s_i
        0 <= p_i <= pbar_i

    Variables are laid out as p_0..p_{n-1}, s_0..s_{n-1}.
    """
    if net.is_rv:
        raise ValueError("the Eisenberg-Noe clearing model requires an EN network")
    x = net.check_cash_flow(x)
    w = _default_weights(net, weights)
    n = net.n
    M = en_big_m(net, x)

    model = milp.MilpModel()
    p_idx = [model.add_variable(f"p{i}", 0.0, float(net.pbar[i])) for i in range(n)]
    s_idx = [model.add_variable(f"s{i}", binary=True) for i in range(n)]
    for i in range(n):
        inflow = {p_idx[j]: -net.pi[j, i] for j in range(n) if net.pi[j, i] != 0.0}
        row1 = dict(inflow)
        row1[p_idx[i]] = row1.get(p_idx[i], 0.0) + 1.0
        row1[s_idx[i]] = M
        model.add_constraint(row1, "<=", float(x[i]) + M)
        model.add_constraint({p_idx[i]: 1.0, s_idx[i]: -float(net.pbar[i])}, "<=", 0.0)
        row3 = {p_idx[j]: net.pi[j, i] for j in range(n) if net.pi[j, i] != 0.0}
        row3[s_idx[i]] = row3.get(s_idx[i], 0.0) - M
        model.add_constraint(row3, "<=", -float(x[i]))
    model.set_objective("max", {p_idx[i]: float(w[i]) for i in range(n)})
    return model


def clearing_milp_en(
    net: FinancialNetwork,
    x: np.ndarray,
    weights: np.ndarray | None = None,
    limits: milp.SolveLimits | None = None,
) -> ClearingResult:
    """Clearing vector of a signed Eisenberg-Noe network via the MILP formulation.

    The optimum equals the Picard limit (greatest clearing vector); the result
    carries its fixed-point residual, which must be at most 1e-6.
    """
    model = clearing_model_en(net, x, weights)
    return _finish_clearing(net, net.check_cash_flow(x), model, net.n, limits)


def clearing_model_rv(
    net: FinancialNetwork,
    x: np.ndarray,
    weights: np.ndarray | None = None,
) -> milp.MilpModel:
    """Build (without solving) the Rogers-Veraart clearing MILP.

    Per node i with binary s_i::

        p_i <= alpha x_i + beta sum_j pi[j,i] p_j + pbar_i s_i
        pbar_i s_i <= x_i + sum_j pi[j,i] p_j
        0 <= p_i <= pbar_i

    Variables are laid out as p_0..p_{n-1}, s_0..s_{n-1}.
    """
    if not net.is_rv:
        raise ValueError("the Rogers-Veraart clearing model requires an RV network")
    x = net.check_cash_flow(x)
    if np.any(x < 0):
        raise NegativeCashFlow("the Rogers-Veraart clearing model requires x >= 0")
    w = _default_weights(net, weights)
    n = net.n

    model = milp.MilpModel()
    p_idx = [model.add_variable(f"p{i}", 0.0, float(net.pbar[i])) for i in range(n)]
    s_idx = [model.add_variable(f"s{i}", binary=True) for i in range(n)]
    for i in range(n):
        row1 = {p_idx[j]: -net.beta * net.pi[j, i] for j in range(n) if net.pi[j, i] != 0.0}
        row1[p_idx[i]] = row1.get(p_idx[i], 0.0) + 1.0
        row1[s_idx[i]] = -float(net.pbar[i])
        model.add_constraint(row1, "<=", net.alpha * float(x[i]))
        row2 = {p_idx[j]: -net.pi[j, i] for j in range(n) if net.pi[j, i] != 0.0}
        row2[s_idx[i]] = row2.get(s_idx[i], 0.0) + float(net.pbar[i])
        model.add_constraint(row2, "<=", float(x[i]))
    model.set_objective("max", {p_idx[i]: float(w[i]) for i in range(n)})
    return model


def clearing_milp_rv(
    net: FinancialNetwork,
    x: np.ndarray,
    weights: np.ndarray | None = None,
    limits: milp.SolveLimits | None = None,
) -> ClearingResult:
    """Clearing vector of a Rogers-Veraart network via the MILP formulation.

    For ``x`` with any negative component the aggregation value is ``-inf``
    by definition; no solve is attempted and the payment fields are None.
    """
    x = net.check_cash_flow(x)
    if np.any(x < 0):
        return ClearingResult(None, None, -math.inf, None)
    model = clearing_model_rv(net, x, weights)
    return _finish_clearing(net, x, model, net.n, limits)


def _finish_clearing(net, x, model, n, limits) -> ClearingResult:
    sol = milp.solve(model, limits)
    if sol.status != milp.Status.OPTIMAL:
        raise SolverFailure(f"clearing MILP ended with status {sol.status.value}")
    p = sol.x[:n].copy()
    s = np.round(sol.x[n:2 * n]).astype(int)
    residual = float(np.abs(_map_for(net)(net, x, p) - p).max())
    if residual > FIXED_POINT_TOL:
        raise SolverFailure(f"clearing MILP result has fixed-point residual {residual:g}")
    return ClearingResult(p=p, s=s, aggregate=float(sol.objective), residual=residual)


def clearing_milp(
    net: FinancialNetwork,
    x: np.ndarray,
    weights: np.ndarray | None = None,
    limits: milp.SolveLimits | None = None,
) -> ClearingResult:
    """Variant dispatch to :func:`clearing_milp_en` or :func:`clearing_milp_rv`."""
    if net.is_rv:
        return clearing_milp_rv(net, x, weights, limits)
    return clearing_milp_en(net, x, weights, limits)


def aggregate_payment(
    net: FinancialNetwork,
    x: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """The aggregation value: weighted total payment at clearing (``-inf`` if undefined)."""
    return clearing_milp(net, x, weights).aggregate


@dataclass(frozen=True)
class AxiomReport:
    """Per-node clearing-axiom check results (True means the node passes)."""

    axioms: dict[str, np.ndarray]
    residual: float

    @property
    def ok(self) -> bool:
        return all(bool(v.all()) for v in self.axioms.values())

    def failures(self) -> dict[str, list[int]]:
        return {
            name: np.flatnonzero(~v).tolist()
            for name, v in self.axioms.items()
            if not v.all()
        }


def verify_clearing(
    net: FinancialNetwork,
    x: np.ndarray,
    p: np.ndarray,
    tol: float = 1e-9,
) -> AxiomReport:
    """Check the variant's clearing axioms at ``p``, within ``tol`` per node.

    For the signed Eisenberg-Noe model the axioms are immediate default,
    limited liability, and absolute priority, each conditional on the sign of
    the cash position ``pi^T p + x``.  For Rogers-Veraart they are limited
    liability and absolute priority with the (alpha, beta) default payout.

    The report also carries the fixed-point residual of the clearing map; a
    vector can satisfy the Rogers-Veraart axioms without being a fixed point.
    """
    x = net.check_cash_flow(x)
    p = _check_payments(net, p)
    inflow = net.pi.T @ p
    in_box = (p >= -tol) & (p <= net.pbar + tol)
    axioms: dict[str, np.ndarray] = {"box": in_box}
    if net.is_rv:
        if np.any(x < 0):
            raise NegativeCashFlow("Rogers-Veraart axioms require nonnegative cash flows")
        w = x + inflow
        axioms["limited-liability"] = p <= w + tol
        default_pay = net.alpha * x + net.beta * inflow
        axioms["absolute-priority"] = (np.abs(p - net.pbar) <= tol) | (
            np.abs(p - default_pay) <= tol
        )
        residual = float(np.abs(clearing_map_rv(net, x, p) - p).max())
    else:
        w = inflow + x
        positive = w > tol
        axioms["immediate-default"] = positive | (p <= tol)
        axioms["limited-liability"] = ~positive | (p <= w + tol)
        axioms["absolute-priority"] = ~positive | (
            (np.abs(p - net.pbar) <= tol) | (np.abs(p - w) <= tol)
        )
        residual = float(np.abs(clearing_map_en(net, x, p) - p).max())
    return AxiomReport(axioms=axioms, residual=residual)


def concavity_gap(
    net: FinancialNetwork,
    x1: np.ndarray,
    x2: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """``(Lambda(x1) + Lambda(x2)) / 2 - Lambda((x1 + x2) / 2)``.

    A strictly positive value witnesses failure of concavity of the
    aggregation function. ``-inf`` inputs propagate as NaN gaps.
    """
    mid = (np.asarray(x1, dtype=float) + np.asarray(x2, dtype=float)) / 2.0
    v1 = aggregate_payment(net, x1, weights)
    v2 = aggregate_payment(net, x2, weights)
    vm = aggregate_payment(net, mid, weights)
    if not (math.isfinite(v1) and math.isfinite(v2) and math.isfinite(vm)):
        return math.nan
    return (v1 + v2) / 2.0 - vm
