"""Generic mixed-integer linear programs and an embedded branch-and-bound solver.

The solver is a dense bounded-variable primal simplex (two phases, explicit
basis inverse with periodic refactorization, Bland's rule as an anti-cycling
fallback) wrapped in a best-bound branch-and-bound tree over the binary
variables.  It is built for desk-scale models: a few hundred variables, all
with finite bounds.  Determinism is a hard requirement: identical model and
limits produce the identical solution vector.

``solve`` accepts any backend implementing :class:`SolverBackend`, so an
external MILP engine can replace the embedded one without touching callers.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Protocol

import numpy as np

from .errors import ModelError, SolverFailure, UnboundedVariable

# Solver-wide tolerances.  Oracle tests pin these: primal feasibility for
# reported solutions, integrality of binaries, and the absolute optimality gap.
PRIMAL_TOL = 1e-7
INT_TOL = 1e-6
GAP_REL = 1e-6

_RC_TOL = 1e-9          # reduced-cost optimality threshold (scaled)
_RATIO_TOL = 1e-9       # pivot ratio / bound feasibility threshold
_DEGEN_STEP = 1e-12     # step lengths below this count as degenerate
_PIVOT_MIN = 1e-10      # reject pivots smaller than this
_REFACTOR_EVERY = 64    # basis-inverse refactorization period
_PRUNE_EPS = 1e-9       # relative slack when pruning branch-and-bound nodes


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float
    ub: float
    binary: bool


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple[tuple[int, float], ...]
    sense: str  # "<=", ">=", "=="
    rhs: float
    name: str


class MilpModel:
    """A mixed-integer linear program: boxed variables, linear rows, one objective.

    Build with :meth:`add_variable`, :meth:`add_constraint` and
    :meth:`set_objective`; treat as immutable once handed to a solver.
    """

    def __init__(self) -> None:
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective_sense: str = "min"
        self.objective_coeffs: tuple[tuple[int, float], ...] = ()
        self.objective_offset: float = 0.0

    def add_variable(
        self,
        name: str | None = None,
        lb: float = 0.0,
        ub: float = math.inf,
        *,
        binary: bool = False,
    ) -> int:
        idx = len(self.variables)
        if name is None:
            name = f"x{idx}"
        if binary:
            lb = max(0.0, lb)
            ub = min(1.0, ub)
        self.variables.append(Variable(name, float(lb), float(ub), binary))
        return idx

    def add_constraint(
        self,
        coeffs: Mapping[int, float] | Iterable[tuple[int, float]],
        sense: str,
        rhs: float,
        name: str | None = None,
    ) -> int:
        if sense not in ("<=", ">=", "=="):
            raise ModelError(f"unknown constraint sense {sense!r}")
        if isinstance(coeffs, Mapping):
            items = tuple(sorted(coeffs.items()))
        else:
            items = tuple(sorted(coeffs))
        idx = len(self.constraints)
        if name is None:
            name = f"c{idx}"
        self.constraints.append(Constraint(items, sense, float(rhs), name))
        return idx

    def set_objective(
        self,
        sense: str,
        coeffs: Mapping[int, float] | Iterable[tuple[int, float]],
        offset: float = 0.0,
    ) -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"unknown objective sense {sense!r}")
        if isinstance(coeffs, Mapping):
            items = tuple(sorted(coeffs.items()))
        else:
            items = tuple(sorted(coeffs))
        self.objective_sense = sense
        self.objective_coeffs = items
        self.objective_offset = float(offset)

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def validate(self) -> None:
        """Raise :class:`ModelError` on NaN/inf coefficients or bad binary bounds."""
        for v in self.variables:
            if math.isnan(v.lb) or math.isnan(v.ub):
                raise ModelError(f"variable {v.name} has NaN bound")
            if v.binary and (v.lb < -0.0 or v.ub > 1.0):
                raise ModelError(f"binary variable {v.name} has bounds outside [0, 1]")
            if v.lb > v.ub:
                raise ModelError(f"variable {v.name} has lb > ub")
        nvar = len(self.variables)
        for con in self.constraints:
            if not math.isfinite(con.rhs):
                raise ModelError(f"constraint {con.name} has non-finite rhs")
            for j, a in con.coeffs:
                if not 0 <= j < nvar:
                    raise ModelError(f"constraint {con.name} references unknown variable {j}")
                if not math.isfinite(a):
                    raise ModelError(f"constraint {con.name} has non-finite coefficient")
        for j, a in self.objective_coeffs:
            if not 0 <= j < nvar:
                raise ModelError(f"objective references unknown variable {j}")
            if not math.isfinite(a):
                raise ModelError("objective has non-finite coefficient")
        if not math.isfinite(self.objective_offset):
            raise ModelError("objective offset is non-finite")


@dataclass(frozen=True)
class SolveLimits:
    """Resource limits for a solve; exceeding any yields ITERATION_LIMIT status."""

    max_nodes: int = 2_000_000
    max_lp_iterations: int = 100_000          # per LP solve
    max_total_lp_iterations: int = 50_000_000
    dfs_open_node_threshold: int = 1_000_000  # switch to depth-first beyond this


@dataclass(frozen=True)
class MilpSolution:
    status: Status
    objective: float
    x: np.ndarray
    node_count: int
    lp_iterations: int
    gap: float


class SolverBackend(Protocol):
    """Seam for plugging in an alternative MILP engine."""

    def solve(self, model: MilpModel, limits: SolveLimits) -> MilpSolution: ...


# ---------------------------------------------------------------------------
# Bounded-variable primal simplex
# ---------------------------------------------------------------------------

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2


class _Simplex:
    """Dense two-phase primal simplex over ``A x = b`` with ``lo <= x <= hi``.

    Columns beyond the structural block are slacks (one per row) and, during
    phase 1 only, artificials.  All bounds must be finite.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, struct_count: int, maxiter: int) -> None:
        self.A = A
        self.b = b
        self.m = A.shape[0]
        self.struct_count = struct_count
        self.maxiter = maxiter
        self.iterations = 0

    def solve(self, c: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        """Return (status, x) with status in {'optimal', 'infeasible', 'iterlimit'}."""
        m, ncols = self.m, self.A.shape[1]
        if np.any(lo > hi + _RATIO_TOL):
            return "infeasible", None
        lo = lo.copy()
        hi = np.maximum(hi, lo)

        # Start: structural and slack columns nonbasic at the bound of smaller
        # magnitude is tempting but order-dependent; fix: everything at lower.
        x = lo.copy()
        vstat = np.full(ncols, _AT_LOWER, dtype=np.int8)

        # Slack basis.
        basis = list(range(ncols - m, ncols))
        for j in basis:
            vstat[j] = _BASIC
        struct = ncols - m
        sl_val = self.b - self.A[:, :struct] @ x[:struct]
        x[struct:] = sl_val

        lo_sl = lo[struct:]
        hi_sl = hi[struct:]
        viol = (sl_val < lo_sl - _RATIO_TOL) | (sl_val > hi_sl + _RATIO_TOL)
        if np.any(viol):
            status = self._phase1(x, vstat, basis, lo, hi, viol)
            if status != "optimal":
                return status, None
            # Artificial columns were appended by _phase1; c gets zero padding.
            ncols = self.A.shape[1]
            c = np.concatenate([c, np.zeros(ncols - c.size)])
            lo, hi = self._lo, self._hi
            x = self._x
            vstat = self._vstat
            basis = self._basis
        else:
            self._B_inv = np.eye(m)

        status = self._iterate(c, x, vstat, basis, lo, hi)
        if status != "optimal":
            return status, None
        self._x = x
        return "optimal", x[: self.struct_count]

    def _phase1(self, x, vstat, basis, lo, hi, viol) -> str:
        m = self.m
        struct = self.A.shape[1] - m
        rows = np.flatnonzero(viol)
        art_cols = np.zeros((m, rows.size))
        art_lo = np.zeros(rows.size)
        art_hi = np.zeros(rows.size)
        x_art = np.zeros(rows.size)
        for k, i in enumerate(rows):
            sj = struct + i
            # Clamp the slack to its nearest bound; the artificial absorbs the rest.
            target = lo[sj] if x[sj] < lo[sj] else hi[sj]
            resid = x[sj] - target
            x[sj] = target
            vstat[sj] = _AT_LOWER if target == lo[sj] else _AT_UPPER
            sigma = 1.0 if resid > 0 else -1.0
            art_cols[i, k] = sigma
            x_art[k] = abs(resid)
            art_hi[k] = abs(resid) + 1.0
        self.A = np.hstack([self.A, art_cols])
        lo = np.concatenate([lo, art_lo])
        hi = np.concatenate([hi, art_hi])
        x = np.concatenate([x, x_art])
        vstat = np.concatenate([vstat, np.full(rows.size, _BASIC, dtype=np.int8)])
        ncols = self.A.shape[1]
        for k, i in enumerate(rows):
            vstat[basis[i]] = _AT_LOWER if x[basis[i]] == lo[basis[i]] else _AT_UPPER
            basis[i] = ncols - rows.size + k
        self._B_inv = np.linalg.inv(self.A[:, basis])

        c1 = np.zeros(ncols)
        c1[ncols - rows.size:] = 1.0
        status = self._iterate(c1, x, vstat, basis, lo, hi)
        if status != "optimal":
            return status
        art_sum = float(x[ncols - rows.size:].sum())
        if art_sum > 1e-10 * (1.0 + float(np.abs(self.b).max(initial=0.0))):
            return "infeasible"
        # Freeze artificials at zero for phase 2.
        lo[ncols - rows.size:] = 0.0
        hi[ncols - rows.size:] = 0.0
        x[ncols - rows.size:] = np.maximum(x[ncols - rows.size:], 0.0)
        self._lo, self._hi = lo, hi
        self._x, self._vstat, self._basis = x, vstat, basis
        return "optimal"

    def _refactor(self, basis) -> None:
        try:
            self._B_inv = np.linalg.inv(self.A[:, basis])
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by pivot checks
            raise SolverFailure("singular basis during refactorization") from exc

    def _iterate(self, c, x, vstat, basis, lo, hi) -> str:
        A, m = self.A, self.m
        basis_arr = basis
        B_inv = self._B_inv
        rc_tol = _RC_TOL * (1.0 + float(np.abs(c).max(initial=0.0)))
        degen_run = 0
        bland = False
        bland_trigger = 3 * A.shape[1]
        pivots_since_refactor = 0

        nonfixed = hi - lo > _RATIO_TOL

        while True:
            if self.iterations >= self.maxiter:
                return "iterlimit"
            self.iterations += 1

            cB = c[basis_arr]
            y = B_inv.T @ cB
            d = c - A.T @ y
            at_lo = (vstat == _AT_LOWER) & nonfixed & (d < -rc_tol)
            at_up = (vstat == _AT_UPPER) & nonfixed & (d > rc_tol)
            cand = np.flatnonzero(at_lo | at_up)
            if cand.size == 0:
                self._B_inv = B_inv
                return "optimal"
            if bland:
                e = int(cand[0])
            else:
                scores = np.abs(d[cand])
                e = int(cand[int(np.argmax(scores))])
            sigma = 1.0 if vstat[e] == _AT_LOWER else -1.0

            w = B_inv @ A[:, e]
            # Movement delta >= 0 of the entering variable in direction sigma
            # changes basic values by -delta * sigma * w.
            step = sigma * w
            xB = x[basis_arr]
            loB = lo[basis_arr]
            hiB = hi[basis_arr]

            limit = hi[e] - lo[e]  # bound flip span
            leave_r = -1
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio_lo = np.where(step > _RATIO_TOL, (xB - loB) / step, np.inf)
                ratio_hi = np.where(step < -_RATIO_TOL, (xB - hiB) / step, np.inf)
            ratios = np.minimum(ratio_lo, ratio_hi)
            ratios = np.maximum(ratios, 0.0)
            rmin = float(ratios.min(initial=np.inf))
            if rmin < limit - _RATIO_TOL:
                tie = np.flatnonzero(ratios <= rmin + _RATIO_TOL)
                if bland:
                    # lowest variable index among ties
                    leave_r = int(tie[int(np.argmin(np.asarray(basis_arr)[tie]))])
                else:
                    # largest pivot magnitude among ties, then lowest variable index
                    piv = np.abs(w[tie])
                    best = piv.max()
                    tie2 = tie[piv >= best - 1e-12]
                    leave_r = int(tie2[int(np.argmin(np.asarray(basis_arr)[tie2]))])
                delta = max(rmin, 0.0)
            else:
                delta = limit
            if not np.isfinite(delta):
                # Cannot happen with finite boxes; defensive.
                raise SolverFailure("unbounded direction in bounded-variable simplex")

            if delta <= _DEGEN_STEP:
                degen_run += 1
                if degen_run >= bland_trigger:
                    bland = True
            else:
                degen_run = 0
                bland = False

            # Apply the move.
            if delta > 0.0:
                x[basis_arr] = xB - delta * step
                x[e] = x[e] + sigma * delta

            if leave_r < 0:
                # Bound flip: entering variable crosses to its other bound.
                vstat[e] = _AT_UPPER if vstat[e] == _AT_LOWER else _AT_LOWER
                x[e] = hi[e] if vstat[e] == _AT_UPPER else lo[e]
                continue

            lv = basis_arr[leave_r]
            pivot = w[leave_r]
            if abs(pivot) < _PIVOT_MIN:
                self._refactor(basis_arr)
                B_inv = self._B_inv
                w = B_inv @ A[:, e]
                pivot = w[leave_r]
                if abs(pivot) < _PIVOT_MIN:
                    raise SolverFailure("numerically singular pivot")
            # Leaving variable lands on the bound it hit.
            hit_lower = step[leave_r] > 0
            vstat[lv] = _AT_LOWER if hit_lower else _AT_UPPER
            x[lv] = lo[lv] if hit_lower else hi[lv]
            basis_arr[leave_r] = e
            vstat[e] = _BASIC

            br = B_inv[leave_r, :] / pivot
            B_inv = B_inv - np.outer(w, br)
            B_inv[leave_r, :] = br

            pivots_since_refactor += 1
            if pivots_since_refactor >= _REFACTOR_EVERY:
                self._refactor(basis_arr)
                B_inv = self._B_inv
                nb = vstat != _BASIC
                x[nb] = np.where(np.asarray(vstat[nb]) == _AT_UPPER, hi[nb], lo[nb])
                xN_contrib = A[:, nb] @ x[nb]
                x[np.asarray(basis_arr)] = B_inv @ (self.b - xN_contrib)
                pivots_since_refactor = 0


# ---------------------------------------------------------------------------
# Standard form and LP relaxation
# ---------------------------------------------------------------------------


class _StandardForm:
    """Rows normalized to <= / ==, one slack per row, minimization objective."""

    def __init__(self, model: MilpModel) -> None:
        model.validate()
        n = model.num_variables
        self.n = n
        self.lb = np.array([v.lb for v in model.variables], dtype=float)
        self.ub = np.array([v.ub for v in model.variables], dtype=float)
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            bad = [model.variables[j].name
                   for j in range(n)
                   if not (math.isfinite(self.lb[j]) and math.isfinite(self.ub[j]))]
            raise UnboundedVariable(
                f"variables with infinite bounds at solve time: {', '.join(bad)}"
            )
        self.binary_idx = np.array(
            [j for j, v in enumerate(model.variables) if v.binary], dtype=int
        )

        m = model.num_constraints
        A = np.zeros((m, n))
        b = np.zeros(m)
        self.is_eq = np.zeros(m, dtype=bool)
        for i, con in enumerate(model.constraints):
            row = np.zeros(n)
            for j, a in con.coeffs:
                row[j] += a
            if con.sense == ">=":
                row = -row
                b[i] = -con.rhs
            else:
                b[i] = con.rhs
                self.is_eq[i] = con.sense == "=="
            A[i] = row
        self.A = A
        self.b = b

        self.sense = model.objective_sense
        self.offset = model.objective_offset
        c = np.zeros(n)
        for j, a in model.objective_coeffs:
            c[j] += a
        self.c_min = c if self.sense == "min" else -c

    def solve_lp(self, lb: np.ndarray, ub: np.ndarray, maxiter: int):
        """Solve the LP relaxation under the given structural bounds.

        Returns (status, x, objective_min, iterations).
        """
        m, n = self.A.shape[0], self.n
        # Finite slack boxes from interval arithmetic over the variable boxes.
        rowmin = np.minimum(self.A, 0.0) @ ub + np.maximum(self.A, 0.0) @ lb
        slack_ub = self.b - rowmin
        slack_ub = np.where(self.is_eq, 0.0, np.maximum(slack_ub, 0.0))
        infeasible_rows = (~self.is_eq) & (self.b - rowmin < -1e-9 * (1.0 + np.abs(self.b)))
        if np.any(infeasible_rows):
            return "infeasible", None, math.inf, 0

        Afull = np.hstack([self.A, np.eye(m)])
        lo = np.concatenate([lb, np.zeros(m)])
        hi = np.concatenate([ub, slack_ub])
        c = np.concatenate([self.c_min, np.zeros(m)])

        sx = _Simplex(Afull, self.b, n, maxiter)
        status, x = sx.solve(c, lo, hi)
        if status != "optimal":
            return status, None, math.inf, sx.iterations
        obj = float(self.c_min @ x)
        return "optimal", x, obj, sx.iterations


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    bound: float
    counter: int
    depth: int
    lb: np.ndarray
    ub: np.ndarray


class BranchAndBoundSolver:
    """Embedded MILP engine: best-bound search, most-fractional branching.

    Falls back to depth-first selection once the open-node count crosses
    ``limits.dfs_open_node_threshold``.
    """

    def solve(self, model: MilpModel, limits: SolveLimits | None = None) -> MilpSolution:
        limits = limits or SolveLimits()
        sf = _StandardForm(model)
        bins = sf.binary_idx

        best_x: np.ndarray | None = None
        best_obj = math.inf
        node_count = 0
        lp_iters = 0
        counter = 0
        dfs_mode = False

        heap: list[tuple[float, int, _Node]] = []
        root = _Node(-math.inf, counter, 0, sf.lb.copy(), sf.ub.copy())
        heapq.heappush(heap, (root.bound, root.counter, root))
        counter += 1
        hit_limit = False

        while heap:
            _, _, node = heapq.heappop(heap)
            prune_eps = _PRUNE_EPS * (1.0 + abs(best_obj)) if best_x is not None else 0.0
            if best_x is not None and node.bound >= best_obj - prune_eps:
                continue
            if node_count >= limits.max_nodes or lp_iters >= limits.max_total_lp_iterations:
                heapq.heappush(heap, (node.bound, node.counter, node))
                hit_limit = True
                break
            node_count += 1

            status, x, obj, iters = sf.solve_lp(node.lb, node.ub, limits.max_lp_iterations)
            lp_iters += iters
            if status == "iterlimit":
                hit_limit = True
                break
            if status == "infeasible":
                continue
            if best_x is not None and obj >= best_obj - prune_eps:
                continue

            frac = np.array([], dtype=int)
            if bins.size:
                vals = x[bins]
                dist = np.abs(vals - np.round(vals))
                frac = bins[dist > INT_TOL]
            if frac.size == 0:
                if obj < best_obj - 1e-15:
                    best_obj = obj
                    best_x = x.copy()
                continue

            vals = x[frac]
            score = 0.5 - np.abs(vals - np.floor(vals) - 0.5)
            j = int(frac[int(np.argmax(score))])

            for fix_to in (0.0, 1.0):
                lb2 = node.lb.copy()
                ub2 = node.ub.copy()
                if fix_to == 0.0:
                    ub2[j] = 0.0
                else:
                    lb2[j] = 1.0
                child = _Node(obj, counter, node.depth + 1, lb2, ub2)
                key = (-counter, counter) if dfs_mode else (obj, counter)
                heapq.heappush(heap, (key[0], key[1], child))
                counter += 1

            if not dfs_mode and len(heap) > limits.dfs_open_node_threshold:
                dfs_mode = True
                heap = [(-nd.counter, nd.counter, nd) for _, _, nd in heap]
                heapq.heapify(heap)

        if hit_limit:
            gap = math.inf
            if best_x is not None and heap:
                best_open = min(nd.bound for _, _, nd in heap)
                gap = max(0.0, best_obj - best_open)
            obj_out = self._to_model_objective(sf, best_obj) if best_x is not None else math.nan
            return MilpSolution(
                Status.ITERATION_LIMIT,
                obj_out,
                best_x if best_x is not None else np.array([]),
                node_count,
                lp_iters,
                gap,
            )

        if best_x is None:
            return MilpSolution(Status.INFEASIBLE, math.nan, np.array([]), node_count, lp_iters, math.inf)

        self._check_solution(model, sf, best_x)
        return MilpSolution(
            Status.OPTIMAL,
            self._to_model_objective(sf, best_obj),
            best_x,
            node_count,
            lp_iters,
            0.0,
        )

    @staticmethod
    def _to_model_objective(sf: _StandardForm, obj_min: float) -> float:
        return (obj_min if sf.sense == "min" else -obj_min) + sf.offset

    @staticmethod
    def _check_solution(model: MilpModel, sf: _StandardForm, x: np.ndarray) -> None:
        scale = 1.0 + float(np.abs(sf.b).max(initial=0.0)) + float(np.abs(x).max(initial=0.0))
        resid = sf.A @ x - sf.b
        bad_ineq = (~sf.is_eq) & (resid > PRIMAL_TOL * scale)
        bad_eq = sf.is_eq & (np.abs(resid) > PRIMAL_TOL * scale)
        if np.any(bad_ineq) or np.any(bad_eq):
            raise SolverFailure("optimal solution violates primal feasibility tolerance")
        if sf.binary_idx.size:
            vals = x[sf.binary_idx]
            if np.any(np.abs(vals - np.round(vals)) > INT_TOL):
                raise SolverFailure("optimal solution violates integrality tolerance")


def solve(
    model: MilpModel,
    limits: SolveLimits | None = None,
    backend: SolverBackend | None = None,
) -> MilpSolution:
    """Solve a MILP with the embedded engine (or a substituted backend)."""
    backend = backend or BranchAndBoundSolver()
    return backend.solve(model, limits or SolveLimits())
