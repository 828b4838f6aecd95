"""Inner/outer approximation of the risk set by minimum-step queries.

The risk set is upward closed but generally nonconvex, so it is approximated
by staircase geometry rather than halfspaces.  The outer region starts as the
orthant above the ideal point and shrinks by removing the lower cone of each
computed boundary point; the inner region is the union of upper cones of those
boundary points (plus the user's upper-bound point).  Both regions are carried
by their minimal "corner" points, maintained incrementally.

The main loop: pick an unprocessed outer corner ``v`` below the upper-bound
point whose ``v + eps*1`` is not yet interior to the inner region, solve the
minimum-step MILP at ``v`` to get the boundary point ``y = v + mu*1``, update
both regions, repeat.  It stops when every eligible corner passes the eps
test, which certifies a directional gap of at most eps below the upper bound.

Corner updates operate on the closure of the remaining region: a cone removal
at ``y`` splits exactly the corners it strictly dominates.  This keeps the
represented outer region a superset of the risk set (no boundary face is ever
dropped) and lets a boundary-touching query (``mu <= 0``) leave the corner in
place for the eps test to retire.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import milp
from .errors import DimensionMismatch, InfeasibleSpec, SolverFailure, UpperBoundNotMember
from .network import FinancialNetwork
from .scalarize import build_min_step, build_weighted_sum, solve_scalarization
from .scenarios import Grouping, RiskSpec, ScenarioSet, in_risk_set

CORNER_TOL = 1e-9
_MAX_STEPS = 100_000


@dataclass(frozen=True)
class CornerSet:
    """Upward-closed staircase region represented by its minimal corner points.

    The region is ``{z >= floor}`` minus the (open) lower cones removed so
    far; ``corners`` is the antichain of its minimal points, every one at or
    above ``floor``.
    """

    corners: tuple
    floor: np.ndarray

    @property
    def dim(self) -> int:
        return self.floor.shape[0]

    def covers(self, point: np.ndarray, tol: float = CORNER_TOL) -> bool:
        """Whether ``point`` lies in the represented (closed) region."""
        point = np.asarray(point, dtype=float)
        return any(bool(np.all(point >= c - tol)) for c in self.corners)


def initial_corner_set(floor: np.ndarray) -> CornerSet:
    """The orthant above ``floor``; its only corner is ``floor`` itself."""
    floor = np.asarray(floor, dtype=float)
    if not np.all(np.isfinite(floor)):
        raise ValueError("corner-set floor must be finite")
    f = floor.copy()
    f.setflags(write=False)
    return CornerSet(corners=(f,), floor=f)


def exclude_lower_cone(cs: CornerSet, y: np.ndarray, tol: float = CORNER_TOL) -> CornerSet:
    """Remove the lower cone of ``y`` from the region (closure convention).

    A corner strictly dominated by ``y`` in every coordinate is replaced by
    its G single-coordinate liftings onto the cone boundary; candidates
    dominated by surviving corners or by each other are discarded so the
    result stays an antichain.  Corners touching the cone boundary (equality
    within ``tol`` in some coordinate) are unaffected, matching the closure
    of the set difference.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != cs.floor.shape:
        raise DimensionMismatch("cone apex dimension mismatch")
    affected = [c for c in cs.corners if bool(np.all(y > c + tol))]
    if not affected:
        return cs
    survivors = [c for c in cs.corners if not bool(np.all(y > c + tol))]
    candidates = []
    for c in affected:
        for j in range(cs.dim):
            cand = c.copy()
            cand[j] = y[j]
            candidates.append(cand)
    kept = list(survivors)
    for cand in sorted(candidates, key=tuple):
        if any(bool(np.all(w <= cand + tol)) for w in kept):
            continue
        cand.setflags(write=False)
        kept.append(cand)
    kept.sort(key=tuple)
    return CornerSet(corners=tuple(kept), floor=cs.floor)


@dataclass(frozen=True)
class StepRecord:
    """One minimum-step query: the corner it was asked at, the step, the boundary point."""

    corner: np.ndarray
    mu: float
    boundary: np.ndarray
    seconds: float


@dataclass(frozen=True)
class ApproximationPair:
    """Inner and outer staircase approximations of a risk set.

    The outer region is ``outer`` (corner representation); the inner region is
    the union of upper cones of ``inner_points`` and of ``z_ub``.  ``history``
    records every minimum-step query in order.  ``certificate`` lists the
    final outer corners at or below ``z_ub``, each of which passed the eps
    termination test.
    """

    outer: CornerSet
    inner_points: tuple
    epsilon: float
    z_ub: np.ndarray
    history: tuple
    z_ideal: np.ndarray
    gamma: float
    certificate: tuple

    @property
    def iterations(self) -> int:
        return len(self.history)

    def min_step_count(self) -> int:
        return len(self.history)

    def inner_covers(self, point: np.ndarray, tol: float = 0.0) -> bool:
        """Whether ``point`` lies in the (closed) inner region."""
        point = np.asarray(point, dtype=float)
        gens = list(self.inner_points) + [self.z_ub]
        return any(bool(np.all(point >= g - tol)) for g in gens)


def in_inner_interior(pair: ApproximationPair, point: np.ndarray) -> bool:
    """Strict interior test: ``point`` strictly dominates some inner generator."""
    point = np.asarray(point, dtype=float)
    gens = list(pair.inner_points) + [pair.z_ub]
    return any(bool(np.all(point > g)) for g in gens)


def ideal_point(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    limits: milp.SolveLimits | None = None,
) -> np.ndarray:
    """Componentwise minima of the risk set via the G weighted-sum MILPs."""
    G = grouping.group_count

    def one(l: int) -> float:
        prob = build_weighted_sum(net, scen, grouping, spec, group=l)
        res = solve_scalarization(prob, limits)
        if res.status != "optimal":
            raise InfeasibleSpec(
                f"weighted-sum scalarization infeasible: gamma {spec.gamma(net):g} "
                f"exceeds total obligations {float(net.pbar.sum()):g}"
            )
        return res.value

    if G == 1:
        return np.array([one(0)])
    with ThreadPoolExecutor(max_workers=min(G, 4)) as pool:
        vals = list(pool.map(one, range(G)))
    return np.array(vals)


def _corner_key(c: np.ndarray) -> bytes:
    return c.tobytes()


def approximate(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    *,
    batch: bool = False,
    limits: milp.SolveLimits | None = None,
) -> ApproximationPair:
    """Approximate the risk set to directional error ``spec.epsilon`` below ``z_ub``.

    With ``batch=True`` every currently eligible corner is queried before the
    corner sets are updated; the result may differ corner-for-corner from the
    sequential run but satisfies the same guarantees.

    Raises
    ------
    InfeasibleSpec
        If ``gamma`` exceeds the total obligations (empty risk set).
    UpperBoundNotMember
        If an explicitly provided ``z_ub`` fails the membership test.
    """
    if scen.n != net.n or grouping.n != net.n:
        raise DimensionMismatch("network, scenarios and grouping sizes disagree")
    gamma = spec.gamma(net)
    total = float(net.pbar.sum())
    if gamma > total * (1.0 + 1e-12):
        raise InfeasibleSpec(f"gamma {gamma:g} exceeds total obligations {total:g}")

    if isinstance(spec.z_ub, str):
        # Upper bound from the full-payment ideal point, pushed out by twice
        # the largest obligation.
        full = RiskSpec(gamma_p=1.0, epsilon=spec.epsilon, z_ub="auto")
        z_ub = ideal_point(net, scen, grouping, full, limits) + 2.0 * float(net.pbar.max())
    else:
        z_ub = np.asarray(spec.z_ub, dtype=float)
        if z_ub.shape != (grouping.group_count,):
            raise DimensionMismatch("z_ub must have one entry per group")
        if not in_risk_set(net, scen, grouping, spec, z_ub):
            raise UpperBoundNotMember("provided z_ub is not in the risk set")
    z_ub = z_ub.copy()
    z_ub.setflags(write=False)

    z_ideal = ideal_point(net, scen, grouping, spec, limits)
    eps = spec.epsilon

    outer = initial_corner_set(z_ideal)
    inner: list[np.ndarray] = []
    inner_keys: set[bytes] = set()
    processed: set[bytes] = set()
    history: list[StepRecord] = []

    def eligible_corners() -> list[np.ndarray]:
        return [
            c
            for c in outer.corners
            if bool(np.all(c <= z_ub + CORNER_TOL)) and _corner_key(c) not in processed
        ]

    def interior_test(point: np.ndarray) -> bool:
        gens = inner + [z_ub]
        return any(bool(np.all(point > g)) for g in gens)

    def solve_step(corner: np.ndarray) -> StepRecord:
        t0 = time.perf_counter()
        res = solve_scalarization(build_min_step(net, scen, grouping, spec, corner), limits)
        if res.status != "optimal":
            raise SolverFailure("minimum-step scalarization unexpectedly infeasible")
        mu = res.value
        boundary = corner + mu
        boundary.setflags(write=False)
        return StepRecord(corner, mu, boundary, time.perf_counter() - t0)

    def apply_record(rec: StepRecord) -> None:
        nonlocal outer
        history.append(rec)
        key = _corner_key(rec.boundary)
        if key not in inner_keys:
            inner_keys.add(key)
            inner.append(rec.boundary)
        outer = exclude_lower_cone(outer, rec.boundary)

    while True:
        if len(history) > _MAX_STEPS:
            raise SolverFailure("approximation loop exceeded its step budget")
        pending = []
        for c in eligible_corners():
            if interior_test(c + eps):
                processed.add(_corner_key(c))
            else:
                pending.append(c)
                if not batch:
                    break
        if not pending:
            break
        if batch and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=4) as pool:
                records = list(pool.map(solve_step, pending))
        else:
            records = [solve_step(pending[0])]
        for rec in records:
            apply_record(rec)

    certificate = tuple(
        c for c in outer.corners if bool(np.all(c <= z_ub + CORNER_TOL))
    )
    pair = ApproximationPair(
        outer=outer,
        inner_points=tuple(inner),
        epsilon=eps,
        z_ub=z_ub,
        history=tuple(history),
        z_ideal=z_ideal,
        gamma=gamma,
        certificate=certificate,
    )
    for c in certificate:
        if not in_inner_interior(pair, c + eps):
            raise SolverFailure("termination certificate check failed")
    return pair


def staircase_polyline(points, z_ub: np.ndarray) -> list:
    """2-D plot-ready boundary of the union of upper cones of ``points``.

    Returns the elbow sequence of the staircase, entering at ``z_ub`` level on
    both axes.  Only meaningful for two groups.
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    if not pts:
        return []
    if pts[0].shape != (2,):
        raise DimensionMismatch("polyline output requires exactly two groups")
    # Minimal antichain, sorted by first coordinate.
    antichain = []
    for p in sorted(pts, key=tuple):
        if not any(np.all(q <= p) for q in antichain):
            antichain.append(p)
    antichain.sort(key=lambda p: (p[0], -p[1]))
    top = max(float(z_ub[1]), max(float(p[1]) for p in antichain))
    out = [np.array([antichain[0][0], top])]
    for s, p in enumerate(antichain):
        out.append(p.copy())
        if s + 1 < len(antichain):
            out.append(np.array([antichain[s + 1][0], p[1]]))
    right = max(float(z_ub[0]), float(antichain[-1][0]))
    out.append(np.array([right, antichain[-1][1]]))
    return out
