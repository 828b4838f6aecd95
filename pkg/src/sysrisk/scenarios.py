"""Scenario sets, node grouping, risk specifications, and seeded random generators.

Networks come from a blockwise Erdos-Renyi model: an edge from node i to node
j exists with the probability assigned to their group pair, and carries that
pair's fixed liability amount.  Cash flows come either from an equicorrelated
Gaussian vector (per-group means, common sigma and rho) or from a Gaussian
copula with gamma marginals (per-group shape/scale, common rho), the latter
guaranteeing nonnegative cash flows as the Rogers-Veraart model requires.

Randomness uses counter-based Philox streams keyed by (seed, domain) with one
substream per edge cell and one per (scenario, node) cash-flow cell, so
enlarging K or resampling never perturbs earlier draws.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import gammaincinv, ndtr

from . import clearing
from .errors import (
    ColumnSumViolation,
    DimensionMismatch,
    GenerationExhausted,
    ZeroObligationRow,
)
from .network import EN, RV, FinancialNetwork, from_liabilities

MEMBER_TOL = 1e-9
_EDGE_DOMAIN = 0
_CASH_DOMAIN = 1
_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class Grouping:
    """Partition of nodes into groups; induces the 0/1 membership matrix.

    ``assignment[i]`` is the (0-based) group of node i.  Every group must be
    nonempty.
    """

    assignment: np.ndarray
    group_count: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        object.__setattr__(self, "assignment", a)
        a.setflags(write=False)
        if a.ndim != 1:
            raise DimensionMismatch("assignment must be a vector")
        if np.any(a < 0) or np.any(a >= self.group_count):
            raise ValueError("group indices out of range")
        counts = np.bincount(a, minlength=self.group_count)
        if np.any(counts == 0):
            raise ValueError("every group must be nonempty")

    @classmethod
    def from_sizes(cls, sizes) -> "Grouping":
        sizes = [int(s) for s in sizes]
        if any(s < 1 for s in sizes):
            raise ValueError("group sizes must be >= 1")
        assignment = np.repeat(np.arange(len(sizes)), sizes)
        return cls(assignment=assignment, group_count=len(sizes))

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.group_count)

    @property
    def matrix(self) -> np.ndarray:
        """G x n membership matrix with exactly one 1 per column."""
        B = np.zeros((self.group_count, self.n))
        B[self.assignment, np.arange(self.n)] = 1.0
        return B

    def spread(self, z: np.ndarray) -> np.ndarray:
        """Assign each node its group's capital: ``(B^T z)_i = z[group(i)]``."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.group_count,):
            raise DimensionMismatch(
                f"capital vector has shape {z.shape}, expected ({self.group_count},)"
            )
        return z[self.assignment]


@dataclass(frozen=True)
class ScenarioSet:
    """K scenarios of operating cash flows with strictly positive probabilities."""

    X: np.ndarray  # K x n
    q: np.ndarray  # K

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "q", q)
        X.setflags(write=False)
        q.setflags(write=False)
        if X.ndim != 2 or q.shape != (X.shape[0],):
            raise DimensionMismatch("X must be K x n with matching q")
        if np.any(q <= 0):
            raise ValueError("scenario probabilities must be strictly positive")
        if abs(float(q.sum()) - 1.0) > 1e-12:
            raise ValueError("scenario probabilities must sum to 1")

    @property
    def K(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def sup_norm(self) -> float:
        """max |X_i(w^k)| over all cells."""
        return float(np.abs(self.X).max())

    @classmethod
    def uniform(cls, X) -> "ScenarioSet":
        X = np.asarray(X, dtype=float)
        K = X.shape[0]
        return cls(X=X, q=np.full(K, 1.0 / K))


@dataclass(frozen=True)
class RiskSpec:
    """Risk requirement: expected aggregate payment at least ``gamma_p`` of total debt.

    ``z_ub`` is the upper-bound capital point limiting the approximated region,
    or ``"auto"`` to derive it from the full-payment ideal point.  ``gamma_p``
    above 1 makes every scalarization infeasible (used to probe the threshold).
    """

    gamma_p: float
    epsilon: float = 1.0
    z_ub: Union[str, np.ndarray] = "auto"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.gamma_p < 0:
            raise ValueError("gamma_p must be >= 0")
        if isinstance(self.z_ub, str):
            if self.z_ub != "auto":
                raise ValueError('z_ub must be "auto" or a vector')
        else:
            object.__setattr__(self, "z_ub", np.asarray(self.z_ub, dtype=float))

    def gamma(self, net: FinancialNetwork) -> float:
        """The payment threshold ``gamma_p * sum(pbar)``."""
        return self.gamma_p * float(net.pbar.sum())


@dataclass(frozen=True)
class GaussianCashFlows:
    """Equicorrelated Gaussian cash flows: per-group means, common sigma and rho."""

    nu: np.ndarray
    sigma: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must be in [0, 1)")


@dataclass(frozen=True)
class GammaCopulaCashFlows:
    """Gaussian copula with gamma marginals: per-group shape/scale, common rho.

    Group means are ``kappa * theta`` and the common standard deviation is
    ``sqrt(kappa) * theta`` (equal across groups when chosen accordingly).
    """

    kappa: np.ndarray
    theta: np.ndarray
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=float))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if np.any(self.kappa <= 0) or np.any(self.theta <= 0):
            raise ValueError("kappa and theta must be > 0")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must be in [0, 1)")

    @property
    def nu(self) -> np.ndarray:
        return self.kappa * self.theta


CashFlowModel = Union[GaussianCashFlows, GammaCopulaCashFlows]


@dataclass(frozen=True)
class GeneratorConfig:
    """Inputs of the random instance generator.

    ``q_con[a, b]`` is the probability that a node of group a owes the amount
    ``l_gr[a, b]`` to a node of group b.  ``cash_flow`` picks the scenario
    model.  ``variant``/``alpha``/``beta`` select the clearing mechanism of
    generated networks.
    """

    group_sizes: tuple
    q_con: np.ndarray
    l_gr: np.ndarray
    cash_flow: CashFlowModel
    seed: int
    variant: str = EN
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in self.group_sizes))
        object.__setattr__(self, "q_con", np.asarray(self.q_con, dtype=float))
        object.__setattr__(self, "l_gr", np.asarray(self.l_gr, dtype=float))
        G = len(self.group_sizes)
        if any(s < 1 for s in self.group_sizes):
            raise ValueError("group sizes must be >= 1")
        if self.q_con.shape != (G, G) or self.l_gr.shape != (G, G):
            raise DimensionMismatch("q_con and l_gr must be G x G")
        if np.any(self.q_con < 0) or np.any(self.q_con > 1):
            raise ValueError("connection probabilities must lie in [0, 1]")
        if np.any(self.l_gr < 0):
            raise ValueError("intergroup liabilities must be >= 0")

    @property
    def n(self) -> int:
        return sum(self.group_sizes)

    @property
    def grouping(self) -> Grouping:
        return Grouping.from_sizes(self.group_sizes)


def _cell_uniforms(seed: int, domain: int, counters: np.ndarray) -> np.ndarray:
    """One uniform per cell, each from its own Philox substream."""
    flat = counters.reshape(-1, counters.shape[-1])
    out = np.empty(flat.shape[0])
    for idx, ctr in enumerate(flat):
        gen = Generator(Philox(counter=list(ctr) + [0] * (4 - len(ctr)), key=[seed, domain]))
        out[idx] = gen.random()
    return out.reshape(counters.shape[:-1])


def _cell_normals(seed: int, domain: int, counters: np.ndarray) -> np.ndarray:
    flat = counters.reshape(-1, counters.shape[-1])
    out = np.empty(flat.shape[0])
    for idx, ctr in enumerate(flat):
        gen = Generator(Philox(counter=list(ctr) + [0] * (4 - len(ctr)), key=[seed, domain]))
        out[idx] = gen.standard_normal()
    return out.reshape(counters.shape[:-1])


def generate_network(cfg: GeneratorConfig) -> FinancialNetwork:
    """Draw a blockwise Erdos-Renyi network, resampling degenerate draws.

    Deterministic given ``cfg.seed``.  Fresh uniforms are drawn on every
    attempt (the attempt index is part of each cell's counter) until the
    liabilities matrix has no zero obligation row and no full-ownership
    column, up to 1000 attempts.

    Raises
    ------
    GenerationExhausted
        After 1000 failed attempts (e.g. all connection probabilities zero).
    """
    n = cfg.n
    g = cfg.grouping.assignment
    prob = cfg.q_con[np.ix_(g, g)]
    amount = cfg.l_gr[np.ix_(g, g)]
    cell_ids = (np.arange(n)[:, None] * n + np.arange(n)[None, :])
    for attempt in range(_MAX_ATTEMPTS):
        counters = np.stack(
            [cell_ids, np.full((n, n), attempt)], axis=-1
        )
        u = _cell_uniforms(cfg.seed, _EDGE_DOMAIN, counters)
        l = np.where(u < prob, amount, 0.0)
        np.fill_diagonal(l, 0.0)
        try:
            return from_liabilities(l, cfg.variant, cfg.alpha, cfg.beta)
        except (ZeroObligationRow, ColumnSumViolation):
            continue
    raise GenerationExhausted(f"no valid network in {_MAX_ATTEMPTS} attempts")


def _equicorrelated(z: np.ndarray, rho: float) -> np.ndarray:
    """Apply the closed-form square root of ``(1-rho) I + rho 11^T`` rowwise.

    The matrix has eigenvalues ``1 - rho`` (off the all-ones direction) and
    ``1 + (n-1) rho`` (along it), so its square root is ``a I + b 11^T`` with
    ``a = sqrt(1-rho)`` and ``b = (sqrt(1+(n-1) rho) - a) / n``.
    """
    n = z.shape[1]
    a = math.sqrt(1.0 - rho)
    b = (math.sqrt(1.0 + (n - 1) * rho) - a) / n
    return a * z + b * z.sum(axis=1, keepdims=True)


def generate_scenarios(cfg: GeneratorConfig, n: int, K: int) -> ScenarioSet:
    """Draw K equally likely cash-flow scenarios for an n-node network.

    Gaussian model: each scenario is ``nu + sigma * Y`` with ``Y`` standard
    normal under equicorrelation ``rho``.  Gamma-copula model: the same
    correlated normals are pushed through the standard normal CDF and the
    gamma quantile with the node's group parameters, so every entry is >= 0.
    Deterministic given ``cfg.seed``; enlarging K keeps earlier scenarios.
    """
    if n != cfg.n:
        raise DimensionMismatch(f"n = {n} disagrees with group sizes totalling {cfg.n}")
    counters = np.stack(
        np.meshgrid(np.arange(K), np.arange(n), indexing="ij"), axis=-1
    )
    z = _cell_normals(cfg.seed, _CASH_DOMAIN, counters)
    model = cfg.cash_flow
    y = _equicorrelated(z, model.rho)
    g = cfg.grouping.assignment
    if isinstance(model, GaussianCashFlows):
        X = model.nu[g][None, :] + model.sigma * y
    else:
        u = ndtr(y)
        X = gammaincinv(model.kappa[g][None, :], u) * model.theta[g][None, :]
    return ScenarioSet.uniform(X)


def expected_aggregate(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    z: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """Expected aggregation value after adding group capital ``z`` to cash flows.

    Evaluates one clearing MILP per scenario on ``X(w^k) + B^T z`` and takes
    the probability-weighted sum; ``-inf`` if any augmented scenario has a
    negative component under the Rogers-Veraart model.
    """
    if scen.n != net.n or grouping.n != net.n:
        raise DimensionMismatch("network, scenarios and grouping sizes disagree")
    add = grouping.spread(z)
    total = 0.0
    for k in range(scen.K):
        x_aug = scen.X[k] + add
        if net.is_rv and np.any(x_aug < 0):
            return -math.inf
        total += float(scen.q[k]) * clearing.clearing_milp(net, x_aug, weights).aggregate
    return total


def in_risk_set(
    net: FinancialNetwork,
    scen: ScenarioSet,
    grouping: Grouping,
    spec: RiskSpec,
    z: np.ndarray,
    weights: np.ndarray | None = None,
) -> bool:
    """Membership of ``z`` in the risk set: expected aggregate >= gamma (tol 1e-9)."""
    return expected_aggregate(net, scen, grouping, z, weights) >= spec.gamma(net) - MEMBER_TOL


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def scenarios_to_csv(scen: ScenarioSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["q"] + [f"x{i + 1}" for i in range(scen.n)])
    for k in range(scen.K):
        w.writerow([f"{scen.q[k]:.17g}"] + [f"{v:.17g}" for v in scen.X[k]])
    return buf.getvalue()


def scenarios_from_csv(text: str) -> ScenarioSet:
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    if not header or header[0] != "q":
        raise ValueError("scenario CSV must start with a 'q' column")
    data = np.array([[float(v) for v in row] for row in rows[1:] if row])
    return ScenarioSet(X=data[:, 1:], q=data[:, 0])


def save_scenarios(scen: ScenarioSet, path: str | Path) -> None:
    Path(path).write_text(scenarios_to_csv(scen))


def load_scenarios(path: str | Path) -> ScenarioSet:
    return scenarios_from_csv(Path(path).read_text())


def config_to_json_dict(cfg: GeneratorConfig) -> dict:
    model = cfg.cash_flow
    if isinstance(model, GaussianCashFlows):
        cf = {"model": "gaussian", "nu": model.nu.tolist(), "sigma": model.sigma, "rho": model.rho}
    else:
        cf = {
            "model": "gamma_copula",
            "kappa": model.kappa.tolist(),
            "theta": model.theta.tolist(),
            "rho": model.rho,
        }
    variant = {"rv": {"alpha": cfg.alpha, "beta": cfg.beta}} if cfg.variant == RV else "en"
    return {
        "group_sizes": list(cfg.group_sizes),
        "q_con": cfg.q_con.tolist(),
        "l_gr": cfg.l_gr.tolist(),
        "cash_flow": cf,
        "seed": cfg.seed,
        "variant": variant,
    }


def config_from_json_dict(data: dict) -> GeneratorConfig:
    cf = data["cash_flow"]
    if cf["model"] == "gaussian":
        model: CashFlowModel = GaussianCashFlows(
            nu=np.asarray(cf["nu"], dtype=float), sigma=float(cf["sigma"]), rho=float(cf["rho"])
        )
    elif cf["model"] == "gamma_copula":
        model = GammaCopulaCashFlows(
            kappa=np.asarray(cf["kappa"], dtype=float),
            theta=np.asarray(cf["theta"], dtype=float),
            rho=float(cf["rho"]),
        )
    else:
        raise ValueError(f"unknown cash-flow model {cf['model']!r}")
    variant = data.get("variant", "en")
    if variant == "en":
        kind, alpha, beta = EN, None, None
    else:
        kind = RV
        alpha = float(variant["rv"]["alpha"])
        beta = float(variant["rv"]["beta"])
    return GeneratorConfig(
        group_sizes=tuple(data["group_sizes"]),
        q_con=np.asarray(data["q_con"], dtype=float),
        l_gr=np.asarray(data["l_gr"], dtype=float),
        cash_flow=model,
        seed=int(data["seed"]),
        variant=kind,
        alpha=alpha,
        beta=beta,
    )
