"""Financial network definitions, validation, and JSON persistence.

A network is held in relative form: a row-stochastic relative liabilities
matrix ``pi`` plus a strictly positive total obligations vector ``pbar``.
``from_liabilities`` converts a raw nominal liabilities matrix into this form.
Dense storage throughout; target instances are n <= ~100.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ColumnSumViolation, DimensionMismatch, ZeroObligationRow

EN = "en"
RV = "rv"

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class FinancialNetwork:
    """An interbank network in (pi, pbar) form.

    Parameters
    ----------
    pi : ndarray, shape (n, n)
        Relative liabilities; ``pi[i, j]`` is the fraction of node i's total
        obligations owed to node j.  Row-stochastic with zero diagonal.
    pbar : ndarray, shape (n,)
        Total obligations per node, strictly positive.
    variant : str
        ``"en"`` for the signed Eisenberg-Noe model or ``"rv"`` for the
        Rogers-Veraart model with default costs.
    alpha, beta : float, optional
        Rogers-Veraart liquid fractions in (0, 1]; ``alpha`` applies to a
        defaulting node's own cash flow, ``beta`` to its incoming payments.

    Instances are immutable; share them freely across threads.
    """

    pi: np.ndarray
    pbar: np.ndarray
    variant: str = EN
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "pbar", np.asarray(self.pbar, dtype=float))
        self.pi.setflags(write=False)
        self.pbar.setflags(write=False)

    @property
    def n(self) -> int:
        return self.pbar.shape[0]

    @property
    def is_rv(self) -> bool:
        return self.variant == RV

    def with_costs(self, alpha: float, beta: float) -> "FinancialNetwork":
        """Same liabilities, Rogers-Veraart variant with the given liquid fractions."""
        return replace(self, variant=RV, alpha=alpha, beta=beta)

    def check_cash_flow(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatch(f"cash flow has shape {x.shape}, expected ({self.n},)")
        return x


def from_liabilities(
    liabilities: np.ndarray,
    variant: str = EN,
    alpha: float | None = None,
    beta: float | None = None,
) -> FinancialNetwork:
    """Convert a nominal liabilities matrix into a validated network.

    ``pbar[i]`` is the i-th row sum and ``pi[i, j] = l[i, j] / pbar[i]``.

    Raises
    ------
    ZeroObligationRow
        If some row of the liabilities matrix sums to zero.
    ColumnSumViolation
        If some column of the resulting pi sums to n or more.
    """
    l = np.asarray(liabilities, dtype=float)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise DimensionMismatch(f"liabilities must be square, got shape {l.shape}")
    n = l.shape[0]
    if np.any(l < 0):
        raise ValueError("liabilities must be nonnegative")
    if np.any(np.diag(l) != 0):
        raise ValueError("liabilities must have a zero diagonal")
    pbar = l.sum(axis=1)
    zero_rows = np.flatnonzero(pbar <= 0)
    if zero_rows.size:
        raise ZeroObligationRow(f"rows with zero total obligations: {zero_rows.tolist()}")
    pi = l / pbar[:, None]
    col_sums = pi.sum(axis=0)
    bad = np.flatnonzero(col_sums >= n)
    if bad.size:
        raise ColumnSumViolation(f"columns owning all claims: {bad.tolist()}")
    return FinancialNetwork(pi=pi, pbar=pbar, variant=variant, alpha=alpha, beta=beta)


@dataclass(frozen=True)
class Violation:
    code: str
    index: int | tuple
    magnitude: float

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.code} at {self.index}: {self.magnitude:g}"


def validate(net: FinancialNetwork) -> list[Violation]:
    """Return every violated network invariant; an empty list means the network is valid."""
    out: list[Violation] = []
    n = net.n
    if net.pi.shape != (n, n):
        out.append(Violation("pi-shape", net.pi.shape, 0.0))
        return out
    diag = np.diag(net.pi)
    for i in np.flatnonzero(diag != 0):
        out.append(Violation("zero-diagonal", int(i), float(diag[i])))
    neg = np.argwhere(net.pi < 0)
    for i, j in neg:
        out.append(Violation("nonnegative", (int(i), int(j)), float(net.pi[i, j])))
    row_sums = net.pi.sum(axis=1)
    for i in np.flatnonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
        out.append(Violation("row-stochastic", int(i), float(row_sums[i])))
    col_sums = net.pi.sum(axis=0)
    for i in np.flatnonzero(col_sums >= n):
        out.append(Violation("column-sum", int(i), float(col_sums[i])))
    for i in np.flatnonzero(net.pbar <= 0):
        out.append(Violation("positive-obligations", int(i), float(net.pbar[i])))
    if net.variant == RV:
        for name, val in (("alpha", net.alpha), ("beta", net.beta)):
            if val is None or not 0 < val <= 1:
                out.append(Violation(f"{name} in (0,1]", -1, float("nan") if val is None else val))
    elif net.variant != EN:
        out.append(Violation("variant", -1, 0.0))
    return out


def nominal_liabilities(net: FinancialNetwork) -> np.ndarray:
    """Reconstruct the nominal liabilities matrix ``l[i, j] = pi[i, j] * pbar[i]``."""
    return net.pi * net.pbar[:, None]


def to_json_dict(net: FinancialNetwork) -> dict:
    if net.is_rv:
        variant = {"rv": {"alpha": net.alpha, "beta": net.beta}}
    else:
        variant = "en"
    return {
        "n": net.n,
        "variant": variant,
        "liabilities": nominal_liabilities(net).tolist(),
    }


def from_json_dict(data: dict) -> FinancialNetwork:
    variant = data["variant"]
    if variant == "en":
        kind, alpha, beta = EN, None, None
    elif isinstance(variant, dict) and "rv" in variant:
        kind = RV
        alpha = float(variant["rv"]["alpha"])
        beta = float(variant["rv"]["beta"])
    else:
        raise ValueError(f"unknown variant {variant!r}")
    l = np.asarray(data["liabilities"], dtype=float)
    if "n" in data and l.shape[0] != data["n"]:
        raise ValueError("liabilities shape disagrees with declared n")
    return from_liabilities(l, kind, alpha, beta)


def save_network(net: FinancialNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(net), indent=2) + "\n")


def load_network(path: str | Path) -> FinancialNetwork:
    return from_json_dict(json.loads(Path(path).read_text()))
