"""Writer for the LP interchange text format.

Emits the classic sectioned layout (objective, Subject To, Bounds, Binaries,
End) so models can be cross-checked with external MILP tools.  Output is
deterministic: variables keep their model names, constraints are written in
model order, and every number is printed with 17 significant digits so a
round trip through text preserves float64 values exactly.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import ModelError
from .milp import MilpModel


def _num(v: float) -> str:
    return f"{v:.17g}"


def _bound_token(v: float) -> str:
    if v == math.inf:
        return "+infinity"
    if v == -math.inf:
        return "-infinity"
    return _num(v)


def _terms(coeffs, names) -> str:
    parts: list[str] = []
    for j, a in coeffs:
        if a == 0.0:
            continue
        if not parts:
            lead = "-" if a < 0 else ""
            parts.append(f"{lead}{_num(abs(a))} {names[j]}")
        else:
            sign = "-" if a < 0 else "+"
            parts.append(f"{sign} {_num(abs(a))} {names[j]}")
    if not parts:
        # A degenerate all-zero row still needs a variable reference.
        parts.append(f"0 {names[0]}")
    return " ".join(parts)


def export_lp(model: MilpModel) -> str:
    """Render the model as LP-format text."""
    model.validate()
    if model.num_variables == 0:
        raise ModelError("cannot export a model with no variables")
    names = [v.name for v in model.variables]
    for name in names:
        if not name or any(ch.isspace() for ch in name):
            raise ModelError(f"variable name {name!r} is not LP-format safe")
    lines: list[str] = []
    lines.append("Maximize" if model.objective_sense == "max" else "Minimize")
    obj = _terms(model.objective_coeffs, names)
    if model.objective_offset:
        sign = "-" if model.objective_offset < 0 else "+"
        obj += f" {sign} {_num(abs(model.objective_offset))}"
    lines.append(f" obj: {obj}")
    lines.append("Subject To")
    sense_map = {"<=": "<=", ">=": ">=", "==": "="}
    for con in model.constraints:
        lines.append(
            f" {con.name}: {_terms(con.coeffs, names)} {sense_map[con.sense]} {_num(con.rhs)}"
        )
    lines.append("Bounds")
    for v in model.variables:
        lines.append(f" {_bound_token(v.lb)} <= {v.name} <= {_bound_token(v.ub)}")
    lines.append("Binaries")
    binaries = [v.name for v in model.variables if v.binary]
    if binaries:
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(model: MilpModel, path: str | Path) -> None:
    Path(path).write_text(export_lp(model))
