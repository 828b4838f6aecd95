"""Exception types shared across the package."""


class SysriskError(Exception):
    """Base class for all package errors."""


class ZeroObligationRow(SysriskError):
    """A liability matrix row sums to zero, so total obligations would not be strictly positive."""


class ColumnSumViolation(SysriskError):
    """A column of the relative liabilities matrix sums to n or more (one node owns all claims)."""


class DimensionMismatch(SysriskError):
    """Vector or matrix arguments do not match the network size."""


class NegativeCashFlow(SysriskError):
    """A Rogers-Veraart clearing map was fed a cash flow with negative components."""


class NoConvergence(SysriskError):
    """Fixed-point iteration failed to reach the tolerance within the iteration budget."""


class ModelError(SysriskError):
    """A MILP model violates its structural invariants (NaN/inf coefficients, bad binary bounds)."""


class UnboundedVariable(SysriskError):
    """A variable has an infinite bound at solve time; the embedded solver requires finite boxes."""


class SolverFailure(SysriskError):
    """The MILP solver failed (numerical breakdown or unexpected internal state)."""


class GenerationExhausted(SysriskError):
    """Random network generation failed to produce a valid network within the attempt budget."""


class InfeasibleSpec(SysriskError):
    """The risk specification requires more than the total obligations, so the risk set is empty."""


class UpperBoundNotMember(SysriskError):
    """The supplied upper-bound point is not itself in the risk set."""
