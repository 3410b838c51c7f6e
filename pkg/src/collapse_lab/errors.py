"""Exception hierarchy shared by all modules."""


class CollapseLabError(Exception):
    """Base class for every error raised by the package."""


class DomainError(CollapseLabError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateConditionalState(DomainError):
    """A conditional state has norm below the degeneracy floor."""

    def __init__(self, norm, floor):
        super().__init__(f"conditional state norm {norm:.3e} below floor {floor:.1e}")
        self.norm = norm
        self.floor = floor


class DegenerateTarget(DomainError):
    """The weight of a collapse target fell below the floor."""

    def __init__(self, weight, floor, t=None):
        where = "" if t is None else f" at t={t!r}"
        super().__init__(f"target weight {weight:.3e} below floor {floor:.1e}{where}")
        self.weight = weight
        self.floor = floor
        self.t = t


class NumericError(CollapseLabError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class CollapseFailed(NumericError):
    """The projected end state has vanishing norm."""


class ValidationError(CollapseLabError, ValueError):
    """A scenario or configuration failed validation.

    ``problems`` lists every violated condition, not only the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class FitError(NumericError):
    """An asymptotic fit had too few usable samples or no power-law decay."""
