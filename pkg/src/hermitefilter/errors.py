"""Exception types. Each carries a short ``kind`` used in CLI error lines."""


class HermiteFilterError(Exception):
    kind = "error"
    # online step index, set when the failure happens inside the online loop
    step = None

    def at_step(self, step):
        self.step = step
        if self.args:
            self.args = (f"{self.args[0]} (online step {step})",) + self.args[1:]
        return self


class SolverBlowUp(HermiteFilterError):
    """Non-finite coefficients during time stepping."""

    kind = "solver_blowup"

    def __init__(self, message, time=None, column=None):
        super().__init__(message)
        self.time = time
        self.column = column


class LinearSolveError(HermiteFilterError):
    kind = "linear_solve"


class ObservationOutlier(HermiteFilterError):
    """The likelihood exponent left the range exp() can represent."""

    kind = "observation_outlier"


class FilterDivergence(HermiteFilterError):
    kind = "filter_divergence"


class DomainExhausted(HermiteFilterError):
    """The state estimate left the region covered by the window bank."""

    kind = "domain_exhausted"


class DegenerateWeights(HermiteFilterError):
    kind = "degenerate_weights"


class ToleranceUnreachable(HermiteFilterError):
    kind = "tolerance_unreachable"


class BankFormatError(HermiteFilterError):
    kind = "bank_format"
