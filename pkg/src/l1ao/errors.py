"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or parameter value."""


class DomainViolation(ValueError):
    """A barrier-composed function was evaluated outside its domain.

    ``index`` is the position of the first constraint with ``f_i(t, v) >= 0``.
    """

    def __init__(self, index, t=None, value=None):
        self.index = index
        self.t = t
        self.value = value
        msg = f"constraint {index} violated"
        if t is not None:
            msg += f" at t={t:.6g}"
        if value is not None:
            msg += f" (f_i = {value:.6g} >= 0)"
        super().__init__(msg)


class NumericError(ArithmeticError):
    """Singular Hessian, non-convergence or similar numerical failure."""


class NewtonFailure(NumericError):
    def __init__(self, t, grad_norm, iterations):
        self.t = t
        self.grad_norm = grad_norm
        self.iterations = iterations
        super().__init__(
            f"Newton oracle did not converge at t={t:.6g} after {iterations} "
            f"iterations (|grad| = {grad_norm:.3e})"
        )


class ContractViolation(RuntimeError):
    """An operation was called outside its documented precondition."""
