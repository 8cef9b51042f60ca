"""Exception and warning classes."""

import numpy as np


class DerivativeCheckError(ValueError):
    """An oracle returned non-finite values during a derivative check."""


class SubproblemError(RuntimeError):
    """The proximal subproblem could not be solved."""


class NotPositiveDefiniteError(SubproblemError):
    """The subproblem Hessian is not positive definite; increase beta."""


class BetaBoundError(SubproblemError):
    """Backtracking pushed the proximal parameter above ``beta_max``."""


class SingularKKTError(np.linalg.LinAlgError):
    """The SCP saddle-point system is singular (rank-deficient Jacobian)."""


class AssumptionWarning(UserWarning):
    """A standing assumption of the convergence theory appears violated."""
