import numpy as np


class TailADRFError(Exception):
    """Base class for operational errors raised by this package."""


class InvalidFitError(TailADRFError, ValueError):
    """A tail fit is undefined for the given exceedances."""


class SingularDesignError(TailADRFError, np.linalg.LinAlgError):
    """The kernel-weighted local-linear design cannot be solved."""
