"""
Root-finding helpers built on scipy.optimize.
"""
import logging
from typing import Callable, Optional

from scipy import optimize

from freezetfrc.errors import ConvergenceError

logger = logging.getLogger(__name__)


def bisect_root(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    xtol: float = 1e-10,
    maxiter: int = 64
) -> float:
    """
    Bracketed root of a monotone function.

    Args:
        func: Function with a sign change on [lower, upper]
        lower: Left end of the bracket
        upper: Right end of the bracket
        xtol: Absolute tolerance on the root
        maxiter: Iteration cap

    Returns:
        The root

    Raises:
        ConvergenceError: If the bracket is invalid or the cap is reached
    """
    try:
        return optimize.bisect(func, lower, upper, xtol=xtol, maxiter=maxiter)
    except (ValueError, RuntimeError) as e:
        logger.error(f"Bisection failed on [{lower}, {upper}]: {str(e)}")
        raise ConvergenceError(str(e)) from e


def newton_root(
    func: Callable[[float], float],
    x0: float,
    fprime: Optional[Callable[[float], float]] = None,
    tol: float = 1e-10,
    maxiter: int = 100
) -> float:
    """
    Newton-Raphson iteration from ``x0``.

    Raises:
        ConvergenceError: If the iteration does not converge within ``maxiter``
    """
    try:
        return float(optimize.newton(func, x0, fprime=fprime, tol=tol, maxiter=maxiter))
    except (RuntimeError, OverflowError, ZeroDivisionError) as e:
        logger.error(f"Newton-Raphson did not converge from x0={x0}: {str(e)}")
        raise ConvergenceError(str(e)) from e
