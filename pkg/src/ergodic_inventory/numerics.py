"""Numerical helpers: adaptive quadrature with escalating subdivision limits.

Quadrature is done with ``scipy.integrate.quad`` (QUADPACK, Gauss–Kronrod
panels). When QUADPACK reports that the tolerance was not reached, the call is
retried with a larger subdivision limit before a ``NumericFailure`` is raised.
"""

import functools
import logging
import warnings
from typing import Any, Callable, Tuple, Type, TypeVar, Union

from scipy import integrate

from ergodic_inventory.errors import NumericFailure

logger = logging.getLogger(__name__)

# Type variable for the return type of the decorated function
T = TypeVar("T")
# Type for exceptions that can be caught
ExceptionType = Union[Type[Exception], Tuple[Type[Exception], ...]]

DEFAULT_REL_TOL = 1e-10
DEFAULT_ABS_TOL = 1e-12
DEFAULT_LIMIT = 200


def retry_on_failure(
    max_retries: int = 2,
    limit_factor: int = 4,
    retry_exceptions: ExceptionType = (NumericFailure,),
) -> Callable[[Callable[..., T]], Callable[..., T]]:
    """Decorator to retry a numeric routine with a growing subdivision limit.

    The wrapped function must accept a ``limit`` keyword argument.

    Args:
        max_retries: Maximum number of retry attempts
        limit_factor: Factor applied to ``limit`` on each retry
        retry_exceptions: Tuple of exceptions to retry on

    Returns:
        Decorated function
    """

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            limit = int(kwargs.pop("limit", DEFAULT_LIMIT))
            last_exception = None
            for attempt in range(max_retries + 1):
                try:
                    return func(*args, limit=limit, **kwargs)
                except retry_exceptions as e:
                    last_exception = e
                    if attempt >= max_retries:
                        logger.error(
                            f"Failed after {max_retries} retries: {func.__name__}"
                        )
                        break
                    limit *= limit_factor
                    logger.warning(
                        f"Retry {attempt + 1}/{max_retries} for {func.__name__} "
                        f"with limit={limit} due to: {e}"
                    )

            if last_exception:
                raise last_exception

            # This should never happen, but needed for type checking
            raise RuntimeError(
                f"Unexpected error in retry_on_failure for {func.__name__}"
            )

        return wrapper

    return decorator


@retry_on_failure()
def adaptive_quad(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
    limit: int = DEFAULT_LIMIT,
) -> Tuple[float, float]:
    """Integrate ``func`` over ``[lower, upper]`` by adaptive Gauss–Kronrod.

    Args:
        func: Scalar integrand
        lower: Lower limit (may be ``-inf``)
        upper: Upper limit (may be ``inf``)
        rel_tol: Requested relative tolerance
        abs_tol: Requested absolute tolerance
        limit: Maximum number of subintervals

    Returns:
        Tuple of (value, error estimate)

    Raises:
        NumericFailure: If QUADPACK reports nonconvergence
    """
    if lower == upper:
        return 0.0, 0.0

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        result = integrate.quad(
            func,
            lower,
            upper,
            epsabs=abs_tol,
            epsrel=rel_tol,
            limit=limit,
            full_output=1,
        )

    value, error = float(result[0]), float(result[1])
    # quad appends a message when the requested accuracy was not achieved
    if len(result) > 3:
        tolerance = max(abs_tol, rel_tol * abs(value))
        if not error <= 10.0 * tolerance:
            raise NumericFailure(
                f"Quadrature on [{lower}, {upper}] did not converge: {result[3]}",
                error_estimate=error,
            )
        logger.debug(f"Quadrature accepted with warning, error estimate {error:.3e}")
    return value, error
