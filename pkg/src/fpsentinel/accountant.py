"""Privacy accounting for repeated subsampled Gaussian releases.

Renyi-DP composition: the per-release RDP of the sampled Gaussian mechanism
is computed at integer orders, composed linearly over rounds, and converted
to an (epsilon, delta) guarantee with the tightened conversion
eps = rdp + log((a-1)/a) - (log(delta) + log(a)) / (a - 1), minimized over
orders.  At sampling rate 1 the per-order RDP reduces to a / (2 sigma^2).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, InfeasibleBudgetError

DEFAULT_ORDERS = tuple(range(2, 129)) + (160, 192, 256, 384, 512)

# log-factorial table large enough for the default orders.
_LOG_FACTORIAL = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, max(DEFAULT_ORDERS) + 1)))))


def _log_binom(n: int, k: np.ndarray) -> np.ndarray:
    return _LOG_FACTORIAL[n] - _LOG_FACTORIAL[k] - _LOG_FACTORIAL[n - k]


def _logsumexp(values: np.ndarray) -> float:
    peak = np.max(values)
    if np.isneginf(peak):
        return -math.inf
    return float(peak + np.log(np.sum(np.exp(values - peak))))


def rdp_sampled_gaussian(q: float, sigma: float, order: int) -> float:
    """RDP of one subsampled Gaussian release at an integer order."""
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"sampling rate must be in [0, 1], got {q}")
    if order < 2:
        raise ConfigError("orders below 2 are not supported")
    if q == 0.0:
        return 0.0
    if sigma <= 0.0:
        return math.inf
    if q == 1.0:
        return order / (2.0 * sigma**2)
    k = np.arange(order + 1)
    log_terms = (
        _log_binom(order, k)
        + k * math.log(q)
        + (order - k) * math.log1p(-q)
        + (k * k - k) / (2.0 * sigma**2)
    )
    return _logsumexp(log_terms) / (order - 1)


def rdp_to_epsilon(rdp: float, order: int, delta: float) -> float:
    """Convert one (order, rdp) pair to epsilon at the target delta."""
    if math.isinf(rdp):
        return math.inf
    eps = (
        rdp
        + math.log((order - 1) / order)
        - (math.log(delta) + math.log(order)) / (order - 1)
    )
    return max(eps, 0.0)


def epsilon_for(
    sigma: float,
    rounds: int,
    q: float,
    delta: float,
    orders: tuple[int, ...] = DEFAULT_ORDERS,
) -> float:
    """Total epsilon of ``rounds`` subsampled Gaussian releases at rate ``q``."""
    if rounds < 0:
        raise ConfigError("rounds must be nonnegative")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must be in (0, 1), got {delta}")
    if rounds == 0 or q == 0.0:
        return 0.0
    if sigma <= 0.0:
        return math.inf
    best = math.inf
    for order in orders:
        per_round = rdp_sampled_gaussian(q, sigma, order)
        best = min(best, rdp_to_epsilon(rounds * per_round, order, delta))
    return best


def epsilon_for_components(
    components: list[tuple[float, int, float]],
    delta: float,
    orders: tuple[int, ...] = DEFAULT_ORDERS,
) -> float:
    """Total epsilon of heterogeneous releases composed in RDP.

    Each component is (sigma, rounds, q); the per-order RDP of all
    components adds before the single conversion to (epsilon, delta).
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must be in (0, 1), got {delta}")
    live = [(s, r, q) for s, r, q in components if r > 0 and q > 0.0]
    if not live:
        return 0.0
    if any(s <= 0.0 for s, _, _ in live):
        return math.inf
    best = math.inf
    for order in orders:
        total = sum(r * rdp_sampled_gaussian(q, s, order) for s, r, q in live)
        best = min(best, rdp_to_epsilon(total, order, delta))
    return best


def classic_gaussian_sigma(epsilon: float, delta: float) -> float:
    """Closed-form noise multiplier of the classic Gaussian mechanism,
    sigma = sqrt(2 ln(1.25/delta)) / epsilon, valid for epsilon <= 1."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def default_sigma_grid() -> np.ndarray:
    """Search grid for calibration: zero plus a dense geometric range."""
    return np.concatenate(([0.0], np.geomspace(0.02, 128.0, 800)))


def calibrate_noise(
    epsilon: float,
    delta: float,
    rounds: int,
    q: float,
    grid: np.ndarray | None = None,
) -> float:
    """Smallest noise multiplier on the grid meeting the privacy budget.

    An infinite epsilon accepts the grid minimum (no noise).  Raises
    InfeasibleBudgetError when even the largest grid value exceeds the
    budget.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"sampling rate must be in (0, 1], got {q}")
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    if grid is None:
        grid = default_sigma_grid()
    if math.isinf(epsilon):
        return float(grid[0])

    def feasible(sigma: float) -> bool:
        return epsilon_for(sigma, rounds, q, delta) <= epsilon

    if not feasible(float(grid[-1])):
        raise InfeasibleBudgetError(
            f"infeasible privacy budget: epsilon={epsilon}, delta={delta}, "
            f"rounds={rounds}, q={q} not reachable on the sigma grid"
        )
    # Epsilon is nonincreasing in sigma, so the smallest feasible grid entry
    # can be found by bisection.
    lo, hi = 0, len(grid) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(float(grid[mid])):
            hi = mid
        else:
            lo = mid + 1
    return float(grid[lo])


def calibrate_noise_components(
    epsilon: float,
    delta: float,
    fixed: list[tuple[float, int, float]],
    rounds: int,
    q: float,
    grid: np.ndarray | None = None,
) -> float:
    """Like calibrate_noise, but the budget also covers fixed releases
    (e.g. a DP feature-normalization phase) composed with the training."""
    if grid is None:
        grid = default_sigma_grid()
    if math.isinf(epsilon):
        return float(grid[0])

    def feasible(sigma: float) -> bool:
        return epsilon_for_components(fixed + [(sigma, rounds, q)], delta) <= epsilon

    if not feasible(float(grid[-1])):
        raise InfeasibleBudgetError(
            f"infeasible privacy budget: epsilon={epsilon} at delta={delta} "
            f"with rounds={rounds}, q={q:.4g}"
        )
    lo, hi = 0, len(grid) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(float(grid[mid])):
            hi = mid
        else:
            lo = mid + 1
    return float(grid[lo])
