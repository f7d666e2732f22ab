"""Adaptive-lambda running-posterior-mean SPRT and the oracle simple-vs-simple test.

The adaptive statistic replaces a fixed mixing precision by a running
estimate of ``psi^-2``::

    Y_t = sum_{s<=t} psi_hat_{s-1} X_s - psi_hat_{s-1}^2 / 2
    psi_hat_{s-1} = S_{s-1} / ((s - 1) + lambda_hat_{s-1})
    lambda_hat_t  = min((t / S_t)^2, lambda_cap)     (lambda_cap when S_t = 0)

Its delayed-start threshold ``A*`` is calibrated by Monte Carlo so that
``E[exp(-(A* - Y_t0)_+)] = alpha`` over i.i.d. standard normal prefixes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .boundary import BoundaryKind, CalibratedBoundary
from .errors import ConfigError, DomainError, GridTooNarrow, NonFiniteObservation
from .numerics import RootBracket, make_rng, norm_cdf, norm_pdf, norm_sf, solve_root
from .teststat import y_svs

__all__ = [
    "DEFAULT_LAMBDA_CAP",
    "AdaptiveState",
    "McCalibration",
    "adaptive_update",
    "adaptive_statistic",
    "simulate_adaptive_at",
    "ville_expectation",
    "calibrate_adaptive",
    "y_svs",
    "svs_crossing_expectation",
    "svs_crossing_expectation_closed_form",
    "calibrate_svs_delayed",
    "AdaptiveLambdaTest",
]

DEFAULT_LAMBDA_CAP = 1e12


@dataclass
class AdaptiveState:
    t: int = 0
    S: float = 0.0
    y_adaptive: float = 0.0
    lambda_cap: float = DEFAULT_LAMBDA_CAP
    lambda_hat: float = DEFAULT_LAMBDA_CAP
    threshold: Optional[float] = None
    t0: int = 0
    stopped_at: Optional[int] = None

    def __post_init__(self):
        if not self.lambda_cap > 0:
            raise DomainError("lambda_cap must be positive")

    @property
    def psi_hat(self) -> float:
        """Shrunk running mean used for the next increment."""
        return self.S / (self.t + self.lambda_hat)


def _lambda_hat(t, S, cap):
    if S == 0.0:
        return cap
    r = abs(t / S)
    # compare before squaring so a tiny |S| cannot overflow
    return cap if r >= math.sqrt(cap) else min(r * r, cap)


def adaptive_update(state: AdaptiveState, x: float) -> AdaptiveState:
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteObservation(f"non-finite observation {x!r}")
    psi = state.psi_hat
    t = state.t + 1
    S = state.S + x
    new = replace(
        state, t=t, S=S,
        y_adaptive=state.y_adaptive + psi * x - 0.5 * psi * psi,
        lambda_hat=_lambda_hat(t, S, state.lambda_cap),
    )
    if (new.stopped_at is None and new.threshold is not None
            and t >= max(new.t0, 1) and new.y_adaptive >= new.threshold):
        new.stopped_at = t
    return new


def adaptive_statistic(xs, lambda_cap: float = DEFAULT_LAMBDA_CAP,
                       frozen_lambda: Optional[float] = None) -> np.ndarray:
    """Adaptive statistic after the last step, vectorised over leading axes.

    ``xs`` has time on its last axis. With ``frozen_lambda`` set, every
    ``lambda_hat`` is replaced by that constant, which reduces the statistic
    to the fixed-lambda running-posterior-mean sum.
    """
    xs = np.asarray(xs, dtype=float)
    shape = xs.shape[:-1]
    S = np.zeros(shape)
    y = np.zeros(shape)
    lam = np.full(shape, lambda_cap if frozen_lambda is None else frozen_lambda)
    for i in range(xs.shape[-1]):
        x = xs[..., i]
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(i + lam > 0, S / (i + lam), 0.0)
        y += psi * x - 0.5 * psi * psi
        S += x
        if frozen_lambda is None:
            t = i + 1
            with np.errstate(divide="ignore", over="ignore"):
                lam = np.where(S == 0.0, lambda_cap, np.minimum((t / S) ** 2, lambda_cap))
    return y


def simulate_adaptive_at(t0: int, n_paths: int, seed: int,
                         lambda_cap: float = DEFAULT_LAMBDA_CAP,
                         chunk: int = 2000) -> np.ndarray:
    """Adaptive statistic at ``t0`` for ``n_paths`` i.i.d. N(0, 1) prefixes."""
    rng = make_rng(seed)
    out = np.empty(n_paths)
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        out[start:start + m] = adaptive_statistic(rng.standard_normal((m, t0)), lambda_cap)
    return out


def ville_expectation(A: float, y_t0: np.ndarray):
    """Monte Carlo ``E[exp(-(A - Y_t0)_+)]`` and its standard error."""
    v = np.exp(-np.maximum(A - y_t0, 0.0))
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass(frozen=True)
class McCalibration:
    alpha: float
    t0: int
    n_paths: int
    path_horizon: int
    grid: tuple
    seed: int
    solved_threshold: float
    estimate: float
    se: float
    lambda_cap: float = DEFAULT_LAMBDA_CAP

    def boundary(self) -> CalibratedBoundary:
        return CalibratedBoundary(BoundaryKind.ADAPTIVE, self.alpha, self.t0, self.solved_threshold)


def calibrate_adaptive(alpha: float, t0: int, n_paths: int = 10_000, seed: int = 0,
                       grid_halfwidth: float = 10.0, grid_step: float = 0.01,
                       lambda_cap: float = DEFAULT_LAMBDA_CAP) -> McCalibration:
    """Monte Carlo threshold for the delayed-start adaptive-lambda test.

    Grid search over ``A`` in ``-log(alpha) +/- grid_halfwidth``, then
    bisection on the (monotone) empirical expectation between the two grid
    points that bracket ``alpha``.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if t0 < 0:
        raise DomainError("t0 must be >= 0")
    if n_paths < 1000:
        raise ConfigError("n_paths must be at least 1000")
    centre = -math.log(alpha)
    grid = (centre - grid_halfwidth, centre + grid_halfwidth, grid_step)
    if t0 == 0:
        # Y_0 = 0 identically, so E[exp(-A_+)] = exp(-A).
        return McCalibration(alpha, 0, n_paths, 0, grid, seed, centre, alpha, 0.0, lambda_cap)

    y = simulate_adaptive_at(t0, n_paths, seed, lambda_cap)
    A_grid = np.arange(grid[0], grid[1] + grid_step / 2, grid_step)
    E = np.exp(-np.maximum(A_grid[:, None] - y[None, :], 0.0)).mean(axis=1)
    if not (E[0] >= alpha >= E[-1]):
        raise GridTooNarrow(
            f"alpha={alpha} not bracketed: E({A_grid[0]:.3f})={E[0]:.4g}, E({A_grid[-1]:.3f})={E[-1]:.4g}"
        )
    j = int(np.argmin(np.abs(E - alpha)))
    # bracketing neighbours around the best grid point
    lo = A_grid[j - 1] if j > 0 and E[j] < alpha else A_grid[j]
    hi = A_grid[j + 1] if j + 1 < A_grid.size and E[j] >= alpha else A_grid[j]
    if lo == hi:
        A_star = float(lo)
    else:
        A_star = solve_root(lambda A: ville_expectation(A, y)[0] - alpha,
                            RootBracket(float(lo), float(hi), tol_abs=1e-10))
    est, se = ville_expectation(A_star, y)
    return McCalibration(alpha, t0, n_paths, t0, grid, seed, A_star, est, se, lambda_cap)


def _svs_moments(psi: float, t0: float):
    var = psi * psi * t0
    return -0.5 * var, math.sqrt(var)


def svs_crossing_expectation(a: float, psi: float, t0: float) -> float:
    """``E[exp(-(a - G)_+)]`` with ``G ~ N(-psi^2 t0 / 2, psi^2 t0)``, by quadrature."""
    m, s = _svs_moments(psi, t0)
    if s == 0:
        return math.exp(-max(a, 0.0))
    zc = (a - m) / s
    body, _ = integrate.quad(
        lambda z: math.exp(m + s * z - a) * float(norm_pdf(z)), -np.inf, zc,
        epsabs=1e-13, epsrel=1e-12, limit=200,
    )
    return body + float(norm_sf(zc))


def svs_crossing_expectation_closed_form(a: float, psi: float, t0: float) -> float:
    """Same expectation via the lognormal partial moment (used as a check)."""
    m, s = _svs_moments(psi, t0)
    if s == 0:
        return math.exp(-max(a, 0.0))
    return float(norm_sf((a - m) / s)) + math.exp(-a) * float(norm_cdf((a - m - s * s) / s))


def calibrate_svs_delayed(alpha: float, psi: float, t0: int) -> CalibratedBoundary:
    """Threshold ``a*`` of the delayed-start oracle simple-vs-simple SPRT.

    Under Brownian null data ``exp(Y_t - Y_t0)`` is a continuous martingale,
    so the crossing probability after ``t0`` is ``E[exp(-(a - Y_t0)_+)]``.
    """
    if psi == 0 or not math.isfinite(psi):
        raise DomainError("psi must be a nonzero finite real")
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if t0 < 0:
        raise DomainError("t0 must be >= 0")
    m, s = _svs_moments(psi, t0)
    if s == 0:
        a_star = -math.log(alpha)
    else:
        lo = min(0.0, m - 40.0 * s) - 1.0
        a_star = solve_root(lambda a: svs_crossing_expectation(a, psi, t0) - alpha,
                            RootBracket(lo, 745.0, tol_abs=1e-12))
    return CalibratedBoundary(BoundaryKind.SVS, alpha, int(t0), a_star, psi_ref=float(psi))


class AdaptiveLambdaTest(BaseEstimator):
    """Delayed-start adaptive-lambda SPRT with a Monte Carlo calibrated threshold."""

    def __init__(self, alpha=0.05, t0=200, n_paths=10_000, seed=0,
                 lambda_cap=DEFAULT_LAMBDA_CAP):
        self.alpha = alpha
        self.t0 = t0
        self.n_paths = n_paths
        self.seed = seed
        self.lambda_cap = lambda_cap

    def _init_state(self):
        self.calibration_ = calibrate_adaptive(self.alpha, self.t0, self.n_paths,
                                               self.seed, lambda_cap=self.lambda_cap)
        self.state_ = AdaptiveState(lambda_cap=self.lambda_cap, lambda_hat=self.lambda_cap,
                                    threshold=self.calibration_.solved_threshold, t0=self.t0)

    def fit(self, X, y=None):
        self._init_state()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "state_"):
            self._init_state()
        state = self.state_
        for x in np.asarray(X, dtype=float).ravel():
            state = adaptive_update(state, x)
        self.state_ = state
        return self

    @property
    def stopped_at_(self):
        check_is_fitted(self, "state_")
        return self.state_.stopped_at

    def statistic(self) -> float:
        check_is_fitted(self, "state_")
        return self.state_.y_adaptive
