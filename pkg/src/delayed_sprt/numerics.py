"""Numeric substrate: normal CDF, bracketed root finding, a clipped-quadratic
Gaussian expectation, and seeded random generators.

All randomness in the package flows through :func:`make_rng` /
:func:`trajectory_rng`, which build numpy ``Generator`` objects on the PCG64
bit generator. PCG64 output for a given seed is fixed by numpy's stability
policy for the bit generator, so draws are reproducible across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import MaxIterExceeded, NoSignChange

__all__ = [
    "RootBracket",
    "norm_cdf",
    "norm_sf",
    "norm_pdf",
    "solve_root",
    "expectation_clipped_quadratic",
    "make_rng",
    "trajectory_rng",
]


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol_abs: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")


def norm_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays."""
    return special.ndtr(x)


def norm_sf(x):
    """Upper tail 1 - Phi(x), accurate far into the tail."""
    return special.ndtr(np.negative(x))


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def solve_root(f: Callable[[float], float], bracket: RootBracket) -> float:
    """Root of a continuous monotone ``f`` on ``bracket``.

    Brent's method (inverse quadratic / secant steps with a bisection
    safeguard), so convergence is guaranteed once a sign change is present.
    """
    lo, hi = float(bracket.lo), float(bracket.hi)
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoSignChange(f"f({lo})={flo!r} and f({hi})={fhi!r} have the same sign")
    try:
        root, info = optimize.brentq(
            f, lo, hi, xtol=bracket.tol_abs, rtol=4 * np.finfo(float).eps,
            maxiter=bracket.max_iter, full_output=True, disp=False,
        )
    except RuntimeError as exc:  # pragma: no cover - brentq only raises on maxiter
        raise MaxIterExceeded(str(exc)) from exc
    if not info.converged:
        raise MaxIterExceeded(f"no convergence after {info.iterations} iterations")
    return float(root)


def expectation_clipped_quadratic(a: float, c: float) -> float:
    """E[(a - c Z^2)_+] for Z ~ N(0, 1), in closed form.

    With z = sqrt(a/c) the integral over |Z| < z gives
    (a - c)(2 Phi(z) - 1) + 2 c z phi(z).
    """
    if c <= 0:
        raise ValueError("c must be positive")
    if a <= 0:
        return 0.0
    z = math.sqrt(a / c)
    inner = 2.0 * float(norm_cdf(z)) - 1.0
    return (a - c) * inner + 2.0 * c * z * float(norm_pdf(z))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` under base ``seed``.

    Uses a SeedSequence spawn key rather than mixing the index into the seed,
    so distinct base seeds never share trajectories.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))
