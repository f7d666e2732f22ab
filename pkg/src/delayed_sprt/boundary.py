"""Boundary calibration for delayed-start rmlSPRT / nmSPRT tests.

The crossing probability of a continuously monitored Wiener path after burn-in
``t0`` is a closed-form function of the log-threshold ``a``:

* rmlSPRT (statistic offset by ``0.5 * log(t0)``)::

      h1(a) = 2 exp(-a) sqrt(a / pi) + 2 (1 - Phi(sqrt(2 a)))

* nmSPRT with ``eta = lambda / t0`` and ``c = 0.5 * log((1 + eta) / eta)``::

      h2(a) = exp(-a) {2 Phi(sqrt(2 eta (a + c))) - 1}
              + 2 {1 - Phi(sqrt(2 (1 + eta) (a + c)))}

Calibration solves ``h(a*) = alpha``; ``a*`` is stored as ``log_threshold``.
Everything is evaluated through ``erf``/``erfcx`` so that ``log h`` stays
finite over the whole bracket ``[0, 745]``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError, PreBurnIn
from .numerics import RootBracket, solve_root

__all__ = [
    "BoundaryKind",
    "CalibratedBoundary",
    "CALIBRATION_BRACKET",
    "h1",
    "h2_eta",
    "htilde",
    "log_h1",
    "log_h2_eta",
    "calibrate",
    "radius",
    "effective_log_threshold",
]

# exp(-a) underflows just past 745 in double precision.
CALIBRATION_BRACKET = (0.0, 745.0)


class BoundaryKind(str, enum.Enum):
    RML = "rml"
    NM = "nm"
    SVS = "svs"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, value) -> "BoundaryKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "rmlsprt": cls.RML, "nmsprt": cls.NM,
            "simplevssimple": cls.SVS, "adaptivelambda": cls.ADAPTIVE,
        }
        key = str(value).lower().replace("_", "").replace("-", "")
        if key in aliases:
            return aliases[key]
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown boundary kind {value!r}") from None


@dataclass(frozen=True)
class CalibratedBoundary:
    """A calibrated rejection boundary.

    ``log_threshold`` is ``a* = -log(alpha_tilde)``. For the rmlSPRT the
    statistic is compared against ``a* - 0.5 log t0``
    (see :func:`effective_log_threshold`).
    """

    kind: BoundaryKind
    alpha: float
    t0: int
    log_threshold: float
    lam: Optional[float] = None
    psi_ref: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BoundaryKind.parse(self.kind))
        if not (0.0 < self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if int(self.t0) != self.t0 or self.t0 < 0:
            raise DomainError(f"t0 must be a nonnegative integer, got {self.t0}")
        object.__setattr__(self, "t0", int(self.t0))
        if self.kind in (BoundaryKind.RML, BoundaryKind.NM) and self.t0 < 1:
            raise DomainError("t0 must be >= 1")
        if self.kind is BoundaryKind.NM and not (self.lam is not None and self.lam > 0):
            raise DomainError("nmSPRT boundary needs lambda > 0")
        if self.kind is BoundaryKind.SVS and not self.psi_ref:
            raise DomainError("simple-vs-simple boundary needs a nonzero psi_ref")

    @property
    def eta(self) -> Optional[float]:
        if self.lam is None:
            return None
        return self.lam / self.t0

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "alpha": self.alpha, "t0": self.t0}
        if self.lam is not None:
            d["lambda"] = self.lam
        if self.psi_ref is not None:
            d["psi_ref"] = self.psi_ref
        d["log_threshold"] = self.log_threshold
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=_json_float)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedBoundary":
        # "residual" and "mc" are calibration diagnostics written by the CLI
        allowed = {"kind", "alpha", "t0", "lambda", "psi_ref", "log_threshold", "residual", "mc"}
        if not isinstance(d, dict):
            raise ConfigError("boundary must be a JSON object")
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown boundary keys: {sorted(unknown)}")
        try:
            return cls(
                kind=d["kind"], alpha=float(d["alpha"]), t0=d["t0"],
                log_threshold=float(d["log_threshold"]),
                lam=None if d.get("lambda") is None else float(d["lambda"]),
                psi_ref=None if d.get("psi_ref") is None else float(d["psi_ref"]),
            )
        except KeyError as exc:
            raise ConfigError(f"boundary JSON missing key {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "CalibratedBoundary":
        return cls.from_dict(json.loads(text))


def _json_float(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def _check_a(a):
    if np.any(np.asarray(a) < 0) or np.any(np.isnan(a)):
        raise DomainError(f"log-threshold must be >= 0, got {a}")


def _check_eta(eta, allow_zero=False):
    bad = eta < 0 if allow_zero else eta <= 0
    if bad or math.isnan(eta):
        raise DomainError(f"eta out of range: {eta}")


def log_h1(a):
    # h1(a) = exp(-a) * (2 sqrt(a/pi) + erfcx(sqrt(a)))
    _check_a(a)
    a = np.asarray(a, dtype=float)
    out = -a + np.log(2.0 * np.sqrt(a / np.pi) + special.erfcx(np.sqrt(a)))
    return out if out.ndim else float(out)


def h1(a):
    """Delayed-start rmlSPRT crossing probability for log-threshold ``a``."""
    return np.exp(log_h1(a)) if np.ndim(a) else math.exp(log_h1(a))


def _c_eta(eta):
    return 0.5 * math.log1p(1.0 / eta)


def log_h2_eta(a, eta: float):
    # defined for a >= -c_eta, where the clipped threshold a + c_eta is nonnegative
    _check_eta(eta)
    a = np.asarray(a, dtype=float)
    u = a + _c_eta(eta)
    if np.any(u < -1e-12) or np.any(np.isnan(u)):
        raise DomainError(f"log-threshold must be >= -c_eta = {-_c_eta(eta)}, got {a}")
    u = np.maximum(u, 0.0)
    # second term: 2 (1 - Phi(sqrt(2(1+eta)u))) = erfcx(sqrt((1+eta)u)) exp(-(1+eta)u)
    #            = exp(-a) * erfcx(...) * sqrt(eta/(1+eta)) * exp(-eta u)
    tail = special.erfcx(np.sqrt((1.0 + eta) * u)) * math.sqrt(eta / (1.0 + eta)) * np.exp(-eta * u)
    out = -a + np.log(special.erf(np.sqrt(eta * u)) + tail)
    return out if out.ndim else float(out)


def h2_eta(a, eta: float):
    """Delayed-start nmSPRT crossing probability, ``eta = lambda / t0``.

    ``h2_eta(0, eta) < 1`` for finite ``eta``, so the domain extends down to
    ``a = -0.5 log((1 + eta) / eta)``, where the value reaches 1.
    """
    return np.exp(log_h2_eta(a, eta)) if np.ndim(a) else math.exp(log_h2_eta(a, eta))


def htilde(a, eta: float):
    """E[(a - Z^2 / (2 (1 + eta)))_+], the expected random threshold."""
    _check_a(a)
    _check_eta(eta, allow_zero=True)
    a = np.asarray(a, dtype=float)
    k = 1.0 + eta
    out = (a - 0.5 / k) * special.erf(np.sqrt(k * a)) + np.exp(-k * a) * np.sqrt(a / (np.pi * k))
    return out if out.ndim else float(out)


def calibrate(kind, alpha: float, t0: int, lam: Optional[float] = None,
              tol_abs: float = 1e-13) -> CalibratedBoundary:
    """Solve ``h(a*) = alpha`` for an rmlSPRT or nmSPRT boundary.

    The root is found on the log scale, ``log h(a) = log alpha``, which has
    the same solution and stays well conditioned for tiny ``alpha``.

    >>> b = calibrate("rml", 0.05, t0=100)
    >>> abs(h1(b.log_threshold) - 0.05) < 1e-12
    True
    """
    kind = BoundaryKind.parse(kind)
    if not alpha > 0 or math.isnan(alpha):
        raise DomainError(f"alpha must be positive, got {alpha}")
    if int(t0) != t0 or t0 < 1:
        raise DomainError(f"t0 must be a positive integer, got {t0}")
    log_alpha = math.log(alpha)
    bracket = RootBracket(*CALIBRATION_BRACKET, tol_abs=tol_abs)
    if kind is BoundaryKind.RML:
        a_star = solve_root(lambda a: log_h1(a) - log_alpha, bracket)
        return CalibratedBoundary(kind, alpha, int(t0), a_star)
    if kind is BoundaryKind.NM:
        if lam is None or not lam > 0:
            raise DomainError("nmSPRT calibration needs lambda > 0")
        eta = lam / t0
        bracket = RootBracket(-_c_eta(eta), CALIBRATION_BRACKET[1], tol_abs=tol_abs)
        a_star = solve_root(lambda a: log_h2_eta(a, eta) - log_alpha, bracket)
        return CalibratedBoundary(kind, alpha, int(t0), a_star, lam=float(lam))
    raise ConfigError(
        f"{kind.value} boundaries are calibrated in the adaptive module "
        "(calibrate_adaptive / calibrate_svs_delayed)"
    )


def radius(b: CalibratedBoundary, t):
    """Half-width ``c(t)`` of the confidence sequence for ``S_t``.

    Accepts a scalar or an array of times; every ``t`` must be ``>= t0``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < b.t0):
        raise PreBurnIn(f"radius undefined before burn-in t0={b.t0} (got t={t})")
    a = b.log_threshold
    if b.kind is BoundaryKind.RML:
        r2 = t_arr * (2.0 * a + np.log(t_arr / b.t0))
    elif b.kind is BoundaryKind.NM:
        r2 = (t_arr + b.lam) * (2.0 * a + np.log1p(t_arr / b.lam))
    else:
        raise ConfigError(f"no closed-form radius for {b.kind.value} boundaries")
    out = np.sqrt(np.maximum(r2, 0.0))
    return out if out.ndim else float(out)


def effective_log_threshold(b: CalibratedBoundary) -> float:
    """Threshold applied directly to the raw statistic.

    The rmlSPRT crossing event is ``Y_t + 0.5 log t0 >= a*``; all other kinds
    compare the statistic to ``a*`` as is.
    """
    if b.kind is BoundaryKind.RML:
        return b.log_threshold - 0.5 * math.log(b.t0)
    return b.log_threshold
