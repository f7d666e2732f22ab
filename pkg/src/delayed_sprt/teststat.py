"""Streaming rmlSPRT / nmSPRT statistics, stopping decisions and structural audits.

The running state is just ``(t, S_t)``; statistics are recomputed from it on
every query::

    Y_rml(t)    = 0.5 * (S_t^2 / t - log t)
    Y_nm(t; l)  = 0.5 * (S_t^2 / (t + l) - log((t + l) / l))

A test rejects the first time ``t >= t0`` at which the statistic reaches
:func:`~delayed_sprt.boundary.effective_log_threshold`, equivalently
``|S_t| >= radius(t)``. Rejection is absorbing.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .boundary import (
    BoundaryKind,
    CalibratedBoundary,
    calibrate,
    effective_log_threshold,
    radius,
)
from .errors import (
    ConfigError,
    DomainError,
    LengthMismatch,
    NonFiniteObservation,
    NotRejected,
    PreFirstObservation,
)

__all__ = [
    "StreamState",
    "Decision",
    "Decomposition",
    "new_state",
    "update",
    "y_rml",
    "y_nm",
    "y_svs",
    "statistic",
    "check_stop",
    "crossed",
    "ito_identity_residual",
    "decompose",
    "sandwich_check",
    "first_crossing_index",
    "SequentialTest",
]


class Decision(NamedTuple):
    reject: bool
    t: Optional[int] = None

    def __str__(self):
        return f"Reject({self.t})" if self.reject else "Continue"


@dataclass
class StreamState:
    """Running count ``t``, running sum ``S``, and the stopping bookkeeping.

    ``sumsq`` maps each tracked ``lambda`` (0 for the rmlSPRT) to
    ``sum_s X_s^2 / (s + lambda)``; it is kept for audits only.
    """

    boundary: Optional[CalibratedBoundary] = None
    t: int = 0
    S: float = 0.0
    stopped_at: Optional[int] = None
    sumsq: Dict[float, float] = field(default_factory=dict)

    def copy(self) -> "StreamState":
        return replace(self, sumsq=dict(self.sumsq))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "S": self.S,
            "boundary": None if self.boundary is None else self.boundary.to_dict(),
            "stopped_at": self.stopped_at,
            "sumsq": [[k, v] for k, v in self.sumsq.items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "StreamState":
        b = d.get("boundary")
        return cls(
            boundary=None if b is None else CalibratedBoundary.from_dict(b),
            t=int(d["t"]),
            S=float(d["S"]),
            stopped_at=d.get("stopped_at"),
            sumsq={float(k): float(v) for k, v in d.get("sumsq", [])},
        )

    @classmethod
    def from_json(cls, text: str) -> "StreamState":
        return cls.from_dict(json.loads(text))


def _tracked_lambda(b: Optional[CalibratedBoundary]) -> Optional[float]:
    if b is None:
        return None
    if b.kind is BoundaryKind.RML:
        return 0.0
    if b.kind is BoundaryKind.NM:
        return float(b.lam)
    return None


def new_state(boundary: Optional[CalibratedBoundary] = None) -> StreamState:
    state = StreamState(boundary=boundary)
    lam = _tracked_lambda(boundary)
    if lam is not None:
        state.sumsq[lam] = 0.0
    return state


def y_rml(state: StreamState) -> float:
    if state.t < 1:
        raise PreFirstObservation("rmlSPRT statistic needs t >= 1")
    return 0.5 * (state.S * state.S / state.t - math.log(state.t))


def y_nm(state: StreamState, lam: float) -> float:
    if state.t < 1:
        raise PreFirstObservation("nmSPRT statistic needs t >= 1")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    return 0.5 * (state.S * state.S / (state.t + lam) - math.log1p(state.t / lam))


def y_svs(state: StreamState, psi: float) -> float:
    """Oracle simple-vs-simple log-LR ``psi * S_t - psi^2 t / 2`` (null drift 0)."""
    return psi * state.S - 0.5 * psi * psi * state.t


def statistic(state: StreamState, b: Optional[CalibratedBoundary] = None) -> float:
    b = b or state.boundary
    if b is None:
        raise ConfigError("state has no boundary")
    if b.kind is BoundaryKind.RML:
        return y_rml(state)
    if b.kind is BoundaryKind.NM:
        return y_nm(state, b.lam)
    if b.kind is BoundaryKind.SVS:
        return y_svs(state, b.psi_ref)
    raise ConfigError("adaptive-lambda statistics live in delayed_sprt.adaptive")


def crossed(state: StreamState, b: Optional[CalibratedBoundary] = None) -> bool:
    b = b or state.boundary
    if state.t < max(b.t0, 1):
        return False
    return statistic(state, b) >= effective_log_threshold(b)


def check_stop(state: StreamState) -> Decision:
    if state.stopped_at is not None:
        return Decision(True, state.stopped_at)
    if state.boundary is not None and crossed(state):
        return Decision(True, state.t)
    return Decision(False)


def update(state: StreamState, x: float) -> StreamState:
    """Fold one observation into a copy of ``state`` and evaluate stopping.

    Once ``stopped_at`` is set it is never changed; later observations are
    still accumulated (audit mode).
    """
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteObservation(f"non-finite observation {x!r}")
    new = state.copy()
    new.t += 1
    new.S += x
    for lam in new.sumsq:
        new.sumsq[lam] += x * x / (new.t + lam)
    if new.stopped_at is None and new.boundary is not None and crossed(new):
        new.stopped_at = new.t
    return new


def ito_identity_residual(z_s: float, z_s1: float, s: int, lam: float) -> float:
    """LHS - RHS of the discrete Ito identity for ``h(z, s) = z^2 / (2 (s + lam))``::

        h(z_{s+1}, s+1) - h(z_s, s)
            = rho * (psi dz - psi^2 / 2) + dz^2 / (2 (s + 1 + lam))

    with ``psi = z_s / (s + lam)``, ``rho = (s + lam) / (s + 1 + lam)``.
    """
    if not s + lam > 0:
        raise DomainError("need s + lambda > 0")
    d0 = s + lam
    d1 = s + 1 + lam
    lhs = 0.5 * (z_s1 * z_s1 / d1 - z_s * z_s / d0)
    psi = z_s / d0
    dz = z_s1 - z_s
    rhs = (d0 / d1) * (psi * dz - 0.5 * psi * psi) + 0.5 * dz * dz / d1
    return lhs - rhs


@dataclass(frozen=True)
class Decomposition:
    """Martingale / remainder decomposition of a test statistic at time ``t``."""

    psi: float
    lam: float
    t: int
    statistic: float
    components: Dict[str, float]

    def total(self) -> float:
        c = self.components
        total = c["half_psi2_t"] + c["M0"] + c["M1"] + c["R_bias"] - c["R_adpt"] + c["Delta_qvar"]
        if self.lam == 0:
            return total + c["half_X01_sq"]
        return total - c["M_skg"] - c["R_skg1"] + c["R_skg2"]

    def residual(self) -> float:
        return self.statistic - self.total()


def decompose(xs: Sequence[float], psi: float, psi_ts: Sequence[float], lam: float) -> Decomposition:
    """Expand the statistic of ``xs`` at ``t = len(xs)`` into its components.

    ``psi_ts[s-1]`` is the conditional mean ``E[X_s | F_{s-1}]`` and ``psi``
    its limit; both are only known for synthetic data. ``lam == 0`` gives the
    rmlSPRT expansion, ``lam > 0`` the nmSPRT one.
    """
    xs = np.asarray(xs, dtype=float)
    psi_ts = np.asarray(psi_ts, dtype=float)
    if xs.shape != psi_ts.shape or xs.ndim != 1:
        raise LengthMismatch(f"xs has shape {xs.shape}, psi_ts has shape {psi_ts.shape}")
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    t = xs.size
    if t < 1:
        raise PreFirstObservation("need at least one observation")
    x0 = xs - psi_ts
    s0 = np.concatenate(([0.0], np.cumsum(x0)))  # s0[s] = S^0_s, s = 0..t
    s = np.arange(t, dtype=float)  # s = 0..t-1
    rho = (s + lam) / (s + 1 + lam)
    psi0 = np.zeros(t)
    pos = (s + lam) > 0
    psi0[pos] = s0[:-1][pos] / (s[pos] + lam)  # psi^0_{0,0} = 0 by convention
    ones = np.arange(1, t + 1, dtype=float)

    S_t = float(xs.sum())
    S_breve = psi * t + s0[-1]
    comps = {
        "half_psi2_t": 0.5 * psi * psi * t,
        "M0": psi * s0[-1],
        "M1": float(np.sum(rho * psi0 * x0)),
        "R_bias": (S_t * S_t - S_breve * S_breve) / (2.0 * (t + lam)),
        "R_adpt": 0.5 * float(np.sum(rho * psi0 * psi0)),
    }
    if lam > 0:
        comps["Delta_qvar"] = 0.5 * (float(np.sum(x0 * x0 / (ones + lam))) - math.log1p(t / lam))
        comps["M_skg"] = psi * lam * float(np.sum(x0 / (ones + lam)))
        comps["R_skg1"] = 0.5 * psi * psi * lam * t / (t + lam)
        comps["R_skg2"] = psi * lam * float(np.sum(s0[:-1] / ((s + lam) * (s + 1 + lam))))
        comps["half_X01_sq"] = 0.0
        stat = 0.5 * (S_t * S_t / (t + lam) - math.log1p(t / lam))
    else:
        comps["Delta_qvar"] = 0.5 * (float(np.sum(x0[1:] ** 2 / ones[1:])) - math.log(t))
        comps["M_skg"] = comps["R_skg1"] = comps["R_skg2"] = 0.0
        comps["half_X01_sq"] = 0.5 * x0[0] ** 2
        stat = 0.5 * (S_t * S_t / t - math.log(t))
    return Decomposition(psi=psi, lam=lam, t=t, statistic=stat, components=comps)


def first_crossing_index(path: np.ndarray, threshold: float) -> Optional[int]:
    hits = np.flatnonzero(np.asarray(path) >= threshold)
    return int(hits[0]) if hits.size else None


def sandwich_check(path: Sequence[float], b: CalibratedBoundary, atol: float = 1e-12) -> bool:
    """Check the random-threshold sandwich on a monitored statistic path.

    ``path[0]`` is the statistic at ``t0``; subsequent entries are successive
    monitoring times. With ``k`` the first index at or above the effective
    threshold ``a``::

        Y[max(k-1, 0)] - Y[0] <= (a - Y[0])_+ <= Y[k] - Y[0]
    """
    y = np.asarray(path, dtype=float)
    a = effective_log_threshold(b)
    k = first_crossing_index(y, a)
    if k is None:
        raise NotRejected("trajectory never reaches the threshold")
    middle = max(a - y[0], 0.0)
    lower = y[max(k - 1, 0)] - y[0]
    upper = y[k] - y[0]
    return bool(lower <= middle + atol and middle <= upper + atol)


class SequentialTest(BaseEstimator):
    """Delayed-start rmlSPRT or nmSPRT as an estimator.

    Parameters
    ----------
    kind : {"rml", "nm"}
    alpha : float
        Target type-I error.
    t0 : int
        Burn-in; monitoring starts at ``t = t0``.
    lam : float, optional
        nmSPRT mixing precision (required for ``kind="nm"``).

    ``fit`` consumes a full observation sequence; ``partial_fit`` continues
    the stream. After fitting, ``stopped_at_`` is the rejection time or None.
    """

    def __init__(self, kind="rml", alpha=0.05, t0=100, lam=None):
        self.kind = kind
        self.alpha = alpha
        self.t0 = t0
        self.lam = lam

    def _init_state(self):
        self.boundary_ = calibrate(self.kind, self.alpha, self.t0, self.lam)
        self.state_ = new_state(self.boundary_)

    def fit(self, X, y=None):
        self._init_state()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "state_"):
            self._init_state()
        xs = np.asarray(X, dtype=float).ravel()
        if not np.all(np.isfinite(xs)):
            raise NonFiniteObservation("observations must be finite")
        state = self.state_
        for x in xs:
            state = update(state, x)
        self.state_ = state
        return self

    @property
    def stopped_at_(self) -> Optional[int]:
        check_is_fitted(self, "state_")
        return self.state_.stopped_at

    @property
    def rejected_(self) -> bool:
        return self.stopped_at_ is not None

    def statistic(self) -> float:
        check_is_fitted(self, "state_")
        return statistic(self.state_)

    def decision(self) -> Decision:
        check_is_fitted(self, "state_")
        return check_stop(self.state_)

    def confidence_interval(self, center: float = 0.0):
        """Interval for the drift-free sum: ``center`` +/- ``radius(t)``."""
        check_is_fitted(self, "state_")
        r = radius(self.boundary_, self.state_.t)
        return center - r, center + r

    def statistic_path(self, X) -> np.ndarray:
        """Statistic at every prefix of ``X`` (vectorised, stateless)."""
        xs = np.asarray(X, dtype=float).ravel()
        b = calibrate(self.kind, self.alpha, self.t0, self.lam)
        t = np.arange(1, xs.size + 1, dtype=float)
        S = np.cumsum(xs)
        if b.kind is BoundaryKind.RML:
            return 0.5 * (S * S / t - np.log(t))
        return 0.5 * (S * S / (t + b.lam) - np.log1p(t / b.lam))
