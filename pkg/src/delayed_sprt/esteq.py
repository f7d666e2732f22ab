"""Stabilized estimating equations with parity sample splitting.

Observations are split by parity. When ``O_t`` arrives, the nuisance used to
score it is trained only on earlier observations of the same parity
(``t-2, t-4, ...``), and its weight comes from the variance of scores in the
opposite parity (``t-1, t-3, ...``). The emitted increment is::

    X_t = omega_t * D(O_t; eta_hat_{t-1}, theta0),    omega_t = 1 / sigma_hat_{t-1}

For a linear estimating function ``D = D1 + D2 * theta`` the test can be
inverted in closed form: with ``Gamma_t = sum omega_s D2_s`` and
``W_t = sum omega_s D1_s`` the statistic for ``theta0`` is ``S_t = W_t +
Gamma_t theta0``, so the confidence set is ``-W_t / Gamma_t +/- c(t) / |Gamma_t|``.
"""
from __future__ import annotations

import abc
import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .boundary import CalibratedBoundary, radius
from .errors import (
    ConfigError,
    DegenerateGamma,
    DomainError,
    InsufficientSplit,
    NonFiniteScore,
    PreBurnIn,
)

__all__ = [
    "Welford",
    "PairWelford",
    "UnitFloor",
    "ClipFloor",
    "OnlineLeastSquares",
    "EstimatingFunction",
    "SampleMean",
    "AIPW",
    "aipw_score",
    "EsteqState",
    "new_esteq_state",
    "esteq_step",
    "sigma_hat",
    "cs_theta",
    "theta_hat",
    "StabilizedEstimatingEquation",
]


@dataclass
class Welford:
    """One-pass mean and sum of squared deviations."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self) -> float:
        if self.n < 2:
            raise InsufficientSplit(f"need at least 2 observations, have {self.n}")
        return self.m2 / (self.n - 1)


@dataclass
class PairWelford:
    """Joint one-pass moments of ``(D1, D2)``.

    The variance of ``D1 + D2 * theta`` is then available for every ``theta``
    without rescoring.
    """

    n: int = 0
    mean1: float = 0.0
    mean2: float = 0.0
    c11: float = 0.0
    c12: float = 0.0
    c22: float = 0.0

    def push(self, d1: float, d2: float) -> None:
        self.n += 1
        e1 = d1 - self.mean1
        e2 = d2 - self.mean2
        self.mean1 += e1 / self.n
        self.mean2 += e2 / self.n
        self.c11 += e1 * (d1 - self.mean1)
        self.c12 += e1 * (d2 - self.mean2)
        self.c22 += e2 * (d2 - self.mean2)

    def variance(self, theta: float) -> float:
        if self.n < 2:
            raise InsufficientSplit(f"need at least 2 scores in the split, have {self.n}")
        m2 = self.c11 + 2.0 * theta * self.c12 + theta * theta * self.c22
        return max(m2, 0.0) / (self.n - 1)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class UnitFloor:
    """omega = 1 whenever the variance estimate is zero or undefined."""

    def weight(self, var: Optional[float], t: int) -> float:
        if var is None or var == 0.0:
            return 1.0
        return 1.0 / math.sqrt(var)

    def to_dict(self):
        return {"kind": "unit"}


@dataclass(frozen=True)
class ClipFloor:
    """omega = 1 / max(sigma_hat, t^-iota / chi)."""

    chi: float = 1.0
    iota: float = 0.25

    def __post_init__(self):
        if not self.chi > 0:
            raise ConfigError("chi must be positive")
        if not 0 < self.iota < 1:
            raise ConfigError("iota must lie in (0, 1)")

    def weight(self, var: Optional[float], t: int) -> float:
        sd = 0.0 if var is None else math.sqrt(var)
        return 1.0 / max(sd, t ** (-self.iota) / self.chi)

    def to_dict(self):
        return {"kind": "clip", "chi": self.chi, "iota": self.iota}


def floor_from_dict(d: Optional[dict]):
    if d is None:
        return UnitFloor()
    d = dict(d)
    kind = d.pop("kind", "unit")
    if kind == "unit" and not d:
        return UnitFloor()
    if kind == "clip" and set(d) <= {"chi", "iota"}:
        return ClipFloor(**d)
    raise ConfigError(f"bad floor policy {kind!r} with keys {sorted(d)}")


class OnlineLeastSquares:
    """Least squares of ``u`` on ``(1, l, l * a)`` from running normal equations."""

    n_features = 3

    def __init__(self):
        self.xtx = np.zeros((3, 3))
        self.xty = np.zeros(3)
        self.n = 0
        self.coef_ = np.zeros(3)

    @staticmethod
    def features(a, l):
        return np.array([1.0, l, l * a])

    def partial_fit(self, l, a, u) -> "OnlineLeastSquares":
        x = self.features(a, l)
        self.xtx += np.outer(x, x)
        self.xty += x * u
        self.n += 1
        # pinv gives the minimum-norm solution while the design is rank deficient
        self.coef_ = np.linalg.pinv(self.xtx) @ self.xty
        return self

    def predict(self, a, l) -> float:
        return float(self.features(a, l) @ self.coef_)

    def to_dict(self):
        return {"xtx": self.xtx.tolist(), "xty": self.xty.tolist(), "n": self.n,
                "coef": self.coef_.tolist()}

    @classmethod
    def from_dict(cls, d):
        m = cls()
        m.xtx = np.array(d["xtx"], dtype=float)
        m.xty = np.array(d["xty"], dtype=float)
        m.n = int(d["n"])
        m.coef_ = np.array(d["coef"], dtype=float)
        return m


class EstimatingFunction(abc.ABC):
    """Linear estimating function ``D(o; eta, theta) = d1(o; eta) + d2(o; eta) theta``."""

    name: str = "abstract"

    @abc.abstractmethod
    def d1(self, obs, nuisance) -> float: ...

    @abc.abstractmethod
    def d2(self, obs, nuisance) -> float: ...

    def score(self, obs, nuisance, theta: float) -> float:
        return self.d1(obs, nuisance) + self.d2(obs, nuisance) * theta

    def new_nuisance(self):
        return None

    def update_nuisance(self, nuisance, obs):
        return nuisance

    @abc.abstractmethod
    def parse(self, record: dict):
        """Observation tuple from an NDJSON record."""

    def to_dict(self) -> dict:
        return {"adapter": self.name}


class SampleMean(EstimatingFunction):
    """``D = z - theta``, so ``theta = E[z]``."""

    name = "mean"

    def d1(self, obs, nuisance):
        return float(obs)

    def d2(self, obs, nuisance):
        return -1.0

    def parse(self, record):
        if set(record) != {"z"}:
            raise ConfigError(f"sample-mean observations need exactly key 'z', got {sorted(record)}")
        return _finite_number(record["z"], "z")


def _finite_number(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite, got {v!r}")
    return v


def aipw_score(o, eta_hat: Optional[Callable[[int, float], float]], p: float, theta0: float) -> float:
    """Augmented inverse-propensity-weighted score for a Bernoulli(p) trial.

    ``o = (l, a, u)``; ``eta_hat(a, l)`` is the outcome regression (``None``
    means the zero function).
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"assignment probability must lie in (0, 1), got {p}")
    l, a, u = o
    if a not in (0, 1):
        raise DomainError(f"treatment must be 0 or 1, got {a!r}")
    eta = eta_hat if eta_hat is not None else (lambda a_, l_: 0.0)
    return (a - p) / (p * (1.0 - p)) * (u - eta(a, l)) + eta(1, l) - eta(0, l) - theta0


class AIPW(EstimatingFunction):
    """Average treatment effect in a Bernoulli(p) trial with a covariate."""

    name = "aipw"

    def __init__(self, p: float = 0.5):
        if not 0.0 < p < 1.0:
            raise DomainError(f"assignment probability must lie in (0, 1), got {p}")
        self.p = p

    def d1(self, obs, nuisance):
        eta = None if nuisance is None else nuisance.predict
        return aipw_score(obs, eta, self.p, 0.0)

    def d2(self, obs, nuisance):
        return -1.0

    def new_nuisance(self):
        return OnlineLeastSquares()

    def update_nuisance(self, nuisance, obs):
        l, a, u = obs
        return nuisance.partial_fit(l, a, u)

    def parse(self, record):
        if set(record) != {"l", "a", "u"}:
            raise ConfigError(f"trial observations need keys l, a, u, got {sorted(record)}")
        a = record["a"]
        if a not in (0, 1) or isinstance(a, bool):
            raise ConfigError(f"a must be 0 or 1, got {a!r}")
        return (_finite_number(record["l"], "l"), int(a), _finite_number(record["u"], "u"))

    def to_dict(self):
        return {"adapter": self.name, "p": self.p}


def make_estimating_function(name: str, p: float = 0.5) -> EstimatingFunction:
    if name == "mean":
        return SampleMean()
    if name == "aipw":
        return AIPW(p)
    raise ConfigError(f"unknown adapter {name!r}")


@dataclass
class EsteqState:
    fn: EstimatingFunction
    floor: object = field(default_factory=UnitFloor)
    exact: bool = False
    t: int = 0
    splits: list = field(default_factory=lambda: [PairWelford(), PairWelford()])
    nuisance: list = field(default_factory=lambda: [None, None])
    store: list = field(default_factory=lambda: [[], []])
    Gamma: float = 0.0
    weighted_sum: float = 0.0

    def copy(self) -> "EsteqState":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        nuis = [None if m is None else m.to_dict() for m in self.nuisance]
        return {
            "estimating_function": self.fn.to_dict(),
            "floor": self.floor.to_dict(),
            "exact": self.exact,
            "t": self.t,
            "splits": [s.to_dict() for s in self.splits],
            "nuisance": nuis,
            "store": [list(map(_jsonable_obs, b)) for b in self.store],
            "Gamma": self.Gamma,
            "weighted_sum": self.weighted_sum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EsteqState":
        spec = dict(d["estimating_function"])
        fn = make_estimating_function(spec.pop("adapter"), **spec)
        nuis = [None if m is None else OnlineLeastSquares.from_dict(m) for m in d["nuisance"]]
        store = [[_obs_from_json(o) for o in b] for b in d["store"]]
        return cls(
            fn=fn, floor=floor_from_dict(d["floor"]), exact=bool(d["exact"]), t=int(d["t"]),
            splits=[PairWelford(**s) for s in d["splits"]], nuisance=nuis, store=store,
            Gamma=float(d["Gamma"]), weighted_sum=float(d["weighted_sum"]),
        )


def _jsonable_obs(o):
    return list(o) if isinstance(o, tuple) else o


def _obs_from_json(o):
    return tuple(o) if isinstance(o, list) else o


def new_esteq_state(fn: EstimatingFunction, floor=None, exact: bool = False) -> EsteqState:
    return EsteqState(fn=fn, floor=floor or UnitFloor(), exact=exact,
                      nuisance=[fn.new_nuisance(), fn.new_nuisance()])


def _split_variance(state: EsteqState, bucket: int, theta0: float) -> Optional[float]:
    if state.exact:
        obs = state.store[bucket]
        if len(obs) < 2:
            return None
        nuis = state.nuisance[1 - bucket]
        scores = np.array([state.fn.score(o, nuis, theta0) for o in obs])
        return float(scores.var(ddof=1))
    split = state.splits[bucket]
    if split.n < 2:
        return None
    return split.variance(theta0)


def sigma_hat(state: EsteqState, theta0: float) -> float:
    """Variance estimate ``sigma_hat_t^2(theta0)`` from the current variance split.

    This is the quantity whose square root weights the next observation.
    """
    bucket = state.t % 2
    n = len(state.store[bucket]) if state.exact else state.splits[bucket].n
    if n < 2:
        raise InsufficientSplit(f"variance split holds {n} scores, need 2")
    return _split_variance(state, bucket, theta0)


def esteq_step(state: EsteqState, obs, theta0: float):
    """Consume one observation; return the new state and the increment ``X_t``.

    The input state is not modified.
    """
    new = state.copy()
    t = new.t + 1
    var_bucket, nuis_bucket = (t - 1) % 2, t % 2
    omega = new.floor.weight(_split_variance(new, var_bucket, theta0), t)

    nuis = new.nuisance[nuis_bucket]
    d1 = new.fn.d1(obs, nuis)
    d2 = new.fn.d2(obs, nuis)
    x = omega * (d1 + d2 * theta0)
    if not (math.isfinite(x) and math.isfinite(d1) and math.isfinite(d2)):
        raise NonFiniteScore(f"non-finite score at t={t}: d1={d1}, d2={d2}, omega={omega}")
    new.Gamma += omega * d2
    new.weighted_sum += omega * d1

    # O_t joins split t mod 2: its variance score uses the other split's nuisance,
    # then it trains its own split's nuisance.
    other = new.nuisance[var_bucket]
    new.splits[nuis_bucket].push(new.fn.d1(obs, other), new.fn.d2(obs, other))
    if new.exact:
        new.store[nuis_bucket].append(obs)
    new.nuisance[nuis_bucket] = new.fn.update_nuisance(nuis, obs)
    new.t = t
    return new, x


def theta_hat(state: EsteqState) -> float:
    if state.Gamma == 0.0:
        raise DegenerateGamma("Gamma_t is zero")
    return -state.weighted_sum / state.Gamma


def cs_theta(state: EsteqState, b: CalibratedBoundary, t: Optional[int] = None):
    """Confidence interval for ``theta`` at time ``t`` (default: the state's time)."""
    t = state.t if t is None else t
    if t < b.t0 or t < 1:
        raise PreBurnIn(f"interval is the whole line before t0={b.t0} (t={t})")
    centre = theta_hat(state)
    half = radius(b, t) / abs(state.Gamma)
    return centre - half, centre + half


class StabilizedEstimatingEquation(TransformerMixin, BaseEstimator):
    """Streaming variance-stabilized scores for testing ``theta = theta0``.

    ``fit_transform`` returns the increments ``X_t``; ``confidence_interval``
    inverts the test for a calibrated boundary. ``X`` is a column of ``z`` for
    ``adapter="mean"`` and columns ``(l, a, u)`` for ``adapter="aipw"``.

    Parameters
    ----------
    adapter : {"mean", "aipw"}
    p : float
        Treatment probability, used by ``"aipw"`` only.
    theta0 : float
    floor : {"unit", "clip"}
    chi, iota : float
        Clip constants, used when ``floor="clip"``.
    exact : bool
        Recompute the variance split under the current nuisance at every step.
    """

    def __init__(self, adapter="mean", p=0.5, theta0=0.0, floor="unit", chi=1.0,
                 iota=0.25, exact=False):
        self.adapter = adapter
        self.p = p
        self.theta0 = theta0
        self.floor = floor
        self.chi = chi
        self.iota = iota
        self.exact = exact

    def _new_state(self):
        fn = make_estimating_function(self.adapter, self.p)
        if self.floor == "unit":
            fl = UnitFloor()
        elif self.floor == "clip":
            fl = ClipFloor(self.chi, self.iota)
        else:
            raise ConfigError(f"unknown floor {self.floor!r}")
        return new_esteq_state(fn, fl, self.exact)

    def _rows(self, X):
        X = np.asarray(X, dtype=float)
        if self.adapter == "mean":
            return [float(z) for z in X.reshape(-1)]
        if X.ndim != 2 or X.shape[1] != 3:
            raise ConfigError("aipw input must have columns (l, a, u)")
        return [(float(l), int(a), float(u)) for l, a, u in X]

    def _run(self, state, X):
        xs = []
        for obs in self._rows(X):
            state, x = esteq_step(state, obs, self.theta0)
            xs.append(x)
        return state, np.array(xs)

    def fit(self, X, y=None):
        self.state_, _ = self._run(self._new_state(), X)
        return self

    def partial_fit(self, X, y=None):
        state = self.state_ if hasattr(self, "state_") else self._new_state()
        self.state_, _ = self._run(state, X)
        return self

    def fit_transform(self, X, y=None):
        self.state_, xs = self._run(self._new_state(), X)
        return xs

    def transform(self, X):
        """Increments for ``X`` continuing the fitted stream, without updating it."""
        check_is_fitted(self, "state_")
        return self._run(self.state_, X)[1]

    def theta_hat(self) -> float:
        check_is_fitted(self, "state_")
        return theta_hat(self.state_)

    def confidence_interval(self, boundary: CalibratedBoundary):
        check_is_fitted(self, "state_")
        return cs_theta(self.state_, boundary)
