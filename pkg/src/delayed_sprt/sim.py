"""Monte Carlo harness: time grids, data generators and the three experiments.

Every trajectory draws from its own generator derived from ``(seed, index)``,
so results do not depend on chunking and the same seed reproduces the same
table byte for byte.

Per-observation streams (Bernoulli, Gaussian) run through a compiled kernel
that applies the parity-split sample-mean stabilization, accumulates
``S_t`` (and the adaptive statistic when requested) and checks every test at
monitoring times. Brownian streams are simulated exactly on the grid.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numba
import numpy as np

from .adaptive import DEFAULT_LAMBDA_CAP, calibrate_adaptive, calibrate_svs_delayed
from .boundary import BoundaryKind, calibrate, effective_log_threshold
from .errors import ConfigError, DomainError
from .numerics import trajectory_rng

__all__ = [
    "TimeGrid",
    "build_time_grid",
    "GeneratorSpec",
    "brownian_paths",
    "make_cell",
    "monitoring_times",
    "TestCell",
    "ExperimentConfig",
    "ExperimentResult",
    "simulate_stop_times",
    "run_type1",
    "run_efficiency",
    "lambda_scan",
    "run_experiment",
    "wald_ci",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ["test_kind", "alpha", "mu", "lambda", "t0", "metric", "value",
               "ci_lo", "ci_hi", "n", "censored"]

_KIND_CODE = {"rml": 0, "nm": 1, "nm_ville": 1, "svs": 2, "adaptive": 3}
STABILIZATIONS = ("parity", "oracle")


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    N: int
    beta: float
    t_max: int

    def __len__(self):
        return int(self.times.size)


def build_time_grid(N: int, beta: float, t_max: int) -> TimeGrid:
    """Monitoring times ``max(1, floor(t_max * sum_{j<=i} j^b / sum_{j<=N} j^b))``.

    Duplicates are dropped and the last time is exactly ``t_max``.

    >>> build_time_grid(3, 2, 14).times.tolist()
    [1, 5, 14]
    """
    if t_max < 1:
        raise DomainError(f"t_max must be >= 1, got {t_max}")
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    t_max = int(t_max)
    w = np.cumsum(np.arange(1, N + 1, dtype=float) ** beta)
    # multiply first so that integer weights give exact ratios
    times = np.maximum(1, np.floor(t_max * w / w[-1])).astype(np.int64)
    times[-1] = t_max
    times = np.unique(np.minimum(times, t_max))
    return TimeGrid(times, int(N), float(beta), t_max)


@dataclass(frozen=True)
class GeneratorSpec:
    """Observation law.

    ``centered_bernoulli``: ``Bernoulli(p) - p``. ``shifted_bernoulli``:
    ``mu + Bernoulli(p) - p``. ``gaussian``: ``Normal(mu, sigma^2)``.
    ``brownian``: ``mu t + W(t)`` observed on the monitoring grid.
    """

    kind: str
    p: float = 0.03
    mu: float = 0.0
    sigma: float = 1.0

    KINDS = ("centered_bernoulli", "shifted_bernoulli", "gaussian", "brownian")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown generator {self.kind!r}; expected one of {self.KINDS}")
        if self.kind.endswith("bernoulli") and not 0 < self.p < 1:
            raise ConfigError("Bernoulli p must lie in (0, 1)")
        if self.kind == "centered_bernoulli" and self.mu != 0:
            raise ConfigError("centered_bernoulli has no drift; use shifted_bernoulli")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")

    def with_mu(self, mu: float) -> "GeneratorSpec":
        kind = "shifted_bernoulli" if self.kind == "centered_bernoulli" and mu != 0 else self.kind
        return GeneratorSpec(kind, self.p, mu, self.sigma)

    @property
    def sd(self) -> float:
        if self.kind.endswith("bernoulli"):
            return math.sqrt(self.p * (1 - self.p))
        return self.sigma if self.kind == "gaussian" else 1.0

    @property
    def psi(self) -> float:
        """Drift of the stabilized stream, ``mean / sd``."""
        if self.kind.endswith("bernoulli"):
            return self.mu / math.sqrt(self.p * (1 - self.p))
        if self.kind == "gaussian":
            return self.mu / self.sigma
        return self.mu

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind.endswith("bernoulli"):
            d["p"] = self.p
        if self.kind != "centered_bernoulli":
            d["mu"] = self.mu
        if self.kind == "gaussian":
            d["sigma"] = self.sigma
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError("generator must be an object with a 'kind'")
        unknown = set(d) - {"kind", "p", "mu", "sigma"}
        if unknown:
            raise ConfigError(f"unknown generator keys {sorted(unknown)}")
        return cls(**d)


class _BernoulliBlocks:
    """Bernoulli(p) indicators produced block by block from geometric gaps."""

    CHUNK = 4096

    def __init__(self, rng, p):
        self.rng, self.p = rng, p
        self.buf = np.empty(0, dtype=np.int64)
        self.last = 0

    def ones_upto(self, T: int) -> np.ndarray:
        while self.buf.size == 0 or self.buf[-1] <= T:
            new = self.last + np.cumsum(self.rng.geometric(self.p, size=self.CHUNK))
            self.last = int(new[-1])
            self.buf = np.concatenate([self.buf, new])
        k = int(np.searchsorted(self.buf, T, side="right"))
        out, self.buf = self.buf[:k], self.buf[k:]
        return out


def _block_source(gen: GeneratorSpec, rng):
    if gen.kind.endswith("bernoulli"):
        bern = _BernoulliBlocks(rng, gen.p)
        base = gen.mu - gen.p

        def draw(t, n):
            z = np.full(n, base)
            z[bern.ones_upto(t + n) - t - 1] += 1.0
            return z
        return draw
    if gen.kind == "gaussian":
        return lambda t, n: gen.mu + gen.sigma * rng.standard_normal(n)
    raise ConfigError(f"{gen.kind} streams are simulated on the grid, not per observation")


@dataclass(frozen=True)
class TestCell:
    """One test configuration evaluated on shared trajectories."""

    kind: str
    alpha: float
    t0: int
    lam: Optional[float] = None
    threshold: float = math.inf   # applied to the raw statistic
    psi: float = 0.0

    def key(self):
        return (self.kind, self.alpha, self.lam, self.t0)


def make_cell(kind, alpha, t0, lam=None, psi=None, mc=None) -> TestCell:
    """Calibrate a test; ``alpha = 0`` yields an infinite threshold.

    ``nm_ville`` is the classical nmSPRT without burn-in: monitored from
    ``t = 1`` against Ville's threshold ``-log(alpha)``.
    """
    if kind == "nm_ville":
        if not (lam and lam > 0):
            raise ConfigError("nm cells need a positive lambda")
        thr = -math.log(alpha) if alpha > 0 else math.inf
        return TestCell("nm_ville", float(alpha), 1, float(lam), thr)
    kind = BoundaryKind.parse(kind).value
    if kind == "nm" and not (lam and lam > 0):
        raise ConfigError("nm cells need a positive lambda")
    if alpha == 0:
        return TestCell(kind, 0.0, int(t0), lam, math.inf, psi or 0.0)
    if kind in ("rml", "nm"):
        b = calibrate(kind, alpha, t0, lam=lam if kind == "nm" else None)
        thr = effective_log_threshold(b)
    elif kind == "svs":
        if not psi:
            raise ConfigError("svs cells need a nonzero drift")
        thr = calibrate_svs_delayed(alpha, psi, t0).log_threshold
    else:
        mc = dict(mc or {})
        thr = calibrate_adaptive(alpha, t0, **mc).solved_threshold
    return TestCell(kind, float(alpha), int(t0), lam if kind == "nm" else None, thr, psi or 0.0)


@numba.njit(cache=True)
def _advance(z, t, st, kinds, thr, lam, psi, t0, monitor, mp, stop,
             stabilize, with_adaptive, lam_cap):
    """Consume block ``z``; returns ``(t, mp, active)``.

    ``st`` = [S, y_adaptive, lambda_hat, n0, mean0, m2_0, n1, mean1, m2_1].
    """
    n_tests = kinds.size
    active = 0
    for k in range(n_tests):
        if stop[k] == -1:
            active += 1
    for i in range(z.size):
        t += 1
        zi = z[i]
        if stabilize:
            vb = 3 + 3 * ((t - 1) & 1)
            omega = 1.0
            if st[vb] >= 2.0:
                var = st[vb + 2] / (st[vb] - 1.0)
                if var > 0.0:
                    omega = 1.0 / math.sqrt(var)
            x = omega * zi
            nb = 3 + 3 * (t & 1)
            st[nb] += 1.0
            d = zi - st[nb + 1]
            st[nb + 1] += d / st[nb]
            st[nb + 2] += d * (zi - st[nb + 1])
        else:
            x = zi
        if with_adaptive:
            ph = st[0] / ((t - 1) + st[2])
            st[1] += ph * x - 0.5 * ph * ph
        st[0] += x
        if with_adaptive:
            if st[0] == 0.0:
                st[2] = lam_cap
            else:
                r = t / st[0]
                st[2] = min(r * r, lam_cap)
        if mp < monitor.size and monitor[mp] == t:
            mp += 1
            S = st[0]
            for k in range(n_tests):
                if stop[k] != -1 or t < t0[k]:
                    continue
                kd = kinds[k]
                if kd == 0:
                    y = 0.5 * (S * S / t - math.log(t))
                elif kd == 1:
                    y = 0.5 * (S * S / (t + lam[k]) - math.log1p(t / lam[k]))
                elif kd == 2:
                    y = psi[k] * S - 0.5 * psi[k] * psi[k] * t
                else:
                    y = st[1]
                if y >= thr[k]:
                    stop[k] = t
                    active -= 1
            if active == 0:
                return t, mp, active
    return t, mp, active


def _cell_arrays(cells: Sequence[TestCell]):
    kinds = np.array([_KIND_CODE[c.kind] for c in cells], dtype=np.int64)
    thr = np.array([c.threshold for c in cells], dtype=float)
    lam = np.array([c.lam if c.lam else 1.0 for c in cells], dtype=float)
    psi = np.array([c.psi for c in cells], dtype=float)
    t0 = np.array([c.t0 for c in cells], dtype=np.int64)
    return kinds, thr, lam, psi, t0


def monitoring_times(grid: TimeGrid, cells: Sequence[TestCell]) -> np.ndarray:
    extra = [c.t0 for c in cells if c.t0 <= grid.t_max]
    times = np.union1d(grid.times, np.array(extra, dtype=np.int64))
    lo = min(c.t0 for c in cells)
    return times[times >= lo].astype(np.int64)


def _stream_stop_times(gen, cells, grid, n_traj, seed, theta0, block, lam_cap, stabilization):
    kinds, thr, lam, psi, t0 = _cell_arrays(cells)
    monitor = monitoring_times(grid, cells)
    with_adaptive = bool(np.any(kinds == 3))
    if stabilization not in STABILIZATIONS:
        raise ConfigError(f"unknown stabilization {stabilization!r}")
    parity = stabilization == "parity"
    out = np.full((n_traj, len(cells)), -1, dtype=np.int64)
    for j in range(n_traj):
        rng = trajectory_rng(seed, j)
        draw = _block_source(gen, rng)
        st = np.zeros(9)
        st[2] = lam_cap
        stop = out[j]
        t, mp = 0, 0
        # cells that can never fire stay at -1 without keeping the loop alive
        stop[~np.isfinite(thr)] = -2
        while t < grid.t_max:
            n = min(block, grid.t_max - t)
            z = draw(t, n) - theta0
            if not parity:
                z /= gen.sd
            t, mp, active = _advance(z, t, st, kinds, thr, lam, psi, t0, monitor, mp, stop,
                                     parity, with_adaptive, lam_cap)
            if active == 0:
                break
        stop[stop == -2] = -1
    return out


def brownian_paths(gen: GeneratorSpec, times: np.ndarray, seed: int, start: int, m: int) -> np.ndarray:
    """``mu t + W(t)`` at increasing ``times`` for trajectories ``start .. start+m-1``.

    Exact on the grid: the increment over ``(t_{i-1}, t_i]`` (with ``t_0 = 0``)
    is ``N(mu dt, dt)``.
    """
    times = np.asarray(times)
    dt = np.diff(np.concatenate([[0], times])).astype(float)
    inc = np.empty((m, times.size))
    for r in range(m):
        inc[r] = trajectory_rng(seed, start + r).standard_normal(times.size)
    return np.cumsum(inc * np.sqrt(dt) + gen.mu * dt, axis=1)


def _brownian_stop_times(gen, cells, grid, n_traj, seed, chunk=1000):
    if any(c.kind == "adaptive" for c in cells):
        raise ConfigError("the adaptive statistic needs per-observation data, not a Brownian grid")
    monitor = monitoring_times(grid, cells)
    tt = monitor.astype(float)
    out = np.full((n_traj, len(cells)), -1, dtype=np.int64)
    for start in range(0, n_traj, chunk):
        m = min(chunk, n_traj - start)
        S = brownian_paths(gen, monitor, seed, start, m)
        for k, c in enumerate(cells):
            if not math.isfinite(c.threshold):
                continue
            if c.kind == "rml":
                y = 0.5 * (S * S / tt - np.log(tt))
            elif c.kind in ("nm", "nm_ville"):
                y = 0.5 * (S * S / (tt + c.lam) - np.log1p(tt / c.lam))
            else:
                y = c.psi * S - 0.5 * c.psi ** 2 * tt
            hit = (y >= c.threshold) & (tt >= c.t0)
            any_hit = hit.any(axis=1)
            first = hit.argmax(axis=1)
            out[start:start + m, k] = np.where(any_hit, monitor[first], -1)
    return out


def simulate_stop_times(gen: GeneratorSpec, cells: Sequence[TestCell], grid: TimeGrid,
                        n_traj: int, seed: int, theta0: float = 0.0, block: int = 65536,
                        lam_cap: float = DEFAULT_LAMBDA_CAP,
                        stabilization: str = "parity") -> np.ndarray:
    """Rejection time of every cell on every trajectory (``-1`` = censored).

    ``stabilization="parity"`` weights each observation by the inverse
    standard deviation estimated on the opposite-parity split (unit weight
    while that estimate is zero or undefined). ``"oracle"`` divides by the
    true standard deviation instead.
    """
    if not cells:
        raise ConfigError("no test cells")
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    if gen.kind == "brownian":
        return _brownian_stop_times(gen, cells, grid, n_traj, seed)
    return _stream_stop_times(gen, cells, grid, n_traj, seed, theta0, block, lam_cap,
                              stabilization)


def wald_ci(p_hat: float, n: int):
    half = 1.96 * math.sqrt(p_hat * (1 - p_hat) / n)
    return p_hat - half, p_hat + half


@dataclass
class ExperimentConfig:
    experiment: str
    generator: GeneratorSpec
    tests: List[str] = field(default_factory=lambda: ["rml", "nm"])
    alpha: List[float] = field(default_factory=lambda: [0.05])
    t0: List[int] = field(default_factory=lambda: [1000])
    lam: List = field(default_factory=lambda: [1.0])
    mu: List[float] = field(default_factory=list)
    grid: Dict = field(default_factory=lambda: {"N": 5000, "beta": 2.0, "t_max": 1_000_000})
    n_traj: int = 5000
    seed: int = 0
    n_boot: int = 1000
    mc: Dict = field(default_factory=lambda: {"n_paths": 10_000, "seed": 0})
    stabilization: str = "parity"

    EXPERIMENTS = ("type1", "efficiency", "lambda_scan")
    KEYS = {"experiment", "generator", "tests", "alpha", "t0", "lambda", "mu", "grid",
            "n_traj", "seed", "n_boot", "mc", "stabilization"}

    def __post_init__(self):
        if self.experiment not in self.EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        for name in ("tests", "alpha", "t0"):
            if not getattr(self, name):
                raise ConfigError(f"empty cell list: {name}")
        if self.experiment != "type1" and not self.mu:
            raise ConfigError("empty cell list: mu")
        if self.experiment == "lambda_scan" and not self.lam:
            raise ConfigError("empty cell list: lambda")
        if set(self.grid) != {"N", "beta", "t_max"}:
            raise ConfigError("grid needs exactly N, beta, t_max")
        for k in self.tests:
            if k != "nm_ville":
                BoundaryKind.parse(k)
        if self.stabilization not in STABILIZATIONS:
            raise ConfigError(f"unknown stabilization {self.stabilization!r}")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        unknown_mc = set(self.mc) - {"n_paths", "seed"}
        if unknown_mc:
            raise ConfigError(f"unknown mc keys {sorted(unknown_mc)}")

    def time_grid(self) -> TimeGrid:
        g = self.grid
        return build_time_grid(int(g["N"]), float(g["beta"]), int(g["t_max"]))

    def to_dict(self):
        d = {
            "experiment": self.experiment, "generator": self.generator.to_dict(),
            "tests": list(self.tests), "alpha": list(self.alpha), "t0": list(self.t0),
            "lambda": list(self.lam), "mu": list(self.mu), "grid": dict(self.grid),
            "n_traj": self.n_traj, "seed": self.seed, "n_boot": self.n_boot, "mc": dict(self.mc),
            "stabilization": self.stabilization,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(d) - cls.KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "experiment" not in d or "generator" not in d:
            raise ConfigError("config needs 'experiment' and 'generator'")
        kw = {k: v for k, v in d.items() if k not in ("generator", "lambda")}
        if "lambda" in d:
            kw["lam"] = d["lambda"]
        try:
            return cls(generator=GeneratorSpec.from_dict(d["generator"]), **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class ExperimentResult:
    rows: List[dict]
    config: dict
    stop_times: Dict = field(default_factory=dict, repr=False)
    bootstrap: Dict = field(default_factory=dict, repr=False)

    def select(self, **match) -> List[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def value(self, **match) -> float:
        rows = self.select(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return rows[0]["value"]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(kind, alpha, mu, lam, t0, metric, value, ci=(None, None), n=None, censored=None):
    return {"test_kind": kind, "alpha": alpha, "mu": mu, "lambda": lam, "t0": t0,
            "metric": metric, "value": float(value),
            "ci_lo": None if ci[0] is None else float(ci[0]),
            "ci_hi": None if ci[1] is None else float(ci[1]), "n": n, "censored": censored}


def _lambdas(cfg_lams, mu):
    out = []
    for lam in cfg_lams:
        if lam == "1/mu^2":
            if not mu:
                raise ConfigError("lambda rule 1/mu^2 needs a nonzero drift")
            out.append(1.0 / mu ** 2)
        elif isinstance(lam, (int, float)) and lam > 0:
            out.append(float(lam))
        else:
            raise ConfigError(f"bad lambda entry {lam!r}")
    return out


def run_type1(cfg: ExperimentConfig) -> ExperimentResult:
    """Fraction of null trajectories rejected by ``t_max`` for every cell.

    One ``crossing_rate`` row per cell; the ``censored`` column counts the
    trajectories that never rejected, so ``value + censored / n == 1``.
    """
    gen = cfg.generator
    if gen.mu != 0:
        raise ConfigError("type-I experiments need a null (zero-drift) generator")
    cells = []
    for kind in cfg.tests:
        kind = kind if kind == "nm_ville" else BoundaryKind.parse(kind).value
        if kind == "svs":
            raise ConfigError("the simple-vs-simple comparator needs a drift; not a type-I cell")
        for alpha in cfg.alpha:
            for t0 in ([1] if kind == "nm_ville" else cfg.t0):
                lams = _lambdas(cfg.lam, None) if kind.startswith("nm") else [None]
                for lam in lams:
                    cells.append(make_cell(kind, alpha, t0, lam, mc=_mc(cfg)))
    grid = cfg.time_grid()
    stops = simulate_stop_times(gen, cells, grid, cfg.n_traj, cfg.seed,
                                stabilization=cfg.stabilization)
    rows = []
    n = cfg.n_traj
    for k, c in enumerate(cells):
        rejected = int(np.sum(stops[:, k] >= 0))
        p = rejected / n
        censored = n - rejected
        # every trajectory runs to t_max, so rejected + censored = n
        rows.append(_row(c.kind, c.alpha, 0.0, c.lam, c.t0, "crossing_rate", p, wald_ci(p, n), n, censored))
    return ExperimentResult(rows, cfg.to_dict(), {c.key(): stops[:, k] for k, c in enumerate(cells)})


def _mc(cfg):
    mc = {"n_paths": 10_000, "seed": cfg.seed}
    mc.update(cfg.mc)
    return mc


def _times(stops):
    """Stop times with censored trajectories at +inf."""
    return np.where(stops >= 0, stops.astype(float), np.inf)


def _quartiles(x):
    return np.quantile(x, [0.25, 0.5, 0.75], method="inverted_cdf")


def _boot_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xB007])))


def run_efficiency(cfg: ExperimentConfig) -> ExperimentResult:
    """Rejection-time quartiles and efficiency relative to the oracle svs test.

    All cells of a given drift share trajectories, so the bootstrap resamples
    trajectories jointly and differences between cells get paired SEs.
    """
    if len(cfg.t0) != 1:
        raise ConfigError("efficiency runs use a single t0")
    t0 = int(cfg.t0[0])
    grid = cfg.time_grid()
    rows, stop_map, boot = [], {}, {}
    for mu in cfg.mu:
        if mu == 0:
            raise ConfigError("efficiency cells need mu != 0")
        gen = cfg.generator.with_mu(mu)
        psi = gen.psi
        cells = []
        for alpha in cfg.alpha:
            cells.append(make_cell("svs", alpha, t0, psi=psi))
            for kind in cfg.tests:
                if kind == "nm_ville":
                    raise ConfigError("nm_ville cells belong to type-I experiments")
                kind = BoundaryKind.parse(kind).value
                if kind == "svs":
                    continue
                lams = _lambdas(cfg.lam, psi) if kind == "nm" else [None]
                for lam in lams:
                    cells.append(make_cell(kind, alpha, t0, lam, mc=_mc(cfg)))
        stops = simulate_stop_times(gen, cells, grid, cfg.n_traj, cfg.seed,
                                    stabilization=cfg.stabilization)
        n = cfg.n_traj
        times = _times(stops)
        idx = _boot_rng(cfg.seed).integers(0, n, size=(cfg.n_boot, n))
        boot_med = np.quantile(times[idx], 0.5, axis=1, method="inverted_cdf")  # (n_boot, cells)
        bound = 2.0 * psi ** -2 * math.log(1.0 / abs(psi)) if abs(psi) < 1 else math.nan
        for k, c in enumerate(cells):
            censored = int(np.sum(stops[:, k] < 0))
            q1, med, q3 = _quartiles(times[:, k])
            base = dict(kind=c.kind, alpha=c.alpha, mu=float(mu), lam=c.lam, t0=t0)
            for name, v in (("q1", q1), ("median", med), ("q3", q3)):
                rows.append(_row(**base, metric=name, value=v, n=n, censored=censored))
            rows.append(_row(**base, metric="median_over_bound", value=med / bound, n=n, censored=censored))
            stop_map[(c.kind, c.alpha, c.lam, float(mu))] = stops[:, k]
            svs_k = next(j for j, d in enumerate(cells) if d.kind == "svs" and d.alpha == c.alpha)
            with np.errstate(invalid="ignore"):
                reps = boot_med[:, k] / boot_med[:, svs_k]
                eff = med / _quartiles(times[:, svs_k])[1]
            se = float(np.std(reps, ddof=1))
            boot[(c.kind, c.alpha, c.lam, float(mu))] = reps
            rows.append(_row(**base, metric="relative_efficiency", value=eff,
                             ci=(eff - 1.96 * se, eff + 1.96 * se), n=n, censored=censored))
            rows.append(_row(**base, metric="relative_efficiency_se", value=se, n=n, censored=censored))
    return ExperimentResult(rows, cfg.to_dict(), stop_map, boot)


def lambda_scan(cfg: ExperimentConfig) -> ExperimentResult:
    """Rejection-time quartiles of the nmSPRT across a lambda grid."""
    if cfg.generator.kind != "brownian":
        raise ConfigError("lambda scans run on Brownian data")
    grid = cfg.time_grid()
    rows, stop_map = [], {}
    lams = _lambdas(cfg.lam, None)
    for mu in cfg.mu:
        gen = cfg.generator.with_mu(mu)
        for alpha in cfg.alpha:
            for t0 in cfg.t0:
                cells = [make_cell("nm", alpha, t0, lam) for lam in lams]
                stops = simulate_stop_times(gen, cells, grid, cfg.n_traj, cfg.seed)
                times = _times(stops)
                meds = []
                for k, c in enumerate(cells):
                    censored = int(np.sum(stops[:, k] < 0))
                    q = _quartiles(times[:, k])
                    meds.append(q[1])
                    for name, v in zip(("q1", "median", "q3"), q):
                        rows.append(_row("nm", alpha, float(mu), c.lam, t0, name, v,
                                         n=cfg.n_traj, censored=censored))
                    stop_map[(alpha, float(mu), c.lam, t0)] = stops[:, k]
                best = lams[int(np.argmin(meds))]
                rows.append(_row("nm", alpha, float(mu), best, t0, "argmin_lambda", best, n=cfg.n_traj))
    return ExperimentResult(rows, cfg.to_dict(), stop_map)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return {"type1": run_type1, "efficiency": run_efficiency, "lambda_scan": lambda_scan}[cfg.experiment](cfg)
