import json
import pathlib

import numpy as np
import pytest

from delayed_sprt.numerics import make_rng
from delayed_sprt.sim import ExperimentConfig, run_efficiency, run_type1, lambda_scan

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DATA = pathlib.Path(__file__).resolve().parent / "data"

_ACCEPTANCE = {}


def load_config(name):
    with open(CONFIGS / name) as fh:
        return json.load(fh)


def mc_mean(fn, z, chunk=1_000_000):
    """Mean and standard error of ``fn(z)`` over a large draw, in chunks."""
    total = total_sq = 0.0
    for start in range(0, z.size, chunk):
        v = fn(z[start:start + chunk])
        total += float(v.sum())
        total_sq += float(np.square(v).sum())
    n = z.size
    mean = total / n
    var = (total_sq - n * mean * mean) / (n - 1)
    return mean, float(np.sqrt(var / n))


@pytest.fixture(scope="session")
def normal_draws():
    """10^7 standard normal draws shared by the Monte Carlo oracles."""
    return make_rng(1).standard_normal(10_000_000)


@pytest.fixture(scope="session")
def type1_default():
    return run_type1(ExperimentConfig.from_dict(load_config("type1_default.json")))


@pytest.fixture(scope="session")
def efficiency_gaussian():
    return run_efficiency(ExperimentConfig.from_dict(load_config("efficiency_gaussian.json")))


@pytest.fixture(scope="session")
def lambda_scan_brownian():
    return lambda_scan(ExperimentConfig.from_dict(load_config("lambda_scan_brownian.json")))


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])


def rejecting_brownian_paths(b, n_paths, seed, mu=0.05, horizon=20_000, batch=500):
    """Statistic paths from ``t0`` on (unit steps) of drifted Brownian motion
    that reach the effective threshold within ``horizon`` steps."""
    from delayed_sprt.boundary import BoundaryKind, effective_log_threshold

    rng = make_rng(seed)
    a = effective_log_threshold(b)
    t = np.arange(b.t0, b.t0 + horizon, dtype=float)
    paths = []
    while len(paths) < n_paths:
        start = rng.normal(mu * b.t0, np.sqrt(b.t0), size=(batch, 1))
        inc = rng.normal(mu, 1.0, size=(batch, horizon - 1))
        S = np.concatenate([start, start + np.cumsum(inc, axis=1)], axis=1)
        if b.kind is BoundaryKind.RML:
            y = 0.5 * (S * S / t - np.log(t))
        else:
            y = 0.5 * (S * S / (t + b.lam) - np.log1p(t / b.lam))
        for row in y[(y >= a).any(axis=1)]:
            paths.append(row)
    return paths[:n_paths]


def duality_cases(n_cases, seed):
    """Compare interval membership with direct test outcomes on random streams.

    Yields ``(inside_interval, test_accepts, margin)`` where ``margin`` is the
    distance of theta0 to the nearest endpoint relative to ``1 + |theta0|``.
    """
    from delayed_sprt.boundary import calibrate, radius
    from delayed_sprt.esteq import cs_theta, esteq_step, make_estimating_function, new_esteq_state

    rng = make_rng(seed)
    for _ in range(n_cases):
        adapter = "mean" if rng.random() < 0.5 else "aipw"
        n = int(rng.integers(20, 300))
        t0 = int(rng.integers(1, n + 1))
        if rng.random() < 0.5:
            b = calibrate("rml", float(rng.choice([0.01, 0.05, 0.2])), t0)
        else:
            b = calibrate("nm", float(rng.choice([0.01, 0.05, 0.2])), t0, lam=float(rng.uniform(1, 200)))
        if adapter == "mean":
            obs = list(rng.normal(rng.normal(), rng.uniform(0.5, 3), size=n))
        else:
            l = rng.normal(size=n)
            a = rng.integers(0, 2, size=n)
            u = 0.5 + l + 0.7 * a * l + rng.normal(size=n)
            obs = [(float(x), int(y), float(z)) for x, y, z in zip(l, a, u)]
        fn = make_estimating_function(adapter, 0.5)
        ref = new_esteq_state(fn)
        for o in obs:
            ref, _ = esteq_step(ref, o, 0.0)
        lo, hi = cs_theta(ref, b)
        w = hi - lo
        theta0 = float(rng.choice([rng.uniform(lo - w, hi + w), lo + rng.choice([-1, 1]) * 1e-6 * w,
                                   hi + rng.choice([-1, 1]) * 1e-6 * w]))
        st = new_esteq_state(fn)
        S = 0.0
        for o in obs:
            st, x = esteq_step(st, o, theta0)
            S += x
        inside = lo <= theta0 <= hi
        accepts = abs(S) <= radius(b, n)
        margin = min(abs(theta0 - lo), abs(theta0 - hi)) / (1 + abs(theta0))
        yield inside, accepts, margin


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def monitor_args(*argv):
    from delayed_sprt.cli import build_parser
    return build_parser().parse_args(["monitor", *argv])


def mean_config(tmp_path, t0=20, **extra):
    from delayed_sprt.boundary import calibrate
    b = calibrate("rml", 0.05, t0).to_dict()
    return write_json(tmp_path / "m.json", dict({"boundary": b, "adapter": "mean", "theta0": 0.0,
                                                 "floor": {"kind": "unit"}}, **extra))


def z_lines(z):
    return [json.dumps({"z": float(v)}) + "\n" for v in z]


class KilledStream:
    """stdin stand-in that dies after ``n`` lines."""

    def __init__(self, lines, n):
        self.lines, self.n = lines, n

    def __iter__(self):
        for i, line in enumerate(self.lines):
            if i == self.n:
                raise KeyboardInterrupt
            yield line


def resume_round_trip(tmp_path, n=10_000, every=5000, kill_at=7000):
    """Monitor ``n`` lines once straight through and once killed after
    ``kill_at`` lines and resumed from the last snapshot.

    Returns the uninterrupted output lines, the stitched output lines (killed
    run up to the snapshot, then the resumed run) and the number of reject events.
    """
    from delayed_sprt.cli import cmd_monitor

    lines = z_lines(make_rng(3).normal(0.03, 1.0, size=n))
    snap = tmp_path / "snap.json"
    cfg = mean_config(tmp_path, t0=100, snapshot_path=str(snap))

    full = tmp_path / "full.ndjson"
    cmd_monitor(monitor_args("--config", cfg, "--out", str(full)), stdin=iter(lines))
    killed = tmp_path / "killed.ndjson"
    try:
        cmd_monitor(monitor_args("--config", cfg, "--out", str(killed), "--snapshot-every", str(every)),
                    stdin=KilledStream(lines, kill_at))
    except KeyboardInterrupt:
        pass
    done = json.loads(snap.read_text())["lines_read"]
    resumed = tmp_path / "resumed.ndjson"
    cmd_monitor(monitor_args("--config", cfg, "--out", str(resumed), "--resume", str(snap)),
                stdin=iter(lines[done:]))
    head = [line for line in open(killed) if json.loads(line)["t"] <= done]
    full_lines = open(full).readlines()
    events = sum('"event"' in line for line in full_lines)
    return full_lines, head + open(resumed).readlines(), events
