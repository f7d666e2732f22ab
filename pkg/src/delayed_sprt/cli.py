"""Command-line interface: ``calibrate``, ``monitor`` and ``simulate``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import Optional

from .adaptive import calibrate_adaptive, calibrate_svs_delayed, svs_crossing_expectation
from .boundary import BoundaryKind, CalibratedBoundary, calibrate, h1, h2_eta
from .errors import ConfigError, NumericError
from .esteq import EsteqState, cs_theta, esteq_step, floor_from_dict, make_estimating_function, new_esteq_state
from .sim import ExperimentConfig, run_experiment
from .teststat import StreamState, new_state, statistic, update

log = logging.getLogger("delayed_sprt")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SNAPSHOT_VERSION = 1


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None


def _check_keys(d, allowed, required, what):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"missing {what} keys: {sorted(missing)}")


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        _write_atomic(out, text)


# calibrate ---------------------------------------------------------------

CALIBRATE_KEYS = {"kind", "alpha", "t0", "lambda", "psi", "mc"}


def calibrate_from_config(cfg: dict, seed: Optional[int] = None) -> dict:
    _check_keys(cfg, CALIBRATE_KEYS, {"kind", "alpha", "t0"}, "calibrate config")
    kind = BoundaryKind.parse(cfg["kind"])
    alpha, t0 = cfg["alpha"], cfg["t0"]
    if kind in (BoundaryKind.RML, BoundaryKind.NM):
        b = calibrate(kind, alpha, t0, lam=cfg.get("lambda"))
        h = h1(b.log_threshold) if kind is BoundaryKind.RML else h2_eta(b.log_threshold, b.eta)
        out = b.to_dict()
        out["residual"] = h - alpha
        return out
    if kind is BoundaryKind.SVS:
        if "psi" not in cfg:
            raise ConfigError("svs calibration needs 'psi'")
        b = calibrate_svs_delayed(alpha, cfg["psi"], t0)
        out = b.to_dict()
        out["residual"] = svs_crossing_expectation(b.log_threshold, b.psi_ref, t0) - alpha
        return out
    mc = dict(cfg.get("mc") or {})
    _check_keys(mc, {"n_paths", "seed"}, set(), "mc")
    if seed is not None:
        mc["seed"] = seed
    res = calibrate_adaptive(alpha, t0, **mc)
    out = res.boundary().to_dict()
    out["residual"] = res.estimate - alpha
    out["mc"] = {"n_paths": res.n_paths, "seed": res.seed, "estimate": res.estimate, "se": res.se}
    return out


def cmd_calibrate(args) -> int:
    cfg = _load_json(args.config)
    log.info("config: %s", json.dumps(cfg, sort_keys=True))
    out = calibrate_from_config(cfg, args.seed)
    _emit(json.dumps(out) + "\n", args.out)
    log.info("log_threshold=%r residual=%r", out["log_threshold"], out["residual"])
    return EXIT_OK


# monitor -----------------------------------------------------------------

MONITOR_KEYS = {"boundary", "boundary_path", "adapter", "p", "theta0", "floor", "exact",
                "audit", "snapshot_path"}


class Monitor:
    """Streaming test of ``theta = theta0`` with a confidence interval for ``theta``."""

    def __init__(self, cfg: dict, base_dir: str = "."):
        _check_keys(cfg, MONITOR_KEYS, {"adapter"}, "monitor config")
        if ("boundary" in cfg) == ("boundary_path" in cfg):
            raise ConfigError("give exactly one of 'boundary' or 'boundary_path'")
        if "boundary" in cfg:
            bd = cfg["boundary"]
        else:
            bd = _load_json(os.path.join(base_dir, cfg["boundary_path"]))
        self.boundary = CalibratedBoundary.from_dict(bd)
        if self.boundary.kind is BoundaryKind.ADAPTIVE:
            raise ConfigError("monitor supports rml, nm and svs boundaries")
        self.cfg = cfg
        self.theta0 = float(cfg.get("theta0", 0.0))
        self.audit = bool(cfg.get("audit", True))
        fn = make_estimating_function(cfg["adapter"], cfg.get("p", 0.5))
        self.esteq = new_esteq_state(fn, floor_from_dict(cfg.get("floor")), bool(cfg.get("exact", False)))
        self.stream = new_state(self.boundary)
        self.lines_read = 0
        self.bad_lines = 0
        self.reject_emitted = False

    def step(self, record: dict) -> list:
        obs = self.esteq.fn.parse(record)
        self.esteq, x = esteq_step(self.esteq, obs, self.theta0)
        was_stopped = self.stream.stopped_at is not None
        self.stream = update(self.stream, x)
        t = self.stream.t
        status = {"t": t, "x": x, "statistic": statistic(self.stream)}
        if self.esteq.Gamma != 0.0:
            status["theta_hat"] = -self.esteq.weighted_sum / self.esteq.Gamma
            if t >= self.boundary.t0 and self.boundary.kind is not BoundaryKind.SVS:
                status["ci_lo"], status["ci_hi"] = cs_theta(self.esteq, self.boundary)
        status["decision"] = "reject" if self.stream.stopped_at is not None else "continue"
        if was_stopped:
            status["audit"] = True
        lines = [status]
        if self.stream.stopped_at is not None and not self.reject_emitted:
            self.reject_emitted = True
            final = {"event": "reject", "t": self.stream.stopped_at, "statistic": status["statistic"]}
            for k in ("theta_hat", "ci_lo", "ci_hi"):
                if k in status:
                    final[k] = status[k]
            lines.append(final)
        return lines

    def snapshot(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "config": self.cfg,
            "lines_read": self.lines_read,
            "bad_lines": self.bad_lines,
            "reject_emitted": self.reject_emitted,
            "esteq": self.esteq.to_dict(),
            "stream": self.stream.to_dict(),
        }

    def restore(self, snap: dict) -> None:
        _check_keys(snap, {"version", "config", "lines_read", "bad_lines", "reject_emitted",
                           "esteq", "stream"}, {"version", "config", "esteq", "stream"}, "snapshot")
        if snap["version"] != SNAPSHOT_VERSION:
            raise ConfigError(f"unsupported snapshot version {snap['version']}")
        if snap["config"] != self.cfg:
            raise ConfigError("snapshot was taken under a different monitor config")
        self.esteq = EsteqState.from_dict(snap["esteq"])
        self.stream = StreamState.from_dict(snap["stream"])
        self.lines_read = int(snap.get("lines_read", self.esteq.t))
        self.bad_lines = int(snap.get("bad_lines", 0))
        self.reject_emitted = bool(snap.get("reject_emitted", False))


def _parse_line(line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ConfigError("observation must be a JSON object")
    return rec


def cmd_monitor(args, stdin=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    cfg = _load_json(args.config)
    log.info("config: %s", json.dumps(cfg, sort_keys=True))
    mon = Monitor(cfg, os.path.dirname(os.path.abspath(args.config)))
    if args.resume:
        mon.restore(_load_json(args.resume))
        log.info("resumed at t=%d after %d lines", mon.stream.t, mon.lines_read)
    snap_path = cfg.get("snapshot_path") or (f"{args.out}.snapshot.json" if args.out else "monitor.snapshot.json")
    every = args.snapshot_every
    if every is not None and every < 1:
        raise ConfigError("--snapshot-every must be >= 1")

    out = sys.stdout if args.out is None else open(args.out, "a" if args.resume else "w")
    try:
        for raw in stdin:
            line = raw.strip()
            if not line:
                continue
            mon.lines_read += 1
            try:
                records = mon.step(_parse_line(line))
            except ValueError as exc:
                if not args.skip_bad:
                    raise ConfigError(f"line {mon.lines_read}: {exc}") from None
                mon.bad_lines += 1
                log.warning("skipping line %d: %s", mon.lines_read, exc)
                continue
            for rec in records:
                out.write(json.dumps(rec) + "\n")
            out.flush()
            if every and mon.esteq.t % every == 0:
                _write_atomic(snap_path, json.dumps(mon.snapshot()))
            if mon.stream.stopped_at is not None and not mon.audit:
                break
        if every:
            _write_atomic(snap_path, json.dumps(mon.snapshot()))
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("processed %d observations, %d bad lines, decision=%s", mon.esteq.t, mon.bad_lines,
             "reject" if mon.stream.stopped_at is not None else "continue")
    return EXIT_OK


# simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a JSON object")
        raw = dict(raw, seed=args.seed)
    cfg = ExperimentConfig.from_dict(raw)
    log.info("config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    res = run_experiment(cfg)
    text = res.to_csv()
    _emit(text, args.out)
    for r in res.rows:
        if r["metric"] in ("crossing_rate", "median", "relative_efficiency", "argmin_lambda"):
            log.info("%s alpha=%s mu=%s lambda=%s t0=%s %s=%r", r["test_kind"], r["alpha"], r["mu"],
                     r["lambda"], r["t0"], r["metric"], r["value"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delayed-sprt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="solve for a boundary and print its JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the Monte Carlo seed (adaptive kind)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("monitor", help="test a live NDJSON stream read from stdin")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="append-only NDJSON status file (default stdout)")
    p.add_argument("--snapshot-every", type=int, metavar="K")
    p.add_argument("--resume", metavar="SNAPSHOT")
    p.add_argument("--skip-bad", action="store_true", help="count and skip malformed lines")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
