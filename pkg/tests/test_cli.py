import io
import json
import subprocess
import sys

import pytest

from delayed_sprt.boundary import calibrate, h2_eta
from delayed_sprt.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, cmd_monitor, main
from delayed_sprt.errors import ConfigError
from delayed_sprt.numerics import make_rng
from delayed_sprt.sim import ExperimentConfig, run_experiment

from conftest import CONFIGS, mean_config, monitor_args, resume_round_trip, write_json, z_lines


def read_ndjson(path):
    return [json.loads(line) for line in open(path)]


class TestCalibrate:
    def test_alpha_one(self, tmp_path):
        out = tmp_path / "b.json"
        cfg = write_json(tmp_path / "c.json", {"kind": "rml", "alpha": 1, "t0": 10})
        assert main(["calibrate", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert abs(json.loads(out.read_text())["log_threshold"]) <= 1e-12

    def test_nm_residual(self, tmp_path):
        out = tmp_path / "b.json"
        assert main(["calibrate", "--config", str(CONFIGS / "calibrate_nm.json"), "--out", str(out)]) == EXIT_OK
        b = json.loads(out.read_text())
        assert abs(h2_eta(b["log_threshold"], b["lambda"] / b["t0"]) - 0.05) <= 1e-10
        assert abs(b["residual"]) <= 1e-10

    def test_checked_in_boundary_is_current(self, tmp_path):
        out = tmp_path / "b.json"
        main(["calibrate", "--config", str(CONFIGS / "calibrate_nm.json"), "--out", str(out)])
        assert json.loads(out.read_text()) == json.loads((CONFIGS / "boundary_nm.json").read_text())

    def test_malformed_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"kind": "rml", "alpha": 0.05,')
        out = tmp_path / "b.json"
        assert main(["calibrate", "--config", str(cfg), "--out", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    def test_unknown_key(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"kind": "rml", "alpha": 0.05, "t0": 10, "colour": 1})
        assert main(["calibrate", "--config", cfg]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert main(["calibrate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_domain_error_is_config(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"kind": "rml", "alpha": 0.0, "t0": 10})
        assert main(["calibrate", "--config", cfg]) == EXIT_CONFIG

    def test_numeric_failure(self, tmp_path):
        # h1 <= 1, so no threshold reaches alpha > 1
        cfg = write_json(tmp_path / "c.json", {"kind": "rml", "alpha": 1.5, "t0": 10})
        assert main(["calibrate", "--config", cfg]) == EXIT_NUMERIC

    def test_stdout(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {"kind": "rml", "alpha": 0.05, "t0": 100})
        assert main(["calibrate", "--config", cfg]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["kind"] == "rml"

    def test_bad_arguments(self):
        assert main(["calibrate"]) == EXIT_CONFIG
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_entry_point(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"kind": "rml", "alpha": 0.05, "t0": 100})
        proc = subprocess.run([sys.executable, "-m", "delayed_sprt.cli", "calibrate", "--config", cfg],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["log_threshold"] == calibrate("rml", 0.05, 100).log_threshold


class TestMonitor:
    def test_empty_stream(self, tmp_path):
        out = tmp_path / "o.ndjson"
        assert cmd_monitor(monitor_args("--config", mean_config(tmp_path), "--out", str(out)),
                           stdin=io.StringIO("")) == EXIT_OK
        assert out.read_text() == ""

    def test_forced_crossing_at_t0(self, tmp_path):
        out = tmp_path / "o.ndjson"
        z = 5.0 + make_rng(0).normal(size=40)
        cmd_monitor(monitor_args("--config", mean_config(tmp_path), "--out", str(out)),
                    stdin=io.StringIO("".join(z_lines(z))))
        recs = read_ndjson(out)
        events = [r for r in recs if r.get("event") == "reject"]
        assert len(events) == 1 and events[0]["t"] == 20
        assert events[0]["ci_lo"] > 0
        # auditing continues after the decision
        assert recs[-1]["t"] == 40 and recs[-1]["audit"] is True

    def test_no_audit_stops(self, tmp_path):
        out = tmp_path / "o.ndjson"
        z = 5.0 + make_rng(0).normal(size=40)
        cmd_monitor(monitor_args("--config", mean_config(tmp_path, audit=False), "--out", str(out)),
                    stdin=io.StringIO("".join(z_lines(z))))
        last = read_ndjson(out)[-1]
        assert last["event"] == "reject" and last["t"] == 20

    def test_bad_line_is_config_error(self, tmp_path):
        lines = z_lines([0.1, 0.2]) + ["not json\n"] + z_lines([0.3])
        with pytest.raises(ConfigError) as info:
            cmd_monitor(monitor_args("--config", mean_config(tmp_path), "--out", str(tmp_path / "o")),
                        stdin=io.StringIO("".join(lines)))
        assert "line 3" in str(info.value)

    def test_bad_line_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.setattr(sys, "stdin", io.StringIO('{"z": 1}\n{"y": 2}\n'))
        assert main(["monitor", "--config", mean_config(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_skip_bad(self, tmp_path):
        out = tmp_path / "o.ndjson"
        lines = z_lines([0.1, 0.2]) + ["not json\n", '{"z": "NaN"}\n', "[1]\n", '{"z": 1, "w": 2}\n'] \
            + z_lines([0.3])
        args = monitor_args("--config", mean_config(tmp_path), "--out", str(out), "--skip-bad",
                            "--snapshot-every", "100")
        assert cmd_monitor(args, stdin=io.StringIO("".join(lines))) == EXIT_OK
        assert [r["t"] for r in read_ndjson(out)] == [1, 2, 3]
        snap = json.loads((tmp_path / "o.ndjson.snapshot.json").read_text())
        assert snap["bad_lines"] == 4 and snap["lines_read"] == 7

    def test_resume_is_bit_exact(self, tmp_path):
        full, stitched, events = resume_round_trip(tmp_path)
        assert stitched == full
        assert events >= 1

    def test_resume_config_mismatch(self, tmp_path):
        cfg = mean_config(tmp_path, snapshot_path=str(tmp_path / "snap.json"))
        cmd_monitor(monitor_args("--config", cfg, "--snapshot-every", "1"), stdin=io.StringIO('{"z": 1}\n'))
        other = mean_config(tmp_path, t0=30, snapshot_path=str(tmp_path / "snap.json"))
        assert main(["monitor", "--config", other, "--resume", str(tmp_path / "snap.json")]) == EXIT_CONFIG

    def test_checked_in_config(self, tmp_path):
        out = tmp_path / "o.ndjson"
        z = make_rng(0).normal(size=300)
        cmd_monitor(monitor_args("--config", str(CONFIGS / "monitor_mean.json"), "--out", str(out)),
                    stdin=io.StringIO("".join(z_lines(z))))
        last = read_ndjson(out)[-1]
        assert last["t"] == 300 and last["ci_lo"] < 0 < last["ci_hi"]

    def test_trial_adapter(self, tmp_path):
        b = calibrate("nm", 0.05, 50, lam=50).to_dict()
        cfg = write_json(tmp_path / "m.json", {"boundary": b, "adapter": "aipw", "p": 0.5})
        rng = make_rng(5)
        recs = []
        for _ in range(200):
            l, a = float(rng.normal()), int(rng.integers(0, 2))
            recs.append(json.dumps({"l": l, "a": a, "u": l + 0.5 * a + float(rng.normal())}) + "\n")
        out = tmp_path / "o.ndjson"
        assert cmd_monitor(monitor_args("--config", cfg, "--out", str(out)), stdin=iter(recs)) == EXIT_OK
        assert read_ndjson(out)[-1]["t"] == 200


def sim_config(tmp_path, **over):
    d = {"experiment": "type1", "generator": {"kind": "centered_bernoulli", "p": 0.3}, "tests": ["rml"],
         "alpha": [0.05], "t0": [5], "grid": {"N": 1, "beta": 0, "t_max": 50}, "n_traj": 1, "seed": 0}
    d.update(over)
    return write_json(tmp_path / "s.json", d)


class TestSimulate:
    def test_one_row(self, tmp_path):
        out = tmp_path / "r.csv"
        assert main(["simulate", "--config", sim_config(tmp_path), "--out", str(out)]) == EXIT_OK
        assert len(out.read_text().splitlines()) == 2

    def test_matches_library(self, tmp_path):
        out = tmp_path / "r.csv"
        cfg = sim_config(tmp_path, n_traj=300, tests=["rml", "nm"], **{"lambda": [3.0]},
                         grid={"N": 100, "beta": 1, "t_max": 2000})
        main(["simulate", "--config", cfg, "--out", str(out)])
        res = run_experiment(ExperimentConfig.from_dict(json.loads(open(cfg).read())))
        assert out.read_text() == res.to_csv()

    def test_seed_override(self, tmp_path):
        cfg = sim_config(tmp_path, n_traj=2000, grid={"N": 100, "beta": 1, "t_max": 2000})
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["simulate", "--config", cfg, "--out", str(a)])
        main(["simulate", "--config", cfg, "--out", str(b), "--seed", "7"])
        assert a.read_text() != b.read_text()
        assert a.read_text().splitlines()[0] == b.read_text().splitlines()[0]

    def test_bad_config(self, tmp_path):
        assert main(["simulate", "--config", sim_config(tmp_path, n_traj=0)]) == EXIT_CONFIG
        assert main(["simulate", "--config", sim_config(tmp_path, tests=["wald"])]) == EXIT_CONFIG
