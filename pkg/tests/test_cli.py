import csv
import json
import subprocess
import sys

import pytest

from condirt import cli
from condirt.errors import BuildError

CONFIG = {
    "model": {"name": "lingauss", "params": {"d_y": 2, "d_theta": 2, "seed": 1}},
    "n_grid": 17,
    "cross": {"max_rank": 4, "init_rank": 3, "max_sweeps": 2},
    "schedule": {"kind": "explicit", "values": [0.5, 1.0]},
    "hellinger_samples": 100,
    "seed": 3,
}


def write(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return path


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write(root / "cfg.json", CONFIG)
    out = root / "build"
    assert cli.main(["build", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    obs = root / "y.csv"
    obs.write_text("y1,y2\n0.5,0.1\n-1.0,0.3\n")
    return root, out / "model.dirt", obs


class TestBuild:
    def test_outputs(self, built):
        root, dirt, _ = built
        assert dirt.exists()
        report = json.loads((dirt.parent / "build_report.json").read_text())
        assert report["n_layers"] == 2
        assert report["total_oracle_evals"] > 0
        assert len(report["layers"]) == 2

    def test_schema_error_has_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "model": {"name": "lingauss"},\n  "cross": {"max_rank": "four"}\n}\n')
        assert cli.main(["build", "--config", str(bad)]) == cli.EXIT_CONFIG
        assert "line 3" in capsys.readouterr().err

    def test_syntax_error_has_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "model": {"name": "lingauss"},\n  "seed": \n}\n')
        assert cli.main(["build", "--config", str(bad)]) == cli.EXIT_CONFIG
        assert "line 4" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "patch",
        [
            {"model": {"name": "heat"}},
            {"schedule": {"kind": "explicit", "values": [0.5]}},
            {"model": {"name": "lingauss", "params": {"dims": 3}}},
            {"extra": 1},
        ],
    )
    def test_invalid_configs(self, tmp_path, patch):
        cfg = write(tmp_path / "c.json", dict(CONFIG, **patch))
        assert cli.main(["build", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_missing_config_is_io_error(self, tmp_path):
        assert cli.main(["build", "--config", str(tmp_path / "none.json")]) == cli.EXIT_IO

    def test_build_error_exit_code(self, tmp_path, monkeypatch):
        def fail(*a, **k):
            raise BuildError("cross failed", layer=0)

        monkeypatch.setattr("condirt.dirt.build_dirt", fail)
        cfg = write(tmp_path / "c.json", CONFIG)
        assert cli.main(["build", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_BUILD

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CONDIRT_OUT", str(tmp_path / "envout"))
        cfg = write(tmp_path / "c.json", CONFIG)
        assert cli.main(["build", "--config", str(cfg)]) == cli.EXIT_OK
        assert (tmp_path / "envout" / "model.dirt").exists()

    def test_unknown_subcommand(self):
        assert cli.main(["fly"]) == cli.EXIT_CONFIG


class TestCondition:
    def run(self, built, out, n, seed=1):
        _, dirt, obs = built
        return cli.main(["condition", "--dirt", str(dirt), "--y", str(obs), "-n", str(n),
                         "--seed", str(seed), "--out", str(out)])

    def test_csv_layout(self, built, tmp_path):
        assert self.run(built, tmp_path, 4) == cli.EXIT_OK
        rows = list(csv.reader(open(tmp_path / "samples.csv")))
        assert rows[0] == ["y_id", "sample_id", "theta_1", "theta_2", "log_density"]
        assert len(rows) == 1 + 2 * 4
        assert [r[0] for r in rows[1:]] == ["0"] * 4 + ["1"] * 4
        # Seventeen significant digits survive a float round trip.
        assert all(len(r[2].replace("-", "").replace(".", "").lstrip("0").split("e")[0]) <= 17 for r in rows[1:])

    def test_deterministic(self, built, tmp_path):
        self.run(built, tmp_path / "a", 5, seed=9)
        self.run(built, tmp_path / "b", 5, seed=9)
        assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()

    def test_seed_changes_samples(self, built, tmp_path):
        self.run(built, tmp_path / "a", 5, seed=1)
        self.run(built, tmp_path / "b", 5, seed=2)
        assert (tmp_path / "a" / "samples.csv").read_bytes() != (tmp_path / "b" / "samples.csv").read_bytes()

    def test_zero_samples_header_only(self, built, tmp_path):
        assert self.run(built, tmp_path, 0) == cli.EXIT_OK
        assert (tmp_path / "samples.csv").read_text().strip().splitlines() == [
            "y_id,sample_id,theta_1,theta_2,log_density"
        ]

    def test_wrong_observation_width(self, built, tmp_path):
        _, dirt, _ = built
        obs = tmp_path / "y.json"
        obs.write_text("[[1.0, 2.0, 3.0]]")
        assert cli.main(["condition", "--dirt", str(dirt), "--y", str(obs), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_json_observations(self, built, tmp_path):
        _, dirt, _ = built
        obs = tmp_path / "y.json"
        obs.write_text(json.dumps({"y": [[0.1, 0.2]]}))
        assert cli.main(["condition", "--dirt", str(dirt), "--y", str(obs), "-n", "2",
                         "--out", str(tmp_path)]) == cli.EXIT_OK

    def test_truncated_file(self, built, tmp_path):
        _, dirt, obs = built
        bad = tmp_path / "bad.dirt"
        bad.write_bytes(dirt.read_bytes()[:64])
        assert cli.main(["condition", "--dirt", str(bad), "--y", str(obs)]) == cli.EXIT_IO


class TestDiagnose:
    def test_outputs(self, built, tmp_path):
        _, dirt, _ = built
        code = cli.main(["diagnose", "--dirt", str(dirt), "--n-y", "3", "--n-per-y", "300",
                         "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        rows = list(csv.reader(open(tmp_path / "hellinger_hist.csv")))
        assert len(rows) == 4
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["count"] == 3 and "joint" in summary


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "condirt", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("build", "condition", "diagnose", "reproduce-sir"):
        assert cmd in res.stdout
