import json

import numpy as np
import pytest
import yaml

from macrostate.cli import main, read_series
from macrostate.config import apply_overrides, load_config, resolve
from macrostate.errors import ConfigError

MINIMAL = {
    "model": {"model_kind": "xxz_chain", "num_sites": 2},
    "initial": {"kind": "gibbs", "zeta": {"a[1]": 0.3, "H": 0.5}},
    "pipelines": ["exact"],
    "t_end": 1.0,
}

QUENCH = {
    "model": {"model_kind": "xxz_chain", "num_sites": 4, "couplings": {"J": 1.0, "delta": 0.5}},
    "observables": {"n_max": 2},
    "initial": {"kind": "quench", "beta": 0.5, "couplings": {"fields": [0.1, 0.03, -0.03, -0.1]}},
    "pipelines": ["exact", "memory", "semigroup"],
    "mem": {"tau": 1.0, "dt": 0.1},
    "semigroup": {"tau": 0.5, "dt": 0.1},
    "t_end": 1.0,
}


def write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


class TestConfig:
    def test_defaults_recorded(self):
        res = resolve(MINIMAL)
        assert res.config["observables"]["mode_basis"] == "cosine"
        assert "exact.dt" in res.applied_defaults
        assert "inversion.tol" in res.applied_defaults
        assert res.config["exact"]["dt"] == 0.05

    def test_memory_without_mem_names_field(self):
        with pytest.raises(ConfigError) as info:
            resolve(dict(MINIMAL, pipelines=["memory"]))
        assert info.value.field == "mem"

    def test_unknown_field(self):
        with pytest.raises(ConfigError) as info:
            resolve(dict(MINIMAL, model={"model_kind": "xxz_chain", "num_sites": 2, "spin": 1}))
        assert info.value.field == "model.spin"

    def test_t_end_after_t0(self):
        with pytest.raises(ConfigError):
            resolve(dict(MINIMAL, t_end=0.0))

    def test_syntax_error_has_line(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("model:\n  model_kind: xxz_chain\n  num_sites: [\n")
        with pytest.raises(ConfigError) as info:
            load_config(p)
        assert info.value.line is not None

    def test_overrides(self):
        cfg = apply_overrides(MINIMAL, ["model.couplings.delta=0.3", "t_end=2", "mem.dt=0.1"])
        assert cfg["model"]["couplings"]["delta"] == 0.3
        assert cfg["t_end"] == 2
        assert cfg["mem"] == {"dt": 0.1}
        assert "couplings" not in MINIMAL["model"]
        with pytest.raises(ConfigError):
            apply_overrides(MINIMAL, ["t_end"])


class TestRun:
    def test_minimal_exact(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, MINIMAL)), "--output-dir", str(out), "--quiet"]) == 0
        header, data = read_series(out / "series_exact.csv")
        assert header[0] == "time" and header[-1] == "entropy"
        for j, name in enumerate(header):
            if name in ("mean[a[0]]", "mean[H]"):
                assert np.ptp(data[:, j]) <= 1e-8
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert "exact.dt" in manifest["applied_defaults"]
        assert not {"timestamp", "created", "date"} & set(manifest)

    def test_series_format(self, tmp_path):
        out = tmp_path / "out"
        main(["run", str(write(tmp_path, MINIMAL)), "--output-dir", str(out), "--quiet"])
        lines = (out / "series_exact.csv").read_text().splitlines()
        assert lines[0].startswith("time,zeta[")
        assert lines[2].split(",")[0] == "%.17g" % 0.05

    def test_config_error_exit(self, tmp_path, capsys):
        code = main(["run", str(write(tmp_path, dict(MINIMAL, pipelines=["memory"]))), "--output-dir", str(tmp_path)])
        assert code == 2
        assert "mem" in capsys.readouterr().err

    def test_dimension_cap_is_config_error(self, tmp_path):
        cfg = dict(MINIMAL, model={"model_kind": "xxz_chain", "num_sites": 4, "dim_cap": 8})
        assert main(["run", str(write(tmp_path, cfg)), "--output-dir", str(tmp_path), "--quiet"]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", str(write(tmp_path, MINIMAL)), "--output-dir", str(blocker / "sub"), "--quiet"]) == 2

    def test_numerical_failure_recorded(self, tmp_path):
        cfg = dict(QUENCH, mem=dict(QUENCH["mem"], max_step_change=1e-9))
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, cfg)), "--output-dir", str(out), "--quiet"]) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["failure"]["pipeline"] == "memory"
        assert manifest["failure"]["time"] == pytest.approx(0.1)  # end of first rejected step

    def test_quench_report_and_lambda_scan(self, tmp_path):
        devs = []
        for scale in (1.0, 0.5):
            cfg = apply_overrides(QUENCH, [f"initial.couplings.fields=[{0.1*scale}, {0.03*scale}, {-0.03*scale}, {-0.1*scale}]"])
            out = tmp_path / f"out{scale}"
            assert main(["run", str(write(tmp_path, cfg, f"q{scale}.yaml")), "--output-dir", str(out), "--quiet"]) == 0
            report = json.loads((out / "report.json").read_text())
            pairs = {row["pair"]: row for row in report["deviations"]}
            assert set(pairs) == {"exact-memory", "exact-semigroup", "memory-semigroup"}
            devs.append(pairs["exact-memory"]["max_expectation_deviation"])
            assert report["entropy"]["exact"]["negative_steps"] == 0
        assert devs[1] < devs[0]

    def test_prepared_initial(self, tmp_path):
        cfg = {
            "model": {"model_kind": "xxz_chain", "num_sites": 3},
            "initial": {
                "kind": "prepared", "T": -1.0, "t0": 0.0,
                "zeta_t0": {"a[1]": 0.1, "H": 0.4},
                "gamma_T": {"a[2]": 0.05},
                "controls": [
                    {"target": "density", "index": 1, "coefficient": 0.1, "profile": {"kind": "cosine", "parameters": {"omega": 1.0}}},
                    {"target": "current", "index": 0, "coefficient": 0.05, "profile": {"kind": "constant"}},
                ],
            },
            "pipelines": ["exact", "memory"],
            "mem": {"tau": 0.5, "dt": 0.1},
            "t_end": 0.5,
        }
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, cfg)), "--output-dir", str(out), "--quiet"]) == 0
        assert (out / "series_memory.csv").exists()

    def test_unknown_label(self, tmp_path):
        cfg = dict(MINIMAL, initial={"kind": "gibbs", "zeta": {"b[7]": 1.0}})
        assert main(["run", str(write(tmp_path, cfg)), "--output-dir", str(tmp_path), "--quiet"]) == 2


class TestDeterminismAndCompare:
    def test_byte_identical_and_zero_deviation(self, tmp_path, capsys):
        cfg = write(tmp_path, QUENCH)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(cfg), "--output-dir", str(a), "--quiet"]) == 0
        assert main(["run", str(cfg), "--output-dir", str(b), "--quiet"]) == 0
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name
        capsys.readouterr()
        assert main(["compare", str(a / "series_memory.csv"), str(b / "series_memory.csv"), "--output-dir", str(tmp_path / "c")]) == 0
        assert "max deviation: 0" in capsys.readouterr().out
        assert json.loads((tmp_path / "c" / "compare.json").read_text())["max_deviation"] == 0.0

    def test_compare_mismatched_columns(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("time,x\n0,1\n")
        b.write_text("time,y\n0,1\n")
        assert main(["compare", str(a), str(b), "--quiet"]) == 2
        b.write_text("time,x\n0.5,1\n")
        assert main(["compare", str(a), str(b), "--quiet"]) == 2

    def test_compare_on_shared_times(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("time,x\n0,1\n0.1,2\n")
        b.write_text("time,x\n0,1\n0.05,7\n0.1,2.5\n")
        assert main(["compare", str(a), str(b)]) == 0
        out = capsys.readouterr().out
        assert "shared times: 2" in out and "max deviation: 0.5" in out


class TestDiagnoseTau:
    def test_single_site(self, tmp_path, capsys):
        cfg = {
            "model": {"model_kind": "xxz_chain", "num_sites": 1, "couplings": {"field": 0.5}},
            "initial": {"kind": "gibbs"},
            "pipelines": ["exact"],
            "t_end": 1.0,
        }
        assert main(["diagnose-tau", str(write(tmp_path, cfg)), "--output-dir", str(tmp_path)]) == 0
        assert "no driven modes" in capsys.readouterr().out

    def test_six_site_mode_one(self, tmp_path):
        cfg = {
            "model": {"model_kind": "xxz_chain", "num_sites": 6, "couplings": {"J": 1.0, "delta": 0.5}},
            "observables": {"n_max": 1},
            "initial": {"kind": "gibbs", "zeta": {"H": 0.5}},
            "pipelines": ["exact"],
            "t_end": 1.0,
        }
        assert main(["diagnose-tau", str(write(tmp_path, cfg)), "--output-dir", str(tmp_path), "--quiet"]) == 0
        rep = json.loads((tmp_path / "tau_report.json").read_text())
        assert rep["certified"]
        assert rep["recurrence"] is None or rep["tau_est"] < rep["recurrence"]
        assert rep["tau_est"] == pytest.approx(3.2124, abs=5e-3)
