import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qoe_incentive.baselines import Scheme
from qoe_incentive.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from qoe_incentive.config import DEFAULT_RANGES, dump_scenario
from qoe_incentive.harness import (
    ExperimentSpec,
    apply_sweep,
    case_study_scenario,
    emit_csv,
    generate_scenario,
    load_spec,
    parse_sweep_values,
    read_csv,
    run_experiment,
    slope_signs,
)
from qoe_incentive.model import DomainError


class TestGenerator:
    def test_deterministic(self):
        a, b = generate_scenario(3, 2, 4), generate_scenario(3, 2, 4)
        for attr in ("kappa", "f_max", "b_max", "snr", "x_in", "x_out", "theta_hat"):
            assert np.array_equal(getattr(a, attr), getattr(b, attr))
        assert not np.array_equal(a.x_out, generate_scenario(4, 2, 4).x_out)

    def test_ranges_over_many_draws(self):
        r = DEFAULT_RANGES
        rows = [generate_scenario(s, 2, 5) for s in range(1000)]  # 10^4 demand draws
        kappa = np.concatenate([s.kappa for s in rows])
        x_in = np.concatenate([s.x_in.ravel() for s in rows])
        x_out = np.concatenate([s.x_out.ravel() for s in rows])
        theta = np.concatenate([s.theta_hat.ravel() for s in rows])
        assert x_in.size == 10_000
        assert r.kappa[0] <= kappa.min() and kappa.max() <= r.kappa[1]
        assert r.tokens[0] <= min(x_in.min(), x_out.min())
        assert max(x_in.max(), x_out.max()) <= r.tokens[1]
        assert all(r.contains("theta_hat", t) for t in np.unique(theta))

    @settings(max_examples=15)
    @given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 6))
    def test_shapes(self, seed, n, m):
        s = generate_scenario(seed, n, m)
        assert s.shape == (n, m) and np.all(s.compute_load > 0) and np.all(s.comm_load > 0)


class TestCaseStudy:
    def test_demands(self):
        s = case_study_scenario()
        assert s.shape == (2, 3)
        assert list(s.x_out[0]) == [200, 500, 800] and list(s.x_out[1]) == [1400, 1200, 1000]
        assert s.theta_hat[1, 0] == 1e-5 and s.theta_hat[0, 1] == 1e-9
        assert np.allclose(s.snr, 100.0)

    def test_apply_sweep(self):
        base = case_study_scenario()
        assert apply_sweep(base, "kappa", 1.2, (1, 0)).kappa[1] == 1.2
        assert apply_sweep(base, "x_out", 900).x_out[0, 0] == 900
        with pytest.raises(DomainError):
            apply_sweep(base, "M", 3)


class TestSpec:
    def test_sweep_range_check(self):
        with pytest.raises(DomainError, match="outside"):
            ExperimentSpec(sweep_var="kappa", sweep_values=(3.0,))
        ExperimentSpec(sweep_var="kappa", sweep_values=(3.0,), override_ranges=True)

    def test_invalid(self):
        with pytest.raises(DomainError):
            ExperimentSpec(source="case-study", sweep_var="M", sweep_values=(5,))
        with pytest.raises(DomainError):
            ExperimentSpec(schemes=())
        with pytest.raises(DomainError):
            ExperimentSpec(source="file")

    def test_parse_values(self):
        assert parse_sweep_values("kappa", "300ms, 1.2s") == (0.3, 1.2)
        assert parse_sweep_values("x_out", ["300", 900.4]) == (300, 900)

    def test_load_spec(self, tmp_path):
        dump_scenario(generate_scenario(2, 1, 2), tmp_path / "scen.toml")
        (tmp_path / "exp.toml").write_text(
            'name = "demo"\nschemes = ["proposed", "ratio:5", "onlyf"]\n'
            '[scenario]\nfile = "scen.toml"\n'
            '[sweep]\nvariable = "kappa"\nvalues = ["500ms", "900ms"]\ntarget = [0, 0]\n'
            '[game]\nschedule = "constant:0.01"\nepsilon = 1e-4\nmax_rounds = 50\n'
            '[calibration]\nmu = 4.0\n'
        )
        spec = load_spec(tmp_path / "exp.toml")
        assert spec.source == "file" and spec.scenario_file == str(tmp_path / "scen.toml")
        assert spec.sweep_values == (0.5, 0.9)
        assert [s.label for s in spec.schemes] == ["proposed", "ratio:5", "onlyf"]
        assert spec.game.schedule.kind == "constant" and spec.game.max_rounds == 50
        assert spec.calibration.mu == 4.0
        assert spec.scenarios_at(0.9)[0].kappa[0] == 0.9

    def test_hash_tracks_content(self):
        a = ExperimentSpec()
        assert a.spec_hash == ExperimentSpec().spec_hash
        assert a.spec_hash != ExperimentSpec(seed=1).spec_hash


def _small_sweep(out, **kw):
    base = dict(name="t", source="case-study", sweep_var="x_out", sweep_values=(400, 800),
                schemes=(Scheme("proposed"), Scheme("ratio", 1.0)), out_dir=str(out))
    base.update(kw)
    return ExperimentSpec(**base)


class TestRunning:
    def test_outputs_and_determinism(self, tmp_path):
        r1 = run_experiment(_small_sweep(tmp_path / "a"))
        run_experiment(_small_sweep(tmp_path / "b"))
        assert not r1.failures
        for name in r1.files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read_csv(tmp_path / "a" / "trend.csv")
        assert list(rows[0]) == ["sweep_var", "sweep_value", "scheme", "metric", "value"]
        assert {r["scheme"] for r in rows} == {"proposed", "ratio:1"}
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["status"] == "ok" and manifest["spec_hash"] == r1.spec_hash
        assert "proposed/reward[0,0]" in manifest["trends"]

    def test_csv_round_trip_at_nine_digits(self, tmp_path):
        rec = run_experiment(_small_sweep(tmp_path))
        rows = read_csv(tmp_path / "trend.csv")
        emitted = {(r["sweep_value"], r["scheme"], r["metric"]): float(r["value"]) for r in rows}
        for p in rec.points:
            for key, value in {**p.metrics, **p.series}.items():
                assert emitted[(f"{p.sweep_value:g}", p.scheme, key)] == float(f"{value:.9g}")

    def test_jobs_do_not_change_results(self, tmp_path):
        run_experiment(_small_sweep(tmp_path / "s"), jobs=1)
        run_experiment(_small_sweep(tmp_path / "p"), jobs=2)
        assert (tmp_path / "s" / "trend.csv").read_bytes() == (tmp_path / "p" / "trend.csv").read_bytes()

    def test_case_study_schema(self, tmp_path):
        run_experiment(ExperimentSpec(source="case-study", out_dir=str(tmp_path)))
        rows = read_csv(tmp_path / "case_study.csv")
        assert list(rows[0]) == ["asp", "mu", "f_tflops", "b_mhz", "reward", "qoe_ms"]
        assert [(r["asp"], r["mu"]) for r in rows] == [(a, m) for a in "12" for m in "123"]
        traj = read_csv(tmp_path / "trajectory_000_proposed.csv")
        assert list(traj[0])[:2] == ["round", "sum_abs_utility_change"]
        assert traj[0]["sum_abs_utility_change"] == ""

    def test_empty_sweep_is_header_only(self, tmp_path):
        rec = run_experiment(_small_sweep(tmp_path, sweep_values=()))
        assert rec.points == []
        assert (tmp_path / "trend.csv").read_text() == "sweep_var,sweep_value,scheme,metric,value\n"

    def test_failed_point_is_recorded(self, tmp_path):
        rec = run_experiment(_small_sweep(tmp_path, sweep_values=(500, 10_000_000), override_ranges=True,
                                          schemes=(Scheme("proposed"),)))
        assert len(rec.failures) == 1 and "InfeasibleError" in rec.failures[0].error
        assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "partial"
        assert {r["sweep_value"] for r in read_csv(tmp_path / "trend.csv")} == {"500"}

    def test_unknown_csv_kind(self, tmp_path):
        rec = run_experiment(_small_sweep(tmp_path, sweep_values=()), write=False)
        with pytest.raises(ValueError):
            emit_csv(rec, "bogus", tmp_path / "x.csv")

    def test_slope_signs(self):
        assert slope_signs([1, 2, 2, 1]) == [1, 0, -1]


class TestCli:
    def test_case_study(self, tmp_path, capsys):
        assert main(["case-study", "--out", str(tmp_path)]) == EXIT_OK
        assert "qoe" in capsys.readouterr().out.lower()
        assert (tmp_path / "case_study.csv").exists()

    def test_partial(self, tmp_path):
        code = main(["sweep", "--var", "x_out", "--values", "500,10000000", "--source", "case-study",
                     "--override-ranges", "--out", str(tmp_path)])
        assert code == EXIT_PARTIAL

    def test_fatal(self, tmp_path):
        assert main(["sweep", "--var", "kappa", "--values", "5s", "--out", str(tmp_path)]) == EXIT_FATAL
        assert main(["run", str(tmp_path / "missing.toml")]) == EXIT_FATAL

    def test_gen_then_run(self, tmp_path):
        assert main(["gen", "--seed", "4", "--n-asps", "1", "--n-mus", "2",
                     "--out", str(tmp_path / "s.toml")]) == EXIT_OK
        (tmp_path / "e.toml").write_text('name = "e"\n[scenario]\nfile = "s.toml"\n')
        code = main(["run", str(tmp_path / "e.toml"), "--out", str(tmp_path / "o"),
                     "--scheme", "proposed", "--scheme", "onlyb", "--schedule", "diminishing:0.1",
                     "--epsilon", "1e-5", "--max-rounds", "300", "--jobs", "2"])
        assert code == EXIT_OK
        schemes = {r["scheme"] for r in read_csv(tmp_path / "o" / "trend.csv")}
        assert schemes == {"proposed", "onlyb"}

    def test_certify(self, tmp_path, capsys):
        out = tmp_path / "c.json"
        code = main(["certify", "--seed", "0", "--n-asps", "1", "--n-mus", "2", "--out", str(out)])
        doc = json.loads(out.read_text())
        assert code == EXIT_OK and doc["ne_certified"]
        assert all(o["pass"] for o in doc["oracle"])

    def test_bad_schedule_exits_by_argparse(self):
        with pytest.raises(SystemExit):
            main(["case-study", "--schedule", "linear:1"])
