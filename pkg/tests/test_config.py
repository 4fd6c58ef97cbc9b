import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qoe_incentive.config import (
    DEFAULT_CALIBRATION,
    K_LOOKUP,
    GeneratorRanges,
    calibration_from_dict,
    dump_scenario,
    load_scenario,
    parse_quantity,
    scenario_from_dict,
    scenario_to_dict,
)
from qoe_incentive.harness import generate_scenario
from qoe_incentive.model import DomainError


class TestUnits:
    @pytest.mark.parametrize("text,kind,want", [
        ("500ms", "time", 0.5), ("1.5s", "time", 1.5), ("30TFLOPS", "compute", 30e12),
        ("200MHz", "frequency", 200e6), ("2.5 GHz", "frequency", 2.5e9), ("20dB", "snr", 100.0),
        ("3e2ms", "time", 0.3), (0.25, "time", 0.25), ("7", "snr", 7.0),
    ])
    def test_parse(self, text, kind, want):
        assert parse_quantity(text, kind) == pytest.approx(want, rel=1e-15)

    @pytest.mark.parametrize("text,kind", [("500MHz", "time"), ("fast", "time"), ("20dBm", "snr"), (True, "time")])
    def test_reject(self, text, kind):
        with pytest.raises(DomainError):
            parse_quantity(text, kind)


class TestCalibration:
    def test_lookup_pairs_are_fixed_points(self):
        for theta, k in K_LOOKUP.items():
            assert DEFAULT_CALIBRATION.k_for_theta(theta) == k
            assert DEFAULT_CALIBRATION.theta_for_k(k) == pytest.approx(theta, rel=1e-12)

    def test_overrides(self):
        cal = calibration_from_dict({"mu": 5})
        assert cal.mu == 5.0 and cal.xi == DEFAULT_CALIBRATION.xi
        with pytest.raises(DomainError):
            calibration_from_dict({"nope": 1})


class TestRanges:
    def test_validation(self):
        with pytest.raises(DomainError):
            GeneratorRanges(tokens=(0, 10))
        with pytest.raises(DomainError):
            GeneratorRanges(kappa=(1.5, 0.3))
        with pytest.raises(DomainError):
            GeneratorRanges(k_values=())

    def test_contains(self):
        r = GeneratorRanges()
        assert r.contains("kappa", 0.9) and not r.contains("kappa", 2.0)
        assert r.contains("theta_hat", 1e-7) and not r.contains("theta_hat", 0.5)


class TestScenarioFiles:
    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
    def test_round_trip(self, seed, n, m):
        s = generate_scenario(seed, n, m)
        back = scenario_from_dict(scenario_to_dict(s))
        assert back.shape == s.shape and back.seed == s.seed and back.name == s.name
        for attr in ("kappa", "f_max", "b_max", "snr", "x_in", "x_out", "theta_hat"):
            assert np.allclose(getattr(back, attr), getattr(s, attr), rtol=1e-14, atol=0)

    def test_file_round_trip(self, tmp_path):
        s = generate_scenario(5, 2, 3)
        path = dump_scenario(s, tmp_path / "s.toml")
        text = path.read_text()
        assert "TFLOPS" in text and "MHz" in text and "dB" in text and "ms" in text
        back = load_scenario(path)
        assert np.allclose(back.compute_load, s.compute_load, rtol=1e-13)

    def test_missing_pair(self):
        doc = scenario_to_dict(generate_scenario(1, 1, 2))
        doc["demand"].pop()
        with pytest.raises(DomainError, match="lacks demands"):
            scenario_from_dict(doc)

    def test_k_instead_of_theta(self):
        doc = scenario_to_dict(generate_scenario(1, 1, 1))
        del doc["demand"][0]["theta_hat"]
        doc["demand"][0]["k"] = 6
        assert scenario_from_dict(doc).theta_hat[0, 0] == pytest.approx(1e-7)

    def test_bad_file(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("asp = [[[")
        with pytest.raises(DomainError):
            load_scenario(p)


def test_cost_constants_default_to_calibration(tmp_path):
    p = tmp_path / "hand.toml"
    p.write_text(
        '[[asp]]\nkappa = "500ms"\nf_max = "10TFLOPS"\nb_max = "200MHz"\n'
        '[[mu]]\nr_max = 0.5\n'
        '[[demand]]\nasp = 0\nmu = 0\nk = 6\nx_in = 2000\nx_out = 200\nsnr = "20dB"\n'
    )
    s = load_scenario(p)
    assert s.c_f[0] == DEFAULT_CALIBRATION.c_f and s.mu[0] == DEFAULT_CALIBRATION.mu
    assert s.r_max[0] == 0.5 and s.kappa[0] == 0.5
