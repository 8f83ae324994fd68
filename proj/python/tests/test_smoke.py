import math

import numpy as np
import pytest

import panelfilter as pf


def test_version():
    assert pf.__version__ == pf.version()


def test_kalman_iid_case():
    # a = 0 with no process noise: y_n iid N(b, r_obs)
    y = np.array([0.3, -0.2, 1.1])
    got = pf.kalman_loglik(y, a=0.0, b=0.2, q=0.0, r_obs=0.5)
    want = sum(-0.5 * math.log(2 * math.pi * 0.5) - (v - 0.2) ** 2 / (2 * 0.5) for v in y)
    assert got == pytest.approx(want, abs=1e-12)


def test_gompertz_panel_loglik_near_exact():
    y = pf.simulate_gompertz(3, 30, seed=5)
    assert y.shape == (3, 30)
    assert (y > 0).all()
    res = pf.gompertz_panel_loglik(y, n_particles=2000, n_reps=3, seed=1)
    assert len(res["unit_loglik"]) == 3
    assert abs(res["loglik"] - res["exact"]) < 1.5


def test_simulation_is_seeded():
    a = pf.simulate_gompertz(2, 10, seed=9)
    b = pf.simulate_gompertz(2, 10, seed=9)
    assert np.array_equal(a, b)


def test_systematic_resample_equal_weights():
    assert pf.systematic_resample(np.ones(5), 0.3) == [0, 1, 2, 3, 4]


def test_eulermultinom_bounds():
    a, b = pf.eulermultinom(100, 0.5, 0.5, 1.0, seed=3)
    assert 0 <= a and 0 <= b and a + b <= 100
    with pytest.raises(ValueError):
        pf.eulermultinom(-1, 0.5, 0.5, 1.0)


def test_gaussian_cloning_perturbed_reaches_mle():
    res = pf.gaussian_cloning(2, 0.3, 2000, mode="perturbed")
    assert res["condition_holds"]
    assert res["distance"] < 1e-6


def test_cli_validate_reports_config_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("preset = gompertz-bench\nJ = -3\n")
    code, _, err = pf.run("validate", str(cfg))
    assert code == 2
    assert "seed" in err
