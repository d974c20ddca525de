import itertools
import math
import warnings

import numpy as np
import pytest

from crossfield.fitting import (
    DegenerateGrid,
    FitConfig,
    fit,
    from_transformed,
    initial_guess,
    model_observations,
    objective,
    to_transformed,
)
from crossfield.geometry import ScenarioGeometry, build_case, build_upa
from crossfield.models import (
    CENTER_WAVELENGTH,
    REFERENCE_PARAMS,
    CrossFieldParams,
    SaturationWarning,
    cross_field_factor,
    cross_field_pl,
    friis_fspl,
)
from crossfield.propagation import synth_ctf
from crossfield.spectral import PathObservations, ctf_to_cir, extract_dominant_path

LAM = CENTER_WAVELENGTH
D0 = 0.86
QUICK = FitConfig(restarts=2, seed=1)


@pytest.fixture(scope="module")
def physical_32():
    scen = build_case(2)
    ctf = synth_ctf(scen)
    return extract_dominant_path(ctf_to_cir(ctf), ctf)


@pytest.fixture(scope="module")
def physical_32_fit(physical_32):
    return fit(physical_32, LAM, D0, QUICK)


def _surface(obs, params):
    upa = obs.geometry.upa
    return cross_field_pl(upa.dx, upa.dz, LAM, D0, params)


def test_objective_self_consistent():
    obs = model_observations(build_case(3), REFERENCE_PARAMS, LAM)
    assert objective(REFERENCE_PARAMS, obs, LAM, D0) < 1e-20


def test_objective_constant_offset():
    obs = model_observations(build_case(2), REFERENCE_PARAMS, LAM)
    shifted = PathObservations(obs.geometry, obs.delay, obs.gain_db - 0.01, obs.phase)
    assert objective(REFERENCE_PARAMS, shifted, LAM, D0) == pytest.approx(1e-4, rel=1e-9)


def test_objective_order_independent(rng):
    scen = build_case(2)
    obs = model_observations(scen, REFERENCE_PARAMS, LAM)
    noisy = obs.gain_db + rng.normal(0, 0.05, obs.gain_db.size)
    base = PathObservations(scen, obs.delay, noisy, obs.phase)
    perm = rng.permutation(scen.upa.n_elements)
    upa = scen.upa.with_offsets(scen.upa.offsets[perm])
    shuffled = PathObservations(ScenarioGeometry(upa, D0), obs.delay[perm], noisy[perm], obs.phase[perm])
    a = objective(REFERENCE_PARAMS, base, LAM, D0)
    b = objective(REFERENCE_PARAMS, shuffled, LAM, D0)
    assert abs(a - b) <= 1e-12 * a


def test_transform_round_trip():
    t = to_transformed(REFERENCE_PARAMS)
    back = from_transformed(t)
    for name in ("d_ref", "c1", "c2", "c3", "c4"):
        assert getattr(back, name) == pytest.approx(getattr(REFERENCE_PARAMS, name), rel=1e-14)


def test_initial_guess_halves_equivalent_distance():
    pl = np.array([80.0, 79.5, 80.2])
    g = initial_guess(pl, LAM, D0)
    assert friis_fspl(2 * g.d_ref, LAM) == pytest.approx(79.5, abs=1e-12)
    assert (g.c1, g.c2, g.c3, g.c4) == (1.33, pytest.approx(1 / D0), 1.0, 1.0)


def test_single_element_is_degenerate():
    scen = ScenarioGeometry(build_upa(1, 1, 1e-3), D0)
    obs = PathObservations(scen, np.array([2.8e-9]), np.array([-80.0]), np.zeros(1))
    with pytest.raises(DegenerateGrid):
        fit(obs, LAM, D0)


def test_coincident_offsets_are_degenerate():
    upa = build_upa(3, 3, 1e-3)
    upa = upa.with_offsets(np.zeros((9, 2)))
    obs = PathObservations(ScenarioGeometry(upa, D0), np.full(9, 2.8e-9), np.full(9, -80.0), np.zeros(9))
    with pytest.raises(DegenerateGrid):
        fit(obs, LAM, D0)


def test_non_finite_observations_rejected():
    obs = model_observations(build_case(1), REFERENCE_PARAMS, LAM)
    gain = obs.gain_db.copy()
    gain[3] = np.nan
    with pytest.raises(ValueError):
        fit(PathObservations(obs.geometry, obs.delay, gain, obs.phase), LAM, D0)


@pytest.mark.parametrize("kwargs", [dict(max_iterations=0), dict(restarts=0), dict(tolerance=0.0), dict(bounds=((0, 1),))])
def test_fit_config_validation(kwargs):
    with pytest.raises(ValueError):
        FitConfig(**kwargs)


def test_self_fit_recovers_surface_on_32x32():
    obs = model_observations(build_case(2), REFERENCE_PARAMS, LAM)
    report = fit(obs, LAM, D0, QUICK)
    assert report.mse < 1e-10
    assert np.max(np.abs(_surface(obs, report.params) - _surface(obs, REFERENCE_PARAMS))) < 0.01
    assert report.converged


def test_report_fields(physical_32, physical_32_fit):
    r = physical_32_fit
    model = _surface(physical_32, r.params)
    np.testing.assert_allclose(r.residual_grid, model - physical_32.path_loss_db, atol=1e-12)
    assert r.mse == pytest.approx(np.mean(r.residual_grid**2), rel=1e-12)
    assert r.mse >= 0
    assert r.mse == min(r.restart_mse)
    assert r.restart_mse[r.best_restart] == r.mse
    # best-so-far across restarts never increases
    best = np.minimum.accumulate(r.restart_mse)
    assert np.all(np.diff(best) <= 0)
    data = r.to_json(D0)
    assert data["canonical_params"]["c2_per_m"] * D0 == pytest.approx(1.0) or r.params.c2 <= 0


def _grid_search_mse(obs):
    """Best MSE over a coarse 5**5 lattice around the initializer."""
    g = initial_guess(obs.path_loss_db, LAM, D0)
    t0 = to_transformed(g)
    axes = [
        t0[0] + np.log([0.5, 0.75, 1.0, 1.5, 2.0]),
        np.log([0.05, 0.15, 0.33, 0.7, 1.5]),
        np.array([-2.0, 0.0, 1.0, 2.0, 4.0]) / D0,
        np.log([0.3, 0.6, 1.0, 1.6, 3.0]),
        np.log([0.3, 0.6, 1.0, 1.6, 3.0]),
    ]
    upa = obs.geometry.upa
    best = math.inf
    for t in itertools.product(*axes):
        p = from_transformed(np.array(t))
        k = 1 + np.exp(math.log(p.c1) * (((upa.dx / p.c3) ** 2 + (upa.dz / p.c4) ** 2) / LAM - p.c2 * D0))
        r = 20 * np.log10(4 * np.pi * p.d_ref * k / LAM) - obs.path_loss_db
        best = min(best, float(np.mean(r**2)))
    return best


def test_physical_fit_beats_grid_search(physical_32, physical_32_fit):
    assert physical_32_fit.mse <= _grid_search_mse(physical_32)
    assert physical_32_fit.mse < 0.01


def test_residuals_small_relative_to_rms(physical_32_fit):
    r = physical_32_fit
    assert np.max(np.abs(r.residual_grid)) < 10 * math.sqrt(r.mse)


def test_fit_is_reproducible(physical_32, physical_32_fit):
    again = fit(physical_32, LAM, D0, QUICK)
    assert again.params == physical_32_fit.params
    assert again.mse == physical_32_fit.mse
    np.testing.assert_array_equal(again.residual_grid, physical_32_fit.residual_grid)


def test_gain_shift_moves_surface_by_same_amount(physical_32, physical_32_fit):
    s = 1.5
    shifted = PathObservations(physical_32.geometry, physical_32.delay, physical_32.gain_db + s, physical_32.phase)
    r = fit(shifted, LAM, D0, QUICK)
    a = _surface(physical_32, physical_32_fit.params)
    b = _surface(physical_32, r.params)
    # PL shifts by -s, i.e. d_ref * K scales by 10**(-s/20) pointwise
    np.testing.assert_allclose(b, a - s, atol=2e-3)


def test_far_field_grid_fits_flat_surface():
    scen = build_case(1)
    ctf = synth_ctf(scen)
    obs = extract_dominant_path(ctf_to_cir(ctf), ctf)
    r = fit(obs, LAM, D0, QUICK)
    model = _surface(obs, r.params)
    friis = friis_fspl(scen.distances(), LAM)
    assert np.max(np.abs(model - friis)) < 0.05
    assert np.ptp(model) < 0.05


def test_objective_warns_on_saturation():
    scen = ScenarioGeometry(build_upa(5, 5, 0.05), D0)
    obs = model_observations(scen, REFERENCE_PARAMS, LAM)
    tight = CrossFieldParams(0.4, 1.3, 1.0, 0.01, 0.01)
    with pytest.warns(SaturationWarning):
        value = objective(tight, obs, LAM, D0)
    assert math.isfinite(value)


def test_saturation_flag_matches_final_params():
    scen = ScenarioGeometry(build_upa(5, 5, 0.05), D0)
    obs = model_observations(scen, REFERENCE_PARAMS, LAM)
    r = fit(obs, LAM, D0, FitConfig(restarts=2, max_iterations=200, polish_rounds=1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        _, sat = cross_field_factor(scen.upa.dx, scen.upa.dz, LAM, D0, r.params, return_saturation=True)
    assert r.saturated == bool(np.any(sat))
