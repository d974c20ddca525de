import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from crossfield.geometry import ScenarioGeometry, build_case, build_upa
from crossfield.models import (
    CENTER_WAVELENGTH,
    REFERENCE_PARAMS,
    CrossFieldParams,
    SaturationWarning,
    classify_region,
    cross_field_factor,
    cross_field_pl,
    friis_fspl,
    max_phase_error,
    rayleigh_distance,
)

LAM = CENTER_WAVELENGTH

params_st = st.builds(
    CrossFieldParams,
    d_ref=st.floats(0.05, 2.0),
    c1=st.floats(1.01, 5.0),
    c2=st.floats(-5.0, 5.0),
    c3=st.floats(0.1, 5.0),
    c4=st.floats(0.1, 5.0),
)


def _mp_k(dx, dz, lam, d0, p):
    mpmath.mp.dps = 50
    mpf = mpmath.mpf
    e = ((mpf(dx) / mpf(p.c3)) ** 2 + (mpf(dz) / mpf(p.c4)) ** 2) / mpf(lam) - mpf(p.c2) * mpf(d0)
    return 1 + mpf(p.c1) ** e


# -- Friis


@pytest.mark.parametrize("d, lam, expected, tol", [(0.86, 1e-3, 80.6742, 1e-4), (0.8603, 1e-3, 80.6772, 1e-4)])
def test_friis_measured_range(d, lam, expected, tol):
    assert friis_fspl(d, lam) == pytest.approx(expected, abs=tol)


def test_friis_unit_distance():
    lam = 1e-3
    assert friis_fspl(lam / (4 * math.pi), lam) == pytest.approx(0.0, abs=1e-12)


def test_friis_center_equivalent_distance():
    assert friis_fspl(0.7829, LAM) == pytest.approx(79.56, abs=0.02)


@pytest.mark.parametrize("d, lam", [(0.0, 1e-3), (-1.0, 1e-3), (1.0, 0.0), (math.nan, 1e-3)])
def test_friis_rejects_non_positive(d, lam):
    with pytest.raises(ValueError):
        friis_fspl(d, lam)


# -- Rayleigh distance and phase error


@pytest.mark.parametrize("aperture, expected", [(0.044548, 3.839), (0.0106066, 0.2177), (0.02192, 0.9296)])
def test_rayleigh_distance(aperture, expected):
    assert rayleigh_distance(aperture, LAM, 0.0) == pytest.approx(expected, abs=6e-4)


def test_rayleigh_distance_vanishes_at_grazing():
    assert rayleigh_distance(0.05, LAM, math.pi / 2) == 0.0


def test_rayleigh_distance_angle_dependence():
    r0 = rayleigh_distance(0.05, LAM, 0.0)
    assert rayleigh_distance(0.05, LAM, math.pi / 3) == pytest.approx(r0 / 4)


def _corner_phase(scenario, lam):
    # oracle: exact corner excess path, independent of any fitting
    mpmath.mp.dps = 40
    hx = mpmath.mpf(scenario.upa.side_x) / 2
    hz = mpmath.mpf(scenario.upa.side_z) / 2
    d0 = mpmath.mpf(scenario.d0)
    return float(2 * mpmath.pi / lam * (mpmath.sqrt(d0**2 + hx**2 + hz**2) - d0))


@pytest.mark.parametrize("case, expected, tol", [(1, 0.099, 0.005), (2, 0.424, 0.02), (3, 1.75, 0.02)])
def test_max_phase_error_cases(case, expected, tol):
    s = build_case(case)
    e = max_phase_error(s, LAM)
    assert e == pytest.approx(expected, abs=tol)
    assert e == pytest.approx(_corner_phase(s, LAM), rel=1e-9)


def test_max_phase_error_far_field_limit():
    assert max_phase_error(ScenarioGeometry(build_case(1).upa, 1e6), LAM) < 1e-6
    # 64x64 at 1e6 m is still 1.5e-6 rad: r_corner**2 / (2 d0) * 2 pi / lambda
    big = max_phase_error(ScenarioGeometry(build_case(3).upa, 1e6), LAM)
    assert big == pytest.approx(2 * math.pi / LAM * 0.0222738636**2 / 2e6, rel=1e-6)
    assert max_phase_error(ScenarioGeometry(build_case(3).upa, 1e7), LAM) < 1e-6


def test_max_phase_error_at_rayleigh_distance_is_pi_over_8():
    upa = build_upa(64, 64, 0.5e-3)
    r = rayleigh_distance(upa.aperture, LAM)
    e = max_phase_error(ScenarioGeometry(upa, r), LAM)
    assert e == pytest.approx(math.pi / 8, rel=0.05)


def test_max_phase_error_removes_linear_tilt():
    # off broadside the phase gains a linear ramp that a planar wavefront carries
    upa = build_case(1).upa
    tilted = ScenarioGeometry(upa, 0.86, 0.4)
    assert max_phase_error(tilted, LAM) < 0.2


@pytest.mark.parametrize("case, region", [(1, "FF"), (2, "Boundary"), (3, "NF")])
def test_classify_region_matches_deployment_table(case, region):
    a = classify_region(build_case(case), LAM, 0.15)
    assert a.region == region
    assert a.max_phase_error >= 0


def test_classify_region_zero_band_is_sharp():
    s = build_case(2)  # R = 0.9296 m
    assert classify_region(s, LAM, 0.0).region == "NF"
    assert classify_region(ScenarioGeometry(s.upa, 0.93), LAM, 0.0).region == "FF"


# -- cross-field model


def test_center_factor_and_equivalent_distance():
    k = cross_field_factor(0.0, 0.0, LAM, 0.86, REFERENCE_PARAMS)
    assert k == pytest.approx(1.7558, abs=1e-4)
    assert REFERENCE_PARAMS.d_ref * k == pytest.approx(0.7829, abs=5e-4)


def test_corner_factor_against_high_precision():
    k = cross_field_factor(0.01575, 0.01575, LAM, 0.86, REFERENCE_PARAMS)
    assert k == pytest.approx(1.8621, abs=1e-3)
    assert k == pytest.approx(float(_mp_k(0.01575, 0.01575, LAM, 0.86, REFERENCE_PARAMS)), rel=1e-13)


@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(0.1, 3.0), params_st)
def test_factor_matches_high_precision(dx, dz, d0, p):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        k, sat = cross_field_factor(dx, dz, LAM, d0, p, return_saturation=True)
    assume(not sat)
    assert k == pytest.approx(float(_mp_k(dx, dz, LAM, d0, p)), rel=1e-10)
    assert k > 1


def test_factor_tends_to_one_for_large_c2_d0():
    p = CrossFieldParams(0.4459, 1.3295, 1e4, 0.8885, 1.2318)
    assert cross_field_factor(0.0, 0.0, LAM, 1.0, p) == pytest.approx(1.0, abs=1e-300)


def test_pl_center_and_corner():
    assert cross_field_pl(0.0, 0.0, LAM, 0.86, REFERENCE_PARAMS) == pytest.approx(79.56, abs=0.02)
    assert cross_field_pl(0.01575, 0.01575, LAM, 0.86, REFERENCE_PARAMS) == pytest.approx(80.08, abs=0.1)


def test_pl_equals_friis_at_equivalent_distance():
    k = cross_field_factor(0.01, -0.004, LAM, 0.86, REFERENCE_PARAMS)
    pl = cross_field_pl(0.01, -0.004, LAM, 0.86, REFERENCE_PARAMS)
    assert pl == pytest.approx(friis_fspl(REFERENCE_PARAMS.d_ref * k, LAM), abs=1e-12)


def test_pl_limit_c1_to_one():
    p = CrossFieldParams(0.4459, 1.0 + 1e-12, 1.1433, 0.8885, 1.2318)
    pl = cross_field_pl(0.01, 0.01, LAM, 0.86, p)
    assert pl == pytest.approx(friis_fspl(2 * p.d_ref, LAM), abs=1e-9)


def test_saturation_is_flagged_not_silent():
    p = CrossFieldParams(0.4459, 1.3295, 0.0, 1e-3, 1e-3)
    with pytest.warns(SaturationWarning):
        k, sat = cross_field_factor(0.05, 0.05, LAM, 0.86, p, return_saturation=True)
    assert sat and math.isfinite(k)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, sat = cross_field_factor(0.0, 0.0, LAM, 0.86, REFERENCE_PARAMS, return_saturation=True)
    assert not sat


@given(params_st, st.floats(0.0, 0.03), st.floats(0.0, 0.03), st.floats(1e-4, 1e-2))
def test_factor_monotone_in_offsets(p, x, z, step):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        k, sat = cross_field_factor(np.array([x, x + step, x]), np.array([z, z, z + step]), LAM, 0.86, p,
                                    return_saturation=True)
    assume(not sat.any())
    # strict in exact arithmetic; allow ties where c1**p underflows or 1 + tiny rounds to 1
    assert k[1] >= k[0] and k[2] >= k[0]


@given(params_st, st.floats(0.1, 2.0), st.floats(1e-3, 1.0))
def test_factor_decreasing_in_d0_for_positive_c2(p, d0, step):
    assume(p.c2 > 0)
    k1 = cross_field_factor(0.01, 0.01, LAM, d0, p)
    k2 = cross_field_factor(0.01, 0.01, LAM, d0 + step, p)
    assert k2 <= k1


def test_center_has_least_model_loss():
    s = build_case(3)
    pl = cross_field_pl(s.upa.dx, s.upa.dz, LAM, 0.86, REFERENCE_PARAMS)
    center = cross_field_pl(0.0, 0.0, LAM, 0.86, REFERENCE_PARAMS)
    assert np.all(pl > center)


def test_elliptic_level_sets_and_faster_growth_along_x():
    p = REFERENCE_PARAMS
    t = np.linspace(0, 2 * np.pi, 50)
    r = 0.01
    pl = cross_field_pl(r * p.c3 * np.cos(t), r * p.c4 * np.sin(t), LAM, 0.86, p)
    assert np.ptp(pl) < 1e-12
    assert cross_field_pl(0.01, 0.0, LAM, 0.86, p) > cross_field_pl(0.0, 0.01, LAM, 0.86, p)


@settings(max_examples=200)
@given(params_st, st.floats(0.2, 5.0), st.floats(-0.03, 0.03), st.floats(-0.03, 0.03))
def test_gauge_degeneracy(p, s, dx, dz):
    q = p.rescaled(s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        a, sa = cross_field_factor(dx, dz, LAM, 0.86, p, return_saturation=True)
        b, sb = cross_field_factor(dx, dz, LAM, 0.86, q, return_saturation=True)
    assume(not (sa or sb))
    assert b == pytest.approx(a, rel=1e-10)


def test_canonical_form():
    c = REFERENCE_PARAMS.canonical(0.86)
    assert c.c2 * 0.86 == pytest.approx(1.0)
    s = build_case(3)
    a = cross_field_pl(s.upa.dx, s.upa.dz, LAM, 0.86, REFERENCE_PARAMS)
    b = cross_field_pl(s.upa.dx, s.upa.dz, LAM, 0.86, c)
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize(
    "kwargs",
    [dict(d_ref=0.0), dict(c1=1.0), dict(c1=0.5), dict(c3=0.0), dict(c4=-1.0), dict(c2=math.inf)],
)
def test_params_validation(kwargs):
    base = dict(d_ref=0.4, c1=1.3, c2=1.1, c3=0.9, c4=1.2)
    base.update(kwargs)
    with pytest.raises(ValueError):
        CrossFieldParams(**base)


def test_params_json_round_trip():
    data = REFERENCE_PARAMS.to_json()
    assert set(data) == {"d_ref_m", "c1", "c2_per_m", "c3", "c4"}
    assert CrossFieldParams.from_json(data) == REFERENCE_PARAMS
