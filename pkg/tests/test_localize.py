import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.stats import chi2

from entsense_app.dipolar import DIPOLE_PREFACTOR, TransitionPair
from entsense_app.errors import DegenerateGeometry, InsufficientData, InvalidInput
from entsense_app.localize import (
    CouplingMeasurement,
    LocalizationResult,
    SearchRegion,
    forward_couplings,
    localize,
    mahalanobis_squared,
    uncertainty_ellipsoid,
)
from entsense_app.spin_model import MagneticField

from tests.conftest import NV_AXIS, cone_fields

SQ = TransitionPair((0, 1), (0, 1))
UPPER_HALF = SearchRegion((-5.0, -5.0, 0.5), (5.0, 5.0, 9.0))


def _measurements(fields, sensor, target, position, transitions=SQ, sigma=0.01, sensor_position=(0.0, 0.0, 0.0)):
    templates = [CouplingMeasurement(f, transitions, 0.0, sigma) for f in fields]
    values = forward_couplings(position, templates, sensor, target, sensor_position)
    return [CouplingMeasurement(f, transitions, float(v), sigma) for f, v in zip(fields, values)]


def _z_fields(count=3):
    return [MagneticField((0.0, 0.0, 89.0))] * count


def test_axial_coupling_of_two_electrons(electron):
    values = forward_couplings((0.0, 0.0, 2.0), _measurements(_z_fields(1), electron, electron, (1, 0, 0)), electron, electron)
    assert values[0] == pytest.approx(-2 * DIPOLE_PREFACTOR / 8.0, rel=1e-12)


def test_forward_model_scaling_and_covariance(electron):
    fields = cone_fields((0, 0, 1), 40.0, 5)
    templates = _measurements(fields, electron, electron, (1, 0, 0))
    point = np.array([0.7, -1.2, 2.5])
    near = forward_couplings(point, templates, electron, electron)
    np.testing.assert_allclose(forward_couplings(2 * point, templates, electron, electron), near / 8, rtol=1e-12)

    shift = np.array([3.0, -2.0, 1.5])
    shifted = forward_couplings(point + shift, templates, electron, electron, sensor_position=shift)
    np.testing.assert_allclose(shifted, near, rtol=1e-12)

    rotation = Rotation.from_euler("zyx", [0.4, -1.1, 2.3])
    rotated_templates = [
        CouplingMeasurement(MagneticField(tuple(rotation.apply(m.field.vector))), m.transitions, 0.0, m.sigma)
        for m in templates
    ]
    rotated = forward_couplings(rotation.apply(point), rotated_templates, electron, electron)
    np.testing.assert_allclose(rotated, near, rtol=1e-9, atol=1e-12)


def test_candidate_on_the_sensor_is_rejected(electron):
    templates = _measurements(_z_fields(1), electron, electron, (1, 0, 0))
    with pytest.raises(DegenerateGeometry):
        forward_couplings((0.0, 0.0, 0.01), templates, electron, electron)


def test_single_orientation_is_insufficient(nv1, electron):
    fields = _z_fields(2) + [MagneticField((0.0, 0.0, -89.0))]
    measurements = _measurements(fields, nv1, electron, (1.0, 1.0, 4.0))
    with pytest.raises(InsufficientData):
        localize(measurements, nv1, electron, UPPER_HALF)
    with pytest.raises(InsufficientData):
        localize(measurements[:2], nv1, electron, UPPER_HALF)


def _inside(region: SearchRegion, point) -> bool:
    return bool(np.all(np.asarray(region.lower) <= point) and np.all(point <= np.asarray(region.upper)))


def test_noiseless_round_trip(nv1, electron):
    truth = np.array([1.3, -2.1, 4.4])
    measurements = _measurements(cone_fields(NV_AXIS, 30.0, 6), nv1, electron, truth)
    result = localize(measurements, nv1, electron, UPPER_HALF)
    assert np.linalg.norm(result.position - truth) <= 1e-3
    assert result.residual < 1e-6
    assert result.rank == 3
    assert result.candidates[0].chi2 == pytest.approx(result.residual)
    assert all(_inside(UPPER_HALF, c.position) for c in result.candidates)
    payload = result.to_dict()
    assert set(payload) == {"position_nm", "covariance_nm2", "residual_chi2", "rank", "candidates"}


def test_refinement_stays_in_the_search_box(nv1, electron):
    truth = np.array([1.3, -2.1, 0.8])
    measurements = _measurements(cone_fields(NV_AXIS, 30.0, 6), nv1, electron, truth)
    # the mirror image at -truth lies below the floor of the box
    region = SearchRegion((-5.0, -5.0, 0.6), (5.0, 5.0, 4.0))
    result = localize(measurements, nv1, electron, region)
    assert _inside(region, result.position)
    assert all(_inside(region, c.position) for c in result.candidates)
    assert np.linalg.norm(result.position - truth) <= 1e-3


def test_mirror_tie_is_resolved_the_same_way_every_time(nv1, electron):
    truth = np.array([1.3, -2.1, 4.4])
    measurements = _measurements(cone_fields(NV_AXIS, 30.0, 6), nv1, electron, truth)
    first = localize(measurements, nv1, electron)
    second = localize(measurements, nv1, electron)
    np.testing.assert_array_equal(first.position, second.position)
    np.testing.assert_array_equal(first.candidates[0].position, first.position)


def test_search_region_validation():
    with pytest.raises(InvalidInput):
        SearchRegion((0.0, 0.0, 1.0), (1.0, 1.0, 1.0))
    with pytest.raises(InvalidInput):
        SearchRegion((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), pitch=0.0)


def test_full_cube_reports_the_inverted_candidate(nv1, electron):
    truth = np.array([1.3, -2.1, 4.4])
    measurements = _measurements(cone_fields(NV_AXIS, 30.0, 6), nv1, electron, truth)
    result = localize(measurements, nv1, electron)
    positions = [c.position for c in result.candidates]
    assert len(positions) >= 2
    assert min(np.linalg.norm(p - truth) for p in positions) <= 1e-3
    assert min(np.linalg.norm(p + truth) for p in positions) <= 1e-3


def test_two_dark_spins_are_resolved(nv1, electron, ds2):
    fields = cone_fields(NV_AXIS, 30.0, 6)
    first, second = np.array([1.0, 1.0, 5.0]), np.array([4.0, 1.0, 5.0])
    region = SearchRegion((-6.0, -6.0, 0.5), (8.0, 8.0, 9.0))
    found_first = localize(_measurements(fields, nv1, electron, first), nv1, electron, region)
    ds2_pair = TransitionPair((0, 1), (0, 2))
    template = _measurements(fields, nv1, ds2, second, transitions=ds2_pair)
    sigma = 1e-3 * max(abs(m.A_measured) for m in template)
    found_second = localize(_measurements(fields, nv1, ds2, second, ds2_pair, sigma), nv1, ds2, region)
    assert np.linalg.norm(found_second.position - found_first.position) == pytest.approx(3.0, abs=2e-3)


def test_isotropic_ellipsoid():
    result = LocalizationResult(position=np.zeros(3), covariance=0.04 * np.eye(3), residual=0.0)
    ellipsoid = uncertainty_ellipsoid(result)
    expected = 0.2 * np.sqrt(chi2.ppf(0.6827, 3))
    np.testing.assert_allclose(ellipsoid.semi_axes, expected, rtol=1e-12)
    assert not ellipsoid.degenerate.any()
    assert mahalanobis_squared(result, (0.2, 0.0, 0.0)) == pytest.approx(1.0)


def test_rank_deficient_ellipsoid():
    result = LocalizationResult(
        position=np.zeros(3), covariance=np.diag([0.04, 0.01, 0.0]), residual=0.0, rank=2
    )
    ellipsoid = uncertainty_ellipsoid(result, confidence=0.9)
    assert ellipsoid.degenerate.tolist() == [True, False, False]
    assert np.isinf(ellipsoid.semi_axes[0])
    np.testing.assert_allclose(np.abs(ellipsoid.axes[0]), [0.0, 0.0, 1.0], atol=1e-12)
    with pytest.raises(InvalidInput):
        uncertainty_ellipsoid(result, confidence=1.0)


def test_measurement_validation():
    with pytest.raises(InvalidInput):
        CouplingMeasurement(MagneticField((0, 0, 89.0)), SQ, 0.1, 0.0)
    with pytest.raises(InvalidInput):
        CouplingMeasurement(MagneticField((0, 0, 89.0)), SQ, float("nan"), 0.01)


@pytest.mark.slow
def test_noisy_estimates_are_covered_by_their_covariance(nv1, electron):
    truth = np.array([3.0, -4.0, 10.0])
    fields = cone_fields(NV_AXIS, 30.0, 6)
    region = SearchRegion.cube(truth, half_width=2.5)
    unit = localize(_measurements(fields, nv1, electron, truth, sigma=1.0), nv1, electron, region)
    # scale the noise so the widest 1-sigma axis is 0.3 nm
    sigma = 0.3 / np.sqrt(np.max(np.linalg.eigvalsh(unit.covariance)))
    exact = _measurements(fields, nv1, electron, truth, sigma=sigma)
    bound = chi2.ppf(0.9973, 3)
    rng = np.random.default_rng(2024)
    inside = 0
    trials = 500
    for _ in range(trials):
        noisy = [
            CouplingMeasurement(m.field, m.transitions, m.A_measured + sigma * rng.standard_normal(), sigma)
            for m in exact
        ]
        result = localize(noisy, nv1, electron, region)
        inside += mahalanobis_squared(result, truth) <= bound
    assert inside >= 0.99 * trials
