import numpy as np
import pytest

from entsense_app.entangle import SensorPairGeometry
from entsense_app.spin_model import MagneticField, SpinSpecies

NV_AXIS = (1.0, 1.0, 1.0)
FIELD_G = 89.0
# azimuth of the sensor pair chosen so that psi2 suppresses the bath
PAIR_AZIMUTH = 1.9


@pytest.fixture
def electron():
    return SpinSpecies.electron("DS1")


@pytest.fixture
def ds2():
    return SpinSpecies(name="DS2", multiplicity=3, D=296.6, E=300.3)


@pytest.fixture
def nv1():
    return SpinSpecies.nv("NV1", axis=NV_AXIS)


@pytest.fixture
def nv2():
    return SpinSpecies.nv("NV2", axis=NV_AXIS)


@pytest.fixture
def axial_field():
    return MagneticField.along(NV_AXIS, FIELD_G)


@pytest.fixture
def calibrated_geometry(nv1, nv2, axial_field):
    return SensorPairGeometry(
        depth=9.0,
        separation=4.0,
        sensor1=nv1,
        sensor2=nv2,
        field=axial_field,
        azimuth=PAIR_AZIMUTH,
    )


@pytest.fixture
def vertical_geometry():
    """Two identical NVs with vertical axes, 4 nm apart along x, 5 nm deep."""
    field = MagneticField((0.0, 0.0, FIELD_G))
    return SensorPairGeometry(
        depth=5.0,
        separation=4.0,
        sensor1=SpinSpecies.nv("NV1", axis=(0, 0, 1)),
        sensor2=SpinSpecies.nv("NV2", axis=(0, 0, 1)),
        field=field,
    )


def cone_fields(axis, half_angle_deg: float, count: int, magnitude: float = FIELD_G) -> list[MagneticField]:
    """The axis itself plus `count - 1` directions tilted by `half_angle_deg` around it."""
    n = np.asarray(axis, dtype=float)
    n /= np.linalg.norm(n)
    u = np.cross(n, (1.0, 0.0, 0.0) if abs(n[0]) < 0.9 else (0.0, 1.0, 0.0))
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    tilt = np.radians(half_angle_deg)
    fields = [MagneticField.along(n, magnitude)]
    for phi in np.linspace(0, 2 * np.pi, count - 1, endpoint=False):
        direction = np.cos(tilt) * n + np.sin(tilt) * (np.cos(phi) * u + np.sin(phi) * v)
        fields.append(MagneticField.along(direction, magnitude))
    return fields


@pytest.fixture(name="cone_fields")
def cone_fields_fixture():
    return cone_fields
