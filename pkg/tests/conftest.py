import os
import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", module="numba")

from rigidreg3d import synthetic  # noqa: E402


def small_spec(seed=1, **kw):
    """Phantom small enough for sub-second generation and a few-second registration."""
    base = dict(
        dims=(80, 72, 48),
        outer_radii=(14.0, 12.0),
        inner_ratio=0.3,
        lacuna_radii=(2.0, 2.5),
        n_lacunae=10,
        n_canals=2,
        canal_length=(10.0, 20.0),
        bend=3.0,
        max_translation=6.0,
        seed=seed,
    )
    base.update(kw)
    return synthetic.PhantomSpec(**base)


@pytest.fixture(scope="session")
def small_phantom():
    return synthetic.generate_phantom(small_spec())


@pytest.fixture(scope="session")
def noiseless_phantom():
    """Full-size phantom with identity ground truth and no noise."""
    return synthetic.generate_phantom(synthetic.PhantomSpec(seed=11, noise_sigma=0.0), gt=np.eye(4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rigid(rng, max_angle=180.0, max_shift=50.0):
    from rigidreg3d import transform as tf

    axis = rng.normal(size=3)
    T = tf.axis_angle(axis, rng.uniform(-max_angle, max_angle))
    T[:3, 3] = rng.uniform(-max_shift, max_shift, 3)
    return T


def numba_enabled():
    from rigidreg3d._accel import NUMBA_AVAILABLE

    return NUMBA_AVAILABLE and not os.environ.get("RIGIDREG3D_DISABLE_NUMBA")


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number, name, passed, detail):
    ACCEPTANCE[number] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {name:<28s} {'PASS' if ok else 'FAIL'}  {detail}")
