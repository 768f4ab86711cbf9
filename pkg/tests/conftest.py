import functools

import pytest

from slipstokes.geometry import DomainSpec, generate_mesh
from slipstokes.spaces import assemble

DISK = DomainSpec.disk(1.0)
ELLIPSE = DomainSpec.ellipse(2.0, 1.0)


@functools.lru_cache(maxsize=None)
def mesh(spec, h):
    return generate_mesh(spec, h)


@functools.lru_cache(maxsize=None)
def _bundle(spec, h):
    return assemble(mesh(spec, h))


def bundle(spec, h, alpha=0.0, beta=1.0):
    """Assembled bundle, cached per mesh; parameters are attached without reassembly."""
    return _bundle(spec, h).with_params(alpha, beta)


@pytest.fixture(scope="session")
def disk_coarse():
    return bundle(DISK, 0.4, 1.0, 1.0)


@pytest.fixture(scope="session")
def disk_mid():
    return bundle(DISK, 0.2, 1.0, 1.0)


@pytest.fixture(scope="session")
def disk_fine():
    return bundle(DISK, 0.1, 1.0, 1.0)


@pytest.fixture(scope="session")
def ellipse_coarse():
    return bundle(ELLIPSE, 0.5, 1.0, 1.0)


@pytest.fixture(scope="session")
def ellipse_mid():
    return bundle(ELLIPSE, 0.2, 1.0, 1.0)
