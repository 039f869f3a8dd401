"""Shared test fixtures."""
import numpy as np
import pytest

from src import pipeline
from src.bogovskii import StarDomain
from src.field_core import Box, make_grid
from src.models import RunConfig
from src.pressure_law import PressureLaw
from src.subsolution_builder import ChiProfile, trivial_subsolution


@pytest.fixture(scope="session")
def grid64():
    return make_grid(Box.cube(1.25), 64)


@pytest.fixture(scope="session")
def grid128():
    return make_grid(Box.cube(1.25), 128)


@pytest.fixture(scope="session")
def grid256():
    return make_grid(Box.cube(1.25), 256)


@pytest.fixture
def trivial_sub(grid64):
    """ρ₀ ≡ 1, m ≡ 0, Ũ ≡ 0 with a constant χ = 1 on 33 samples of [0, 1]."""
    return trivial_subsolution(
        grid64, PressureLaw.gamma_law(1.0, 2.0), 1.0, StarDomain(0.8),
        np.linspace(0.0, 1.0, 33), chi=ChiProfile.constant(1.0).with_validity(1.0, 1.0),
    )


def coarse_config(out_dir, **overrides) -> RunConfig:
    """64² run with quadrature settings and tolerances matched to that grid."""
    values = dict(
        grid_dims=64,
        bogovskii_angles=128,
        bogovskii_ray_nodes=48,
        quadrature_tol=5e-2,
        support_tol=1e-2,
        admissibility_tol=1e-8,
        out_dir=str(out_dir),
    )
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture(scope="session")
def built(tmp_path_factory):
    """A full build of the default plateau bump on the coarse grid."""
    config = coarse_config(tmp_path_factory.mktemp("build"))
    return pipeline.run_build(config)


@pytest.fixture
def trivial_config(tmp_path):
    return coarse_config(tmp_path / "trivial", bump_amplitude=0.0)
