import numpy as np
import pytest

from eltomo import CtSimSpec, GridSpec, make_ct_dataset
from eltomo.projector import build_projector


@pytest.fixture(scope="session")
def small_ct():
    """Small dual-grid CT dataset plus its reconstruction projector."""
    spec = CtSimSpec(fine_grid=GridSpec(64, 64), recon_grid=GridSpec(32, 32),
                     n_angles=30, seed=7)
    ds = make_ct_dataset(spec)
    return ds, build_projector(ds.recon_projector)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
