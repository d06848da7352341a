import numpy as np
import pytest

import dbar
from dbar.grid import Field


def smooth_bump(z, center=0.0, rho=0.7):
    s = np.abs(z - center) ** 2 / rho**2
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


def seeded_smooth_field(grid, seed, rho=0.7, center=0.0):
    """Compactly supported smooth field with seeded polynomial factor."""
    rng = np.random.default_rng(seed)
    z = grid.coords()[0]
    c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    vals = smooth_bump(z, center, rho) * (
        c[0] + c[1] * z + c[2] * np.conj(z) + c[3] * z * np.conj(z)
    )
    return Field(grid, vals)


@pytest.fixture(scope="session")
def unit_disc_128():
    return dbar.disc_grid(0, 1.0, 128)


@pytest.fixture(scope="session")
def unit_disc_192():
    return dbar.disc_grid(0, 1.0, 192)
