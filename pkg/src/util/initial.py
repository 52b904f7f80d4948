"""
Initial cell densities.
"""

import numpy as np

from util.config import InitConfig
from util.errors import ConfigError
from util.grid import CellField, Mesh, cell_centers, integrate


def _bump(centers: np.ndarray, center: tuple[float, ...], width: float) -> np.ndarray:
    r2 = np.sum((centers - np.asarray(center)) ** 2, axis=1)
    return np.exp(-r2 / (2 * width**2))


def constant(mesh: Mesh, init: InitConfig) -> np.ndarray:
    return np.full(mesh.ncells, init.baseline)


def gaussian_bump(mesh: Mesh, init: InitConfig) -> np.ndarray:
    centers = cell_centers(mesh)
    return init.baseline + init.amplitude * _bump(centers, init.center, init.width)


def two_bumps(mesh: Mesh, init: InitConfig) -> np.ndarray:
    centers = cell_centers(mesh)
    return (
        init.baseline
        + init.amplitude * _bump(centers, init.center, init.width)
        + init.amplitude * _bump(centers, init.center2, init.width)
    )


profiles = {
    "constant": constant,
    "gaussian-bump": gaussian_bump,
    "two-bumps": two_bumps,
}
"""
Initial profile name -> cell values.
"""


def initial_density(mesh: Mesh, init: InitConfig) -> CellField:
    """
    Sample the configured profile at cell centers, rescaled to init.mass
    when one is given.

    Args:
        mesh: The mesh.
        init: The [init] section.
    """
    if init.profile not in profiles:
        raise ConfigError(f"unknown init profile '{init.profile}'")
    n0 = CellField(mesh, profiles[init.profile](mesh, init))
    if init.mass is not None:
        n0 = CellField(mesh, n0.values * (init.mass / integrate(n0)))
    return n0
