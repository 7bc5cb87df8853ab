import datetime as dt

import numpy as np
import pytest

from burnscan.geo import Polygon, RasterGrid
from burnscan.synthetic import SyntheticSceneSpec, generate_synthetic_scene

CRS = "EPSG:32636"


def random_star(rng, grid: RasterGrid, lattice=None, with_hole=False, attributes=None):
    """Random star-shaped polygon inside/overlapping ``grid``; optional hole."""
    minx, miny, maxx, maxy = grid.bounds
    span = min(maxx - minx, maxy - miny)
    cx = rng.uniform(minx - 0.1 * span, maxx + 0.1 * span)
    cy = rng.uniform(miny - 0.1 * span, maxy + 0.1 * span)
    radius = rng.uniform(0.1, 0.7) * span

    def ring(r_lo, r_hi):
        n = int(rng.integers(3, 12))
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(r_lo, r_hi, n)
        pts = [(cx + r * np.cos(a), cy + r * np.sin(a)) for a, r in zip(ang, rad)]
        if lattice:
            pts = [(round(x / lattice) * lattice, round(y / lattice) * lattice) for x, y in pts]
        return pts + [pts[0]]

    for _ in range(100):
        holes = (ring(0.05 * radius, 0.3 * radius),) if with_hole else ()
        try:
            return Polygon(ring(0.5 * radius, radius), holes, dict(attributes or {}), grid.crs_id).validate()
        except Exception:
            continue
    raise RuntimeError("could not draw a valid polygon")


@pytest.fixture
def grid4():
    """4x4 grid of 20 m pixels with origin (0, 0)."""
    return RasterGrid.north_up(CRS, 0.0, 0.0, 20.0, 4, 4)


@pytest.fixture(scope="session")
def small_scene():
    spec = SyntheticSceneSpec(size=256, n_burns=6, seed=3, radius_range=(10, 30))
    return generate_synthetic_scene(spec)


def day(n):
    return dt.date(2016, 8, 15) + dt.timedelta(days=n)
