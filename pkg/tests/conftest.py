"""Shared fixtures and score-surface generators for the test suite."""

import numpy as np

from dcfusion import quality


def sum_of_gaussians(shape, components, cell=1.0):
    """Evaluate a sum of isotropic Gaussians on an (H, W) grid.

    components: iterable of (amplitude, center_row, center_col, sigma) in
    cell units.  Returned values use plain (non-periodic) distances, so
    keep the components away from the border.
    """
    h, w = shape
    rows = np.arange(h)[:, None] * cell
    cols = np.arange(w)[None, :] * cell
    out = np.zeros(shape)
    for amp, ci, cj, sigma in components:
        d2 = (rows - ci * cell) ** 2 + (cols - cj * cell) ** 2
        out += amp * np.exp(-d2 / (2.0 * (sigma * cell) ** 2))
    return out


def random_peak_surface(rng, shape=(48, 48), kappa_range=(0.004, 0.02)):
    """Random sum-of-Gaussians score map whose argmax is a usable peak.

    Returns (score_map, t_star, dist).  Draws are retried until the
    discrete argmax passes the local-max and curvature preconditions,
    which rejects only degenerate saddle-like draws.
    """
    h, w = shape
    for _ in range(50):
        n = int(rng.integers(3, 7))
        comps = [(float(rng.uniform(0.3, 1.0)),
                  float(rng.uniform(10, h - 10)),
                  float(rng.uniform(10, w - 10)),
                  float(rng.uniform(3.0, 10.0))) for _ in range(n)]
        smap = quality.ScoreMap.single(sum_of_gaussians(shape, comps), 1.0)
        dist = quality.StateDistance(float(rng.uniform(*kappa_range)))
        t_star = smap.argmax_state()
        try:
            quality.curvature_bound(smap, t_star, dist)
        except Exception:
            continue
        return smap, t_star, dist
    raise AssertionError("could not draw a valid random peak surface")
