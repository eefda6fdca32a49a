"""Test helpers that use the package (unlike ``oracles``)."""

import dataclasses
import math

import numpy as np

from mmrselect.ammr import LfpCache, canonical_covariance, solve_key
from mmrselect.raster import rasterize


def canonical_seed(report, sigma, cfg, cache_dir):
    """Store ``report`` (solved at ``sigma``) in the cache under its canonical key.

    The canonical problem is ``sigma / s``, whose least-favorable prior is the
    exact rescaling of ``report``.
    """
    canon, s = canonical_covariance(sigma)
    c = 1.0 / math.sqrt(s)
    scaled = dataclasses.replace(
        report, sigma=canon, prior=report.prior.scaled(c), value=report.value * c,
        point_risks=report.point_risks * c,
    )
    LfpCache(cache_dir).store(solve_key(canon, cfg), scaled)
    return canon, s


def disagreement_points(report, fixed_x2=0.0, clearance=3):
    """Grid points on the (x1, x3) slice where the rule avoids arm 3 but ES picks it.

    Only cells whose whole neighborhood of ``clearance`` cells shares both
    labels are returned, so grid and sampling noise cannot flip them.
    """
    r = rasterize(report.rule(), axes=(0, 2), fixed=[0.0, fixed_x2, 0.0], resolution=161)
    g = r.grid
    x1, x3 = np.meshgrid(g, g, indexing="ij")
    es3 = (x3 > x1) & (x3 > fixed_x2)
    hit = (r.labels != 3) & es3
    out = []
    c = clearance
    for a in range(c, len(g) - c):
        for b in range(c, len(g) - c):
            if hit[a - c:a + c + 1, b - c:b + c + 1].all():
                out.append(np.array([g[a], fixed_x2, g[b]]))
    return out
