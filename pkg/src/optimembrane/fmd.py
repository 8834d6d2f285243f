"""Free-material baseline: transport of the load to its nearest Dirichlet points.

With f >= 0 the free-material value is sqrt2 * sum_z f(z) d(z, Sigma0). Each
loaded node sends its mass along straight rays to its nearest Dirichlet
points, split equally among ties. The optimal membrane value is never below
this one, and the two agree when every loaded point lies in the convex hull
of its projections (the high ridge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .geometry import DirichletSet, DiscreteLoad, Domain, Grid

SQRT2 = math.sqrt(2.0)
TIE = 1e-10


class FMDError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryProjection:
    point: np.ndarray
    distance: float
    projections: np.ndarray  # (k, 2)


@dataclass(frozen=True)
class Ray:
    source: np.ndarray
    target: np.ndarray
    weight: float

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.target - self.source)))


def _closest_on_segment(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    e = b - a
    L2 = float(e @ e)
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, float((x - a) @ e) / L2))
    return a + t * e


def project_sigma0(domain: Domain, sigma0: DirichletSet, x) -> BoundaryProjection:
    """Distance from x to Sigma0 and every nearest point within 1e-10 R."""
    if sigma0.is_empty:
        raise FMDError("empty Dirichlet set")
    x = np.asarray(x, dtype=float).reshape(2)
    R = domain.diameter
    cands = [_closest_on_segment(x, np.asarray(p, float), np.asarray(q, float)) for p, q in sigma0.segments]
    cands += [np.asarray(p, float) for p in sigma0.points]
    cands = np.array(cands)
    d = np.hypot(*(cands - x).T)
    dmin = float(d.min())
    near = cands[d <= dmin + TIE * R]
    # adjacent segments share endpoints: merge duplicates
    uniq: list[np.ndarray] = []
    for p in near:
        if all(np.hypot(*(p - q)) > TIE * R for q in uniq):
            uniq.append(p)
    return BoundaryProjection(x, dmin, np.array(uniq))


def solve_fmd(grid: Grid, sigma0: DirichletSet | None, load: DiscreteLoad):
    """Return (Z, rays) for a nonnegative load."""
    sigma0 = grid.sigma0 if sigma0 is None else sigma0
    w = load.weights
    if np.any(w < 0):
        raise FMDError("signed load: the free-material baseline needs f >= 0")
    Z = 0.0
    rays: list[Ray] = []
    for k in np.flatnonzero(w):
        pr = project_sigma0(grid.domain, sigma0, grid.nodes[k])
        Z += SQRT2 * float(w[k]) * pr.distance
        share = w[k] / len(pr.projections)
        rays += [Ray(grid.nodes[k].copy(), p, float(share)) for p in pr.projections]
    return Z, rays


def ray_trace_mass(rays) -> float:
    """sum weight |x - p| / sqrt2, which equals Z / 2."""
    return float(sum(r.weight * r.length for r in rays) / SQRT2)


def ridge_membership(domain: Domain, sigma0: DirichletSet, x) -> bool:
    """True iff x lies in the convex hull of its nearest Dirichlet points."""
    pr = project_sigma0(domain, sigma0, x)
    R = domain.diameter
    if pr.distance <= TIE * R:
        raise FMDError("point lies on the Dirichlet set")
    P = pr.projections
    # min |sum lam p - x| over lam >= 0 with sum lam = 1 (the row of ones is weighted heavily)
    big = 1e3 * max(1.0, R)
    M = np.vstack([P.T, big * np.ones(len(P))])
    rhs = np.concatenate([pr.point, [big]])
    lam, res = nnls(M, rhs)
    return bool(res <= 1e-9 * R)


def compare_fmd_om(grid: Grid, sigma0: DirichletSet | None, load: DiscreteLoad, gap_tol: float = 1e-6,
                   **om_kwargs) -> dict:
    """Both values, the equality verdict and the ridge predicate of each loaded node."""
    from .membrane import solve_om

    sigma0 = grid.sigma0 if sigma0 is None else sigma0
    Z_fmd, _ = solve_fmd(grid, sigma0, load)
    if not np.any(load.weights):
        Z0 = 0.0
    else:
        Z0 = solve_om(grid, load, gap_tol=gap_tol, **om_kwargs).Z0
    ridge = {int(k): ridge_membership(grid.domain, sigma0, grid.nodes[k]) for k in load.support}
    return {
        "Z_fmd": float(Z_fmd),
        "Z0": Z0,
        "equal": bool(abs(Z0 - Z_fmd) <= 10 * gap_tol * (1 + Z0)),
        "ridge": ridge,
    }
