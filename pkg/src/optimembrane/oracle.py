"""Closed-form membranes: radial loads on a disk and single forces on disks and rectangles.

Radial case: with F(t) the load carried by the disk of radius t,

    D    = (1 / 2pi) sqrt( (1 / 2R) int_0^R F^2 )
    u(r) = (1 / 2pi D) int_r^R F
    w(r) = r - (1 / 8 pi^2 D^2) int_0^r F^2        (radial component)
    alpha = D / r,   Z0 = (1 / 2pi D) int_0^R F^2 = 4 pi R D.

Single force at x0: pick y0 such that x0 lies in the convex hull of the
nearest boundary points of y0, put weights rho on those points with
barycenter x0, and use strings x0 -> a with pi = rho(a) and
Pi = rho(a) |x0 - a| / (sqrt2 d0), d0 = sqrt(d(y0)^2 - |x0 - y0|^2).
The certificate is the cone (u, w) = (sqrt2 d0, 2 (x0 - y0)) h over the
disk B(y0, d(y0)) with apex x0, extended by zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .assembly import DualAssignment, assemble
from .geometry import DirichletSet, DiscreteLoad, Domain, Grid, PairSet
from .membrane import MembraneSolution, TrussMeasure, energy_J
from .solver import certify

SQRT2 = math.sqrt(2.0)
QUAD_TOL = 1e-13


class OracleError(ValueError):
    pass


# ------------------------------------------------------------------ radial

@dataclass(frozen=True)
class RadialSolution:
    R: float
    D: float
    Z0: float
    F: Callable[[float], float]
    _F_int: Callable[[float], float]
    _F2_int: Callable[[float], float]

    def u(self, r):
        r = np.asarray(r, dtype=float)
        return (self._vec(self._F_int, self.R) - self._vec(self._F_int, r)) / (2 * math.pi * self.D)

    def w(self, r):
        r = np.asarray(r, dtype=float)
        return r - self._vec(self._F2_int, r) / (8 * math.pi**2 * self.D**2)

    def alpha(self, r):
        return self.D / np.asarray(r, dtype=float)

    def u_prime(self, r):
        return -self._vec(self.F, r) / (2 * math.pi * self.D)

    def w_prime(self, r):
        return 1.0 - self._vec(self.F, r) ** 2 / (8 * math.pi**2 * self.D**2)

    @property
    def trace_mass(self) -> float:
        """int Tr sigma = int_0^R (D / r) 2 pi r dr; half of Z0."""
        return 2 * math.pi * self.D * self.R

    @staticmethod
    def _vec(fn, r):
        r = np.asarray(r, dtype=float)
        if r.ndim == 0:
            return float(fn(float(r)))
        return np.array([fn(float(t)) for t in r.ravel()]).reshape(r.shape)


def radial(R: float, F: Callable[[float], float], F_int: Optional[Callable] = None,
           F2_int: Optional[Callable] = None) -> RadialSolution:
    """Radial membrane on the disk of radius R for the repartition function F.

    ``F_int`` and ``F2_int`` are optional exact antiderivatives of F and F^2
    vanishing at 0; adaptive quadrature is used otherwise.
    """
    if not R > 0:
        raise OracleError("radius must be positive")
    if F_int is None:
        def F_int(r):
            return quad(F, 0.0, r, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]
    if F2_int is None:
        def F2_int(r):
            return quad(lambda t: F(t) ** 2, 0.0, r, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]
    I2 = F2_int(R)
    if not I2 > 0:
        raise OracleError("zero load: D = 0 is degenerate")
    D = math.sqrt(I2 / (2 * R)) / (2 * math.pi)
    Z0 = I2 / (2 * math.pi * D)
    return RadialSolution(R, D, Z0, F, F_int, F2_int)


def radial_uniform(R: float = 1.0, density: float = 1.0) -> RadialSolution:
    c = math.pi * density
    return radial(R, lambda t: c * t * t, lambda r: c * r**3 / 3, lambda r: c * c * r**5 / 5)


def radial_dirac(R: float = 1.0, mass: float = 1.0) -> RadialSolution:
    return radial(R, lambda t: mass, lambda r: mass * r, lambda r: mass * mass * r)


# ------------------------------------------------------------- single force

@dataclass(frozen=True)
class OneForceSolution:
    x0: np.ndarray
    y0: np.ndarray
    d0: float
    R0: float  # d(y0, boundary)
    points: np.ndarray  # (k, 2) attachment points
    weights: np.ndarray  # rho
    case: str

    @property
    def pi_entries(self) -> np.ndarray:
        return self.weights.copy()

    @property
    def Pi_entries(self) -> np.ndarray:
        return self.weights * np.hypot(*(self.points - self.x0).T) / (SQRT2 * self.d0)

    @property
    def alpha_entries(self) -> np.ndarray:
        return SQRT2 * self.d0 / np.hypot(*(self.points - self.x0).T)

    @property
    def energy(self) -> float:
        return SQRT2 * self.d0

    def _h(self, pts: np.ndarray) -> np.ndarray:
        """Cone with apex x0 over the disk B(y0, R0), zero outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        p = self.x0 - self.y0
        d = pts - self.x0
        r = np.hypot(d[:, 0], d[:, 1])
        out = np.zeros(len(pts))
        at = r == 0
        out[at] = 1.0
        e = d[~at] / r[~at, None]
        pe = e @ p
        reach = -pe + np.sqrt(pe * pe + self.d0**2)  # distance from x0 to the circle along e
        out[~at] = np.maximum(1.0 - r[~at] / reach, 0.0)
        return out

    def u_fn(self, pts) -> np.ndarray:
        return SQRT2 * self.d0 * self._h(pts)

    def w_fn(self, pts) -> np.ndarray:
        return 2.0 * (self.x0 - self.y0)[None, :] * self._h(pts)[:, None]


def _make(x0, y0, R0, points, weights, case) -> OneForceSolution:
    x0, y0 = np.asarray(x0, float), np.asarray(y0, float)
    d0sq = R0 * R0 - float(np.sum((x0 - y0) ** 2))
    if not d0sq > 0:
        raise OracleError("x0 outside the representable region")
    points = np.asarray(points, float).reshape(-1, 2)
    weights = np.asarray(weights, float)
    keep = weights > 0
    return OneForceSolution(x0, y0, math.sqrt(d0sq), float(R0), points[keep], weights[keep], case)


def one_force_disk(R0: float, x0, center=(0.0, 0.0)) -> OneForceSolution:
    """Disk with the whole circle clamped; rho sits on the diameter through x0."""
    c = np.asarray(center, float)
    p = np.asarray(x0, float) - c
    r = float(np.hypot(*p))
    if r >= R0:
        raise OracleError("x0 must lie inside the disk")
    e = p / r if r > 0 else np.array([1.0, 0.0])
    pts = np.array([c + R0 * e, c - R0 * e])
    wts = np.array([0.5 * (1 + r / R0), 0.5 * (1 - r / R0)])
    return _make(c + p, c, R0, pts, wts, "disk")


def one_force_rectangle(domain: Domain, x0, sigma0: Optional[DirichletSet] = None) -> OneForceSolution:
    """Single force in an axis-parallel rectangle (squares included).

    x0 is folded into the quadrant x, y >= 0 of the centered rectangle with
    the long side vertical. Then
      (a) y < B - A: y0 on the vertical skeleton, two strings to the long sides;
      (b) y >= B - A and x + y <= B: y0 = (0, B - A), three strings;
      (c) x + y > B: y0 on the diagonal skeleton, two strings on a slope -1 line.
    For a square the rotated inner square falls under (b) extended by symmetry
    to four midpoints, with the symmetric choice of rho.
    """
    v = domain.vertices
    lo, hi = v.min(0), v.max(0)
    if len(v) != 4 or not np.allclose(np.sort(np.abs(v - (lo + hi) / 2), axis=0),
                                      np.tile((hi - lo) / 2, (4, 1)), atol=1e-12 * domain.diameter):
        raise OracleError("domain is not an axis-parallel rectangle")
    c = (lo + hi) / 2
    half = (hi - lo) / 2
    swap = half[0] > half[1]
    A, B = (half[1], half[0]) if swap else (half[0], half[1])
    q = np.asarray(x0, float) - c
    if swap:
        q = q[::-1]
    sgn = np.where(q < 0, -1.0, 1.0)
    x, y = np.abs(q)
    if x >= A or y >= B:
        raise OracleError("x0 must lie in the open rectangle")
    tol = 1e-12 * B

    if abs(A - B) <= tol and x + y <= A + tol:
        y0 = (0.0, 0.0)
        pts = [(A, 0.0), (-A, 0.0), (0.0, A), (0.0, -A)]
        s = 0.5 * (1 + x / A - y / A)
        wts = [0.5 * (s + x / A), 0.5 * (s - x / A), 0.5 * (1 - s + y / A), 0.5 * (1 - s - y / A)]
        R0, case = A, "square-center"
    elif y < B - A - tol:
        y0 = (0.0, y)
        pts = [(A, y), (-A, y)]
        wts = [(A + x) / (2 * A), (A - x) / (2 * A)]
        R0, case = A, "a"
    elif x + y <= B + tol:
        y0 = (0.0, B - A)
        pts = np.array([(A, B - A), (-A, B - A), (0.0, B)])
        M = np.vstack([pts.T, np.ones(3)])
        wts = np.linalg.solve(M, np.array([x, y, 1.0]))
        wts = np.maximum(wts, 0.0)
        wts /= wts.sum()
        R0, case = A, "b"
    else:
        r = A + B - x - y
        y0 = (A - r, B - r)
        pts = [(A, B - r), (A - r, B)]
        # x0 = t (A, B - r) + (1 - t) (A - r, B)
        t = (x - (A - r)) / r
        wts = [t, 1 - t]
        R0, case = r, "c"

    def unfold(p):
        p = np.asarray(p, float).reshape(-1, 2) * sgn
        if swap:
            p = p[:, ::-1]
        return p + c

    sol = _make(np.asarray(x0, float), unfold(y0)[0], R0,
                unfold(pts), wts, case)
    if sigma0 is not None and not sigma0.is_empty:
        if np.any(sigma0.distance(sol.points) > 1e-12 * domain.diameter):
            raise OracleError("x0 outside the representable region for this Dirichlet set")
    return sol


def one_force(domain, x0, sigma0: Optional[DirichletSet] = None) -> OneForceSolution:
    """Dispatch on ``domain``: a Domain rectangle/square or ("disk", R0[, center])."""
    if isinstance(domain, tuple) and domain and domain[0] == "disk":
        if sigma0 is not None:
            raise OracleError("disk oracle supports the whole circle as Dirichlet set only")
        return one_force_disk(float(domain[1]), x0, *(domain[2:] or ()))
    if isinstance(domain, Domain):
        return one_force_rectangle(domain, x0, sigma0)
    raise OracleError(f"unsupported oracle domain {domain!r}")


def inject(sol: OneForceSolution, grid: Grid) -> MembraneSolution:
    """Sample the closed form on ``grid`` as a discrete membrane solution.

    The grid must carry nodes at x0 and at every attachment point.
    """
    k0 = grid.index_of(sol.x0)
    ks = np.array([grid.index_of(p) for p in sol.points])
    pairs = PairSet.from_indices(grid, np.full(len(ks), k0), ks)
    # from_indices sorts by key; locate each attachment in the sorted set
    key = {(int(a), int(b)): e for e, (a, b) in enumerate(pairs.pairs)}
    m = len(pairs)
    Pi, pi = np.zeros(m), np.zeros(m)
    for k, wt, P in zip(ks, sol.weights, sol.Pi_entries):
        e = key[(min(k0, k), max(k0, k))]
        Pi[e] = P
        pi[e] = wt if pairs.j[e] == k0 else -wt  # +1 contribution at the loaded node
    weights = np.zeros(grid.n)
    weights[k0] = 1.0
    load = DiscreteLoad(weights, origin="oracle point force")
    truss = TrussMeasure.from_values(Pi, pi)
    dual = DualAssignment(sol.u_fn(grid.nodes), sol.w_fn(grid.nodes))
    prog = assemble(grid, pairs, load)
    x = np.concatenate([pi**2 / (2 * Pi), Pi, pi])
    report = certify(prog, x, dual)
    return MembraneSolution(grid, load, pairs, truss, dual.u, dual.w, energy_J(truss, pairs),
                            prog.dual_objective(dual), report, [], "oracle")
