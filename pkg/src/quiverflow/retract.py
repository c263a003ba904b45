"""Closed-form two-dimensional scenes for the level-set retraction machinery.

Two scenes share one critical value c = 0:

* ``SaddleScene`` - the plane with f(x, y) = (y^2 - x^2) / 2 and downward
  flow (x, y) -> (e^t x, e^-t y).  Everything (crossing times, the gauge
  sigma, the region Y, the collapse map R) has a closed form, so the
  retraction identities can be checked to roundoff.

* ``SlitScene`` - the quotient of [0, inf) x [0, 2 pi) that glues all
  points with rho = 0 to one point.  The map to the plane
  (rho, theta) -> (rho cos theta, rho sin theta) is a bijection but not a
  homeomorphism: angles do not wrap across 2 pi, except through the glued
  origin.  The same saddle flow on this space violates the neighborhood
  funneling property at the origin and flips the sublevel-set component
  count, which is exactly what the census and probe below measure.  All
  slit topology is handled combinatorially on the (rho, theta) grid; the
  plane embedding is never used for adjacency.

Saddle scene constructions
--------------------------
On the bottom level f = -eps (two hyperbola branches x = +-sqrt(y^2+2eps))
the shrinking open family is the tube E_s = { |y| < delta (1 - s) } with
the linear retraction r((branch, y), u) = (branch, y (1 - u)).  The gauge
sigma(p) = max(0, 1 - |y_bottom(p)| / delta) is constant along flow lines
(y_bottom uses the conserved product x y), g = f - 2 eps sigma, and
Y = g^{-1}([c - 3 eps, c - eps]).  The collapse map combines the crossing
time with the tube retraction:

    base(p)   = flow of p to the bottom level
    y(p, s)   = r(base(p), min(s, s_final(p)))
    R(p, s)   = flow of y(p, s) back up to the level f_s(p)

with s_final, f_final, f_s the standard interpolation data; R(-, 0) is the
identity on Y and R(-, 1) lands in the bottom level united with the
unstable set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LevelNotReachedError, UndefinedDomainError

__all__ = [
    "SaddleScene",
    "SlitScene",
    "ScenePoint",
    "scene_sigma",
    "scene_g_and_Y",
    "scene_retract_R",
    "connectivity_census",
    "condition4_probe",
    "UnionFind",
]


@dataclass(frozen=True)
class ScenePoint:
    """Coordinates in a scene chart: (x, y) for the saddle, (rho, theta) for
    the slit quotient (rho = 0 is canonicalized to theta = 0)."""

    u: float
    v: float

    def as_tuple(self):
        return (self.u, self.v)


class SaddleScene:
    """Smooth saddle with closed-form flow; critical value c = 0."""

    kind = "smooth_saddle"

    def __init__(self, eps=0.1, delta=0.5):
        if eps <= 0 or delta <= 0:
            raise ValueError("eps and delta must be positive")
        self.eps = float(eps)
        self.delta = float(delta)
        self.c = 0.0

    # -- flow ---------------------------------------------------------------

    def f(self, p: ScenePoint) -> float:
        return 0.5 * (p.v ** 2 - p.u ** 2)

    def flow(self, p: ScenePoint, t: float) -> ScenePoint:
        return ScenePoint(math.exp(t) * p.u, math.exp(-t) * p.v)

    def velocity(self, p: ScenePoint):
        return (p.u, -p.v)

    def tau(self, p: ScenePoint, level: float) -> float:
        """Crossing time of f(flow(p, t)) = level; exact quadratic solve in
        e^{2t}."""
        x, y = p.u, p.v
        if x == 0.0 and y == 0.0:
            raise LevelNotReachedError("critical point never crosses other levels",
                                       limit_value=0.0)
        if x == 0.0:
            if level <= 0.0:
                raise LevelNotReachedError("stable-axis point only reaches positive levels",
                                           limit_value=0.0)
            return 0.5 * math.log(y * y / (2.0 * level))
        if y == 0.0 and level >= 0.0:
            raise LevelNotReachedError("unstable-axis point only reaches negative levels",
                                       limit_value=0.0)
        m2 = (x * y) ** 2
        u = (-level + math.sqrt(level * level + m2)) / (x * x)
        return 0.5 * math.log(u)

    # -- gauge and region ---------------------------------------------------

    def bottom_y(self, p: ScenePoint) -> float:
        """y-coordinate of the flow-through point on the level f = -eps.

        Uses the conserved product x y; defined off the stable axis and at
        the critical point (where it is 0 by convention).
        """
        if p.u == 0.0 and p.v == 0.0:
            return 0.0
        if p.u == 0.0:
            raise UndefinedDomainError("stable-set point above the bottom level has no gauge")
        m = p.u * p.v
        y2 = -self.eps + math.sqrt(self.eps ** 2 + m * m)
        return math.copysign(math.sqrt(max(y2, 0.0)), p.v) if p.v != 0.0 else 0.0

    def _check_band(self, p: ScenePoint):
        fp = self.f(p)
        if fp < -self.eps - 1e-12 or fp > self.eps + 1e-12:
            raise UndefinedDomainError(
                f"point with f = {fp:.6g} outside the band [-eps, eps]")

    def sigma(self, p: ScenePoint) -> float:
        self._check_band(p)
        yb = abs(self.bottom_y(p))
        return max(0.0, 1.0 - yb / self.delta)

    def g(self, p: ScenePoint) -> float:
        return self.f(p) - 2.0 * self.eps * self.sigma(p)

    def in_Y(self, p: ScenePoint) -> bool:
        fp = self.f(p)
        if fp < -self.eps - 1e-12 or fp > 1e-12:
            return False
        gp = self.g(p)
        return self.c - 3.0 * self.eps - 1e-12 <= gp <= self.c - self.eps + 1e-12

    # -- tube retraction data -----------------------------------------------

    def in_E(self, p_bottom: ScenePoint, s: float) -> bool:
        """Membership of a bottom-level point in the open tube E_s (s < 1)."""
        return abs(p_bottom.v) < self.delta * (1.0 - s)

    def in_E_closure(self, p_bottom: ScenePoint, s: float) -> bool:
        return abs(p_bottom.v) <= self.delta * (1.0 - s)

    def tube_retract(self, p_bottom: ScenePoint, u: float) -> ScenePoint:
        """Linear shrink along the branch: y -> y (1 - u), staying on the level."""
        y = p_bottom.v * (1.0 - u)
        x = math.copysign(math.sqrt(y * y + 2.0 * self.eps), p_bottom.u)
        return ScenePoint(x, y)

    # -- collapse map -------------------------------------------------------

    def s_final(self, p: ScenePoint) -> float:
        fp, sig = self.f(p), self.sigma(p)
        gap = 2.0 * self.eps * (1.0 - sig)
        rise = fp - (self.c - self.eps)
        if rise >= gap:
            return 1.0
        if gap == 0.0:
            return 1.0
        # rise < gap; at rise == 0 this is the 0/0-free corner value 0
        return rise / gap

    def f_final(self, p: ScenePoint) -> float:
        fp, sig = self.f(p), self.sigma(p)
        gap = 2.0 * self.eps * (1.0 - sig)
        if fp - (self.c - self.eps) >= gap:
            return fp - gap
        return self.c - self.eps

    def f_s(self, p: ScenePoint, s: float) -> float:
        fp = self.f(p)
        if s <= 0.0:
            return fp
        sf = self.s_final(p)
        ff = self.f_final(p)
        if s >= sf:
            return ff
        lam = s / sf
        return lam * ff + (1.0 - lam) * fp

    def retract_R(self, p: ScenePoint, s: float) -> ScenePoint:
        """Composite collapse map on Y (identity at s = 0)."""
        if not (0.0 <= s <= 1.0):
            raise ValueError("s must lie in [0, 1]")
        if p.u == 0.0 and p.v == 0.0:
            return p
        base = self.flow(p, self.tau(p, self.c - self.eps))
        y_ps = self.tube_retract(base, min(s, self.s_final(p)))
        target = self.f_s(p, s)
        return self.flow(y_ps, self.tau(y_ps, target))

    # -- probes ---------------------------------------------------------------

    def unstable_bottom_points(self):
        r = math.sqrt(2.0 * self.eps)
        return (ScenePoint(r, 0.0), ScenePoint(-r, 0.0))

    def on_stable_set(self, p: ScenePoint) -> bool:
        return p.u == 0.0

    def bottom_in_U(self, p: ScenePoint, width: float) -> bool:
        """Neighborhood of the unstable bottom points parameterized by |y|."""
        return abs(p.v) < width


class SlitScene:
    """Glued-origin quotient of the half-open polar strip; c = 0."""

    kind = "slit_quotient"

    def __init__(self, eps=0.1):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)
        self.c = 0.0

    @staticmethod
    def canonical(rho, theta) -> ScenePoint:
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        if rho == 0.0:
            return ScenePoint(0.0, 0.0)
        return ScenePoint(rho, theta % (2.0 * math.pi))

    def f(self, p: ScenePoint) -> float:
        rho, theta = p.u, p.v
        return -0.5 * rho * rho * math.cos(2.0 * theta)

    def flow(self, p: ScenePoint, t: float) -> ScenePoint:
        rho, theta = p.u, p.v
        x = math.exp(t) * rho * math.cos(theta)
        y = math.exp(-t) * rho * math.sin(theta)
        r = math.hypot(x, y)
        if r == 0.0:
            return ScenePoint(0.0, 0.0)
        return ScenePoint(r, math.atan2(y, x) % (2.0 * math.pi))

    def tau(self, p: ScenePoint, level: float) -> float:
        x = p.u * math.cos(p.v)
        y = p.u * math.sin(p.v)
        return SaddleScene(eps=self.eps).tau(ScenePoint(x, y), level)

    def on_stable_set(self, p: ScenePoint) -> bool:
        return p.u == 0.0 or abs(math.cos(p.v)) == 0.0

    def on_unstable_set(self, p: ScenePoint) -> bool:
        return p.u == 0.0 or math.sin(p.v) == 0.0

    def theta_distance_to_unstable(self, theta: float) -> float:
        """Arc distance to {0, pi} without wrapping across 2 pi <-> 0."""
        return min(abs(theta - 0.0), abs(theta - math.pi))


class UnionFind:
    """Array union-find with path compression and union by size."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.n_components = n

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_components -= 1


def _slit_grid_masks(scene: SlitScene, sublevel: float, include_unstable: bool,
                     n_rho: int, n_theta: int, rho_max: float):
    """Membership mask over the (rho, theta) grid; row 0 is the glued origin."""
    if n_theta % 2 != 0:
        raise ValueError("n_theta must be even so that theta = pi is a grid column")
    rho = np.linspace(0.0, rho_max, n_rho)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    rr, tt = np.meshgrid(rho, theta, indexing="ij")
    f = -0.5 * rr * rr * np.cos(2.0 * tt)
    mask = f <= sublevel
    if include_unstable:
        mask[:, 0] = True
        mask[:, n_theta // 2] = True
        mask[0, :] = True          # the critical point itself belongs to the set
    return rho, theta, mask


def connectivity_census(scene: SlitScene, sublevel: float, include_unstable: bool,
                        n_rho: int = 400, n_theta: int = 400, rho_max: float = 3.0,
                        check_stability: bool = True):
    """Connected components of a sampled sublevel set on the slit quotient.

    Adjacency is purely combinatorial: radial and angular grid neighbors,
    never wrapping theta across 2 pi <-> 0, and all rho = 0 nodes identified
    to one point.  Returns (component_count, labels, grid) with labels -1
    outside the set.  When check_stability is set, the census is repeated
    at doubled resolution and a warning is raised if the counts disagree.
    """
    rho, theta, mask = _slit_grid_masks(scene, sublevel, include_unstable,
                                        n_rho, n_theta, rho_max)
    count, labels = _census_count(mask)
    if check_stability:
        _, _, mask2 = _slit_grid_masks(scene, sublevel, include_unstable,
                                       2 * n_rho, 2 * n_theta, rho_max)
        count2, _ = _census_count(mask2)
        if count2 != count:
            warnings.warn(
                f"census unstable under refinement: {count} components at "
                f"{n_rho}x{n_theta} but {count2} at {2*n_rho}x{2*n_theta}",
                stacklevel=2)
    return count, labels, (rho, theta, mask)


def _census_count(mask: np.ndarray):
    """Union-find over the grid mask with glued origin row, slit preserved."""
    n_rho, n_theta = mask.shape
    idx = lambda i, j: i * n_theta + j
    uf = UnionFind(n_rho * n_theta)
    # glue the origin row into one node
    for j in range(1, n_theta):
        uf.union(idx(0, 0), idx(0, j))
    in_set = mask
    # radial edges
    for i in range(n_rho - 1):
        row0, row1 = in_set[i], in_set[i + 1]
        for j in np.nonzero(row0 & row1)[0]:
            uf.union(idx(i, j), idx(i + 1, j))
    # angular edges, no wrap from n_theta-1 back to 0 (the slit)
    for i in range(1, n_rho):
        row = in_set[i]
        for j in np.nonzero(row[:-1] & row[1:])[0]:
            uf.union(idx(i, j), idx(i, j + 1))
    labels = -np.ones(mask.shape, dtype=int)
    roots = {}
    for i in range(n_rho):
        for j in range(n_theta):
            if in_set[i, j]:
                r = uf.find(idx(i, j))
                labels[i, j] = roots.setdefault(r, len(roots))
    return len(roots), labels


def scene_sigma(p: ScenePoint, scene: SaddleScene) -> float:
    """Gauge value in [0, 1]; module-level alias of SaddleScene.sigma."""
    return scene.sigma(p)


def scene_g_and_Y(p: ScenePoint, scene: SaddleScene):
    return scene.g(p), scene.in_Y(p)


def scene_retract_R(p: ScenePoint, s: float, scene: SaddleScene) -> ScenePoint:
    return scene.retract_R(p, s)


def condition4_probe(scene, u_width: float = None, samples: int = 64,
                     neighborhood_radius: float = 1e-1, radii=None) -> dict:
    """Test whether small neighborhoods of the critical point funnel into a
    given bottom-level neighborhood of the unstable points.

    For the saddle, U is the tube |y| < u_width on the bottom level; for
    the slit quotient, U is the union of non-wrapping arcs of half-width
    u_width around theta in {0, pi} (so the sector theta in (3 pi / 2,
    2 pi) is outside U for u_width < pi / 2).  Samples at each radius are
    spread over directions off the stable set and flowed to the bottom
    level; holds is True when some radius (and every smaller one) funnels
    all samples into U, and a violating sample is returned as witness
    otherwise.
    """
    if radii is None:
        radii = tuple(neighborhood_radius * 10.0 ** -k for k in range(4))
    level = -scene.eps
    if u_width is None:
        u_width = 0.5 if isinstance(scene, SaddleScene) else math.pi / 3.0
    if math.isinf(u_width):
        return {"holds": True, "witness": None, "radius": None, "vacuous": True}

    def lands_in_U(p):
        t = scene.tau(p, level)
        q = scene.flow(p, t)
        if isinstance(scene, SaddleScene):
            return scene.bottom_in_U(q, u_width), q
        return scene.theta_distance_to_unstable(q.v) < u_width, q

    witness = None
    smallest = min(radii)
    for radius in sorted(radii, reverse=True):
        bad = None
        for k in range(samples):
            ang = 2.0 * math.pi * (k + 0.5) / samples
            if isinstance(scene, SaddleScene):
                p = ScenePoint(radius * math.cos(ang), radius * math.sin(ang))
            else:
                p = SlitScene.canonical(radius, ang)
            if scene.on_stable_set(p):
                continue
            ok, q = lands_in_U(p)
            if not ok:
                bad = {"sample": p, "landing": q, "radius": radius}
        if bad is not None:
            witness = bad
        if radius == smallest and bad is None:
            # the shrinking neighborhoods end up funneling into U
            return {"holds": True, "witness": None, "radius": radius, "vacuous": False}
    return {"holds": False, "witness": witness, "radius": None, "vacuous": False}
