import math

import numpy as np
import pytest

from quiverflow.errors import LevelNotReachedError, UndefinedDomainError
from quiverflow.retract import (
    SaddleScene,
    ScenePoint,
    SlitScene,
    UnionFind,
    condition4_probe,
    connectivity_census,
    scene_g_and_Y,
    scene_retract_R,
    scene_sigma,
)

from conftest import philox

EPS, DELTA = 0.1, 0.5


@pytest.fixture
def saddle():
    return SaddleScene(eps=EPS, delta=DELTA)


@pytest.fixture
def slit():
    return SlitScene(eps=EPS)


def bottom_point(scene, y, branch=+1):
    """Point of the bottom level with the given transverse coordinate."""
    return ScenePoint(branch * math.sqrt(y * y + 2.0 * scene.eps), y)


def sample_Y(scene, n, rng):
    """Rejection-sample the funnel region of the saddle scene."""
    out = []
    while len(out) < n:
        p = ScenePoint(2.4 * rng.random() - 1.2, 2.4 * rng.random() - 1.2)
        if -scene.eps <= scene.f(p) <= 0.0 and p.u != 0.0 and scene.in_Y(p):
            out.append(p)
    return out


def test_flow_and_tau_closed_forms(saddle):
    p = ScenePoint(0.3, 0.8)
    t = saddle.tau(p, -EPS)
    q = saddle.flow(p, t)
    assert abs(saddle.f(q) + EPS) < 1e-14
    assert abs(q.u * q.v - p.u * p.v) < 1e-14          # conserved product
    assert saddle.tau(p, saddle.f(p)) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(LevelNotReachedError):
        saddle.tau(ScenePoint(0.0, 0.5), -EPS)          # stable axis
    with pytest.raises(LevelNotReachedError):
        saddle.tau(ScenePoint(0.5, 0.0), EPS)           # unstable axis upward
    with pytest.raises(LevelNotReachedError):
        saddle.tau(ScenePoint(0.0, 0.0), -EPS)


def test_sigma_values(saddle):
    r = math.sqrt(2.0 * EPS)
    assert scene_sigma(ScenePoint(r, 0.0), saddle) == pytest.approx(1.0)
    assert scene_sigma(ScenePoint(-r, 0.0), saddle) == pytest.approx(1.0)
    assert scene_sigma(bottom_point(saddle, DELTA), saddle) == pytest.approx(0.0, abs=1e-12)
    assert scene_sigma(bottom_point(saddle, 0.8), saddle) == 0.0
    assert scene_sigma(bottom_point(saddle, DELTA / 2), saddle) == pytest.approx(0.5)
    assert scene_sigma(ScenePoint(0.0, 0.0), saddle) == 1.0
    with pytest.raises(UndefinedDomainError):
        scene_sigma(ScenePoint(0.0, 0.3), saddle)       # stable set, above c - eps
    with pytest.raises(UndefinedDomainError):
        scene_sigma(ScenePoint(2.0, 0.0), saddle)       # below the band


def test_sigma_constant_on_flow_lines(saddle, rng):
    for _ in range(200):
        p = ScenePoint(1.6 * rng.random() - 0.8, 1.6 * rng.random() - 0.8)
        if not (-EPS <= saddle.f(p) <= EPS) or p.u == 0.0:
            continue
        s0 = scene_sigma(p, saddle)
        for t in (-0.1, 0.07):
            q = saddle.flow(p, t)
            if -EPS <= saddle.f(q) <= EPS:
                assert abs(scene_sigma(q, saddle) - s0) < 1e-10


def test_sigma_trichotomy(saddle, rng):
    # for s in (0,1): sigma > s iff inside the open tube, = s on its rim,
    # < s iff outside the closed tube
    for _ in range(500):
        y = 1.4 * (rng.random() - 0.5)
        s = rng.random() * 0.98 + 0.01
        p = bottom_point(saddle, y, branch=+1 if rng.random() < 0.5 else -1)
        sig = scene_sigma(p, saddle)
        inside = saddle.in_E(p, s)
        closure = saddle.in_E_closure(p, s)
        if sig > s:
            assert inside
        if sig == pytest.approx(s, abs=1e-13) and not inside and closure:
            pass                                        # rim case
        if sig < s - 1e-13:
            assert not closure
        if inside:
            assert sig > s
        if not closure:
            assert sig < s


def test_g_and_Y_values(saddle):
    c = 0.0
    g0, in_y0 = scene_g_and_Y(ScenePoint(0.0, 0.0), saddle)
    assert g0 == pytest.approx(c - 2.0 * EPS)
    assert in_y0
    p_out = bottom_point(saddle, 0.9)
    g1, in_y1 = scene_g_and_Y(p_out, saddle)
    assert g1 == pytest.approx(c - EPS)
    assert in_y1                                         # boundary of Y
    # far from the unstable set on the critical level: sigma = 0, g = c
    p_far = ScenePoint(3.0, 3.0)
    g2, in_y2 = scene_g_and_Y(p_far, saddle)
    assert g2 == pytest.approx(c, abs=1e-12)
    assert not in_y2


def test_g_has_no_stationary_points_in_upper_band(saddle, rng):
    # min ||velocity|| over sampled g^{-1}([c-eps, c]) stays away from zero
    speeds = []
    for _ in range(4000):
        p = ScenePoint(3.0 * (rng.random() - 0.5), 3.0 * (rng.random() - 0.5))
        if not (-EPS <= saddle.f(p) <= 0.0) or p.u == 0.0:
            continue
        g, _ = scene_g_and_Y(p, saddle)
        if -EPS <= g <= 0.0:
            speeds.append(math.hypot(*saddle.velocity(p)))
    assert len(speeds) > 50
    assert min(speeds) > 0.05


def test_retract_identity_at_s0_and_on_targets(saddle, rng):
    pts = sample_Y(saddle, 60, rng)
    for p in pts:
        r0 = scene_retract_R(p, 0.0, saddle)
        assert math.hypot(r0.u - p.u, r0.v - p.v) < 1e-12
    # critical point and unstable bottom points are fixed for every s
    for p in (ScenePoint(0.0, 0.0), *saddle.unstable_bottom_points()):
        for s in (0.0, 0.37, 1.0):
            r = scene_retract_R(p, s, saddle)
            assert math.hypot(r.u - p.u, r.v - p.v) < 1e-12


def test_retract_final_level_and_target(saddle, rng):
    pts = sample_Y(saddle, 200, rng)
    for p in pts:
        r1 = scene_retract_R(p, 1.0, saddle)
        assert abs(saddle.f(r1) - saddle.f_final(p)) < 1e-10
        on_bottom = abs(saddle.f(r1) + EPS) < 1e-8
        on_unstable = abs(r1.v) < 1e-8
        assert on_bottom or on_unstable


def test_retract_bottom_level_fixed(saddle):
    # sigma < 1 on the bottom level gives s_final = 0: the map fixes it
    p = bottom_point(saddle, DELTA / 2)
    for s in (0.0, 0.5, 1.0):
        r = scene_retract_R(p, s, saddle)
        assert math.hypot(r.u - p.u, r.v - p.v) < 1e-13


def test_retract_continuity_modulus(saddle):
    # empirical modulus on refining grids stays bounded
    def max_local_ratio(n):
        ys = np.linspace(-0.4, 0.4, n)
        # the level f = -0.9 eps, slightly above the bottom of the band
        xs = [math.sqrt(y * y + 1.8 * EPS) for y in ys]
        pts = [ScenePoint(x, y) for x, y in zip(xs, ys)]
        pts = [p for p in pts if saddle.in_Y(p)]
        imgs = [scene_retract_R(p, 0.7, saddle) for p in pts]
        ratios = []
        for a, b, ia, ib in zip(pts, pts[1:], imgs, imgs[1:]):
            d0 = math.hypot(a.u - b.u, a.v - b.v)
            d1 = math.hypot(ia.u - ib.u, ia.v - ib.v)
            ratios.append(d1 / d0)
        return max(ratios)
    m1, m2 = max_local_ratio(200), max_local_ratio(400)
    assert m2 < 10.0 * max(m1, 1.0)


def test_union_find_basics():
    uf = UnionFind(5)
    uf.union(0, 1)
    uf.union(3, 4)
    assert uf.n_components == 3
    uf.union(1, 0)
    assert uf.n_components == 3
    assert uf.find(0) == uf.find(1)


def test_slit_flow_preserves_fourth_quadrant(slit):
    p = SlitScene.canonical(0.7, 1.75 * math.pi)
    for t in (-0.5, 0.3, 1.0):
        q = slit.flow(p, t)
        assert 1.5 * math.pi < q.v < 2.0 * math.pi


def test_census_full_space_and_sublevels(slit):
    count_full, _, _ = connectivity_census(slit, sublevel=1e9, include_unstable=False,
                                           n_rho=80, n_theta=80, check_stability=False)
    assert count_full == 1
    low, _, _ = connectivity_census(slit, sublevel=-EPS, include_unstable=True,
                                    n_rho=400, n_theta=400, check_stability=False)
    assert low == 2
    high, _, _ = connectivity_census(slit, sublevel=EPS, include_unstable=False,
                                     n_rho=400, n_theta=400, check_stability=False)
    assert high == 1


def test_census_warns_when_unstable(slit):
    # a grid too coarse to resolve the wedges flips the count under refinement
    with pytest.warns(UserWarning):
        connectivity_census(slit, sublevel=-EPS, include_unstable=True,
                            n_rho=4, n_theta=8, rho_max=3.0, check_stability=True)


def test_saddle_sublevel_components_match_across_the_level(saddle):
    # plane-topology census: on the smooth scene, sublevel f <= -eps union
    # the unstable axis has the same component count as sublevel f <= +eps
    # (both 1); the slit quotient breaks exactly this equality (2 vs 1)
    n = 401
    xs = np.linspace(-3.0, 3.0, n)
    ys = np.linspace(-3.0, 3.0, n)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    f = 0.5 * (yy ** 2 - xx ** 2)
    low = (f <= -EPS) | (np.abs(yy) < 1e-12)
    high = f <= EPS

    def plane_components(mask):
        uf = UnionFind(mask.size)
        idx = lambda i, j: i * n + j
        for i in range(n):
            for j in range(n):
                if not mask[i, j]:
                    continue
                if i + 1 < n and mask[i + 1, j]:
                    uf.union(idx(i, j), idx(i + 1, j))
                if j + 1 < n and mask[i, j + 1]:
                    uf.union(idx(i, j), idx(i, j + 1))
        roots = {uf.find(idx(i, j)) for i in range(n) for j in range(n) if mask[i, j]}
        return len(roots)

    assert plane_components(low) == 1
    assert plane_components(high) == 1


def test_condition4_saddle_holds(saddle):
    rep = condition4_probe(saddle, u_width=DELTA)
    assert rep["holds"] and rep["witness"] is None


def test_condition4_slit_fails_with_witness(slit):
    rep = condition4_probe(slit, u_width=math.pi / 3.0)
    assert not rep["holds"]
    w = rep["witness"]
    assert w is not None
    assert 1.5 * math.pi < w["sample"].v < 2.0 * math.pi
    # the landing point is far from both unstable rays in the slit metric
    assert slit.theta_distance_to_unstable(w["landing"].v) >= math.pi / 3.0


def test_condition4_vacuous_full_level(slit):
    rep = condition4_probe(slit, u_width=math.inf)
    assert rep["holds"] and rep["vacuous"]


def test_conclusions_stable_under_halved_parameters():
    for eps, delta in ((0.05, 0.25), (0.1, 0.25), (0.05, 0.5)):
        sc = SaddleScene(eps=eps, delta=delta)
        rng = philox(5)
        pts = sample_Y(sc, 40, rng)
        for p in pts:
            r1 = sc.retract_R(p, 1.0)
            assert abs(sc.f(r1) - sc.f_final(p)) < 1e-10
        sl = SlitScene(eps=eps)
        low, _, _ = connectivity_census(sl, -eps, True, n_rho=400, n_theta=400,
                                        check_stability=False)
        high, _, _ = connectivity_census(sl, eps, False, n_rho=400, n_theta=400,
                                         check_stability=False)
        assert (low, high) == (2, 1)


def test_retract_continuous_across_unstable_seam(saddle):
    # points straddling the unstable axis at the same level must map to
    # nearby images for every s: the collapse map has no seam jump
    level = -0.9 * EPS
    for s in (0.0, 0.3, 0.7, 1.0):
        imgs = []
        for y in (1e-6, -1e-6):
            p = ScenePoint(math.sqrt(y * y - 2.0 * level), y)
            imgs.append(scene_retract_R(p, s, saddle))
        d = math.hypot(imgs[0].u - imgs[1].u, imgs[0].v - imgs[1].v)
        assert d < 1e-4


def test_retract_continuous_toward_critical_point(saddle):
    # shrinking points of Y just off the stable axis: images under R stay
    # within a shrinking neighborhood of the critical point for small s
    prev = None
    for r in (1e-2, 1e-3, 1e-4):
        p = ScenePoint(r, 0.5 * r)          # f < 0, near the origin, in Y
        assert saddle.in_Y(p)
        img = scene_retract_R(p, 0.5, saddle)
        dist = math.hypot(img.u, img.v)
        if prev is not None:
            assert dist < prev + 1e-12
        prev = dist
