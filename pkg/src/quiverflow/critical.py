"""Critical points: refinement, weight data, slice fibers, index, decay fits.

At a critical point x the shifted moment value beta = H(x) - alpha
commutes with x in the sense rho_x(beta) = 0, so x is fixed by the
one-parameter motion generated by beta and the representation space splits
into weight spaces: in per-vertex eigenframes of beta the coordinate
(p, q) of an edge block carries the real weight

    w = lambda_head(p) - lambda_tail(q).

The slice fiber at x is the intersection of the span of the strictly
negative-weight coordinate directions with the orthocomplement of the
orbit tangent space im rho_x.  Its dimension reproduces the count of
negative Hessian eigenvalues; the finite-difference Hessian is kept as the
independent check of that identity (also pinning down the weight-sign
convention, which a bare symbol chase would leave ambiguous).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    LevelNotReachedError,
    RefinementFailedError,
)
from .flow import FlowTrace, IntegratorConfig, integrate
from .moment import (
    CentralShift,
    HermitianCollection,
    beta_of,
    f_value,
    grad_f,
    hessian_fd,
    hessian_matrix,
)
from .quiver import Representation, infinitesimal_action, rho_matrix

__all__ = [
    "CriticalRecord",
    "WeightDecomposition",
    "SliceFiber",
    "refine_critical",
    "weight_decomposition",
    "negative_slice",
    "MorseIndexReport",
    "morse_index_check",
    "lojasiewicz_fit",
    "unstable_boundedness_check",
    "fiber_directions",
]

CRITICALITY_FACTOR = 1e-9      # rho_x(beta) residual bound, relative


@dataclass(frozen=True)
class CriticalRecord:
    """A converged critical point together with its beta data."""

    x: Representation
    f_crit: float
    beta: HermitianCollection
    beta_spectra: tuple
    grad_residual: float

    def __post_init__(self):
        resid = criticality_residual(self.x, self.beta)
        bound = CRITICALITY_FACTOR * (1.0 + self.x.norm()) * (1.0 + np.sqrt(self.beta.norm_sq()))
        if resid > bound:
            raise RefinementFailedError(
                f"criticality residual {resid:.3e} exceeds bound {bound:.3e}",
                best_residual=resid)


def criticality_residual(x: Representation, beta: HermitianCollection) -> float:
    return float(np.linalg.norm(
        infinitesimal_action(beta.as_algebra_element(), x).flatten()))


def _make_record(x: Representation, alpha: CentralShift) -> CriticalRecord:
    beta = beta_of(x, alpha)
    return CriticalRecord(
        x=x,
        f_crit=f_value(x, alpha),
        beta=beta,
        beta_spectra=beta.spectra(),
        grad_residual=float(np.linalg.norm(grad_f(x, alpha).flatten())),
    )


def refine_critical(x_approx: Representation, alpha: CentralShift, tol: float = 1e-10,
                    cfg: IntegratorConfig = None, max_newton: int = 60) -> CriticalRecord:
    """Polish an approximate critical point until ||grad f|| < tol.

    Strategy: continue the flow while it still makes fast progress, then
    switch to Gauss-Newton on grad f.  The Newton system is solved with
    an SVD pseudo-inverse because grad f is degenerate along the compact
    group orbit through x; the least-norm step moves transversally to it.
    """
    q, dims = x_approx.quiver, x_approx.dims
    x = x_approx
    g = grad_f(x, alpha).flatten()
    gn = float(np.linalg.norm(g))

    if gn >= 1e-3:
        # flow continuation toward the critical set; keep the closest
        # approach, since the flow escapes saddle-type points again
        flow_cfg = (cfg or IntegratorConfig()).with_(grad_stop=tol, max_time=50.0)
        trace = integrate(x, alpha, flow_cfg)
        x = trace.xs[int(np.argmin(trace.gradnorms))]
        g = grad_f(x, alpha).flatten()
        gn = float(np.linalg.norm(g))

    best_x, best_gn = x, gn
    for _ in range(max_newton):
        if gn < tol:
            break
        hess = hessian_matrix(x, alpha)
        step = -np.linalg.pinv(hess, rcond=1e-12) @ g
        scale = 1.0
        for _ in range(40):
            x_try = Representation.unflatten(q, dims, x.flatten() + scale * step)
            g_try = grad_f(x_try, alpha).flatten()
            gn_try = float(np.linalg.norm(g_try))
            if gn_try < gn:
                x, g, gn = x_try, g_try, gn_try
                break
            scale *= 0.5
        else:
            break
        if gn < best_gn:
            best_x, best_gn = x, gn
    if best_gn >= tol:
        raise RefinementFailedError(
            f"refinement stalled at ||grad f|| = {best_gn:.3e} (tol {tol:.3e})",
            best_residual=best_gn)
    return _make_record(best_x, alpha)


@dataclass(frozen=True)
class WeightDecomposition:
    """Per-vertex eigenframes of beta and the induced edge weight matrices."""

    vertex_frames: tuple           # unitary per vertex, columns = eigenvectors
    vertex_eigs: tuple             # ascending eigenvalues per vertex
    edge_weights: tuple            # per edge: real matrix lambda_head[p] - lambda_tail[q]
    negative: tuple                # per edge: list of (p, q) with w < -weight_tol
    zero: tuple
    positive: tuple
    weight_tol: float
    offband_mass: float = 0.0      # mass of x outside the zero-weight band


def weight_decomposition(rec: CriticalRecord, weight_tol: float = None) -> WeightDecomposition:
    """Eigenframes, weight matrices and sign partitions at a critical record."""
    x = rec.x
    q, dims = x.quiver, x.dims
    eigs, frames = [], []
    for b in rec.beta.blocks:
        if b.size:
            lam, u = np.linalg.eigh(b)
        else:
            lam, u = np.zeros(0), np.zeros((0, 0), dtype=complex)
        eigs.append(lam)
        frames.append(u)
    lam_max = max((float(np.max(np.abs(l))) for l in eigs if l.size), default=0.0)
    if weight_tol is None:
        weight_tol = 1e-7 * (1.0 + lam_max)

    weights, neg, zero, pos = [], [], [], []
    offband = 0.0
    for a in range(q.n_edges):
        lh, lt = eigs[q.head[a]], eigs[q.tail[a]]
        w = lh[:, None] - lt[None, :]
        weights.append(w)
        n_idx, z_idx, p_idx = [], [], []
        for p in range(w.shape[0]):
            for qq in range(w.shape[1]):
                if w[p, qq] < -weight_tol:
                    n_idx.append((p, qq))
                elif w[p, qq] > weight_tol:
                    p_idx.append((p, qq))
                else:
                    z_idx.append((p, qq))
        neg.append(tuple(n_idx)); zero.append(tuple(z_idx)); pos.append(tuple(p_idx))
        xa_frame = frames[q.head[a]].conj().T @ x.blocks[a] @ frames[q.tail[a]]
        mask = np.abs(w) > weight_tol
        offband += float(np.sum(np.abs(xa_frame[mask]) ** 2))
    return WeightDecomposition(
        vertex_frames=tuple(frames), vertex_eigs=tuple(eigs),
        edge_weights=tuple(weights), negative=tuple(neg), zero=tuple(zero),
        positive=tuple(pos), weight_tol=float(weight_tol),
        offband_mass=float(np.sqrt(offband)),
    )


@dataclass(frozen=True)
class SliceFiber:
    """Orthonormal real basis of the decaying directions orthogonal to the orbit."""

    basis: np.ndarray = field(repr=False)    # shape (rep_real_dim, dim)
    dim: int = 0


def _orbit_basis(x: Representation, tol: float = 1e-9) -> np.ndarray:
    mat = rho_matrix(x)
    if mat.size == 0:
        return np.zeros((mat.shape[0], 0))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((mat.shape[0], 0))
    r = int(np.sum(s > tol * s[0]))
    return u[:, :r]


def negative_slice(rec: CriticalRecord, wd: WeightDecomposition, tol: float = 1e-9) -> SliceFiber:
    """Fiber of decaying directions orthogonal to the orbit at rec.x.

    Builds the orthonormal coordinate directions of strictly negative
    weight, projects them against an SVD basis of im rho_x, and reads the
    surviving dimension off the singular values of the projected set.  At a
    critical point the weight grading is compatible with im rho_x, so the
    singular values cluster at 0 and 1 and the 0.5 threshold is safe.
    """
    x = rec.x
    q, dims = x.quiver, x.dims
    cols = []
    for a in range(q.n_edges):
        uh = wd.vertex_frames[q.head[a]]
        ut = wd.vertex_frames[q.tail[a]]
        shapes = [q.block_shape(e, dims) for e in range(q.n_edges)]
        for (p, qq) in wd.negative[a]:
            for part in (1.0, 1.0j):
                e_frame = np.zeros(shapes[a], dtype=complex)
                e_frame[p, qq] = part
                blocks = [np.zeros(s, dtype=complex) for s in shapes]
                blocks[a] = uh @ e_frame @ ut.conj().T
                cols.append(x.replace_blocks(blocks).flatten())
    n = q.rep_real_dim(dims)
    if not cols:
        return SliceFiber(basis=np.zeros((n, 0)), dim=0)
    b = np.stack(cols, axis=1)
    orbit = _orbit_basis(x, tol=tol)
    proj = b - orbit @ (orbit.T @ b) if orbit.shape[1] else b
    u, s, _ = np.linalg.svd(proj, full_matrices=False)
    keep = int(np.sum(s > 0.5))
    return SliceFiber(basis=u[:, :keep], dim=keep)


@dataclass(frozen=True)
class MorseIndexReport:
    slice_dim: int
    hessian_index: int
    agree: bool
    status: str                  # "ok" or "indeterminate"
    eigenvalues: np.ndarray = field(repr=False, default=None)


def morse_index_check(rec: CriticalRecord, fiber: SliceFiber, alpha: CentralShift,
                      step: float = 1e-4) -> MorseIndexReport:
    """Compare the slice dimension against the finite-difference Hessian index.

    Eigenvalues below -band count as negative, with band
    1e-6 * (1 + max |eig|).  Zero modes inside the band are expected (orbit
    directions at minima) and do not block agreement; a disagreement in the
    presence of in-band eigenvalues is reported as indeterminate rather
    than as a clean verdict, since band calls could flip it either way.
    """
    hess = hessian_fd(rec.x, alpha, step=step)
    lam = np.linalg.eigvalsh(hess) if hess.size else np.zeros(0)
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    band = 1e-6 * (1.0 + scale)
    index = int(np.sum(lam < -band))
    in_band = bool(np.any(np.abs(lam) < band))
    agree = fiber.dim == index
    status = "indeterminate" if (not agree and in_band) else "ok"
    return MorseIndexReport(slice_dim=fiber.dim, hessian_index=index,
                            agree=agree, status=status, eigenvalues=lam)


def lojasiewicz_fit(trace: FlowTrace, f_crit: float, tail_fraction: float = 0.05,
                    min_samples: int = 10):
    """Fit ||grad f|| ~ C |f - f_crit|^(1-theta) on the tail of a trace.

    Returns (theta, C, r_squared).  Uses the samples whose value gap has
    dropped below tail_fraction of the initial gap, discards gaps at the
    floating-point floor, and fits the log-log line by least squares.
    """
    gaps = np.abs(trace.fs - f_crit)
    grads = np.asarray(trace.gradnorms)
    gap0 = gaps[0]
    floor = 1e-13 * (1.0 + abs(f_crit)) + 1e-15 * gap0
    mask = (gaps < tail_fraction * gap0) & (gaps > floor) & (grads > 0.0)
    if int(np.sum(mask)) < min_samples:
        raise InsufficientDataError(
            f"only {int(np.sum(mask))} usable tail samples (need {min_samples})")
    lx = np.log(gaps[mask])
    ly = np.log(grads[mask])
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    theta = 1.0 - float(slope)
    return theta, float(np.exp(intercept)), r2


def fiber_directions(dim: int, n: int) -> np.ndarray:
    """n quasi-uniform unit directions in R^dim (deterministic).

    dim 1 alternates signs, dim 2 uses equal angles, higher dimensions map
    a Sobol sequence through the normal quantile and normalize.
    """
    if n <= 0 or dim <= 0:
        return np.zeros((0, max(dim, 0)))
    if dim == 1:
        return np.array([[1.0 if i % 2 == 0 else -1.0] for i in range(n)])
    if dim == 2:
        th = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    from scipy.stats import norm, qmc

    eng = qmc.Sobol(d=dim, scramble=True, seed=20240901)
    m = 1
    while 2 ** m < n:
        m += 1
    pts = eng.random_base2(m)[:n]
    z = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    nrm = np.linalg.norm(z, axis=1, keepdims=True)
    nrm[nrm < 1e-12] = 1.0
    return z / nrm


def unstable_boundedness_check(rec: CriticalRecord, fiber: SliceFiber,
                               alpha: CentralShift, eps: float, seeds: int,
                               cfg: IntegratorConfig, seed_radius: float = 1e-4) -> dict:
    """Probe compactness of the unstable cone one level below the record.

    Seeds unit fiber directions at seed_radius, flows each to the level
    f_crit - eps and measures the farthest endpoint from the critical
    point.  The gradient-inequality bound length <= eps^theta / (C theta)
    is evaluated twice: with the tail-fitted constant, and with the
    conservative constant min ||grad f|| / gap^(1-theta) taken along the
    sampled trajectories (the inequality must hold along the whole segment
    for the length bound to apply, and the tail constant alone need not).
    """
    report = {
        "n_seeds": int(seeds), "fiber_dim": int(fiber.dim), "eps": float(eps),
        "seed_radius": float(seed_radius), "reached": [], "endpoint_distances": [],
        "failures": [],
    }
    if fiber.dim == 0 or seeds == 0:
        report.update(max_distance=0.0, vacuous=True, bounded=True,
                      theta=None, c_tail=None, c_segment=None,
                      bound_tail=None, bound_segment=None)
        return report
    level = rec.f_crit - eps
    q, dims = rec.x.quiver, rec.x.dims
    x0_flat = rec.x.flatten()
    dirs = fiber_directions(fiber.dim, seeds)
    c_seg = np.inf
    theta = c_tail = None
    for i in range(seeds):
        vec = fiber.basis @ dirs[i]
        seed = Representation.unflatten(q, dims, x0_flat + seed_radius * vec)
        try:
            trace = integrate(seed, alpha, cfg, stop_level=level)
            if trace.status != "exited_level":
                raise LevelNotReachedError(
                    f"seed stopped with status {trace.status}", limit_value=float(trace.fs[-1]))
        except Exception as exc:  # per-seed failure is reported, not fatal
            report["reached"].append(False)
            report["endpoint_distances"].append(None)
            report["failures"].append({"seed": i, "error": str(exc)})
            continue
        report["reached"].append(True)
        report["endpoint_distances"].append(trace.final.distance(rec.x))
        gaps = np.abs(rec.f_crit - trace.fs)
        grads = trace.gradnorms
        if theta is None:
            # backward trace into the record pins the decay exponent
            back = integrate(trace.final, alpha, cfg.with_(max_time=200.0), direction=-1)
            if back.status == "converged":
                try:
                    theta, c_tail, _ = lojasiewicz_fit(back, rec.f_crit)
                except InsufficientDataError:
                    theta = None
        if theta is not None:
            ok = (gaps > 1e-12 * (1.0 + eps)) & (grads > 0)
            if np.any(ok):
                c_seg = min(c_seg, float(np.min(grads[ok] / gaps[ok] ** (1.0 - theta))))
    dists = [d for d in report["endpoint_distances"] if d is not None]
    max_dist = max(dists) if dists else 0.0
    report["max_distance"] = float(max_dist)
    report["vacuous"] = False
    report["theta"] = theta
    report["c_tail"] = c_tail
    report["c_segment"] = None if not np.isfinite(c_seg) else float(c_seg)
    report["bound_tail"] = (eps ** theta / (c_tail * theta)) if theta else None
    report["bound_segment"] = (eps ** theta / (c_seg * theta)) if (theta and np.isfinite(c_seg)) else None
    report["bounded"] = bool(report["bound_segment"] is not None
                             and max_dist <= report["bound_segment"])
    return report
