"""Moment map, central shift, the energy f, its gradient, and Hessians.

Sign and storage conventions
----------------------------
The moment-map value at a representation x is stored as one Hermitian
matrix per vertex,

    H_i(x) = 1/2 ( sum_{head(a)=i} x_a x_a^dagger - sum_{tail(a)=i} x_a^dagger x_a ),

i.e. the dual compact Lie algebra is identified with Hermitian block
collections.  Storing the Hermitian representative keeps every formula
real-symmetric; the anti-Hermitian element of the compact algebra that it
represents is i*H.

With a central shift alpha (a real scalar per vertex) the energy is

    f(x) = sum_i || H_i(x) - alpha_i * Id ||_F^2 ,

whose gradient with respect to the real inner product Re<.,.> is

    grad f(x) = 2 rho_x(H - alpha).

The integrated vector field is

    velocity(x) = -rho_x(H - alpha) = -(1/2) grad f(x),

so along a trajectory df/dt = -2 ||dx/dt||^2.  This field is the natural
one-parameter complex-group motion dg/dt g^{-1} = -(H - alpha); all
statements invariant under constant time reparameterization are unaffected
by the 1/2.  The overall sign is pinned by the finite-difference gradient
consistency test in the suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .quiver import (
    LieAlgebraElement,
    Representation,
    flatten_blocks,
    infinitesimal_action,
)

__all__ = [
    "HermitianCollection",
    "CentralShift",
    "moment",
    "beta_of",
    "f_value",
    "flow_velocity",
    "grad_f",
    "mu_pairing",
    "moment_map_equation_check",
    "hessian_fd",
    "hessian_matrix",
]

HERMITIAN_DEFECT_TOL = 1e-13


@dataclass(frozen=True)
class HermitianCollection:
    """One Hermitian matrix per vertex, with the Frobenius inner product."""

    quiver: object
    dims: tuple
    blocks: tuple = field(repr=False)

    def __post_init__(self):
        blocks = []
        for i, b in enumerate(self.blocks):
            b = np.array(b, dtype=complex)
            defect = np.linalg.norm(b - b.conj().T)
            if defect > 1e-12 * (1.0 + np.linalg.norm(b)):
                raise ShapeError(f"block {i} is not Hermitian (defect {defect:.3e})")
            b = 0.5 * (b + b.conj().T)        # kill roundoff skew
            b.setflags(write=False)
            blocks.append(b)
        object.__setattr__(self, "blocks", tuple(blocks))

    def sub_scalars(self, scalars):
        """Subtract a real scalar multiple of the identity per vertex."""
        return HermitianCollection(
            self.quiver, self.dims,
            tuple(b - s * np.eye(b.shape[0]) for b, s in zip(self.blocks, scalars)),
        )

    def norm_sq(self):
        return float(sum(np.linalg.norm(b) ** 2 for b in self.blocks))

    def spectra(self):
        """Ascending real eigenvalues per vertex."""
        return tuple(tuple(np.linalg.eigvalsh(b)) if b.size else ()
                     for b in self.blocks)

    def as_algebra_element(self):
        return LieAlgebraElement(self.quiver, self.dims, self.blocks, hermitian=True)

    def flatten(self):
        return flatten_blocks(self.blocks)


@dataclass(frozen=True)
class CentralShift:
    """Real scalar per vertex (a central element of the compact algebra dual)."""

    alpha: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.alpha)
        if not all(np.isfinite(vals)):
            raise ShapeError("central shift entries must be finite")
        object.__setattr__(self, "alpha", vals)

    @staticmethod
    def zero(n):
        return CentralShift((0.0,) * n)


def moment(x: Representation) -> HermitianCollection:
    """Hermitian moment-map value per vertex (see module docstring)."""
    q, dims = x.quiver, x.dims
    blocks = [np.zeros((d, d), dtype=complex) for d in dims]
    for a in range(q.n_edges):
        xa = x.blocks[a]
        blocks[q.head[a]] += 0.5 * (xa @ xa.conj().T)
        blocks[q.tail[a]] -= 0.5 * (xa.conj().T @ xa)
    # enforce exact Hermitian storage (defect below 1e-13 by construction)
    blocks = [0.5 * (b + b.conj().T) for b in blocks]
    return HermitianCollection(q, dims, tuple(blocks))


def beta_of(x: Representation, alpha: CentralShift) -> HermitianCollection:
    """Shifted moment value H(x) - alpha, the residual that drives the flow."""
    return moment(x).sub_scalars(alpha.alpha)


def f_value(x: Representation, alpha: CentralShift) -> float:
    """Energy f(x) = sum_i ||H_i(x) - alpha_i Id||_F^2 >= 0."""
    return beta_of(x, alpha).norm_sq()


def flow_velocity(x: Representation, alpha: CentralShift) -> Representation:
    """Downward flow field -rho_x(H - alpha); equals -(1/2) grad f."""
    b = beta_of(x, alpha)
    vel = infinitesimal_action(b.as_algebra_element(), x)
    return vel.replace_blocks(-blk for blk in vel.blocks)


def grad_f(x: Representation, alpha: CentralShift) -> Representation:
    """Gradient of f for the real inner product: 2 rho_x(H - alpha)."""
    v = flow_velocity(x, alpha)
    return v.replace_blocks(-2.0 * blk for blk in v.blocks)


def _hermitian_part(u: LieAlgebraElement):
    return [0.5 * (b + b.conj().T) for b in u.blocks]


def mu_pairing(x: Representation, u: LieAlgebraElement) -> float:
    """Pairing of the moment value with a compact-algebra direction.

    The direction i*A (A Hermitian) pairs with the stored H as
    -sum_i tr(H_i A_i); a general u contributes through its Hermitian part.
    """
    h = moment(x)
    a_blocks = _hermitian_part(u)
    return -float(np.real(sum(np.trace(hb @ ab) for hb, ab in zip(h.blocks, a_blocks))))


def moment_map_equation_check(x: Representation, tangent: Representation,
                              u: LieAlgebraElement, step: float = 1e-5) -> float:
    """Defect of the defining equation d(mu.u)_x[X] = omega(rho_x(u), X).

    The left side is a central finite difference of the pairing along the
    tangent X; the right side uses omega = Im<.,.> for the direction i*A,
    which evaluates to -Re<rho_x(A), X>.  Returns the absolute defect.
    """
    a = LieAlgebraElement(x.quiver, x.dims, tuple(_hermitian_part(u)), hermitian=True)
    xp = x.add_scaled(tangent, step)
    xm = x.add_scaled(tangent, -step)
    lhs = (mu_pairing(xp, a) - mu_pairing(xm, a)) / (2.0 * step)
    rho_a = infinitesimal_action(a, x)
    rhs = -float(np.dot(rho_a.flatten(), tangent.flatten()))
    return abs(lhs - rhs)


def _fd_hessian(fun, y0, h):
    """Central-difference Hessian of a scalar function of a real vector."""
    n = y0.size
    out = np.empty((n, n))
    f0 = fun(y0)
    for i in range(n):
        ei = np.zeros(n); ei[i] = h
        fpp = fun(y0 + 2 * ei)
        fmm = fun(y0 - 2 * ei)
        out[i, i] = (fpp - 2.0 * f0 + fmm) / (4.0 * h * h)
        for j in range(i + 1, n):
            ej = np.zeros(n); ej[j] = h
            v = (fun(y0 + ei + ej) - fun(y0 + ei - ej)
                 - fun(y0 - ei + ej) + fun(y0 - ei - ej)) / (4.0 * h * h)
            out[i, j] = v
            out[j, i] = v
    return out


def hessian_fd(x: Representation, alpha: CentralShift, step: float = 1e-4) -> np.ndarray:
    """Finite-difference Hessian of f in the flattened real coordinates.

    Uses central differences of the values of f only (independent of the
    analytic gradient), with one Richardson extrapolation step at 2*step.
    A large extrapolation correction signals cancellation from a too-small
    step and raises a warning rather than failing.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    q, dims = x.quiver, x.dims
    y0 = x.flatten()
    fun = lambda y: f_value(Representation.unflatten(q, dims, y), alpha)
    h1 = _fd_hessian(fun, y0, step)
    h2 = _fd_hessian(fun, y0, 2.0 * step)
    out = (4.0 * h1 - h2) / 3.0
    scale = max(np.linalg.norm(h1), 1.0)
    if np.linalg.norm(h1 - h2) > 1e-2 * scale + 1e-6:
        warnings.warn(
            "hessian_fd: step-size sensitivity detected (possible cancellation); "
            "consider a larger step", stacklevel=2)
    return 0.5 * (out + out.T)


class VelocityKernel:
    """Allocation-lean velocity evaluation on flattened real vectors.

    Functionally identical to flow_velocity after unflattening, but skips
    the value-type validation; the integrator calls this a few times per
    step, which dominates the runtime at desk scale.
    """

    def __init__(self, quiver, dims, alpha: CentralShift):
        self.quiver = quiver
        self.dims = tuple(dims)
        self.alpha = tuple(alpha.alpha)
        self.shapes = [quiver.block_shape(a, self.dims) for a in range(quiver.n_edges)]
        self.sizes = [m * n for (m, n) in self.shapes]
        self.head = quiver.head
        self.tail = quiver.tail
        self._neg_alpha = [np.diag(np.full(d, -a + 0.0j)) for d, a in zip(self.dims, self.alpha)]

    def unflatten(self, y):
        blocks, pos = [], 0
        for (m, n), k in zip(self.shapes, self.sizes):
            re = y[pos:pos + k]
            im = y[pos + k:pos + 2 * k]
            pos += 2 * k
            blocks.append((re + 1j * im).reshape((m, n), order="F"))
        return blocks

    def flatten(self, blocks):
        parts = []
        for b in blocks:
            v = b.flatten(order="F")
            parts.append(v.real)
            parts.append(v.imag)
        return np.concatenate(parts) if parts else np.zeros(0)

    def shifted_moment(self, blocks):
        out = [m.copy() for m in self._neg_alpha]
        for a, xa in enumerate(blocks):
            out[self.head[a]] += 0.5 * (xa @ xa.conj().T)
            out[self.tail[a]] -= 0.5 * (xa.conj().T @ xa)
        return out

    def velocity_flat(self, y):
        """Velocity field and its squared norm, from/to flat coordinates."""
        blocks = self.unflatten(y)
        b = self.shifted_moment(blocks)
        vel = [-(b[self.head[a]] @ xa - xa @ b[self.tail[a]])
               for a, xa in enumerate(blocks)]
        flat = self.flatten(vel)
        return flat

    def f_flat(self, y):
        b = self.shifted_moment(self.unflatten(y))
        return float(sum(np.linalg.norm(m) ** 2 for m in b))


def _dmoment(x: Representation, tangent: Representation):
    """Directional derivative of the Hermitian moment blocks along a tangent."""
    q, dims = x.quiver, x.dims
    blocks = [np.zeros((d, d), dtype=complex) for d in dims]
    for a in range(q.n_edges):
        xa, ta = x.blocks[a], tangent.blocks[a]
        blocks[q.head[a]] += 0.5 * (ta @ xa.conj().T + xa @ ta.conj().T)
        blocks[q.tail[a]] -= 0.5 * (ta.conj().T @ xa + xa.conj().T @ ta)
    return blocks


def hessian_matrix(x: Representation, alpha: CentralShift) -> np.ndarray:
    """Analytic Hessian of f (the Jacobian of grad f), as a real matrix.

    Used as the Gauss-Newton Jacobian in critical-point refinement; the
    finite-difference route above stays the independent cross-check.
    """
    q, dims = x.quiver, x.dims
    b = beta_of(x, alpha)
    n = q.rep_real_dim(dims)
    shapes = [q.block_shape(a, dims) for a in range(q.n_edges)]
    out = np.empty((n, n))
    col = 0
    for a in range(q.n_edges):
        m, nn = shapes[a]
        for qq in range(nn):
            for p in range(m):
                for part in (1.0, 1.0j):
                    tangent_blocks = [np.zeros(s, dtype=complex) for s in shapes]
                    tangent_blocks[a][p, qq] = part
                    tangent = x.replace_blocks(tangent_blocks)
                    dh = _dmoment(x, tangent)
                    col_blocks = []
                    for e in range(q.n_edges):
                        xe, te = x.blocks[e], tangent.blocks[e]
                        col_blocks.append(
                            2.0 * (b.blocks[q.head[e]] @ te - te @ b.blocks[q.tail[e]]
                                   + dh[q.head[e]] @ xe - xe @ dh[q.tail[e]])
                        )
                    out[:, col] = flatten_blocks(col_blocks)
                    col += 1
        # reorder the interleaved re/im columns of this edge block to match
        # the real-then-imaginary flattening convention
        k = m * nn
        start = col - 2 * k
        idx = list(range(start, col))
        re_cols = [start + 2 * j for j in range(k)]
        im_cols = [start + 2 * j + 1 for j in range(k)]
        out[:, idx] = out[:, re_cols + im_cols]
    return 0.5 * (out + out.T)
