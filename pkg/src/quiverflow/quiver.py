"""Quivers, representation points, and the group / Lie-algebra actions.

Conventions used throughout the package
---------------------------------------
A quiver is a finite directed multigraph with vertex list ``I`` and edge
list ``E``; loops and parallel edges are allowed.  A representation with
dimension vector ``v`` assigns to each edge ``a`` a complex matrix block of
shape ``v[head(a)] x v[tail(a)]``, i.e. the block maps the tail space into
the head space.

The group ``prod_i GL(v_i, C)`` acts by

    (g . x)_a = g_head(a) @ x_a @ inv(g_tail(a))

and its Lie algebra acts infinitesimally by

    rho_x(u)_a = u_head(a) @ x_a - x_a @ u_tail(a).

Real coordinates
----------------
All modules flatten complex block collections to real vectors in one fixed
order: blocks in list order (edge order for representations, vertex order
for Lie-algebra elements), each block column-major, all real parts of a
block followed by all imaginary parts.  The Euclidean inner product of the
flattened vectors then equals ``Re sum_a tr(A_a^dagger B_a)``, which is the
real inner product every formula in this package is written against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NonComposablePathError,
    NonInvertibleGroupElementError,
    ShapeError,
)

__all__ = [
    "Quiver",
    "Representation",
    "GroupElement",
    "LieAlgebraElement",
    "Relation",
    "CycleWord",
    "act",
    "infinitesimal_action",
    "group_exp",
    "rho_matrix",
    "rho_rank",
    "relation_residual",
    "cycle_trace",
]

# Condition-number bound above which a group block counts as singular.
DEFAULT_COND_BOUND = 1e12


def _freeze(arr):
    """Return a read-only complex ndarray copy; all value types store these."""
    out = np.array(arr, dtype=complex, order="C")
    if not np.all(np.isfinite(out)):
        raise ShapeError("block contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Quiver:
    """Directed multigraph with dense, stable vertex and edge indices."""

    vertices: tuple
    edges: tuple          # edge names, same length as head/tail
    head: tuple           # edge index -> vertex index
    tail: tuple

    def __post_init__(self):
        n, m = len(self.vertices), len(self.edges)
        if len(self.head) != m or len(self.tail) != m:
            raise ShapeError("head/tail must assign a vertex to every edge")
        for a in range(m):
            if not (0 <= self.head[a] < n and 0 <= self.tail[a] < n):
                raise ShapeError(f"edge {self.edges[a]!r} references an unknown vertex")

    @staticmethod
    def from_lists(vertices, edge_specs):
        """Build from vertex names and (name, tail_name, head_name) triples."""
        vertices = tuple(str(v) for v in vertices)
        index = {v: i for i, v in enumerate(vertices)}
        if len(index) != len(vertices):
            raise ShapeError("duplicate vertex names")
        names, heads, tails = [], [], []
        for name, t, h in edge_specs:
            if t not in index or h not in index:
                raise ShapeError(f"edge {name!r} references an unknown vertex")
            names.append(str(name))
            tails.append(index[t])
            heads.append(index[h])
        return Quiver(vertices, tuple(names), tuple(heads), tuple(tails))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_index(self, name):
        return self.edges.index(name)

    def block_shape(self, a, dims):
        return (dims[self.head[a]], dims[self.tail[a]])

    def rep_real_dim(self, dims):
        """Total real dimension 2 * sum_a v_head(a) * v_tail(a)."""
        return 2 * sum(dims[self.head[a]] * dims[self.tail[a]] for a in range(self.n_edges))

    def group_real_dim(self, dims):
        return 2 * sum(d * d for d in dims)

    def check_dims(self, dims):
        dims = tuple(int(d) for d in dims)
        if len(dims) != self.n_vertices:
            raise ShapeError("dimension vector length does not match vertex count")
        if any(d < 0 for d in dims):
            raise ShapeError("dimension vector entries must be nonnegative")
        return dims


@dataclass(frozen=True)
class Representation:
    """A point of the representation space: one complex block per edge."""

    quiver: Quiver
    dims: tuple
    blocks: tuple = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", self.quiver.check_dims(self.dims))
        blocks = tuple(_freeze(b) for b in self.blocks)
        if len(blocks) != self.quiver.n_edges:
            raise ShapeError("one block per edge required")
        for a, b in enumerate(blocks):
            if b.shape != self.quiver.block_shape(a, self.dims):
                raise ShapeError(
                    f"block for edge {self.quiver.edges[a]!r} has shape {b.shape}, "
                    f"expected {self.quiver.block_shape(a, self.dims)}"
                )
        object.__setattr__(self, "blocks", blocks)

    @staticmethod
    def zero(quiver, dims):
        dims = quiver.check_dims(dims)
        return Representation(
            quiver, dims,
            tuple(np.zeros(quiver.block_shape(a, dims), dtype=complex)
                  for a in range(quiver.n_edges)),
        )

    @staticmethod
    def random(quiver, dims, rng, scale=1.0):
        dims = quiver.check_dims(dims)
        blocks = []
        for a in range(quiver.n_edges):
            shape = quiver.block_shape(a, dims)
            blocks.append(scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))
        return Representation(quiver, dims, tuple(blocks))

    def flatten(self):
        return flatten_blocks(self.blocks)

    @staticmethod
    def unflatten(quiver, dims, vec):
        dims = quiver.check_dims(dims)
        shapes = [quiver.block_shape(a, dims) for a in range(quiver.n_edges)]
        return Representation(quiver, dims, unflatten_blocks(vec, shapes))

    def replace_blocks(self, blocks):
        return Representation(self.quiver, self.dims, tuple(blocks))

    def norm(self):
        return float(np.linalg.norm(self.flatten()))

    def add_scaled(self, other, scale):
        """self + scale * other, blockwise (used for tangent steps)."""
        return self.replace_blocks(b + scale * o for b, o in zip(self.blocks, other.blocks))

    def distance(self, other):
        return float(np.linalg.norm(self.flatten() - other.flatten()))


def flatten_blocks(blocks):
    """Flatten complex blocks to reals: list order, column-major, Re then Im."""
    parts = []
    for b in blocks:
        v = np.asarray(b).flatten(order="F")
        parts.append(v.real)
        parts.append(v.imag)
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def unflatten_blocks(vec, shapes):
    vec = np.asarray(vec, dtype=float)
    blocks, pos = [], 0
    for (m, n) in shapes:
        k = m * n
        re = vec[pos:pos + k]
        im = vec[pos + k:pos + 2 * k]
        pos += 2 * k
        blocks.append((re + 1j * im).reshape((m, n), order="F"))
    if pos != vec.size:
        raise ShapeError("flattened vector length does not match block shapes")
    return tuple(blocks)


@dataclass(frozen=True)
class GroupElement:
    """One invertible complex matrix per vertex; ``unitary`` is advisory."""

    quiver: Quiver
    dims: tuple
    blocks: tuple = field(repr=False)
    unitary: bool = False
    cond_bound: float = DEFAULT_COND_BOUND

    def __post_init__(self):
        object.__setattr__(self, "dims", self.quiver.check_dims(self.dims))
        blocks = tuple(_freeze(b) for b in self.blocks)
        for i, b in enumerate(blocks):
            d = self.dims[i]
            if b.shape != (d, d):
                raise ShapeError(f"group block at vertex {self.quiver.vertices[i]!r} must be {d}x{d}")
            if d > 0:
                c = np.linalg.cond(b)
                if not np.isfinite(c) or c > self.cond_bound:
                    raise NonInvertibleGroupElementError(
                        f"group block at vertex {self.quiver.vertices[i]!r} has condition "
                        f"number {c:.3e} above bound {self.cond_bound:.3e}"
                    )
            if self.unitary and d > 0:
                defect = np.linalg.norm(b @ b.conj().T - np.eye(d))
                if defect > 1e-10:
                    raise ShapeError(f"unitary flag set but block deviates by {defect:.3e}")
        object.__setattr__(self, "blocks", blocks)

    @staticmethod
    def identity(quiver, dims):
        dims = quiver.check_dims(dims)
        return GroupElement(quiver, dims, tuple(np.eye(d, dtype=complex) for d in dims), unitary=True)

    @staticmethod
    def random_unitary(quiver, dims, rng):
        """Haar-ish unitary per vertex via QR of a complex Gaussian."""
        dims = quiver.check_dims(dims)
        blocks = []
        for d in dims:
            z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            q, r = np.linalg.qr(z)
            q = q @ np.diag(np.diag(r) / np.abs(np.diag(r))) if d > 0 else q
            blocks.append(q)
        return GroupElement(quiver, dims, tuple(blocks), unitary=True)

    def compose(self, other):
        """Pointwise product self * other."""
        return GroupElement(
            self.quiver, self.dims,
            tuple(a @ b for a, b in zip(self.blocks, other.blocks)),
            unitary=self.unitary and other.unitary,
        )


@dataclass(frozen=True)
class LieAlgebraElement:
    """One complex matrix per vertex; ``hermitian`` marks elements used as
    moment-map values (the compact algebra is i times these)."""

    quiver: Quiver
    dims: tuple
    blocks: tuple = field(repr=False)
    hermitian: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", self.quiver.check_dims(self.dims))
        blocks = tuple(_freeze(b) for b in self.blocks)
        for i, b in enumerate(blocks):
            d = self.dims[i]
            if b.shape != (d, d):
                raise ShapeError(f"algebra block at vertex {self.quiver.vertices[i]!r} must be {d}x{d}")
            if self.hermitian and np.linalg.norm(b - b.conj().T) > 1e-10 * (1.0 + np.linalg.norm(b)):
                raise ShapeError("hermitian flag set but block is not Hermitian to tolerance")
        object.__setattr__(self, "blocks", blocks)

    @staticmethod
    def zero(quiver, dims):
        dims = quiver.check_dims(dims)
        return LieAlgebraElement(quiver, dims, tuple(np.zeros((d, d), dtype=complex) for d in dims))

    @staticmethod
    def random(quiver, dims, rng, hermitian=False, scale=1.0):
        dims = quiver.check_dims(dims)
        blocks = []
        for d in dims:
            z = scale * (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
            if hermitian:
                z = 0.5 * (z + z.conj().T)
            blocks.append(z)
        return LieAlgebraElement(quiver, dims, tuple(blocks), hermitian=hermitian)

    def flatten(self):
        return flatten_blocks(self.blocks)

    @staticmethod
    def unflatten(quiver, dims, vec):
        dims = quiver.check_dims(dims)
        return LieAlgebraElement(quiver, dims, unflatten_blocks(vec, [(d, d) for d in dims]))

    def scaled(self, c):
        return LieAlgebraElement(self.quiver, self.dims, tuple(c * b for b in self.blocks))


def _validate_path(quiver, path):
    """Check composability of a path (edges applied first-to-last); return
    (source_vertex, target_vertex)."""
    if len(path) == 0:
        raise NonComposablePathError("empty path")
    for a in path:
        if not (0 <= a < quiver.n_edges):
            raise NonComposablePathError(f"unknown edge index {a}")
    for prev, nxt in zip(path, path[1:]):
        if quiver.tail[nxt] != quiver.head[prev]:
            raise NonComposablePathError(
                f"edge {quiver.edges[nxt]!r} does not compose with {quiver.edges[prev]!r}"
            )
    return quiver.tail[path[0]], quiver.head[path[-1]]


@dataclass(frozen=True)
class Relation:
    """Linear combination of composable paths sharing one source and target.

    ``terms`` is a tuple of (coefficient, path) with path a tuple of edge
    indices applied first-to-last (so the matrix of a path [a, b] is
    x_b @ x_a).
    """

    quiver: Quiver
    terms: tuple
    name: str = ""

    def __post_init__(self):
        if not self.terms:
            raise NonComposablePathError("relation needs at least one term")
        terms = tuple((complex(c), tuple(int(a) for a in p)) for c, p in self.terms)
        endpoints = {_validate_path(self.quiver, p) for _, p in terms}
        if len(endpoints) != 1:
            raise NonComposablePathError("all paths in a relation must share source and target")
        object.__setattr__(self, "terms", terms)

    @property
    def source(self):
        return self.quiver.tail[self.terms[0][1][0]]

    @property
    def target(self):
        return self.quiver.head[self.terms[0][1][-1]]

    def evaluate(self, x):
        """Matrix value sum_k coef_k * (path product) at the representation x."""
        s, t = self.source, self.target
        out = np.zeros((x.dims[t], x.dims[s]), dtype=complex)
        for coef, path in self.terms:
            m = None
            for a in path:
                m = x.blocks[a] if m is None else x.blocks[a] @ m
            out = out + coef * m
        return out


@dataclass(frozen=True)
class CycleWord:
    """A closed composable path; its trace is a conserved flow monitor."""

    quiver: Quiver
    path: tuple
    name: str = ""

    def __post_init__(self):
        path = tuple(int(a) for a in self.path)
        s, t = _validate_path(self.quiver, path)
        if s != t:
            raise NonComposablePathError("cycle word must be closed (source = target)")
        object.__setattr__(self, "path", path)


# ---------------------------------------------------------------------------
# operations


def act(g: GroupElement, x: Representation) -> Representation:
    """Group action: block a maps to g_head(a) x_a inv(g_tail(a))."""
    if g.quiver is not x.quiver and g.quiver != x.quiver:
        raise ShapeError("group element and representation live on different quivers")
    inv = [np.linalg.inv(b) if b.size else b for b in g.blocks]
    q = x.quiver
    blocks = [g.blocks[q.head[a]] @ x.blocks[a] @ inv[q.tail[a]] for a in range(q.n_edges)]
    return x.replace_blocks(blocks)


def infinitesimal_action(u: LieAlgebraElement, x: Representation) -> Representation:
    """Derivative of the action at the identity: u_head x_a - x_a u_tail."""
    q = x.quiver
    blocks = [u.blocks[q.head[a]] @ x.blocks[a] - x.blocks[a] @ u.blocks[q.tail[a]]
              for a in range(q.n_edges)]
    return x.replace_blocks(blocks)


def group_exp(u: LieAlgebraElement, t=1.0) -> GroupElement:
    """Matrix exponential exp(t u), one block per vertex."""
    from scipy.linalg import expm

    blocks = [expm(t * b) if b.size else b.copy() for b in u.blocks]
    return GroupElement(u.quiver, u.dims, tuple(blocks))


def rho_matrix(x: Representation) -> np.ndarray:
    """The infinitesimal action at x as an explicit real matrix.

    Shape is (rep_real_dim, group_real_dim); columns follow the Lie-algebra
    flattening order, rows the representation flattening order.  Sizes at
    desk scale are tiny, so materializing is the robust choice for
    rank/orthocomplement work.
    """
    q, dims = x.quiver, x.dims
    ncols = q.group_real_dim(dims)
    nrows = q.rep_real_dim(dims)
    out = np.zeros((nrows, ncols))
    col = 0
    for i in range(q.n_vertices):
        d = dims[i]
        for qq in range(d):          # column-major over the vertex block
            for p in range(d):
                for part in (1.0, 1.0j):
                    u_blocks = [np.zeros((dd, dd), dtype=complex) for dd in dims]
                    u_blocks[i][p, qq] = part
                    u = LieAlgebraElement(q, dims, tuple(u_blocks))
                    out[:, col] = infinitesimal_action(u, x).flatten()
                    col += 1
    # real-then-imaginary ordering within the vertex block
    # (columns above interleave; reorder to match flatten_blocks)
    perm = []
    col = 0
    for i in range(q.n_vertices):
        d = dims[i]
        k = d * d
        re_cols = [col + 2 * j for j in range(k)]
        im_cols = [col + 2 * j + 1 for j in range(k)]
        perm.extend(re_cols + im_cols)
        col += 2 * k
    return out[:, perm]


def rho_rank(x: Representation, tol: float = 1e-9) -> int:
    """Numerical rank of the real-linear map rho_x (orbit dimension at x)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    mat = rho_matrix(x)
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def relation_residual(x: Representation, r: Relation) -> float:
    """Frobenius norm of the relation evaluated at x."""
    return float(np.linalg.norm(r.evaluate(x)))


def cycle_trace(x: Representation, w: CycleWord) -> complex:
    """Trace of the block product along a closed path; conserved by the flow
    and invariant under the group action (conjugation)."""
    m = None
    for a in w.path:
        m = x.blocks[a] if m is None else x.blocks[a] @ m
    return complex(np.trace(m))
