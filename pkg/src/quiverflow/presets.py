"""Bundled desk-scale quivers used by the test suite and example configs."""

from __future__ import annotations

import numpy as np

from .moment import CentralShift
from .quiver import CycleWord, Quiver, Relation, Representation

__all__ = [
    "jordan_one_loop",
    "jordan_two_loops",
    "a2",
    "a3_chain",
    "a2_pair",
    "commutator_relation",
    "A2_ALPHA",
    "A2_PAIR_ALPHA",
]

# Central shift putting the one-edge quiver's minima on |x|^2 = 2 (saddle value 2).
A2_ALPHA = CentralShift((-1.0, 1.0))

# Per-factor shift for the decoupled pair: saddle value 1 per factor, so the
# product has critical values exactly {2, 1, 0}.
_A = 1.0 / np.sqrt(2.0)
A2_PAIR_ALPHA = CentralShift((-_A, _A, -_A, _A))


def jordan_one_loop(dim=1):
    """One vertex, one loop."""
    q = Quiver.from_lists(["v"], [("x", "v", "v")])
    return q, (dim,)


def jordan_two_loops(dim=2):
    """One vertex, two loops; carries the commutator relation."""
    q = Quiver.from_lists(["v"], [("x", "v", "v"), ("y", "v", "v")])
    return q, (dim,)


def a2():
    """Two vertices, one edge 1 -> 2, rank one at each vertex."""
    q = Quiver.from_lists(["1", "2"], [("a", "1", "2")])
    return q, (1, 1)


def a3_chain():
    """Three vertices in a row with the composition relation b . a = 0."""
    q = Quiver.from_lists(["1", "2", "3"], [("a", "1", "2"), ("b", "2", "3")])
    rel = Relation(q, (((1.0 + 0.0j), (0, 1)),), name="ba")
    return q, (1, 1, 1), rel


def a2_pair():
    """Two decoupled one-edge factors (four vertices, two edges)."""
    q = Quiver.from_lists(["1", "2", "3", "4"], [("a", "1", "2"), ("b", "3", "4")])
    return q, (1, 1, 1, 1)


def commutator_relation(q: Quiver) -> Relation:
    """[x, y] = xy - yx on a one-vertex quiver with two loops."""
    ix, iy = q.edge_index("x"), q.edge_index("y")
    return Relation(q, ((1.0 + 0.0j, (ix, iy)), (-1.0 + 0.0j, (iy, ix))), name="comm")


def jordan_cycles(q: Quiver):
    """Conserved monitors tr(x), tr(y), tr(xy) on the two-loop quiver."""
    ix, iy = q.edge_index("x"), q.edge_index("y")
    return (
        CycleWord(q, (ix,), name="trx"),
        CycleWord(q, (iy,), name="try"),
        CycleWord(q, (ix, iy), name="trxy"),
    )


def scalar_rep(q: Quiver, dims, values) -> Representation:
    """Representation with 1x1 blocks from a list of complex scalars."""
    return Representation(q, dims, tuple(np.array([[complex(v)]]) for v in values))
