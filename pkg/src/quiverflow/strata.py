"""Stratum labels, unstable-set sampling, flow lines, and breaking experiments.

A point is labeled by the invariant data of its forward-flow limit: the
per-vertex spectra of beta = H - alpha there (conjugation-invariant, so the
label is constant on compact-group orbits) together with the limiting
value of f.  Flow lines are normalized by an anchor on a fixed level and
classified by refining both directional limits.  The breaking experiment
follows a one-parameter family of seeds whose flow lines degenerate onto a
chain of critical points, recording level checkpoints and their Cauchy
behavior as the family parameter tends to its limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .critical import CriticalRecord, SliceFiber, fiber_directions, refine_critical
from .errors import QuiverFlowError
from .flow import IntegratorConfig, integrate, level_set_map, tau_level
from .moment import CentralShift, f_value, grad_f
from .quiver import Representation

__all__ = [
    "StratumLabel",
    "stratum_label",
    "sample_unstable_level",
    "FlowLine",
    "flow_line",
    "BrokenLineReport",
    "broken_line_experiment",
    "search_critical_levels",
]

CLUSTER_TOL = 1e-5      # spectra clustering tolerance for label equality
VALUE_TOL = 1e-6        # critical-value tolerance for label equality


@dataclass(frozen=True)
class StratumLabel:
    """Forward-limit invariant: beta spectra per vertex plus the limit value."""

    spectra: tuple
    f_limit: float
    status: str = "converged"      # or "inconclusive"

    def matches(self, other, cluster_tol=CLUSTER_TOL, value_tol=VALUE_TOL) -> bool:
        if self.status != "converged" or other.status != "converged":
            return False
        if abs(self.f_limit - other.f_limit) >= value_tol:
            return False
        if len(self.spectra) != len(other.spectra):
            return False
        for s1, s2 in zip(self.spectra, other.spectra):
            if len(s1) != len(s2):
                return False
            if any(abs(a - b) >= cluster_tol for a, b in zip(s1, s2)):
                return False
        return True

    def key(self, cluster_tol=CLUSTER_TOL, value_tol=VALUE_TOL):
        """Hashable rounded form for grouping (ties at bin edges may split)."""
        spec = tuple(tuple(round(v / cluster_tol) for v in s) for s in self.spectra)
        return spec, round(self.f_limit / value_tol)


def stratum_label(x0: Representation, alpha: CentralShift, cfg: IntegratorConfig,
                  refine_tol: float = 1e-10) -> StratumLabel:
    """Label x0 by the spectra and value of its forward-flow limit."""
    trace = integrate(x0, alpha, cfg)
    if trace.status != "converged":
        return StratumLabel(spectra=(), f_limit=float("nan"), status="inconclusive")
    rec = refine_critical(trace.final, alpha, tol=refine_tol, cfg=cfg)
    return StratumLabel(spectra=rec.beta_spectra, f_limit=rec.f_crit)


def sample_unstable_level(rec: CriticalRecord, fiber: SliceFiber, alpha: CentralShift,
                          eps: float, n: int, cfg: IntegratorConfig,
                          seed_radius: float = 1e-4) -> list:
    """Sample the unstable set on the level f_crit - eps through fiber seeds.

    Returns a list of dicts with the seed direction, the endpoint, the
    crossing time, and the recorded flow time (so membership can be checked
    by flowing backward for that long).  Per-seed failures are recorded
    with endpoint None.
    """
    out = []
    if n <= 0 or fiber.dim == 0:
        return out
    q, dims = rec.x.quiver, rec.x.dims
    x0_flat = rec.x.flatten()
    dirs = fiber_directions(fiber.dim, n)
    level = rec.f_crit - eps
    for i in range(n):
        vec = fiber.basis @ dirs[i]
        seed = Representation.unflatten(q, dims, x0_flat + seed_radius * vec)
        entry = {"direction": dirs[i], "seed": seed}
        try:
            res = level_set_map(seed, alpha, level, cfg)
            entry.update(endpoint=res.point, time=res.time, status=res.status, error=None)
        except QuiverFlowError as exc:
            entry.update(endpoint=None, time=None, status="failed", error=str(exc))
        out.append(entry)
    return out


@dataclass(frozen=True)
class FlowLine:
    """One trajectory normalized by its anchor on the level f = z."""

    anchor: Representation
    z: float
    lower: CriticalRecord
    upper: CriticalRecord          # None when the backward flow escapes
    forward_status: str
    backward_status: str

    @property
    def has_upper(self):
        return self.upper is not None


def flow_line(anchor: Representation, z: float, alpha: CentralShift,
              cfg: IntegratorConfig, refine_tol: float = 1e-10) -> FlowLine:
    """Classify the trajectory through an anchor with f(anchor) = z.

    The forward flow must converge (the anchor's lower endpoint); the
    backward flow either converges to the upper endpoint or escapes, in
    which case the anchor lies on no unstable set and upper is None.
    """
    fa = f_value(anchor, alpha)
    if abs(fa - z) > 1e-8 * (1.0 + abs(z)):
        raise ValueError(f"anchor has f = {fa:.12g}, not the stated level {z:.12g}")
    if float(np.linalg.norm(grad_f(anchor, alpha).flatten())) < cfg.grad_stop:
        raise ValueError("anchor is a critical point; flow lines need a regular anchor")
    fwd = integrate(anchor, alpha, cfg)
    if fwd.status != "converged":
        raise QuiverFlowError(f"forward flow from anchor did not converge ({fwd.status})")
    lower = refine_critical(fwd.final, alpha, tol=refine_tol, cfg=cfg)
    bwd = integrate(anchor, alpha, cfg, direction=-1)
    upper = None
    if bwd.status == "converged":
        upper = refine_critical(bwd.final, alpha, tol=refine_tol, cfg=cfg)
    return FlowLine(anchor=anchor, z=float(z), lower=lower, upper=upper,
                    forward_status=fwd.status, backward_status=bwd.status)


@dataclass(frozen=True)
class BrokenLineReport:
    """Checkpoint records for a degenerating family of flow lines.

    The experiment follows one convergent family; it cannot exhibit the
    subsequence extraction of the general compactness statement, only the
    Cauchy behavior of this family's checkpoints.  ``dwell_fractions``
    records, per member and intermediate critical value, the fraction of
    trace time spent inside a narrow band around that value - the visible
    signature of the breaking as the family degenerates.
    """

    chain: tuple                   # CriticalRecord from upper to lower
    levels: tuple                  # checkpoint levels r_k
    params: tuple                  # family parameters, in visiting order
    checkpoints: tuple = field(repr=False)   # [k][n] Representation or None
    successive_distances: tuple = ()         # [k][n] ||y_k(n) - y_k(n+1)||
    chain_values: tuple = ()
    single_line: bool = False
    checkpoint_membership: tuple = ()        # per level: dict with endpoint matches
    dwell_fractions: tuple = ()              # [intermediate][n] time fraction

    @property
    def strictly_decreasing(self):
        vals = self.chain_values
        return all(vals[i] > vals[i + 1] for i in range(len(vals) - 1))


def broken_line_experiment(seed_family, params, alpha: CentralShift, levels,
                           cfg: IntegratorConfig, limit_param=None,
                           refine_tol: float = 1e-9, value_tol: float = VALUE_TOL) -> BrokenLineReport:
    """Track level checkpoints of a family of flow lines as it degenerates.

    seed_family maps a parameter to a seed representation; params is the
    (finite) sequence approaching the degenerate member, and limit_param,
    when given, is integrated separately to expose the intermediate
    critical point the family breaks through.  Every member is flowed
    backward to identify the common upper record and forward through each
    checkpoint level down to its lower record.  If the limiting member
    converges straight to the bottom value, the family does not break and
    a single-line report (empty intermediate chain) is returned.
    """
    levels = tuple(float(r) for r in levels)
    members = []
    for s in params:
        seed = seed_family(s)
        bwd = integrate(seed, alpha, cfg, direction=-1)
        if bwd.status != "converged":
            raise QuiverFlowError(f"backward flow of family member {s!r} did not converge")
        fwd = integrate(seed, alpha, cfg)
        if fwd.status != "converged":
            raise QuiverFlowError(f"forward flow of family member {s!r} did not converge")
        members.append((s, seed, bwd, fwd))

    upper = refine_critical(members[0][2].final, alpha, tol=refine_tol, cfg=cfg)
    lower = refine_critical(members[0][3].final, alpha, tol=refine_tol, cfg=cfg)

    # checkpoints
    checkpoints = [[] for _ in levels]
    for s, seed, _, _ in members:
        for k, r in enumerate(levels):
            try:
                _, y = tau_level(seed, alpha, r, cfg)
            except QuiverFlowError:
                y = None
            checkpoints[k].append(y)

    successive = []
    for k in range(len(levels)):
        ds = []
        for n in range(len(members) - 1):
            y0, y1 = checkpoints[k][n], checkpoints[k][n + 1]
            ds.append(float(y0.distance(y1)) if (y0 is not None and y1 is not None) else None)
        successive.append(tuple(ds))

    # intermediate critical point from the degenerate member
    intermediates = []
    if limit_param is not None:
        lim_seed = seed_family(limit_param)
        lim_trace = integrate(lim_seed, alpha, cfg)
        if lim_trace.status == "converged":
            rec = refine_critical(lim_trace.final, alpha, tol=refine_tol, cfg=cfg)
            if rec.f_crit > lower.f_crit + value_tol:
                intermediates.append(rec)

    chain = (upper, *intermediates, lower)
    chain_values = tuple(r.f_crit for r in chain)

    # dwell evidence: time fraction each member spends near an intermediate
    # value (band scaled to the chain's spread)
    span = max(chain_values[0] - chain_values[-1], 1e-12)
    band = 0.02 * span
    dwell = []
    for rec in intermediates:
        fracs = []
        for _, _, _, fwd in members:
            dts = np.diff(fwd.ts)
            near = np.abs(fwd.fs[:-1] - rec.f_crit) < band
            total = float(fwd.ts[-1] - fwd.ts[0])
            fracs.append(float(np.sum(dts[near])) / total if total > 0 else 0.0)
        dwell.append(tuple(fracs))

    # membership evidence: final member's checkpoints flow to consecutive
    # chain values (within tolerance) in both directions
    membership = []
    for k, r in enumerate(levels):
        y = checkpoints[k][-1]
        entry = {"level": r, "computed": y is not None}
        if y is not None:
            fwd = integrate(y, alpha, cfg)
            bwd = integrate(y, alpha, cfg, direction=-1)
            entry["forward_value"] = float(fwd.fs[-1]) if fwd.status == "converged" else None
            entry["backward_value"] = float(bwd.fs[-1]) if bwd.status == "converged" else None
        membership.append(entry)

    return BrokenLineReport(
        chain=chain, levels=levels, params=tuple(params),
        checkpoints=tuple(tuple(col) for col in checkpoints),
        successive_distances=tuple(successive),
        chain_values=chain_values,
        single_line=(len(intermediates) == 0),
        checkpoint_membership=tuple(membership),
        dwell_fractions=tuple(dwell),
    )


def search_three_level_configs(rng, cfg: IntegratorConfig, n_quivers: int = 5,
                               n_seeds: int = 8) -> list:
    """Exploratory scan of small random quivers for >= 3 critical levels.

    Samples random two or three vertex quivers with random shifts, runs
    the seed scan on each, and returns those whose reachable critical
    values form at least a three-level ladder.  Purely exploratory: the
    per-quiver level lists carry no completeness guarantee.
    """
    from .quiver import Quiver

    hits = []
    for _ in range(n_quivers):
        nv = int(rng.integers(2, 4))
        ne = int(rng.integers(2, 4))
        vertices = [str(i + 1) for i in range(nv)]
        edges = []
        for e in range(ne):
            t = int(rng.integers(0, nv))
            h = int(rng.integers(0, nv))
            edges.append((f"e{e}", vertices[t], vertices[h]))
        quiver = Quiver.from_lists(vertices, edges)
        dims = tuple(int(rng.integers(1, 3)) for _ in range(nv))
        alpha = CentralShift(tuple(float(a) for a in rng.uniform(-1.5, 1.5, nv)))
        try:
            found = search_critical_levels(quiver, dims, alpha, cfg, rng,
                                           n_seeds=n_seeds)
        except QuiverFlowError:
            continue
        if len(found["values"]) >= 3:
            hits.append({"exploratory": True,
                         "vertices": vertices,
                         "edges": edges,
                         "dims": dims,
                         "alpha": alpha.alpha,
                         "values": found["values"]})
    return hits


def search_critical_levels(quiver, dims, alpha: CentralShift, cfg: IntegratorConfig,
                           rng, n_seeds: int = 12, scale: float = 1.0,
                           value_tol: float = VALUE_TOL) -> dict:
    """Exploratory scan for distinct critical values reachable from random seeds.

    Flows random starts (and their small perturbations of the origin) and
    clusters the limiting values.  Outputs are labeled exploratory: the
    scan proves nothing about completeness of the level list.
    """
    values, records = [], []
    seeds = [Representation.zero(quiver, dims)]
    # axis seeds supported on a single edge reach strata that random seeds
    # almost surely miss
    for a in range(quiver.n_edges):
        axis = Representation.random(quiver, dims, rng, scale=scale)
        blocks = [np.zeros_like(b) if e != a else b
                  for e, b in enumerate(axis.blocks)]
        seeds.append(axis.replace_blocks(blocks))
    seeds += [Representation.random(quiver, dims, rng, scale=scale) for _ in range(n_seeds)]
    for seed in seeds:
        trace = integrate(seed, alpha, cfg)
        if trace.status != "converged":
            continue
        try:
            rec = refine_critical(trace.final, alpha, tol=1e-9, cfg=cfg)
        except QuiverFlowError:
            continue
        if not any(abs(rec.f_crit - v) < value_tol for v in values):
            values.append(rec.f_crit)
            records.append(rec)
    order = np.argsort(values)
    return {
        "exploratory": True,
        "values": [float(values[i]) for i in order],
        "records": [records[i] for i in order],
    }
