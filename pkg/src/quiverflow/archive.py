"""Run archives: canonical JSON outputs, CSV exports, atomic writes.

An archive directory holds the effective config snapshot (config.json),
deterministic artifacts under outputs/, and volatile wall-clock metadata in
meta.json.  Everything under outputs/ plus config.json is byte-reproducible
from the snapshot: JSON is dumped with sorted keys, floats go through
Python's shortest round-trip repr, CSV floats are printed with 17
significant digits, and writes are atomic (temp file then rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import QuiverFlowError

__all__ = [
    "write_text",
    "write_json",
    "canonical_json",
    "csv_float",
    "trace_jsonable",
    "record_jsonable",
    "fiber_jsonable",
    "trace_csv",
    "census_csv",
    "checkpoints_csv",
    "slice_csv",
    "export_csv",
]


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return _to_jsonable(np.stack([obj.real, obj.imag], axis=-1))
        return _to_jsonable(obj.tolist())
    if isinstance(obj, complex):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_text(path, text):
    """Atomic write: temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_text(path, canonical_json(obj))


def csv_float(x) -> str:
    """17 significant digits, enough to round-trip doubles."""
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# jsonable views of the core value types


def matrix_jsonable(m):
    m = np.asarray(m)
    return [[[float(c.real), float(c.imag)] for c in row] for row in m]


def rep_jsonable(x):
    return {x.quiver.edges[a]: matrix_jsonable(x.blocks[a]) for a in range(x.quiver.n_edges)}


def trace_jsonable(trace, state_stride: int = 1):
    out = {
        "status": trace.status,
        "direction": trace.direction,
        "t": [float(v) for v in trace.ts],
        "f": [float(v) for v in trace.fs],
        "gradnorm": [float(v) for v in trace.gradnorms],
        # parallel lists keep registration order under sorted-key JSON dumps
        "monitor_names": list(trace.monitors.keys()),
        "monitor_values": [[float(v) for v in vals] for vals in trace.monitors.values()],
        "state_stride": int(state_stride),
        "states": [],
    }
    idx = list(range(0, trace.n_samples, max(1, state_stride)))
    if idx and idx[-1] != trace.n_samples - 1:
        idx.append(trace.n_samples - 1)
    out["state_indices"] = idx
    out["states"] = [rep_jsonable(trace.xs[i]) for i in idx]
    return out


def record_jsonable(rec):
    return {
        "f_crit": float(rec.f_crit),
        "grad_residual": float(rec.grad_residual),
        "beta_spectra": [[float(v) for v in s] for s in rec.beta_spectra],
        "x": rep_jsonable(rec.x),
    }


def fiber_jsonable(fiber):
    return {"dim": int(fiber.dim),
            "basis": [[float(v) for v in fiber.basis[:, j]] for j in range(fiber.dim)]}


# ---------------------------------------------------------------------------
# CSV renderers (deterministic column order, documented in the README)


def trace_csv(tr_json) -> str:
    mon_names = tr_json["monitor_names"]
    mon_values = tr_json["monitor_values"]
    header = ["t", "f", "gradnorm"] + list(mon_names)
    lines = [",".join(header)]
    for i in range(len(tr_json["t"])):
        row = [csv_float(tr_json["t"][i]), csv_float(tr_json["f"][i]),
               csv_float(tr_json["gradnorm"][i])]
        row += [csv_float(vals[i]) for vals in mon_values]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def census_csv(census_json) -> str:
    lines = ["rho,theta,in_set,component_id"]
    rho = census_json["rho"]
    theta = census_json["theta"]
    labels = census_json["labels"]
    for i in range(len(rho)):
        for j in range(len(theta)):
            lab = labels[i][j]
            lines.append(",".join([
                csv_float(rho[i]), csv_float(theta[j]),
                "1" if lab >= 0 else "0", str(lab),
            ]))
    return "\n".join(lines) + "\n"


def checkpoints_csv(broken_json) -> str:
    lines = ["member,param,level,coord_index,value"]
    for k, level in enumerate(broken_json["levels"]):
        for n, param in enumerate(broken_json["params"]):
            pt = broken_json["checkpoints"][k][n]
            if pt is None:
                continue
            for ci, v in enumerate(pt):
                lines.append(",".join([str(n), csv_float(param), csv_float(level),
                                       str(ci), csv_float(v)]))
    return "\n".join(lines) + "\n"


def slice_csv(slice_json) -> str:
    dim = slice_json["fiber"]["dim"]
    basis = slice_json["fiber"]["basis"]
    width = len(basis[0]) if dim else 0
    header = ["vector_index"] + [f"coord_{i}" for i in range(width)]
    lines = [",".join(header)]
    for j in range(dim):
        lines.append(",".join([str(j)] + [csv_float(v) for v in basis[j]]))
    return "\n".join(lines) + "\n"


_CSV_RENDERERS = {
    "trace": ("traces.json", None),
    "checkpoints": ("broken.json", checkpoints_csv),
    "census": ("retract.json", None),
    "slice": ("slice.json", slice_csv),
}


def export_csv(archive_dir, what, dest_dir=None):
    """Re-render CSV artifacts from an archive's JSON outputs.

    Returns the list of files written.  Raises QuiverFlowError when the
    archive does not contain the requested artifact.
    """
    out_dir = dest_dir or os.path.join(archive_dir, "outputs")
    src_dir = os.path.join(archive_dir, "outputs")
    if what not in _CSV_RENDERERS:
        raise QuiverFlowError(f"unknown export kind {what!r}")
    src_name, renderer = _CSV_RENDERERS[what]
    src = os.path.join(src_dir, src_name)
    if not os.path.exists(src):
        raise QuiverFlowError(f"archive has no {src_name} (needed for {what!r})")
    with open(src, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    written = []
    if what == "trace":
        for i, tr in enumerate(doc["traces"]):
            path = os.path.join(out_dir, f"trace_{i:03d}.csv")
            write_text(path, trace_csv(tr))
            written.append(path)
    elif what == "census":
        for name, census in doc.get("census_grids", {}).items():
            path = os.path.join(out_dir, f"census_{name}.csv")
            write_text(path, census_csv(census))
            written.append(path)
    else:
        path = os.path.join(out_dir, f"{what}.csv")
        write_text(path, renderer(doc))
        written.append(path)
    return written
