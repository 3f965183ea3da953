"""Residual reports and the on-disk formats (CSV tables, QLH1 binary fields)."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .grid import GridSpec, l2_norm, make_grid


@dataclass
class ResidualReport:
    """Pointwise violation of one identity at one time slice.

    ``l2_rel`` divides by the largest L2 norm among the identity's
    constituent terms, so it is scale free. Masked norms only count points
    where the density exceeds the floor.
    """

    check: str
    t: float
    field: np.ndarray
    mask: np.ndarray
    l2_abs: float
    linf_abs: float
    l2_rel: float
    masked_l2_abs: float
    masked_linf_abs: float
    masked_l2_rel: float
    scale: float
    term_norms: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def convention(self) -> str:
        return str(self.metadata.get("convention", ""))

    @property
    def c0(self) -> float | None:
        return self.metadata.get("c0")


def make_report(check: str, t: float, residual: np.ndarray, grid: GridSpec,
                terms: Mapping[str, np.ndarray], mask: np.ndarray, **metadata) -> ResidualReport:
    if not np.all(np.isfinite(residual)):
        raise FloatingPointError(f"{check} residual is not finite")
    term_norms = {k: l2_norm(v, grid) for k, v in terms.items()}
    masked_terms = [l2_norm(v, grid, mask) for v in terms.values()]
    scale = max(term_norms.values(), default=0.0)
    mscale = max(masked_terms, default=0.0)
    l2 = l2_norm(residual, grid)
    ml2 = l2_norm(residual, grid, mask)
    absr = np.abs(residual)
    if absr.ndim > grid.dim:
        absr = np.sqrt((absr**2).reshape(-1, *grid.shape).sum(axis=0))
    return ResidualReport(
        check=check,
        t=float(t),
        field=residual,
        mask=mask,
        l2_abs=l2,
        linf_abs=float(absr.max()),
        l2_rel=l2 / scale if scale > 0 else 0.0 if l2 == 0 else np.inf,
        masked_l2_abs=ml2,
        masked_linf_abs=float(np.where(mask, absr, 0.0).max()),
        masked_l2_rel=ml2 / mscale if mscale > 0 else 0.0 if ml2 == 0 else np.inf,
        scale=scale,
        term_norms=term_norms,
        metadata=dict(metadata),
    )


# --------------------------------------------------------------------------
# CSV

RESIDUAL_COLUMNS = ("t", "L2_abs", "Linf_abs", "L2_rel", "convention", "c0")
DISPERSION_COLUMNS = ("k", "omega_measured", "omega_analytic", "rel_error")


def write_residual_csv(path: str | Path, reports: Iterable[ResidualReport]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESIDUAL_COLUMNS)
        for r in reports:
            c0 = "" if r.c0 is None else repr(float(r.c0))
            w.writerow([repr(r.t), repr(r.l2_abs), repr(r.linf_abs), repr(r.l2_rel), r.convention, c0])
    return path


def write_table(path: str | Path, columns: Iterable[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_table(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# QLH1 binary fields
#
# Little-endian header, then float64 payload:
#   4s   magic "QLH1"
#   I    dim
#   3I   points per axis (unused axes are 1)
#   3d   extents (unused axes are 0)
#   d    time
#   I    field kind tag (see FIELD_KINDS)
#   I    scalar type tag (1 = float64 little-endian)
#   I    component count
# Payload: component-major blocks; each block row-major over (x, y, z).
# Complex scalars are stored as two components (real, imaginary).

MAGIC = b"QLH1"
HEADER = struct.Struct("<4sI3I3ddIII")
FIELD_KINDS = {"real": 0, "complex": 1, "vector": 2, "symtensor": 3}
_KIND_NAMES = {v: k for k, v in FIELD_KINDS.items()}
FLOAT64_LE = 1


@dataclass
class FieldFile:
    grid: GridSpec
    time: float
    kind: str
    values: np.ndarray


def _components(kind: str, values: np.ndarray, grid: GridSpec) -> np.ndarray:
    if kind == "real":
        return np.asarray(values, dtype="<f8")[None]
    if kind == "complex":
        values = np.asarray(values, dtype=complex)
        return np.stack([values.real, values.imag]).astype("<f8")
    comps = np.asarray(values, dtype="<f8")
    if comps.shape[1:] != grid.shape:
        raise ValueError("component array does not match grid")
    return comps


def write_field(path: str | Path, grid: GridSpec, values, kind: str, time: float = 0.0) -> Path:
    if kind not in FIELD_KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    if kind == "symtensor" and hasattr(values, "components"):
        values = values.components
    comps = _components(kind, values, grid)
    pts = list(grid.points) + [1] * (3 - grid.dim)
    ext = list(grid.extents) + [0.0] * (3 - grid.dim)
    header = HEADER.pack(MAGIC, grid.dim, *pts, *ext, float(time), FIELD_KINDS[kind], FLOAT64_LE, comps.shape[0])
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(comps).tobytes())
    return path


def read_field(path: str | Path, origin=None) -> FieldFile:
    """Read a QLH1 file. The format carries no origin; pass one to restore it."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise ValueError("file too short for a QLH1 header")
    magic, dim, n0, n1, n2, e0, e1, e2, time, kind, stype, ncomp = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if stype != FLOAT64_LE:
        raise ValueError(f"unsupported scalar type tag {stype}")
    if kind not in _KIND_NAMES:
        raise ValueError(f"unknown field kind tag {kind}")
    points = (n0, n1, n2)[:dim]
    extents = (e0, e1, e2)[:dim]
    expected = ncomp * int(np.prod(points)) * 8
    payload = data[HEADER.size:]
    if len(payload) != expected:
        raise ValueError(f"payload has {len(payload)} bytes, header implies {expected}")
    grid = make_grid(dim, extents, points, 0.0 if origin is None else origin)
    comps = np.frombuffer(payload, dtype="<f8").reshape(ncomp, *points).astype(float)
    name = _KIND_NAMES[kind]
    if name == "real":
        values = comps[0]
    elif name == "complex":
        values = comps[0] + 1j * comps[1]
    else:
        values = comps
    return FieldFile(grid, time, name, values)
