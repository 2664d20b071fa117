"""
Periodic staggered grids and the discrete operators acting on them.

Nodes sit at ``(i*hx, j*hy[, k*hz])``. Component ``a`` of a staggered field is
stored at the node index displaced by half a spacing along axis ``a`` only, so
``comp[0][i, j]`` lives at ``((i+1/2)*hx, j*hy)`` and ``comp[1][i, j]`` at
``(i*hx, (j+1/2)*hy)``. Permittivity averaged to edges (:class:`EdgeCoeff`)
shares this layout entry for entry.

All arrays have shape ``cells`` and Fortran order, so the x index runs
fastest in memory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from hlrelax import _kernels

__all__ = [
    "GridSpec", "NodeField", "StaggeredField", "EdgeCoeff", "edge_coeff",
    "average_to_edges", "discrete_div", "discrete_curl", "discrete_gradient",
    "energy", "weighted_square_total", "average_node", "average_staggered", "norm_h", "PLANES",
    "write_node_csv", "read_node_csv", "write_staggered_csv",
    "read_staggered_csv",
]

AXES = "xyz"

# Face orientations in sweep order; (a, b) spans the plane of axes a and b.
PLANES = {2: ((0, 1),), 3: ((0, 1), (1, 2), (0, 2))}


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[0, extent[0]) x ... x [0, extent[-1])``.

    Parameters
    ----------
    extent : tuple of float
        Domain length per axis.
    cells : tuple of int
        Cell count per axis, each at least 2.
    """

    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        extent = tuple(float(v) for v in self.extent)
        cells = tuple(int(n) for n in self.cells)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)
        if len(cells) not in (2, 3) or len(extent) != len(cells):
            raise ValueError(
                f"extent and cells must both have 2 or 3 entries, got "
                f"{len(extent)} and {len(cells)}")
        if any(n < 2 for n in cells):
            raise ValueError(f"every axis needs at least 2 cells, got {cells}")
        if any(not np.isfinite(v) or v <= 0 for v in extent):
            raise ValueError(f"extents must be positive, got {extent}")

    @classmethod
    def square(cls, n, length=4.0, dim=2):
        """Grid with ``n`` cells and length ``length`` on every axis."""
        return cls((length,) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extent, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    def node_coords(self, offset=None):
        """Coordinate arrays of the nodes, shifted by ``offset`` cells per axis.

        ``offset=(0.5, 0)`` gives the positions of the x component of a
        staggered field.
        """
        offset = (0.0,) * self.dim if offset is None else offset
        axes = [(np.arange(n) + o) * h
                for n, o, h in zip(self.cells, offset, self.spacing)]
        return [np.asfortranarray(c) for c in np.meshgrid(*axes, indexing="ij")]

    def edge_coords(self, axis):
        """Coordinates of the staggered points carrying component ``axis``."""
        offset = [0.0] * self.dim
        offset[axis] = 0.5
        return self.node_coords(offset)

    def zeros(self):
        return np.zeros(self.cells, order="F")


def _as_grid_array(spec, values, name):
    arr = np.asfortranarray(values, dtype=np.float64)
    if arr.shape != spec.cells:
        raise ValueError(
            f"{name} has shape {arr.shape}, grid expects {spec.cells}")
    return arr


@dataclass
class NodeField:
    """Scalar grid function sampled at the nodes (charge, permittivity, potential)."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_grid_array(self.spec, self.values, "node values")

    @classmethod
    def zeros(cls, spec):
        return cls(spec, spec.zeros())

    @classmethod
    def from_function(cls, spec, func):
        """Sample ``func(x, y[, z])`` at every node."""
        coords = spec.node_coords()
        return cls(spec, np.broadcast_to(func(*coords), spec.cells))

    def at(self, *index):
        """Value at an integer node index, wrapped periodically."""
        return self.values[tuple(i % n for i, n in zip(index, self.spec.cells))]

    def copy(self):
        return NodeField(self.spec, self.values.copy(order="F"))


@dataclass
class StaggeredField:
    """Vector field with one component per axis on the staggered points."""

    spec: GridSpec
    comp: list

    def __post_init__(self):
        if len(self.comp) != self.spec.dim:
            raise ValueError(
                f"need {self.spec.dim} components, got {len(self.comp)}")
        self.comp = [_as_grid_array(self.spec, c, f"component {AXES[a]}")
                     for a, c in enumerate(self.comp)]

    @classmethod
    def zeros(cls, spec):
        return cls(spec, [spec.zeros() for _ in range(spec.dim)])

    def copy(self):
        return StaggeredField(self.spec, [c.copy(order="F") for c in self.comp])

    def at(self, axis, *index):
        return self.comp[axis][
            tuple(i % n for i, n in zip(index, self.spec.cells))]

    def max_abs(self):
        return max(float(np.abs(c).max()) for c in self.comp)

    def _check(self, other):
        if not isinstance(other, StaggeredField) or other.spec != self.spec:
            raise ValueError("staggered fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return StaggeredField(
            self.spec, [a + b for a, b in zip(self.comp, other.comp)])

    def __sub__(self, other):
        self._check(other)
        return StaggeredField(
            self.spec, [a - b for a, b in zip(self.comp, other.comp)])

    def __mul__(self, scalar):
        return StaggeredField(self.spec, [scalar * c for c in self.comp])

    __rmul__ = __mul__


@dataclass
class EdgeCoeff:
    """Permittivity on the staggered points, same layout as :class:`StaggeredField`.

    ``inv`` caches the reciprocals used by every relaxation kernel; ``cache``
    holds derived per-cell quantities and must not outlive the values.
    """

    spec: GridSpec
    eps: list
    bounds: tuple[float, float] = field(init=False)
    inv: list = field(init=False, repr=False)
    cache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self.eps = [_as_grid_array(self.spec, e, f"eps component {AXES[a]}")
                    for a, e in enumerate(self.eps)]
        lo = min(float(e.min()) for e in self.eps)
        hi = max(float(e.max()) for e in self.eps)
        if not lo > 0:
            raise ValueError(f"edge permittivity must be positive, min is {lo}")
        self.bounds = (lo, hi)
        self.inv = [np.asfortranarray(1.0 / e) for e in self.eps]

    @classmethod
    def constant(cls, spec, value):
        return cls(spec, [np.full(spec.cells, float(value), order="F")
                          for _ in range(spec.dim)])

    def is_constant(self):
        lo, hi = self.bounds
        return lo == hi


def average_to_edges(values) -> list:
    """Arithmetic mean of each pair of neighbouring nodes, one array per axis.

    Entry ``[i, j]`` of array ``a`` sits half a cell past node ``(i, j)``
    along axis ``a``; the last entry wraps around to node 0.
    """
    values = np.asarray(values, dtype=float)
    return [0.5 * (values + np.roll(values, -1, axis=a))
            for a in range(values.ndim)]


def edge_coeff(eps_nodes: NodeField) -> EdgeCoeff:
    """Average node permittivity onto the edges with the arithmetic mean."""
    vals = eps_nodes.values
    bad = np.argwhere(~(vals > 0))
    if bad.size:
        idx = tuple(int(v) for v in bad[0])
        raise ValueError(
            f"permittivity must be positive, node {idx} holds {vals[idx]!r}")
    return EdgeCoeff(eps_nodes.spec, average_to_edges(vals))


def _check_pair(E, eps):
    if E.spec != eps.spec:
        raise ValueError(
            f"field grid {E.spec} does not match permittivity grid {eps.spec}")


def discrete_div(E: StaggeredField, eps: EdgeCoeff) -> NodeField:
    """Node values of the discrete divergence of the displacement ``eps * E``."""
    _check_pair(E, eps)
    out = E.spec.zeros()
    for a, h in enumerate(E.spec.spacing):
        d = eps.eps[a] * E.comp[a]
        out += (d - np.roll(d, 1, axis=a)) / h
    return NodeField(E.spec, out)


def discrete_gradient(phi: NodeField) -> StaggeredField:
    """``-grad phi`` on the staggered points: ``(phi[i] - phi[i+1]) / h``."""
    v = phi.values
    return StaggeredField(
        phi.spec, [(v - np.roll(v, -1, axis=a)) / h
                   for a, h in enumerate(phi.spec.spacing)])


def plane_curl(E: StaggeredField, plane) -> np.ndarray:
    """Circulation density on the faces spanned by axes ``plane = (a, b)``.

    Entry ``[i, j, ...]`` belongs to the face whose lowest corner is that
    node: ``(E_b[+e_a] - E_b) / h_a - (E_a[+e_b] - E_a) / h_b``.
    """
    a, b = plane
    h = E.spec.spacing
    Ea, Eb = E.comp[a], E.comp[b]
    return ((np.roll(Eb, -1, axis=a) - Eb) / h[a]
            - (np.roll(Ea, -1, axis=b) - Ea) / h[b])


def discrete_curl(E: StaggeredField):
    """Discrete curl on the plaquettes.

    Returns one array in 2D; in 3D a dict keyed by orientation ``"xy"``,
    ``"yz"``, ``"xz"``.
    """
    if E.spec.dim == 2:
        return plane_curl(E, (0, 1))
    return {AXES[a] + AXES[b]: plane_curl(E, (a, b))
            for a, b in PLANES[3]}


def max_curl(E: StaggeredField) -> float:
    return max(float(np.abs(plane_curl(E, p)).max()) for p in PLANES[E.spec.dim])


def energy(E: StaggeredField, eps: EdgeCoeff) -> float:
    """Discrete electrostatic energy ``dV/2 * sum(eps * E**2)`` (compensated sum)."""
    _check_pair(E, eps)
    return 0.5 * E.spec.cell_volume * weighted_square_total(eps.eps, E.comp)


def weighted_square_total(weights, comps, carry=None) -> float:
    """Compensated ``sum_a sum(w_a * (comps_a + carry_a)**2)``."""
    parts = []
    for a, (w, c) in enumerate(zip(weights, comps)):
        lo = np.empty(0) if carry is None else carry[a].ravel(order="K")
        parts.extend(_kernels.weighted_square_parts(
            w.ravel(order="K"), c.ravel(order="K"), lo))
    return float(_kernels.compensated_sum(np.array(parts)))


def average_node(f: NodeField) -> float:
    return float(_kernels.compensated_sum(f.values.ravel(order="K"))) / f.spec.size


def average_staggered(E: StaggeredField) -> np.ndarray:
    """Per-component mean of a staggered field."""
    return np.array([_kernels.compensated_sum(c.ravel(order="K"))
                     for c in E.comp]) / E.spec.size


def norm_h(E: StaggeredField) -> float:
    one = [np.ones(1)] * E.spec.dim
    return float(np.sqrt(E.spec.cell_volume
                         * weighted_square_total(one, E.comp)))


# CSV serialisation; indices are the unshifted integer keys.

def _fmt(v):
    return format(float(v), ".17g")


def _index_rows(spec):
    # x fastest, matching the storage order
    return np.array(np.unravel_index(np.arange(spec.size), spec.cells,
                                     order="F")).T


def write_node_csv(path, f: NodeField):
    idx_names = list("ijk"[:f.spec.dim])
    flat = f.values.ravel(order="F")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(idx_names + ["value"])
        for idx, v in zip(_index_rows(f.spec), flat):
            w.writerow([*map(int, idx), _fmt(v)])


def write_staggered_csv(path, E: StaggeredField, axis):
    idx_names = list("ijk"[:E.spec.dim])
    flat = E.comp[axis].ravel(order="F")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis"] + idx_names + ["value"])
        for idx, v in zip(_index_rows(E.spec), flat):
            w.writerow([AXES[axis], *map(int, idx), _fmt(v)])


def _read_rows(path, expect_axis):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    has_axis = header[0] == "axis"
    if has_axis != expect_axis or header[-1] != "value":
        raise ValueError(f"{path}: unexpected header {header}")
    return header, body, has_axis


def read_node_csv(path, spec: GridSpec) -> NodeField:
    header, body, _ = _read_rows(path, expect_axis=False)
    if len(header) != spec.dim + 1:
        raise ValueError(f"{path}: header {header} does not match a "
                         f"{spec.dim}D grid")
    vals = np.full(spec.cells, np.nan, order="F")
    for lineno, row in enumerate(body, start=2):
        try:
            idx = tuple(int(v) for v in row[:-1])
            vals[idx] = float(row[-1])
        except (ValueError, IndexError) as err:
            raise ValueError(f"{path}:{lineno}: bad row {row}: {err}") from None
    if np.isnan(vals).any():
        missing = tuple(int(v) for v in np.argwhere(np.isnan(vals))[0])
        raise ValueError(f"{path}: no value for node {missing}")
    return NodeField(spec, vals)


def read_staggered_csv(paths, spec: GridSpec) -> StaggeredField:
    """Read one CSV per component, in axis order."""
    comps = []
    for a, path in enumerate(paths):
        header, body, _ = _read_rows(path, expect_axis=True)
        vals = np.full(spec.cells, np.nan, order="F")
        for lineno, row in enumerate(body, start=2):
            if row[0] != AXES[a]:
                raise ValueError(f"{path}:{lineno}: expected axis {AXES[a]}, "
                                 f"got {row[0]}")
            vals[tuple(int(v) for v in row[1:-1])] = float(row[-1])
        if np.isnan(vals).any():
            raise ValueError(f"{path}: incomplete component {AXES[a]}")
        comps.append(vals)
    return StaggeredField(spec, comps)

