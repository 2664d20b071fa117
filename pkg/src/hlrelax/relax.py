"""
Curl-free relaxation: plaquette, block and line-shift updates and the sweep
schedules built from them.

Every update adds a rotational flux around a closed loop of edges (or along a
whole periodic line), so the discrete Gauss law holds exactly after each one;
the flux is the exact minimiser of the energy along that direction.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from hlrelax import _kernels
from hlrelax.grid import PLANES, EdgeCoeff, GridSpec, StaggeredField

__all__ = [
    "RelaxMethod", "Block", "SweepTrace", "plaquette_flux", "apply_plaquette",
    "block_flux", "apply_block", "line_flux", "line_shift", "line_shifts",
    "forward_schedule", "zigzag_schedule", "level_schedule",
    "hierarchy_depth", "level_blocks", "relax_pass", "pass_work",
]

log = logging.getLogger(__name__)


class RelaxMethod(str, enum.Enum):
    SINGLE = "single"
    FORWARD = "forward"
    ZIGZAG = "zigzag"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"singlemesh": "single", "single-mesh": "single",
                   "forwardhlr": "forward", "zigzaghlr": "zigzag"}
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(
                f"unknown relaxation method {value!r}; choose from "
                f"{[m.value for m in cls]}") from None

    @property
    def hierarchical(self):
        return self is not RelaxMethod.SINGLE


@dataclass(frozen=True)
class Block:
    """Block of cells at hierarchy level ``level``.

    ``lo`` is the lowest corner node and ``hi = lo + side`` the opposite
    corner, in unwrapped finest-grid indices (``hi`` may equal the cell
    count and then wraps to 0).
    """

    level: int
    lo: tuple[int, ...]
    side: tuple[int, ...]

    @property
    def hi(self):
        return tuple(l + s for l, s in zip(self.lo, self.side))


@dataclass
class SweepTrace:
    """Bookkeeping of one relaxation pass."""

    updates_applied: int = 0
    flux_max: float = 0.0
    energy_drop: float = 0.0
    edge_touches: int = 0
    line_updates: int = 0

    def add(self, count, touches, fmax, drop):
        self.updates_applied += int(count)
        self.edge_touches += int(touches)
        self.flux_max = max(self.flux_max, float(fmax))
        self.energy_drop += float(drop)


def hierarchy_depth(spec: GridSpec) -> int:
    """Number of levels ``M`` such that level ``M`` blocks are single cells."""
    depths = []
    for n in spec.cells:
        if n & (n - 1):
            raise ValueError(
                f"hierarchical relaxation needs power-of-two cell counts, "
                f"got {spec.cells}")
        depths.append(n.bit_length() - 1)
    return max(depths)


def level_sides(spec: GridSpec, level: int) -> tuple[int, ...]:
    """Block side lengths (in cells) at ``level``; 1 once an axis is exhausted."""
    if level < 1:
        raise ValueError("level 0 (the whole periodic domain) is not a valid block level")
    return tuple(max(n >> level, 1) for n in spec.cells)


def level_blocks(spec: GridSpec, level: int):
    """Blocks of one level in lexicographic order, x fastest."""
    side = level_sides(spec, level)
    ranges = [range(0, n, s) for n, s in zip(spec.cells, side)]
    for lo in np.ndindex(*[len(r) for r in ranges][::-1]):
        lo = tuple(r[q] for r, q in zip(ranges, lo[::-1]))
        yield Block(level, lo, side)


def forward_schedule(depth: int) -> list[int]:
    if depth < 1:
        raise ValueError(f"forward schedule needs depth >= 1, got {depth}")
    return list(range(1, depth + 1))


def zigzag_schedule(depth: int) -> list[int]:
    """Overlapping three-level sub-cycles ``l, l+1, l+2`` for ``l = 1 .. M-2``."""
    if depth < 3:
        raise ValueError(f"zigzag schedule needs depth >= 3, got {depth}")
    return [k for l in range(1, depth - 1) for k in (l, l + 1, l + 2)]


def level_schedule(method, depth: int) -> list[int]:
    method = RelaxMethod.parse(method)
    if method is RelaxMethod.FORWARD:
        return forward_schedule(depth)
    if method is RelaxMethod.ZIGZAG:
        if depth < 3:
            log.info("zigzag needs depth >= 3 (got %d); using the forward "
                     "schedule", depth)
            return forward_schedule(depth)
        return zigzag_schedule(depth)
    return [depth]


# Single updates. In 3D ``plane`` picks the face orientation (a, b).

def _check(E, eps):
    if E.spec != eps.spec:
        raise ValueError("field and permittivity live on different grids")


def _rect_args(E, eps, plane):
    a, b = plane
    return E.comp[a], E.comp[b], eps.inv[a], eps.inv[b], a, b


def plaquette_flux(E: StaggeredField, eps: EdgeCoeff, cell, plane=(0, 1)) -> float:
    """Optimal rotational flux around the plaquette with lowest corner ``cell``."""
    _check(E, eps)
    h = E.spec.spacing
    cell = tuple(int(c) % n for c, n in zip(cell, E.spec.cells))
    if E.spec.dim == 2:
        eta, _ = _kernels.plaquette_eta_2d(*E.comp, *eps.inv, *cell, *h)
        return eta
    Ea, Eb, ia, ib, a, b = _rect_args(E, eps, plane)
    eta, _ = _kernels.rect_eta_3d(Ea, Eb, ia, ib, a, b, np.array(cell), 1, 1,
                                  h[a], h[b], E.spec.cell_volume)
    return eta


def apply_plaquette(E: StaggeredField, eps: EdgeCoeff, cell, eta, plane=(0, 1)):
    """Add the flux ``eta`` around one plaquette, in place."""
    _check(E, eps)
    h = E.spec.spacing
    cell = tuple(int(c) % n for c, n in zip(cell, E.spec.cells))
    if E.spec.dim == 2:
        _kernels.apply_plaquette_2d(*E.comp, *eps.inv, *cell, *h, float(eta))
        return E
    Ea, Eb, ia, ib, a, b = _rect_args(E, eps, plane)
    _kernels.apply_rect_3d(Ea, Eb, ia, ib, a, b, np.array(cell), 1, 1,
                           h[a], h[b], float(eta))
    return E


def _block_base(block, plane, layer):
    base = np.array(block.lo, dtype=np.int64)
    if len(base) == 3:
        c = 3 - sum(plane)
        if not 0 <= layer < block.side[c]:
            raise ValueError(f"layer {layer} outside block of side {block.side}")
        base[c] += layer
    return base


def block_flux(E: StaggeredField, eps: EdgeCoeff, block: Block, plane=(0, 1),
               layer=0) -> float:
    """Optimal flux around the boundary of ``block``.

    In 3D the rectangle lies on ``plane`` at offset ``layer`` along the
    remaining axis.
    """
    _check(E, eps)
    h = E.spec.spacing
    if E.spec.dim == 2:
        eta, _ = _kernels.block_eta_2d(*E.comp, *eps.inv, *block.lo,
                                       *block.side, *h)
        return eta
    Ea, Eb, ia, ib, a, b = _rect_args(E, eps, plane)
    eta, _ = _kernels.rect_eta_3d(Ea, Eb, ia, ib, a, b,
                                  _block_base(block, plane, layer),
                                  block.side[a], block.side[b], h[a], h[b],
                                  E.spec.cell_volume)
    return eta


def apply_block(E: StaggeredField, eps: EdgeCoeff, block: Block, eta,
                plane=(0, 1), layer=0):
    _check(E, eps)
    h = E.spec.spacing
    if E.spec.dim == 2:
        _kernels.apply_block_2d(*E.comp, *eps.inv, *block.lo, *block.side,
                                *h, float(eta))
        return E
    Ea, Eb, ia, ib, a, b = _rect_args(E, eps, plane)
    _kernels.apply_rect_3d(Ea, Eb, ia, ib, a, b,
                           _block_base(block, plane, layer),
                           block.side[a], block.side[b], h[a], h[b], float(eta))
    return E


def _line_index(spec, axis, line):
    line = (line,) if np.isscalar(line) else tuple(line)
    if len(line) != spec.dim - 1:
        raise ValueError(f"a line along axis {axis} is indexed by "
                         f"{spec.dim - 1} coordinates, got {line}")
    idx = list(c % n for c, n in zip(line, [n for a, n in enumerate(spec.cells)
                                              if a != axis]))
    idx.insert(axis, slice(None))
    return tuple(idx)


def line_flux(E: StaggeredField, eps: EdgeCoeff, axis, line) -> float:
    """Optimal uniform flux ``-sum(E) / sum(1/eps)`` along one periodic line."""
    _check(E, eps)
    idx = _line_index(E.spec, axis, line)
    return -float(np.sum(E.comp[axis][idx])) / float(np.sum(eps.inv[axis][idx]))


def line_shift(E: StaggeredField, eps: EdgeCoeff, axis, line) -> float:
    """Shift one line by its optimal flux in place; returns the flux."""
    eta = line_flux(E, eps, axis, line)
    idx = _line_index(E.spec, axis, line)
    E.comp[axis][idx] += eta * eps.inv[axis][idx]
    return eta


def _new_carry(E):
    return [np.zeros_like(c) for c in E.comp]


def _fold(E, carry):
    for c, lo in zip(E.comp, carry):
        c += lo
        lo[...] = 0.0


def line_shifts(E: StaggeredField, eps: EdgeCoeff, carry=None):
    """Shift every line of every axis; returns (lines, max|eta|, energy drop).

    ``carry`` works as in :func:`relax_pass`.
    """
    _check(E, eps)
    own = carry is None
    if own:
        carry = _new_carry(E)
    dv = E.spec.cell_volume
    if E.spec.dim == 2:
        out = _kernels.line_shifts_2d(*E.comp, *carry, *eps.inv, dv)
    else:
        fmax = 0.0
        drop = 0.0
        lines = 0
        for a in range(E.spec.dim):
            comp, inv, lo = E.comp[a], eps.inv[a], carry[a]
            s = comp.sum(axis=a, keepdims=True)
            d = inv.sum(axis=a, keepdims=True)
            eta = -s / d
            delta = eta * inv
            t = comp + delta
            z = t - comp
            lo += (comp - (t - z)) + (delta - z)
            comp[...] = t
            fmax = max(fmax, float(np.abs(eta).max()))
            drop += dv * float(np.sum(s * s / (2.0 * d)))
            lines += eta.size
        out = lines, fmax, drop
    if own:
        _fold(E, carry)
    return out


# Passes

def _flat(arr):
    if not arr.flags.f_contiguous:
        raise ValueError("field arrays must be Fortran-ordered")
    return arr.ravel(order="F")


def _sweep_level(E, eps, sides, carry):
    h = E.spec.spacing
    if E.spec.dim == 2:
        if sides == (1, 1):
            rden = eps.cache.get("rden")
            if rden is None:
                rden = eps.cache["rden"] = _kernels.cell_rden_2d(*eps.inv, *h)
            count, fmax, drop = _kernels.sweep_cells_2d(*E.comp, *carry,
                                                        *eps.inv, rden, *h)
            return count, 4 * count, fmax, drop
        count, fmax, drop = _kernels.sweep_blocks_2d(*E.comp, *carry, *eps.inv,
                                                     *sides, *h)
        return count, 2 * count * (sides[0] + sides[1]), fmax, drop
    flat = [_flat(c) for c in (*E.comp, *carry, *eps.inv)]
    return _kernels.sweep_blocks_3d(*flat, *E.spec.cells, *sides, *h)


def relax_pass(E: StaggeredField, eps: EdgeCoeff, method="single",
               line_shift_stage=True, carry=None) -> SweepTrace:
    """One full relaxation pass in place: cell or block sweeps, then line shifts.

    Parameters
    ----------
    carry : list of ndarray, optional
        Per-component arrays that collect the rounding error of every field
        update, so that ``E + carry`` keeps the Gauss law over long runs.
        Without it a scratch carry is folded into ``E`` after the pass.
    """
    _check(E, eps)
    method = RelaxMethod.parse(method)
    own = carry is None
    if own:
        carry = _new_carry(E)
    trace = SweepTrace()
    if method is RelaxMethod.SINGLE:
        trace.add(*_sweep_level(E, eps, (1,) * E.spec.dim, carry))
    else:
        depth = hierarchy_depth(E.spec)
        for level in level_schedule(method, depth):
            trace.add(*_sweep_level(E, eps, level_sides(E.spec, level), carry))
    if line_shift_stage:
        lines, fmax, drop = line_shifts(E, eps, carry)
        trace.line_updates = lines
        trace.edge_touches += E.spec.size * E.spec.dim
        trace.flux_max = max(trace.flux_max, fmax)
        trace.energy_drop += drop
    if own:
        _fold(E, carry)
    return trace


def pass_work(spec: GridSpec, method="single") -> tuple[int, int]:
    """Closed-form (updates, edge touches) of the cell/block stage of one pass."""
    method = RelaxMethod.parse(method)
    dim = spec.dim

    def level_work(sides):
        nblocks = int(np.prod([n // s for n, s in zip(spec.cells, sides)]))
        updates = touches = 0
        for a, b in PLANES[dim]:
            layers = int(np.prod(sides)) // (sides[a] * sides[b])
            updates += nblocks * layers
            touches += nblocks * layers * 2 * (sides[a] + sides[b])
        return updates, touches

    if method is RelaxMethod.SINGLE:
        levels = [None]
    else:
        levels = level_schedule(method, hierarchy_depth(spec))
    updates = touches = 0
    for level in levels:
        sides = (1,) * dim if level is None else level_sides(spec, level)
        u, t = level_work(sides)
        updates += u
        touches += t
    return updates, touches
