"""
Problem assembly and the outer relaxation loop.

The field starts from a Gauss-consistent initial guess (or a supplied one)
and is relaxed pass by pass until the energy released by a full pass drops
below ``tol``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from hlrelax import _kernels
from hlrelax.grid import (
    EdgeCoeff, GridSpec, NodeField, StaggeredField, average_node,
    average_staggered, discrete_div, edge_coeff, energy, max_curl,
    weighted_square_total,
)
from hlrelax.relax import RelaxMethod, SweepTrace, relax_pass

__all__ = [
    "Problem", "SolveReport", "init_field", "solve", "warm_start",
    "recover_potential", "diagnostics", "gauss_residual", "gauss_bound",
    "REPORT_KEYS",
]

log = logging.getLogger(__name__)

REPORT_KEYS = ("passes", "energy_history", "gauss_residual", "curl_residual",
               "avg_field", "wall_time_ms", "error_inf")

# Tolerance profiles of the time-dependent runs.
TOL_DEFAULT = 1e-7
TOL_STRICT = 1e-9


def gauss_bound(rho_values) -> float:
    """Admissible Gauss-law residual for a charge density."""
    return 1e-12 * max(1.0, float(np.abs(rho_values).max()))


@dataclass
class Problem:
    """Periodic Poisson problem in field form.

    Parameters
    ----------
    spec : GridSpec
    rho : NodeField
        Charge density at the nodes; must average to zero unless
        ``center_rho`` is set, in which case the mean is removed and kept in
        ``rho_shift``.
    eps_nodes : NodeField
        Permittivity at the nodes, averaged to the edges on construction.
    method : RelaxMethod or str
    tol : float
        Stop once a full pass lowers the energy by less than this.
    max_passes : int
    """

    spec: GridSpec
    rho: NodeField
    eps_nodes: NodeField
    method: RelaxMethod = RelaxMethod.SINGLE
    tol: float = TOL_DEFAULT
    max_passes: int = 200_000
    center_rho: bool = False
    eps: EdgeCoeff = field(init=False, repr=False)
    rho_shift: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.method = RelaxMethod.parse(self.method)
        if self.rho.spec != self.spec or self.eps_nodes.spec != self.spec:
            raise ValueError("rho and eps must be sampled on the problem grid")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_passes) < 1:
            raise ValueError(f"max_passes must be >= 1, got {self.max_passes}")
        self.max_passes = int(self.max_passes)
        mean = average_node(self.rho)
        if abs(mean) > gauss_bound(self.rho.values):
            if not self.center_rho:
                raise ValueError(
                    f"charge density has mean {mean:.3e}; periodic problems "
                    f"need a neutral charge (enable center_rho to subtract it)")
            self.rho = NodeField(self.spec, self.rho.values - mean)
            self.rho_shift = mean
        self.eps = edge_coeff(self.eps_nodes)

    @classmethod
    def from_arrays(cls, spec, rho, eps, **kwargs):
        """Build from plain arrays; a scalar ``eps`` means uniform permittivity."""
        eps = np.broadcast_to(np.asarray(eps, dtype=float), spec.cells)
        return cls(spec, NodeField(spec, rho), NodeField(spec, eps), **kwargs)

    def with_rho(self, rho_values, **overrides):
        """Same grid and permittivity, new charge density."""
        kw = dict(method=self.method, tol=self.tol, max_passes=self.max_passes,
                  center_rho=self.center_rho)
        kw.update(overrides)
        return Problem(self.spec, NodeField(self.spec, rho_values),
                       self.eps_nodes, **kw)


@dataclass(frozen=True)
class SolveReport:
    passes: int
    energy_history: tuple
    gauss_residual: float
    curl_residual: float
    avg_field: tuple
    wall_time_ms: float
    error_inf: Optional[float] = None
    converged: bool = True
    gauss_history: tuple = ()
    flux_history: tuple = ()
    drop_history: tuple = ()
    updates: int = 0
    edge_touches: int = 0

    def to_dict(self):
        d = asdict(self)
        out = {k: d[k] for k in REPORT_KEYS}
        out["energy_history"] = list(out["energy_history"])
        out["avg_field"] = list(out["avg_field"])
        return out

    def to_json(self, wall_time=True):
        d = self.to_dict()
        if not wall_time:
            d["wall_time_ms"] = 0.0
        return json.dumps(d, indent=2)


def _init_from(rho_values, eps: EdgeCoeff) -> StaggeredField:
    """Gauss-consistent field by cascading averages from the last axis down.

    For the last axis the residual is averaged over the other axes and that
    average is carried by a flux along the last axis; the remainder is
    handled the same way one axis lower. Each flux starts from zero on the
    first edge and accumulates ``h * average`` node by node.
    """
    spec = eps.spec
    h = spec.spacing
    resid = np.array(rho_values, dtype=float)
    comps = [None] * spec.dim
    for a in reversed(range(spec.dim)):
        lower = tuple(range(a))
        mean = resid.mean(axis=lower, keepdims=True) if lower else resid
        flux = np.zeros_like(mean)
        idx_hi = [slice(None)] * spec.dim
        idx_hi[a] = slice(1, None)
        idx_src = [slice(None)] * spec.dim
        idx_src[a] = slice(1, None)
        flux[tuple(idx_hi)] = h[a] * np.cumsum(mean[tuple(idx_src)], axis=a)
        comps[a] = np.asfortranarray(np.broadcast_to(flux, spec.cells)
                                     * eps.inv[a])
        if lower:
            resid = resid - mean
    return StaggeredField(spec, comps)


def init_field(problem: Problem) -> StaggeredField:
    """Initial field satisfying the discrete Gauss law for ``problem.rho``."""
    return _init_from(problem.rho.values, problem.eps)


def gauss_residual(E: StaggeredField, eps: EdgeCoeff, rho_values,
                   carry=None) -> float:
    """Max-node ``|div(eps (E + carry)) - rho|``; ``carry`` defaults to zero."""
    h = E.spec.spacing
    rho_values = np.asfortranarray(rho_values, dtype=float)
    if carry is None:
        carry = [np.zeros_like(c) for c in E.comp]
    if E.spec.dim == 2:
        return float(_kernels.gauss_residual_2d(*E.comp, *carry, *eps.eps,
                                                rho_values, *h))
    return float(_kernels.gauss_residual_3d(*E.comp, *carry, *eps.eps,
                                            rho_values, *h))


def _pass_check(E, eps, rho, carry):
    # energy and Gauss residual of E + carry
    if E.spec.dim == 2:
        total, g = _kernels.check_2d(*E.comp, *carry, *eps.eps, rho,
                                     *E.spec.spacing)
        return 0.5 * E.spec.cell_volume * total, float(g)
    total = weighted_square_total(eps.eps, E.comp, carry)
    return (0.5 * E.spec.cell_volume * total,
            gauss_residual(E, eps, rho, carry))


def diagnostics(E: StaggeredField, problem: Problem) -> dict:
    """Gauss and curl residuals, field average and energy of ``E``."""
    return dict(
        gauss_residual=gauss_residual(E, problem.eps, problem.rho.values),
        curl_residual=max_curl(E),
        avg_field=tuple(float(v) for v in average_staggered(E)),
        energy=energy(E, problem.eps),
    )


def _field_error(E, exact):
    if exact is None:
        return None
    return max(float(np.abs(c - e).max()) for c, e in zip(E.comp, exact.comp))


def solve(problem: Problem, start: Optional[StaggeredField] = None, *,
          exact: Optional[StaggeredField] = None, criterion="energy",
          flux_tol=None, curl_tol=None,
          callback: Optional[Callable[[int, StaggeredField, SweepTrace], None]] = None):
    """Relax until the per-pass energy drop falls below ``problem.tol``.

    Parameters
    ----------
    problem : Problem
    start : StaggeredField, optional
        Gauss-consistent starting field; copied, never modified.
    exact : StaggeredField, optional
        Reference field for ``error_inf``.
    criterion : {"energy", "flux", "curl"}
        Stopping rule: per-pass energy drop below ``problem.tol`` (default),
        largest applied flux below ``flux_tol``, or largest plaquette curl
        below ``curl_tol``.
    callback : callable, optional
        Called as ``callback(pass_number, E, trace)`` after every pass.

    Returns
    -------
    E : StaggeredField
    report : SolveReport
        ``converged`` is False when ``max_passes`` ran out first.
    """
    eps = problem.eps
    rho = problem.rho.values
    bound = gauss_bound(rho)
    if criterion == "flux" and flux_tol is None:
        raise ValueError("criterion 'flux' needs flux_tol")
    if criterion == "curl" and curl_tol is None:
        raise ValueError("criterion 'curl' needs curl_tol")
    if criterion not in ("energy", "flux", "curl"):
        raise ValueError(f"unknown stopping criterion {criterion!r}")

    t0 = time.perf_counter()
    if start is None:
        E = init_field(problem)
    else:
        if start.spec != problem.spec:
            raise ValueError("starting field lives on a different grid")
        g = gauss_residual(start, eps, rho)
        if g > bound:
            raise ValueError(
                f"starting field violates Gauss's law (residual {g:.3e} > "
                f"{bound:.3e})")
        E = start.copy()

    rho = np.asfortranarray(rho, dtype=float)
    carry = [np.zeros_like(c) for c in E.comp]
    energies = [energy(E, eps)]
    gauss, fluxes, drops = [], [], []
    updates = touches = 0
    converged = False
    passes = 0
    while passes < problem.max_passes:
        trace = relax_pass(E, eps, problem.method, carry=carry)
        passes += 1
        updates += trace.updates_applied + trace.line_updates
        touches += trace.edge_touches
        f, g = _pass_check(E, eps, rho, carry)
        energies.append(f)
        gauss.append(g)
        fluxes.append(trace.flux_max)
        drops.append(trace.energy_drop)
        if callback is not None:
            callback(passes, E, trace)
        if criterion == "energy":
            done = trace.energy_drop < problem.tol
        elif criterion == "flux":
            done = trace.flux_max <= flux_tol
        else:
            done = max_curl(E) <= curl_tol
        if done:
            converged = True
            break
    for c, lo in zip(E.comp, carry):
        c += lo
    elapsed = (time.perf_counter() - t0) * 1e3
    if not converged:
        log.warning("stopped after max_passes=%d without meeting the %s "
                    "criterion", problem.max_passes, criterion)

    report = SolveReport(
        passes=passes,
        energy_history=tuple(energies),
        gauss_residual=gauss_residual(E, eps, rho),
        curl_residual=max_curl(E),
        avg_field=tuple(float(v) for v in average_staggered(E)),
        wall_time_ms=elapsed,
        error_inf=_field_error(E, exact),
        converged=converged,
        gauss_history=tuple(gauss),
        flux_history=tuple(fluxes),
        drop_history=tuple(drops),
        updates=updates,
        edge_touches=touches,
    )
    return E, report


def warm_start(E_prev: StaggeredField, problem_new: Problem,
               rho_prev=None) -> StaggeredField:
    """Carry a relaxed field over to a new charge density.

    Adds the initial field of the charge increment, which is linear in the
    charge, so the result obeys the new Gauss law while keeping the
    curl-free part already relaxed in ``E_prev``. ``rho_prev`` defaults to
    the divergence of ``E_prev``.
    """
    if E_prev.spec != problem_new.spec:
        raise ValueError("previous field lives on a different grid")
    eps = problem_new.eps
    if rho_prev is None:
        rho_prev = discrete_div(E_prev, eps).values
    else:
        rho_prev = np.asarray(rho_prev, dtype=float)
        g = gauss_residual(E_prev, eps, rho_prev)
        if g > gauss_bound(rho_prev):
            raise ValueError(
                f"previous field does not match the previous charge or "
                f"permittivity (Gauss residual {g:.3e})")
    delta = problem_new.rho.values - rho_prev
    if not np.any(delta):
        return E_prev.copy()
    return E_prev + _init_from(delta, eps)


def recover_potential(E: StaggeredField, curl_tol=1e-8) -> NodeField:
    """Potential ``phi`` with ``E = -grad_h phi`` and zero mean.

    Integrates along x on the first row, then along y for every column (and
    along z in 3D). Raises if the plaquette curl exceeds
    ``curl_tol * max|E|``, since the path integral is then ambiguous.
    """
    spec = E.spec
    scale = E.max_abs()
    if scale == 0.0:
        return NodeField.zeros(spec)
    curl = max_curl(E)
    if curl > curl_tol * scale:
        raise ValueError(
            f"field is not curl-free (max curl {curl:.3e} > "
            f"{curl_tol:.1e} * max|E|); relax further before recovering "
            f"the potential")
    h = spec.spacing
    phi = np.zeros(spec.cells, order="F")
    for a in range(spec.dim):
        # path along axis a starting from the hyperplane where axes > a are 0
        idx = [slice(None)] * spec.dim
        for b in range(a + 1, spec.dim):
            idx[b] = slice(0, 1)
        src = -h[a] * E.comp[a][tuple(idx)]
        steps = np.cumsum(src, axis=a)
        start = [slice(None)] * spec.dim
        for b in range(a, spec.dim):
            start[b] = slice(0, 1)
        base = phi[tuple(start)]
        tgt = list(idx)
        tgt[a] = slice(1, None)
        take = [slice(None)] * spec.dim
        take[a] = slice(0, -1)
        phi[tuple(tgt)] = base + steps[tuple(take)]
    phi -= phi.mean()
    return NodeField(spec, phi)
