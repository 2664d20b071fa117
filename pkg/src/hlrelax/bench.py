"""
Benchmarks: manufactured-solution convergence, curl-residual sections and
the seeded time-dependent charge sequence.

All CSV writers use 17 significant digits so that files re-read losslessly.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from hlrelax.grid import (
    GridSpec, NodeField, StaggeredField, average_node, plane_curl,
)
from hlrelax.oracle import spectral_solve
from hlrelax.relax import RelaxMethod, relax_pass
from hlrelax.solver import (
    Problem, init_field, solve, warm_start,
)

__all__ = [
    "ManufacturedCase", "StudyRow", "run_convergence_study", "profile_row",
    "residual_profile", "TimeSeriesSpec", "StepRecord", "TimeSeriesResult",
    "run_time_series", "write_study_csv", "write_profile_csv",
    "write_timeseries_csv", "TABLE_TOL",
]

log = logging.getLogger(__name__)

# Energy-drop tolerance of the convergence study; tight enough that the
# iteration error is far below the discretisation error for N <= 256.
TABLE_TOL = 1e-16

_A = math.pi / 2


def _fmt(v):
    return format(float(v), ".17g")


# Manufactured solutions

def _eq27_phi(x, y):
    return np.cos(_A * x) * np.sin(_A * y)


def _eq27_eps(x, y):
    return 2.0 + np.cos(_A * x) * np.cos(_A * y)


def _eq27_grad(x, y):
    return (-_A * np.sin(_A * x) * np.sin(_A * y),
            _A * np.cos(_A * x) * np.cos(_A * y))


def _eq27_rho(x, y):
    # -div(eps grad phi) in closed form
    return (2 * _A**2 * _eq27_eps(x, y) * _eq27_phi(x, y)
            + _A**2 * np.sin(_A * y) * np.cos(_A * y) * np.cos(2 * _A * x))


def _eq27_3d_phi(x, y, z):
    return np.cos(_A * x) * np.sin(_A * y) * np.cos(_A * z)


def _eq27_3d_eps(x, y, z):
    return 2.0 + np.cos(_A * x) * np.cos(_A * y) * np.cos(_A * z)


def _eq27_3d_grad(x, y, z):
    cx, sx = np.cos(_A * x), np.sin(_A * x)
    cy, sy = np.cos(_A * y), np.sin(_A * y)
    cz, sz = np.cos(_A * z), np.sin(_A * z)
    return (-_A * sx * sy * cz, _A * cx * cy * cz, -_A * cx * sy * sz)


def _eq27_3d_rho(x, y, z):
    cx, sx = np.cos(_A * x), np.sin(_A * x)
    cy, sy = np.cos(_A * y), np.sin(_A * y)
    cz, sz = np.cos(_A * z), np.sin(_A * z)
    grad_eps = (-_A * sx * cy * cz, -_A * cx * sy * cz, -_A * cx * cy * sz)
    grad_phi = _eq27_3d_grad(x, y, z)
    dot = sum(e * p for e, p in zip(grad_eps, grad_phi))
    return 3 * _A**2 * _eq27_3d_eps(x, y, z) * _eq27_3d_phi(x, y, z) - dot


_CASES = {
    2: (_eq27_phi, _eq27_eps, _eq27_grad, _eq27_rho),
    3: (_eq27_3d_phi, _eq27_3d_eps, _eq27_3d_grad, _eq27_3d_rho),
}


@dataclass
class ManufacturedCase:
    """Smooth periodic solution with a closed-form charge density.

    ``rho`` is sampled at the nodes and shifted to zero discrete mean (the
    analytic mean is zero; the shift only removes round-off).
    """

    spec: GridSpec
    phi_exact: Callable
    eps_exact: Callable
    grad_exact: Callable
    rho_exact: Callable
    rho: NodeField = field(init=False)
    eps_nodes: NodeField = field(init=False)

    def __post_init__(self):
        coords = self.spec.node_coords()
        rho = self.rho_exact(*coords)
        self.rho = NodeField(self.spec, rho - average_node(NodeField(self.spec, rho)))
        self.eps_nodes = NodeField(self.spec, self.eps_exact(*coords))

    @classmethod
    def eq27(cls, n, dim=2):
        """``phi = cos(pi x/2) sin(pi y/2) [cos(pi z/2)]`` on ``(0, 4)^dim``
        with ``eps = 2 + cos(pi x/2) cos(pi y/2) [cos(pi z/2)]``."""
        return cls(GridSpec.square(n, 4.0, dim), *_CASES[dim])

    def exact_field(self) -> StaggeredField:
        """``-grad phi`` at the staggered points."""
        comps = []
        for a in range(self.spec.dim):
            comps.append(-self.grad_exact(*self.spec.edge_coords(a))[a])
        return StaggeredField(self.spec, comps)

    def problem(self, method="single", tol=TABLE_TOL, **kwargs) -> Problem:
        return Problem(self.spec, self.rho, self.eps_nodes, method=method,
                       tol=tol, **kwargs)


# Convergence study

@dataclass(frozen=True)
class StudyRow:
    N: int
    method: str
    error_inf: float
    order: Optional[float]
    passes: int
    wall_time_ms: float


def run_convergence_study(Ns: Sequence[int], methods: Sequence[str], *,
                          dim=2, tol=TABLE_TOL, max_passes=400_000
                          ) -> list[StudyRow]:
    """Solve the manufactured case on every grid with every method.

    ``order`` is ``log2(error(N/2) / error(N))`` when the coarser grid is part
    of the same study, else None. Rows come out grouped by method, N ascending.
    """
    Ns = sorted(int(n) for n in Ns)
    rows = []
    for method in methods:
        method = RelaxMethod.parse(method).value
        prev = {}
        for n in Ns:
            case = ManufacturedCase.eq27(n, dim)
            E, rep = solve(case.problem(method, tol, max_passes=max_passes),
                           exact=case.exact_field())
            if not rep.converged:
                log.warning("N=%d %s stopped at max_passes", n, method)
            err = rep.error_inf
            order = None
            if n // 2 in prev:
                order = math.log2(prev[n // 2] / err)
            prev[n] = err
            rows.append(StudyRow(n, method, err, order, rep.passes,
                                 rep.wall_time_ms))
            log.info("study N=%d %s: error %.6e, %d passes", n, method, err,
                     rep.passes)
    return rows


# Curl-residual section

def profile_row(spec: GridSpec, section: float) -> int:
    """Plaquette row whose centre line lies nearest to ``y = section``."""
    h = spec.spacing[1]
    return int(math.floor(section / h)) % spec.cells[1]


def residual_profile(problem: Problem, method, checkpoints=(0, 50, 100),
                     section=0.5) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Plaquette curl along x on the row nearest ``y = section``.

    Starts from the Gauss-consistent initial field and relaxes with
    ``method`` for ``max(checkpoints)`` passes without a stopping test.

    Returns
    -------
    dict
        ``{pass: (x, curl)}`` with ``x`` the plaquette-centre coordinates.
    """
    spec = problem.spec
    if spec.dim != 2:
        raise ValueError("residual profiles are defined for 2D grids")
    j = profile_row(spec, section)
    x = (np.arange(spec.cells[0]) + 0.5) * spec.spacing[0]
    E = init_field(problem)
    carry = [np.zeros_like(c) for c in E.comp]
    wanted = sorted(set(int(c) for c in checkpoints))
    out = {}
    done = 0
    for target in wanted:
        while done < target:
            relax_pass(E, problem.eps, method, carry=carry)
            done += 1
        full = StaggeredField(spec, [c + lo for c, lo in zip(E.comp, carry)])
        out[target] = (x.copy(), plane_curl(full, (0, 1))[:, j].copy())
    return out


# Time-dependent charge sequence

@dataclass(frozen=True)
class TimeSeriesSpec:
    """Random smooth charge increments on ``(0, 4)^2``.

    Step ``n`` draws ``a_1..a_16`` then ``b_1..b_16`` from Uniform(0, 1)
    with a PCG64 generator seeded by ``SeedSequence([seed, n])``, so every
    step is reproducible on its own.
    """

    N: int = 64
    steps: int = 100
    seed: int = 0
    modes: int = 16
    tol: float = 1e-7
    inhomogeneous: bool = False
    zero_coefficients: bool = False  # test hook: every increment vanishes

    @property
    def spec(self) -> GridSpec:
        return GridSpec.square(self.N)

    def eps_nodes(self) -> np.ndarray:
        if not self.inhomogeneous:
            return np.ones(self.spec.cells)
        return _eq27_eps(*self.spec.node_coords())

    def coefficients(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([self.seed, step])))
        a = rng.uniform(0.0, 1.0, self.modes)
        b = rng.uniform(0.0, 1.0, self.modes)
        if self.zero_coefficients:
            a, b = np.zeros_like(a), np.zeros_like(b)
        return a, b

    def increment(self, step: int) -> np.ndarray:
        """Mean-centred charge increment from step ``step - 1`` to ``step``."""
        a, b = self.coefficients(step)
        x, y = self.spec.node_coords()
        out = np.zeros(self.spec.cells)
        total = float(np.sum(a + b))
        if total == 0.0:
            return out
        for k in range(1, self.modes + 1):
            kx, ky = k * np.pi * x / 2, k * np.pi * y / 2
            out += (a[k - 1] * np.cos(kx) * np.sin(ky)
                    + b[k - 1] * np.sin(kx) * np.cos(ky))
        out /= 64.0 * total
        return out - average_node(NodeField(self.spec, out))

    def rho_sequence(self):
        """Yield ``rho^(1), ..., rho^(steps)`` starting from ``rho^(0) = 0``."""
        rho = np.zeros(self.spec.cells)
        for n in range(1, self.steps + 1):
            rho = rho + self.increment(n)
            yield rho


@dataclass(frozen=True)
class StepRecord:
    step: int
    method: str
    passes: int
    wall_time_ms: float
    gauss_residual: float
    edge_touches: int
    spectral_ms: Optional[float] = None


@dataclass
class TimeSeriesResult:
    records: list

    def mean(self, attr) -> float:
        vals = [getattr(r, attr) for r in self.records
                if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else float("nan")


def _median_ms(fn, repeats=3):
    fn()  # warm-up, discarded
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def run_time_series(tss: TimeSeriesSpec, method, *, baseline=True,
                    max_passes=200_000) -> TimeSeriesResult:
    """Warm-started relaxation over the charge sequence of ``tss``.

    Every step reuses the previous field plus the initial field of the
    charge increment. For uniform permittivity the FFT solve of the same
    charge is timed as a baseline (median of 3 after a warm-up run).
    """
    method = RelaxMethod.parse(method).value
    spec = tss.spec
    eps = tss.eps_nodes()
    problem = Problem.from_arrays(spec, np.zeros(spec.cells), eps,
                                  method=method, tol=tss.tol,
                                  max_passes=max_passes)
    E = init_field(problem)
    rho_prev = problem.rho.values
    records = []
    for n, rho in enumerate(tss.rho_sequence(), start=1):
        prob = problem.with_rho(rho)
        start = warm_start(E, prob, rho_prev=rho_prev)
        E, rep = solve(prob, start=start)
        spectral_ms = None
        if baseline and not tss.inhomogeneous:
            spectral_ms = _median_ms(lambda: spectral_solve(prob.rho, 1.0))
        records.append(StepRecord(n, method, rep.passes, rep.wall_time_ms,
                                  rep.gauss_residual, rep.edge_touches,
                                  spectral_ms))
        rho_prev = prob.rho.values
    return TimeSeriesResult(records)


# CSV output

def write_study_csv(path, rows, timing=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "method", "error_inf", "order", "passes",
                    "wall_time_ms"])
        for r in rows:
            w.writerow([r.N, r.method, _fmt(r.error_inf),
                        "" if r.order is None else _fmt(r.order), r.passes,
                        _fmt(r.wall_time_ms if timing else 0.0)])


def write_profile_csv(path, profiles):
    """``profiles`` maps method name to the output of :func:`residual_profile`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "pass", "x", "curl"])
        for method, by_pass in profiles.items():
            for p in sorted(by_pass):
                x, curl = by_pass[p]
                for xv, cv in zip(x, curl):
                    w.writerow([method, p, _fmt(xv), _fmt(cv)])


def write_timeseries_csv(path, records, timing=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "method", "passes", "wall_time_ms",
                    "gauss_residual"])
        for r in records:
            w.writerow([r.step, r.method, r.passes,
                        _fmt(r.wall_time_ms if timing else 0.0),
                        _fmt(r.gauss_residual)])
