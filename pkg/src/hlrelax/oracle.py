"""
Reference solvers for validating the relaxation.

``direct_solve`` factors the variable-coefficient potential equation
``-div(eps grad phi) = rho`` on the periodic grid with a sparse LU after
pinning one node; ``spectral_solve`` diagonalises the constant-coefficient
stencil with the FFT. Both return the potential and ``E = -grad_h phi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from hlrelax.grid import (
    EdgeCoeff, GridSpec, NodeField, StaggeredField, discrete_div,
    discrete_gradient,
)

__all__ = ["LinearSystemView", "direct_solve", "spectral_solve",
           "stencil_symbol", "MAX_DIRECT_SIZE"]

MAX_DIRECT_SIZE = 200_000


def _forward_difference(n, h):
    # (G u)[i] = (u[i+1] - u[i]) / h with periodic wrap
    G = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n),
                 format="lil")
    G[n - 1, 0] = 1.0
    return G.tocsr() / h


def _axis_operator(spec, axis):
    # x runs fastest in the flattened (Fortran-order) node vector
    mats = [sp.identity(n, format="csr") for n in spec.cells]
    mats[axis] = _forward_difference(spec.cells[axis], spec.spacing[axis])
    return reduce(lambda acc, m: sp.kron(m, acc, format="csr"), mats[1:],
                  mats[0])


@dataclass
class LinearSystemView:
    """The potential equation ``A phi = rho`` on a periodic grid.

    ``A = -div_h(eps grad_h .)`` with the edge-averaged permittivity; it is
    symmetric positive semi-definite and its nullspace holds the constants.
    Node vectors are flattened in Fortran order.
    """

    spec: GridSpec
    eps: EdgeCoeff
    rho: NodeField | None = None

    @property
    def n(self) -> int:
        return self.spec.size

    @property
    def rhs(self) -> np.ndarray:
        if self.rho is None:
            raise ValueError("no right-hand side attached")
        return self.rho.values.ravel(order="F")

    def matvec(self, u) -> np.ndarray:
        """Matrix-free action, assembled from the staggered operators."""
        u = np.asarray(u, dtype=float).reshape(self.spec.cells, order="F")
        E = discrete_gradient(NodeField(self.spec, u))
        return discrete_div(E, self.eps).values.ravel(order="F")

    def matrix(self) -> sp.csr_matrix:
        """Sparse matrix ``sum_a G_a^T diag(eps_a) G_a``."""
        A = None
        for a in range(self.spec.dim):
            G = _axis_operator(self.spec, a)
            W = sp.diags(self.eps.eps[a].ravel(order="F"))
            term = G.T @ W @ G
            A = term if A is None else A + term
        return A.tocsr()


def _node_fields(spec, phi_values):
    phi_values = phi_values - phi_values.mean()
    phi = NodeField(spec, phi_values)
    return phi, discrete_gradient(phi)


def direct_solve(problem) -> tuple[NodeField, StaggeredField]:
    """Exact discrete potential and field for a :class:`~hlrelax.solver.Problem`.

    Pins the first node, factors the reduced system with a sparse LU and
    shifts the potential to zero mean.

    Raises
    ------
    ValueError
        If the grid has more than ``MAX_DIRECT_SIZE`` nodes, the charge is
        not neutral, or the solve misses its residual target.
    """
    spec = problem.spec
    if spec.size > MAX_DIRECT_SIZE:
        raise ValueError(f"{spec.size} nodes exceed the direct-solve limit "
                         f"of {MAX_DIRECT_SIZE}")
    view = LinearSystemView(spec, problem.eps, problem.rho)
    b = view.rhs
    scale = float(np.abs(b).max())
    if abs(b.mean()) > 1e-12 * max(1.0, scale):
        raise ValueError("charge density must have zero mean")
    if scale == 0.0:
        return _node_fields(spec, spec.zeros())
    A = view.matrix()
    lu = spla.splu(A[1:, 1:].tocsc())
    x = np.zeros(spec.size)
    x[1:] = lu.solve(b[1:])
    resid = float(np.abs(A @ x - b).max())
    if not resid <= 1e-12 * scale:
        raise ValueError(f"direct solve residual {resid:.3e} above target")
    return _node_fields(spec, x.reshape(spec.cells, order="F"))


def stencil_symbol(spec: GridSpec) -> np.ndarray:
    """Eigenvalues of the periodic unit-coefficient stencil, FFT layout."""
    parts = []
    for a, (n, h) in enumerate(zip(spec.cells, spec.spacing)):
        k = np.arange(n)
        lam = 4.0 / h**2 * np.sin(np.pi * k / n) ** 2
        shape = [1] * spec.dim
        shape[a] = n
        parts.append(lam.reshape(shape))
    return reduce(np.add, parts)


def spectral_solve(rho: NodeField, eps_const) -> tuple[NodeField, StaggeredField]:
    """Constant-permittivity solve in Fourier space; the zero mode is set to 0.

    ``eps_const`` is a positive scalar, or an array / ``EdgeCoeff`` that must
    be uniform.
    """
    if isinstance(eps_const, EdgeCoeff):
        if not eps_const.is_constant():
            raise ValueError("spectral solve needs a uniform permittivity")
        value = float(eps_const.eps[0].flat[0])
    elif np.ndim(eps_const) == 0:
        value = float(eps_const)
    else:
        arr = np.asarray(eps_const, dtype=float)
        value = float(arr.flat[0])
        if not np.all(arr == value):
            raise ValueError("spectral solve needs a uniform permittivity")
    if not value > 0:
        raise ValueError(f"permittivity must be positive, got {value}")
    spec = rho.spec
    lam = stencil_symbol(spec)
    rho_hat = np.fft.fftn(rho.values)
    lam.flat[0] = 1.0
    phi_hat = rho_hat / (value * lam)
    phi_hat.flat[0] = 0.0
    phi = np.fft.ifftn(phi_hat).real
    return _node_fields(spec, phi)

