"""
Numba kernels for the curl-free relaxation sweeps and the per-pass checks.

Permittivity enters the kernels only through its reciprocal on the edges
(``ia`` for component ``a``). A rectangular update on the plane of axes
``(a, b)`` adds ``eta / (eps * h_b)`` to the two rows of ``E_a`` and
``eta / (eps * h_a)`` to the two columns of ``E_b`` with the circulation sign
pattern, which leaves the discrete divergence of ``eps * E`` untouched at
every node. The optimal flux minimises the resulting quadratic energy change.
Each increment is formed as ``eta * (inv / h)`` so its rounding error scales
with ``eta``; the sweeps additionally carry the rounding error of every
addition to ``E`` in separate arrays, so that long runs keep Gauss's law to
round-off of the charge rather than of the field.

Two flavours exist side by side: dedicated 2D kernels (the hot path) and
3D kernels that treat every plaquette as a rectangle of side one.
"""
import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True)


# Reductions

@njit(**_opts)
def compensated_sum(x):
    """Neumaier-compensated sum of a 1D array."""
    s = 0.0
    c = 0.0
    for v in x:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


@njit(**_opts)
def weighted_square_parts(w, x, lo):
    """Unrounded ``(sum, correction)`` of ``sum(w * (x + lo)**2)``.

    ``w`` of length 1 is broadcast; an empty ``lo`` means zero. Combine the
    parts of several arrays with :func:`compensated_sum`.
    """
    s = 0.0
    c = 0.0
    scalar = w.size == 1
    carry = lo.size > 0
    for n in range(x.size):
        y = x[n] + lo[n] if carry else x[n]
        v = (w[0] if scalar else w[n]) * y * y
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s, c


@njit(**_opts)
def weighted_square_sum(w, x):
    """Compensated ``sum(w * x**2)``; ``w`` of length 1 is broadcast."""
    s, c = weighted_square_parts(w, x, np.empty(0))
    return s + c


# 2D plaquette and block updates
#
# The flux is always formed as ``-(num * (1.0 / den))`` with the numerator
# ``hy*hx*hx * sa + hx*hy*hy * sb`` and denominator ``hx*hx * da + hy*hy * db``
# so that a single-cell block, a lone plaquette and the cached sweep produce
# bit-identical results.

@njit(inline="always", **_opts)
def _cell_den(ix, iy, i, j, i1, j1, hx, hy):
    return hx * hx * (ix[i, j] + ix[i, j1]) + hy * hy * (iy[i, j] + iy[i1, j])


@njit(**_opts)
def cell_rden_2d(ix, iy, hx, hy):
    """Reciprocal plaquette denominators, cached for the single-mesh sweep."""
    nx, ny = ix.shape
    out = np.empty((ny, nx), dtype=np.float64).T
    for j in range(ny):
        j1 = j + 1 if j + 1 < ny else 0
        for i in range(nx):
            i1 = i + 1 if i + 1 < nx else 0
            out[i, j] = 1.0 / _cell_den(ix, iy, i, j, i1, j1, hx, hy)
    return out


@njit(**_opts)
def plaquette_eta_2d(Ex, Ey, ix, iy, i, j, hx, hy):
    """Optimal flux and energy drop for the cell with lower corner ``(i, j)``."""
    nx, ny = Ex.shape
    i1 = i + 1 if i + 1 < nx else 0
    j1 = j + 1 if j + 1 < ny else 0
    sa = Ex[i, j] - Ex[i, j1]
    sb = Ey[i1, j] - Ey[i, j]
    num = hy * hx * hx * sa + hx * hy * hy * sb
    r = 1.0 / _cell_den(ix, iy, i, j, i1, j1, hx, hy)
    return -(num * r), num * num * r * (0.5 / (hx * hy))


@njit(**_opts)
def apply_plaquette_2d(Ex, Ey, ix, iy, i, j, hx, hy, eta):
    nx, ny = Ex.shape
    i1 = i + 1 if i + 1 < nx else 0
    j1 = j + 1 if j + 1 < ny else 0
    ux = 1.0 / hy
    uy = 1.0 / hx
    Ex[i, j] += eta * (ux * ix[i, j])
    Ex[i, j1] -= eta * (ux * ix[i, j1])
    Ey[i, j] -= eta * (uy * iy[i, j])
    Ey[i1, j] += eta * (uy * iy[i1, j])


@njit(**_opts)
def block_eta_2d(Ex, Ey, ix, iy, i0, j0, sx, sy, hx, hy):
    """Optimal flux for the block ``[i0, i0+sx] x [j0, j0+sy]`` (periodic)."""
    nx, ny = Ex.shape
    i1 = (i0 + sx) % nx
    j1 = (j0 + sy) % ny
    sa = 0.0
    da = 0.0
    for t in range(sx):
        i = (i0 + t) % nx
        sa += Ex[i, j0] - Ex[i, j1]
        da += ix[i, j0] + ix[i, j1]
    sb = 0.0
    db = 0.0
    for t in range(sy):
        j = (j0 + t) % ny
        sb += Ey[i1, j] - Ey[i0, j]
        db += iy[i0, j] + iy[i1, j]
    num = hy * hx * hx * sa + hx * hy * hy * sb
    r = 1.0 / (hx * hx * da + hy * hy * db)
    return -(num * r), num * num * r * (0.5 / (hx * hy))


@njit(**_opts)
def apply_block_2d(Ex, Ey, ix, iy, i0, j0, sx, sy, hx, hy, eta):
    nx, ny = Ex.shape
    i1 = (i0 + sx) % nx
    j1 = (j0 + sy) % ny
    ux = 1.0 / hy
    uy = 1.0 / hx
    for t in range(sx):
        i = (i0 + t) % nx
        Ex[i, j0] += eta * (ux * ix[i, j0])
        Ex[i, j1] -= eta * (ux * ix[i, j1])
    for t in range(sy):
        j = (j0 + t) % ny
        Ey[i0, j] -= eta * (uy * iy[i0, j])
        Ey[i1, j] += eta * (uy * iy[i1, j])


@njit(inline="always", **_opts)
def _cadd(E, L, i, j, d):
    # E[i, j] += d with the rounding error carried into L (fast two-sum);
    # when |d| > |e| the missed bits are O(ulp(d)), still relative to eta
    e = E[i, j]
    t = e + d
    L[i, j] += d - (t - e)
    E[i, j] = t


@njit(inline="always", **_opts)
def _cell_update(Ex, Ey, Lx, Ly, ix, iy, rden, i, j, i1, j1, c1, c2, ux, uy):
    num = c1 * (Ex[i, j] - Ex[i, j1]) + c2 * (Ey[i1, j] - Ey[i, j])
    r = rden[i, j]
    eta = -(num * r)
    _cadd(Ex, Lx, i, j, eta * (ux * ix[i, j]))
    _cadd(Ex, Lx, i, j1, -(eta * (ux * ix[i, j1])))
    _cadd(Ey, Ly, i, j, -(eta * (uy * iy[i, j])))
    _cadd(Ey, Ly, i1, j, eta * (uy * iy[i1, j]))
    return eta, num * num * r


@njit(**_opts)
def sweep_cells_2d(Ex, Ey, Lx, Ly, ix, iy, rden, hx, hy):
    """One lexicographic single-mesh sweep; returns (updates, max|eta|, drop).

    ``rden`` comes from :func:`cell_rden_2d` for the same permittivity.
    Rounding errors of the field updates accumulate in ``Lx``, ``Ly``.

    Two rows are interleaved cell by cell. Cell ``(i, j+1)`` shares no edge
    with the cells ``(i', j)``, ``i' > i``, that lexicographic order puts
    before it, so the field comes out bit-identical while the two dependency
    chains overlap.
    """
    nx, ny = Ex.shape
    c1 = hy * hx * hx
    c2 = hx * hy * hy
    ux = 1.0 / hy
    uy = 1.0 / hx
    fmax = 0.0
    drop = 0.0
    j = 0
    while j < ny:
        j1 = j + 1 if j + 1 < ny else 0
        pair = j + 1 < ny
        j2 = j + 2 if j + 2 < ny else 0
        for i in range(nx):
            i1 = i + 1 if i + 1 < nx else 0
            eta, d = _cell_update(Ex, Ey, Lx, Ly, ix, iy, rden, i, j, i1, j1,
                                  c1, c2, ux, uy)
            fmax = max(fmax, abs(eta))
            drop += d
            if pair:
                eta, d = _cell_update(Ex, Ey, Lx, Ly, ix, iy, rden, i, j1, i1,
                                      j2, c1, c2, ux, uy)
                fmax = max(fmax, abs(eta))
                drop += d
        j += 2
    return nx * ny, fmax, drop * (0.5 / (hx * hy))


@njit(**_opts)
def sweep_blocks_2d(Ex, Ey, Lx, Ly, ix, iy, sx, sy, hx, hy):
    """All blocks of size ``sx x sy`` in lexicographic order.

    Blocks tile the grid exactly, so only the far edge row/column can wrap.
    """
    nx, ny = Ex.shape
    c1 = hy * hx * hx
    c2 = hx * hy * hy
    half = 0.5 / (hx * hy)
    fmax = 0.0
    drop = 0.0
    count = 0
    for j0 in range(0, ny, sy):
        j1 = j0 + sy if j0 + sy < ny else 0
        for i0 in range(0, nx, sx):
            i1 = i0 + sx if i0 + sx < nx else 0
            sa = 0.0
            da = 0.0
            for i in range(i0, i0 + sx):
                sa += Ex[i, j0] - Ex[i, j1]
                da += ix[i, j0] + ix[i, j1]
            sb = 0.0
            db = 0.0
            for j in range(j0, j0 + sy):
                sb += Ey[i1, j] - Ey[i0, j]
                db += iy[i0, j] + iy[i1, j]
            num = c1 * sa + c2 * sb
            r = 1.0 / (hx * hx * da + hy * hy * db)
            eta = -(num * r)
            ux = 1.0 / hy
            uy = 1.0 / hx
            for i in range(i0, i0 + sx):
                _cadd(Ex, Lx, i, j0, eta * (ux * ix[i, j0]))
                _cadd(Ex, Lx, i, j1, -(eta * (ux * ix[i, j1])))
            for j in range(j0, j0 + sy):
                _cadd(Ey, Ly, i0, j, -(eta * (uy * iy[i0, j])))
                _cadd(Ey, Ly, i1, j, eta * (uy * iy[i1, j]))
            if abs(eta) > fmax:
                fmax = abs(eta)
            drop += num * num * r * half
            count += 1
    return count, fmax, drop


@njit(**_opts)
def line_shifts_2d(Ex, Ey, Lx, Ly, ix, iy, dv):
    """Optimal shift of every x line, then every y line.

    Returns (lines, max|eta|, energy drop).
    """
    nx, ny = Ex.shape
    fmax = 0.0
    drop = 0.0
    for j in range(ny):
        s = 0.0
        d = 0.0
        for i in range(nx):
            s += Ex[i, j]
            d += ix[i, j]
        eta = -s / d
        for i in range(nx):
            _cadd(Ex, Lx, i, j, eta * ix[i, j])
        fmax = max(fmax, abs(eta))
        drop += s * s / (2.0 * d)
    # y lines run along the slow index; accumulate all of them at once
    s = np.zeros(nx)
    d = np.zeros(nx)
    for j in range(ny):
        for i in range(nx):
            s[i] += Ey[i, j]
            d[i] += iy[i, j]
    eta = -s / d
    for j in range(ny):
        for i in range(nx):
            _cadd(Ey, Ly, i, j, eta[i] * iy[i, j])
    for i in range(nx):
        fmax = max(fmax, abs(eta[i]))
        drop += s[i] * s[i] / (2.0 * d[i])
    return nx + ny, fmax, drop * dv


# 3D: rectangles on the plane (a, b) at a fixed coordinate along the third axis

@njit(**_opts)
def _at(arr, p, shape):
    return arr[p[0] % shape[0], p[1] % shape[1], p[2] % shape[2]]


@njit(**_opts)
def _add(arr, p, shape, v):
    arr[p[0] % shape[0], p[1] % shape[1], p[2] % shape[2]] += v


@njit(**_opts)
def rect_eta_3d(Ea, Eb, ia, ib, a, b, base, sa_len, sb_len, ha, hb, dv):
    """Optimal flux for the ``sa_len x sb_len`` rectangle on plane ``(a, b)``.

    ``base`` is the lowest corner node (length-3 int array).
    """
    shape = Ea.shape
    p = base.copy()
    q = base.copy()
    q[b] += sb_len
    sa = 0.0
    da = 0.0
    for t in range(sa_len):
        p[a] = base[a] + t
        q[a] = base[a] + t
        sa += _at(Ea, p, shape) - _at(Ea, q, shape)
        da += _at(ia, p, shape) + _at(ia, q, shape)
    p = base.copy()
    q = base.copy()
    q[a] += sa_len
    sb = 0.0
    db = 0.0
    for t in range(sb_len):
        p[b] = base[b] + t
        q[b] = base[b] + t
        sb += _at(Eb, q, shape) - _at(Eb, p, shape)
        db += _at(ib, p, shape) + _at(ib, q, shape)
    num = hb * ha * ha * sa + ha * hb * hb * sb
    r = 1.0 / (ha * ha * da + hb * hb * db)
    return -(num * r), dv * num * num * r * (0.5 / (ha * ha * hb * hb))


@njit(**_opts)
def apply_rect_3d(Ea, Eb, ia, ib, a, b, base, sa_len, sb_len, ha, hb, eta):
    shape = Ea.shape
    ua = 1.0 / hb
    ub = 1.0 / ha
    p = base.copy()
    q = base.copy()
    q[b] += sb_len
    for t in range(sa_len):
        p[a] = base[a] + t
        q[a] = base[a] + t
        _add(Ea, p, shape, eta * (ua * _at(ia, p, shape)))
        _add(Ea, q, shape, -(eta * (ua * _at(ia, q, shape))))
    p = base.copy()
    q = base.copy()
    q[a] += sa_len
    for t in range(sb_len):
        p[b] = base[b] + t
        q[b] = base[b] + t
        _add(Eb, p, shape, -(eta * (ub * _at(ib, p, shape))))
        _add(Eb, q, shape, eta * (ub * _at(ib, q, shape)))


@njit(inline="always", **_opts)
def _cadd1(E, L, n, d):
    e = E[n]
    t = e + d
    L[n] += d - (t - e)
    E[n] = t


@njit(inline="always", **_opts)
def _plane_layers(Ea, Eb, La, Lb, ia, ib, loa, lob, loc, sa, sb, sc,
                  na, nb, sta, stb, stc, ha, hb, dv):
    # one rectangle update per layer of a block on plane (a, b); arrays flat
    ahi = loa + sa if loa + sa < na else 0
    bhi = lob + sb if lob + sb < nb else 0
    c1 = hb * ha * ha
    c2 = ha * hb * hb
    half = 0.5 / (ha * ha * hb * hb)
    ra = 1.0 / ha
    rb = 1.0 / hb
    fmax = 0.0
    drop = 0.0
    for layer in range(sc):
        oc = (loc + layer) * stc
        rows_lo = lob * stb + oc
        rows_hi = bhi * stb + oc
        cols_lo = loa * sta + oc
        cols_hi = ahi * sta + oc
        suma = 0.0
        da = 0.0
        for t in range(loa, loa + sa):
            x = t * sta
            suma += Ea[x + rows_lo] - Ea[x + rows_hi]
            da += ia[x + rows_lo] + ia[x + rows_hi]
        sumb = 0.0
        db = 0.0
        for t in range(lob, lob + sb):
            y = t * stb
            sumb += Eb[y + cols_hi] - Eb[y + cols_lo]
            db += ib[y + cols_lo] + ib[y + cols_hi]
        num = c1 * suma + c2 * sumb
        r = 1.0 / (ha * ha * da + hb * hb * db)
        eta = -(num * r)
        for t in range(loa, loa + sa):
            x = t * sta
            _cadd1(Ea, La, x + rows_lo, eta * (rb * ia[x + rows_lo]))
            _cadd1(Ea, La, x + rows_hi, -(eta * (rb * ia[x + rows_hi])))
        for t in range(lob, lob + sb):
            y = t * stb
            _cadd1(Eb, Lb, y + cols_lo, -(eta * (ra * ib[y + cols_lo])))
            _cadd1(Eb, Lb, y + cols_hi, eta * (ra * ib[y + cols_hi]))
        if abs(eta) > fmax:
            fmax = abs(eta)
        drop += dv * num * num * r * half
    return fmax, drop


@njit(**_opts)
def sweep_blocks_3d(E0, E1, E2, L0, L1, L2, i0, i1, i2, n0, n1, n2,
                    s0, s1, s2, h0, h1, h2):
    """All blocks of size ``s0 x s1 x s2``; per block the xy, yz, xz planes.

    Within a block and orientation, every layer along the normal axis gets
    its own rectangle update. Returns (updates, edge touches, max|eta|, drop).
    All arrays are flat Fortran-order views of ``(n0, n1, n2)`` grids.
    """
    st0, st1, st2 = 1, n0, n0 * n1
    dv = h0 * h1 * h2
    fmax = 0.0
    drop = 0.0
    nblocks = 0
    for k0 in range(0, n2, s2):
        for j0 in range(0, n1, s1):
            for q0 in range(0, n0, s0):
                f, d = _plane_layers(E0, E1, L0, L1, i0, i1, q0, j0, k0,
                                     s0, s1, s2, n0, n1, st0, st1, st2,
                                     h0, h1, dv)
                fmax = max(fmax, f)
                drop += d
                f, d = _plane_layers(E1, E2, L1, L2, i1, i2, j0, k0, q0,
                                     s1, s2, s0, n1, n2, st1, st2, st0,
                                     h1, h2, dv)
                fmax = max(fmax, f)
                drop += d
                f, d = _plane_layers(E0, E2, L0, L2, i0, i2, q0, k0, j0,
                                     s0, s2, s1, n0, n2, st0, st2, st1,
                                     h0, h2, dv)
                fmax = max(fmax, f)
                drop += d
                nblocks += 1
    count = nblocks * (s2 + s0 + s1)
    touches = nblocks * (2 * (s0 + s1) * s2 + 2 * (s1 + s2) * s0
                         + 2 * (s0 + s2) * s1)
    return count, touches, fmax, drop


# Gauss-law residual and energy
#
# ``L*`` hold the rounding carries of a relaxation run (zeros otherwise); the
# divergence of the carries is added separately so it is not lost.

@njit(**_opts)
def gauss_residual_2d(Ex, Ey, Lx, Ly, ex, ey, rho, hx, hy):
    nx, ny = Ex.shape
    worst = 0.0
    for j in range(ny):
        jm = j - 1 if j > 0 else ny - 1
        for i in range(nx):
            im = i - 1 if i > 0 else nx - 1
            div = ((ex[i, j] * Ex[i, j] - ex[im, j] * Ex[im, j]) / hx
                   + (ey[i, j] * Ey[i, j] - ey[i, jm] * Ey[i, jm]) / hy)
            low = ((ex[i, j] * Lx[i, j] - ex[im, j] * Lx[im, j]) / hx
                   + (ey[i, j] * Ly[i, j] - ey[i, jm] * Ly[i, jm]) / hy)
            r = abs((div - rho[i, j]) + low)
            if r > worst:
                worst = r
    return worst


@njit(**_opts)
def check_2d(Ex, Ey, Lx, Ly, ex, ey, rho, hx, hy):
    """Fused per-pass check: (compensated sum of eps*E**2, max Gauss residual)."""
    nx, ny = Ex.shape
    rx = 1.0 / hx
    ry = 1.0 / hy
    worst = 0.0
    # x and y terms go to separate two-sum lanes
    s0 = c0 = s1 = c1 = 0.0
    for j in range(ny):
        jm = j - 1 if j > 0 else ny - 1
        for i in range(nx):
            im = i - 1 if i > 0 else nx - 1
            div = ((ex[i, j] * Ex[i, j] - ex[im, j] * Ex[im, j]) * rx
                   + (ey[i, j] * Ey[i, j] - ey[i, jm] * Ey[i, jm]) * ry)
            low = ((ex[i, j] * Lx[i, j] - ex[im, j] * Lx[im, j]) * rx
                   + (ey[i, j] * Ly[i, j] - ey[i, jm] * Ly[i, jm]) * ry)
            worst = max(worst, abs((div - rho[i, j]) + low))
            x = Ex[i, j] + Lx[i, j]
            v = ex[i, j] * x * x
            t = s0 + v
            z = t - s0
            c0 += (s0 - (t - z)) + (v - z)
            s0 = t
            y = Ey[i, j] + Ly[i, j]
            v = ey[i, j] * y * y
            t = s1 + v
            z = t - s1
            c1 += (s1 - (t - z)) + (v - z)
            s1 = t
    return compensated_sum(np.array([s0, s1, c0, c1])), worst


@njit(**_opts)
def gauss_residual_3d(E0, E1, E2, L0, L1, L2, e0, e1, e2, rho, h0, h1, h2):
    n0, n1, n2 = E0.shape
    worst = 0.0
    for k in range(n2):
        km = k - 1 if k > 0 else n2 - 1
        for j in range(n1):
            jm = j - 1 if j > 0 else n1 - 1
            for i in range(n0):
                im = i - 1 if i > 0 else n0 - 1
                div = ((e0[i, j, k] * E0[i, j, k] - e0[im, j, k] * E0[im, j, k]) / h0
                       + (e1[i, j, k] * E1[i, j, k] - e1[i, jm, k] * E1[i, jm, k]) / h1
                       + (e2[i, j, k] * E2[i, j, k] - e2[i, j, km] * E2[i, j, km]) / h2)
                low = ((e0[i, j, k] * L0[i, j, k] - e0[im, j, k] * L0[im, j, k]) / h0
                       + (e1[i, j, k] * L1[i, j, k] - e1[i, jm, k] * L1[i, jm, k]) / h1
                       + (e2[i, j, k] * L2[i, j, k] - e2[i, j, km] * L2[i, j, km]) / h2)
                r = abs((div - rho[i, j, k]) + low)
                if r > worst:
                    worst = r
    return worst
