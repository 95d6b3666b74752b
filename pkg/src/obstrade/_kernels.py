"""Compiled objective for the brute-force oracle.

Nelder-Mead spends almost all its time in tiny d x d algebra where NumPy's
per-call overhead dominates; this kernel does the whole evaluation in one
compiled loop nest.  Falls back to NumPy when numba is missing.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _oracle_error(theta, k, d, rho, xrho, w, const, zero_prob):
    """Weighted error of the POVM encoded by theta under the optimal assignment.

    theta holds, per outcome, the real diagonal then the real and imaginary
    parts of the strict upper triangle of A_m (row-major).  M_m is
    L^{-1} A_m^dag A_m L^{-dag} with sum_m A_m^dag A_m = L L^dag.
    rho and xrho[j] = X_j rho are d x d; returns const - sum_m c^T W c / p.
    """
    n = xrho.shape[0]
    npm = d * d
    m_up = d * (d - 1) // 2
    a = np.zeros((k, d, d), dtype=np.complex128)
    for m in range(k):
        base = m * npm
        for i in range(d):
            a[m, i, i] = theta[base + i]
        t = 0
        for i in range(d):
            for j in range(i + 1, d):
                a[m, i, j] = theta[base + d + t] + 1j * theta[base + d + m_up + t]
                t += 1
    b = np.zeros((k, d, d), dtype=np.complex128)
    tot = np.zeros((d, d), dtype=np.complex128)
    for m in range(k):
        for i in range(d):
            for j in range(d):
                s = 0j
                for r in range(d):
                    s += np.conj(a[m, r, i]) * a[m, r, j]
                b[m, i, j] = s
                tot[i, j] += s
    # Cholesky tot = L L^dag
    low = np.zeros((d, d), dtype=np.complex128)
    scale = 0.0
    for i in range(d):
        scale = max(scale, tot[i, i].real)
    for j in range(d):
        s = tot[j, j].real
        for r in range(j):
            s -= (low[j, r] * np.conj(low[j, r])).real
        if s <= 1e-13 * scale or s <= 0.0:
            return 1e6
        ljj = np.sqrt(s)
        low[j, j] = ljj
        for i in range(j + 1, d):
            z = tot[i, j]
            for r in range(j):
                z -= low[i, r] * np.conj(low[j, r])
            low[i, j] = z / ljj
    # inverse of the lower-triangular factor
    linv = np.zeros((d, d), dtype=np.complex128)
    for c in range(d):
        for i in range(c, d):
            z = 1.0 + 0j if i == c else 0j
            for r in range(c, i):
                z -= low[i, r] * linv[r, c]
            linv[i, c] = z / low[i, i]
    err = const
    tmp = np.zeros((d, d), dtype=np.complex128)
    mm = np.zeros((d, d), dtype=np.complex128)
    c = np.zeros(n)
    for m in range(k):
        for i in range(d):
            for j in range(d):
                s = 0j
                for r in range(d):
                    s += linv[i, r] * b[m, r, j]
                tmp[i, j] = s
        for i in range(d):
            for j in range(d):
                s = 0j
                for r in range(d):
                    s += tmp[i, r] * np.conj(linv[j, r])
                mm[i, j] = s
        p = 0.0
        for i in range(d):
            for j in range(d):
                p += (mm[i, j] * rho[j, i]).real
        if p <= zero_prob:
            continue
        for q in range(n):
            s = 0.0
            for i in range(d):
                for j in range(d):
                    s += (mm[i, j] * xrho[q, j, i]).real
            c[q] = s
        quad = 0.0
        for q in range(n):
            for r in range(n):
                quad += c[q] * w[q, r] * c[r]
        err -= quad / p
    return err


oracle_error_py = _oracle_error
oracle_error = numba.njit(cache=True, nogil=True)(_oracle_error) if HAVE_NUMBA else _oracle_error


def _nelder_mead(x0, maxfev, xatol, fatol, k, d, rho, xrho, w, const, zero_prob):
    """Adaptive Nelder-Mead on the oracle objective (same steps as scipy's).

    Returns (x, f, nfev).  Stops when the evaluation budget is exhausted or
    the simplex is within xatol / fatol.
    """
    n = x0.size
    dim = float(n)
    rho_r, chi = 1.0, 1.0 + 2.0 / dim
    psi, sigma = 0.75 - 1.0 / (2.0 * dim), 1.0 - 1.0 / dim
    sim = np.empty((n + 1, n))
    sim[0] = x0
    for j in range(n):
        y = x0.copy()
        y[j] = (1.0 + 0.05) * y[j] if y[j] != 0.0 else 0.00025
        sim[j + 1] = y
    fsim = np.full(n + 1, np.inf)
    nfev = 0
    for j in range(n + 1):
        if nfev >= maxfev:
            break
        fsim[j] = _oracle_error(sim[j], k, d, rho, xrho, w, const, zero_prob)
        nfev += 1
    order = np.argsort(fsim)
    sim = sim[order]
    fsim = fsim[order]
    xbar = np.empty(n)
    while nfev < maxfev:
        spread = 0.0
        for j in range(1, n + 1):
            for i in range(n):
                spread = max(spread, abs(sim[j, i] - sim[0, i]))
        fspread = 0.0
        for j in range(1, n + 1):
            fspread = max(fspread, abs(fsim[0] - fsim[j]))
        if spread <= xatol and fspread <= fatol:
            break
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += sim[j, i]
            xbar[i] = s / n
        worst = sim[n].copy()
        xr = (1 + rho_r) * xbar - rho_r * worst
        fxr = _oracle_error(xr, k, d, rho, xrho, w, const, zero_prob)
        nfev += 1
        if fxr < fsim[0]:
            if nfev >= maxfev:
                break  # scipy leaves the simplex as is when the expansion is out of budget
            else:
                xe = (1 + rho_r * chi) * xbar - rho_r * chi * worst
                fxe = _oracle_error(xe, k, d, rho, xrho, w, const, zero_prob)
                nfev += 1
                if fxe < fxr:
                    sim[n] = xe
                    fsim[n] = fxe
                else:
                    sim[n] = xr
                    fsim[n] = fxr
        elif fxr < fsim[n - 1]:
            sim[n] = xr
            fsim[n] = fxr
        elif nfev < maxfev:
            shrink = False
            if fxr < fsim[n]:
                xc = (1 + psi * rho_r) * xbar - psi * rho_r * worst
                fxc = _oracle_error(xc, k, d, rho, xrho, w, const, zero_prob)
                nfev += 1
                if fxc <= fxr:
                    sim[n] = xc
                    fsim[n] = fxc
                else:
                    shrink = True
            else:
                xcc = (1 - psi) * xbar + psi * worst
                fxcc = _oracle_error(xcc, k, d, rho, xrho, w, const, zero_prob)
                nfev += 1
                if fxcc < fsim[n]:
                    sim[n] = xcc
                    fsim[n] = fxcc
                else:
                    shrink = True
            if shrink:
                for j in range(1, n + 1):
                    if nfev >= maxfev:
                        break
                    sim[j] = sim[0] + sigma * (sim[j] - sim[0])
                    fsim[j] = _oracle_error(sim[j], k, d, rho, xrho, w, const, zero_prob)
                    nfev += 1
                order = np.argsort(fsim)
                sim = sim[order]
                fsim = fsim[order]
                continue
        # only the last vertex moved: insert it in order
        fnew = fsim[n]
        pos = n
        while pos > 0 and fsim[pos - 1] > fnew:
            pos -= 1
        if pos < n:
            row = sim[n].copy()
            for j in range(n, pos, -1):
                sim[j] = sim[j - 1]
                fsim[j] = fsim[j - 1]
            sim[pos] = row
            fsim[pos] = fnew
    return sim[0].copy(), fsim[0], nfev


nelder_mead_py = _nelder_mead
if HAVE_NUMBA:
    _oracle_error = oracle_error  # the compiled driver calls the compiled objective
    nelder_mead = numba.njit(cache=True, nogil=True)(_nelder_mead)
else:  # pragma: no cover
    nelder_mead = _nelder_mead
