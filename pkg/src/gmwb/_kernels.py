"""Compiled per-path kernels: grid-search argmax and the terminal expectation."""
import math

import numba as nb
import numpy as np

_SQRT2 = math.sqrt(2.0)


@nb.njit(cache=True, nogil=True)
def norm_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@nb.njit(cache=True, nogil=True)
def terminal_scalar(a, b, c, ell, mu_y, var_y, mu_e, var_e, rho_ye):
    """a * E[exp(-ell Y) max(b exp(Y + E), c)] for Gaussian Y, E."""
    sd_y = math.sqrt(var_y)
    sd_e = math.sqrt(var_e)
    if b <= 0.0 and c <= 0.0:
        return 0.0
    if b <= 0.0:
        return a * c * math.exp(-ell * mu_y + ell * ell * var_y / 2.0)
    v1 = (1.0 - ell) ** 2 * var_y + var_e + 2.0 * (1.0 - ell) * rho_ye * sd_y * sd_e
    v1 = max(v1, 0.0)
    if c <= 0.0:
        return a * b * math.exp((1.0 - ell) * mu_y + mu_e + v1 / 2.0)
    s1 = math.sqrt(v1)
    m1 = math.log(b) + (1.0 - ell) * mu_y + mu_e
    m2 = math.log(c) - ell * mu_y
    s2 = ell * sd_y
    if s1 > 0.0:
        r12 = (-(1.0 - ell) * sd_y - sd_e * rho_ye) / s1
    else:
        r12 = 0.0
    den2 = s1 * s1 + s2 * s2 - 2.0 * r12 * s1 * s2
    if den2 <= 1e-300:
        # X1 - X2 deterministic: the max is whichever has the larger mean
        if m1 >= m2:
            return a * math.exp(m1 + s1 * s1 / 2.0)
        return a * math.exp(m2 + s2 * s2 / 2.0)
    den = math.sqrt(den2)
    t1 = math.exp(m1 + s1 * s1 / 2.0) * norm_cdf((m1 - m2 + s1 * s1 - r12 * s1 * s2) / den)
    t2 = math.exp(m2 + s2 * s2 / 2.0) * norm_cdf((m2 - m1 + s2 * s2 - r12 * s1 * s2) / den)
    return a * (t1 + t2)


@nb.njit(cache=True, nogil=True)
def _cash(pi, g, penalty):
    if pi <= g:
        return pi
    return g + (1.0 - penalty) * (pi - g)


@nb.njit(cache=True, nogil=True)
def argmax_poly_now(w, a, r, g, penalty, coef, exps, grid_size):
    """Grid argmax of C(pi) + sum_t coef_t w^i a^j pi^k r^l over pi in [0, a].

    ``exps`` is (K, 4) with columns (i, j, k, l).  Ties go to the smaller pi.
    """
    m = w.shape[0]
    out_pi = np.empty(m)
    out_v = np.empty(m)
    kmax = 0
    for t in range(exps.shape[0]):
        if exps[t, 2] > kmax:
            kmax = exps[t, 2]
    pc = np.empty(kmax + 1)
    for p in range(m):
        for k in range(kmax + 1):
            pc[k] = 0.0
        for t in range(exps.shape[0]):
            pc[exps[t, 2]] += coef[t] * (w[p] ** exps[t, 0]) * (a[p] ** exps[t, 1]) * (r[p] ** exps[t, 3])
        ap = a[p]
        best_pi = 0.0
        best_v = -np.inf
        n_pts = grid_size if ap > 0.0 else 1
        for q in range(n_pts):
            x = ap * q / (grid_size - 1) if n_pts > 1 else 0.0
            h = pc[kmax]
            for k in range(kmax - 1, -1, -1):
                h = h * x + pc[k]
            v = _cash(x, g, penalty) + h
            if v > best_v:
                best_v = v
                best_pi = x
        if 0.0 < g < ap:
            h = pc[kmax]
            for k in range(kmax - 1, -1, -1):
                h = h * g + pc[k]
            v = _cash(g, g, penalty) + h
            if v > best_v or (v == best_v and g < best_pi):
                best_v = v
                best_pi = g
        out_pi[p] = best_pi
        out_v[p] = best_v
    return out_pi, out_v


@nb.njit(cache=True, nogil=True)
def argmax_poly_later(w, a, g, penalty, h, grid_size):
    """Grid argmax of C(pi) + sum_{i,j} h[p, i, j] max(w - pi, 0)^i (a - pi)^j."""
    m = w.shape[0]
    di = h.shape[1]
    dj = h.shape[2]
    out_pi = np.empty(m)
    out_v = np.empty(m)
    for p in range(m):
        ap = a[p]
        best_pi = 0.0
        best_v = -np.inf
        n_pts = grid_size if ap > 0.0 else 1
        for q in range(n_pts + 1):
            if q < n_pts:
                x = ap * q / (grid_size - 1) if n_pts > 1 else 0.0
            else:
                if not (0.0 < g < ap):
                    break
                x = g
            pw = max(w[p] - x, 0.0)
            pa = max(ap - x, 0.0)
            tot = 0.0
            for i in range(di - 1, -1, -1):
                row = h[p, i, dj - 1]
                for j in range(dj - 2, -1, -1):
                    row = row * pa + h[p, i, j]
                tot = tot * pw + row
            v = _cash(x, g, penalty) + tot
            if v > best_v or (q == n_pts and v == best_v and x < best_pi):
                best_v = v
                best_pi = x
        out_pi[p] = best_pi
        out_v[p] = best_v
    return out_pi, out_v


@nb.njit(cache=True, nogil=True)
def argmax_terminal(w, a, r, g, g_last, penalty, fee_factor, loading, ell,
                    mu_y, var_y, mu_e, var_e, rho_ye, grid_size):
    """Grid argmax at t_{N-1} with the exact discounted terminal expectation."""
    m = w.shape[0]
    out_pi = np.empty(m)
    out_v = np.empty(m)
    for p in range(m):
        ap = a[p]
        aa = math.exp(-ell * loading * r[p])
        growth = fee_factor * math.exp(loading * r[p])
        best_pi = 0.0
        best_v = -np.inf
        n_pts = grid_size if ap > 0.0 else 1
        for q in range(n_pts + 1):
            if q < n_pts:
                x = ap * q / (grid_size - 1) if n_pts > 1 else 0.0
            else:
                if not (0.0 < g < ap):
                    break
                x = g
            b = max(w[p] - x, 0.0) * growth
            c = _cash(max(ap - x, 0.0), g_last, penalty)
            v = _cash(x, g, penalty) + terminal_scalar(aa, b, c, ell, mu_y, var_y, mu_e, var_e, rho_ye)
            if v > best_v or (q == n_pts and v == best_v and x < best_pi):
                best_v = v
                best_pi = x
        out_pi[p] = best_pi
        out_v[p] = best_v
    return out_pi, out_v
