"""Compiled inner loops (numba).

Neighbour encoding shared by every kernel: ``nbr[i, k, s]`` is the compact
index of the Interior neighbour of node ``i`` along direction ``k`` (``s = 0``
for ``+v``, ``1`` for ``-v``), or ``-(cut + 1)`` when the segment leaves the
annulus; the cut sits at fraction ``cut_theta[cut]`` of the step.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def direction_terms(i, u, nbr, cut_theta, cut_val, dir_len, h, dd, ww):
    """Per direction ``k``: neighbour average ``dd[k]`` and weight ``ww[k]``.

    The second difference along ``k`` is ``(dd[k] - u[i]) / ww[k]``.
    """
    for k in range(nbr.shape[1]):
        hk = h * dir_len[k]
        p = nbr[i, k, 0]
        q = nbr[i, k, 1]
        if p >= 0 and q >= 0:
            dd[k] = 0.5 * (u[p] + u[q])
            ww[k] = 0.5 * hk * hk
            continue
        if p >= 0:
            up = u[p]
            hp = hk
        else:
            c = -p - 1
            up = cut_val[c]
            hp = cut_theta[c] * hk
        if q >= 0:
            um = u[q]
            hm = hk
        else:
            c = -q - 1
            um = cut_val[c]
            hm = cut_theta[c] * hk
        # Shortley-Weller weights a+- = 2 / (h+- (h+ + h-)), folded into d and w
        dd[k] = (hm * up + hp * um) / (hp + hm)
        ww[k] = 0.5 * hp * hm


@njit(cache=True)
def node_update(i, u, nbr, frames, cut_theta, cut_val, dir_len, h, g, dd, ww):
    """Value of ``u[i]`` solving the scalar node equation with neighbours frozen.

    In frame ``f`` the equation is ``prod_j (d_j - u0) = g prod_j w_j``; with
    ``t = min_j d_j - u0`` the left side is convex increasing in ``t >= 0``,
    so Newton started right of the root (at ``G^(1/n)``) decreases monotonically
    onto it.  The node value is the smallest frame root.
    """
    direction_terms(i, u, nbr, cut_theta, cut_val, dir_len, h, dd, ww)
    n = frames.shape[1]
    best = np.inf
    for f in range(frames.shape[0]):
        m = np.inf
        G = g
        for jj in range(n):
            k = frames[f, jj]
            G *= ww[k]
            if dd[k] < m:
                m = dd[k]
        if best < np.inf:
            gap = m - best
            # the frame root is at least m - G^(1/n)
            if gap > 0.0:
                gp = 1.0
                for _ in range(n):
                    gp *= gap
                if gp >= G:
                    continue
        t = G ** (1.0 / n)
        for _ in range(100):
            P = 1.0
            S = 0.0
            for jj in range(n):
                z = t + dd[frames[f, jj]] - m
                P *= z
                S += 1.0 / z
            step = (P - G) / (P * S)
            if step < 0.0:
                step = 0.0
            t -= step
            if m - t >= best or step <= 1e-14 * t:
                break
        r = m - t
        if r < best:
            best = r
    return best


@njit(cache=True)
def gs_sweep(u, order, nbr, frames, cut_theta, cut_val, dir_len, h, gvals, omega=1.0):
    """One nonlinear Gauss-Seidel pass over ``order``; returns the sup-change.

    ``omega != 1`` over-relaxes each node update (``u += omega (root - u)``).
    """
    D = nbr.shape[1]
    dd = np.empty(D)
    ww = np.empty(D)
    change = 0.0
    for idx in range(order.shape[0]):
        i = order[idx]
        new = node_update(i, u, nbr, frames, cut_theta, cut_val, dir_len, h, gvals[i], dd, ww)
        if omega != 1.0:
            new = u[i] + omega * (new - u[i])
        d = abs(new - u[i])
        if d > change:
            change = d
        u[i] = new
    return change


@njit(cache=True)
def local_solve(u, nodes, nbr, frames, cut_theta, cut_val, dir_len, h, gvals, tol, max_iter):
    """Gauss-Seidel restricted to ``nodes`` until the sup-change drops below ``tol``."""
    it = 0
    for it in range(max_iter):
        ch = gs_sweep(u, nodes, nbr, frames, cut_theta, cut_val, dir_len, h, gvals)
        if ch <= tol:
            break
    return it + 1


@njit(cache=True)
def _lower_envelope_1d(f, a, out, v, z):
    """``out[p] = min_q f[q] + a (p - q)^2`` (lower envelope of parabolas); ``inf`` entries skipped."""
    m = f.shape[0]
    k = -1
    for q in range(m):
        if not np.isfinite(f[q]):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            p = v[k]
            s = ((f[q] + a * q * q) - (f[p] + a * p * p)) / (2.0 * a * (q - p))
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for p in range(m):
            out[p] = np.inf
        return
    j = 0
    for p in range(m):
        while z[j + 1] < p:
            j += 1
        q = v[j]
        out[p] = f[q] + a * (p - q) * (p - q)


@njit(cache=True)
def lower_envelope_lines(F, a):
    """Apply the 1-D transform to every row of a 2-D array (in place)."""
    m = F.shape[1]
    out = np.empty(m)
    v = np.empty(m, dtype=np.int64)
    z = np.empty(m + 1)
    for r in range(F.shape[0]):
        _lower_envelope_1d(F[r], a, out, v, z)
        for p in range(m):
            F[r, p] = out[p]


@njit(cache=True)
def perron_pass(u, ptr, patch_nodes, nbr, frames, cut_theta, cut_val, dir_len, h, gvals, tol, max_iter):
    """Lift every patch in turn: local solve, then keep the larger value per node."""
    change = 0.0
    for p in range(ptr.shape[0] - 1):
        nodes = patch_nodes[ptr[p]:ptr[p + 1]]
        old = np.empty(nodes.shape[0])
        for j in range(nodes.shape[0]):
            old[j] = u[nodes[j]]
        local_solve(u, nodes, nbr, frames, cut_theta, cut_val, dir_len, h, gvals, tol, max_iter)
        for j in range(nodes.shape[0]):
            i = nodes[j]
            if u[i] < old[j]:
                u[i] = old[j]
            elif u[i] - old[j] > change:
                change = u[i] - old[j]
    return change
