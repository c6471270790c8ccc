"""Hot loops of the path engine and the Monte Carlo solvers.

Each public kernel dispatches to an ``@njit`` loop or to a NumPy version
vectorised over the path axis, according to :func:`neumannlab._accel.backend`.
Both receive the same increment arrays, so the two backends agree to
rounding.

Geometry is passed as ``(kind, params)`` (see :class:`DomainSpec`).
Tabulated fields live on uniform grids described by ``(lo, step)`` pairs and
are read by bilinear interpolation with index clamping.
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit
from .geometry import INTERVAL

# ---------------------------------------------------------------------------
# numba building blocks


@njit
def _project_nb(kind, params, x, out):
    n = x.shape[0]
    if kind == 0:
        v = x[0]
        if v < params[0]:
            v = params[0]
        elif v > params[1]:
            v = params[1]
        out[0] = v
        return
    r = params[0]
    s = 0.0
    for i in range(n):
        d = x[i] - params[1 + i]
        s += d * d
    norm = math.sqrt(s)
    if norm > r:
        for i in range(n):
            out[i] = params[1 + i] + (x[i] - params[1 + i]) * (r / norm)
    else:
        for i in range(n):
            out[i] = x[i]


@njit
def _inward_normal_nb(kind, params, x, out):
    n = x.shape[0]
    if kind == 0:
        c = 0.5 * (params[0] + params[1])
        r = 0.5 * (params[1] - params[0])
        out[0] = -(x[0] - c) / r
        return
    r = params[0]
    for i in range(n):
        out[i] = -(x[i] - params[1 + i]) / r


@njit
def _interp2_nb(tab, t_lo, t_step, x_lo, x_step, t, x):
    nt, nx = tab.shape
    st = (t - t_lo) / t_step
    sx = (x - x_lo) / x_step
    if st < 0.0:
        st = 0.0
    if st > nt - 1:
        st = nt - 1.0
    if sx < 0.0:
        sx = 0.0
    if sx > nx - 1:
        sx = nx - 1.0
    i = min(int(st), nt - 2) if nt > 1 else 0
    j = min(int(sx), nx - 2) if nx > 1 else 0
    wt = st - i if nt > 1 else 0.0
    wx = sx - j if nx > 1 else 0.0
    i1 = i + 1 if nt > 1 else i
    j1 = j + 1 if nx > 1 else j
    # a + w (b - a) reproduces constant tables exactly
    lo = tab[i, j] + wx * (tab[i, j1] - tab[i, j])
    hi = tab[i1, j] + wx * (tab[i1, j1] - tab[i1, j])
    return lo + wt * (hi - lo)


@njit
def _interp1_nb(tab, lo, step, s_val):
    n = tab.shape[0]
    s = (s_val - lo) / step
    if s < 0.0:
        s = 0.0
    if s > n - 1:
        s = n - 1.0
    i = min(int(s), n - 2) if n > 1 else 0
    w = s - i if n > 1 else 0.0
    i1 = i + 1 if n > 1 else i
    return tab[i] + w * (tab[i1] - tab[i])


@njit
def _erfcx_nb(z):
    if z < 25.0:
        return math.exp(z * z) * math.erfc(z)
    iz2 = 1.0 / (z * z)
    return (1.0 - 0.5 * iz2 + 0.75 * iz2 * iz2) / (z * math.sqrt(math.pi))


@njit
def _bridge_local_time_nb(xd, yd, dt):
    """E[local time at a wall | distances xd, yd to it at the two ends of a step]."""
    s = xd + yd
    if s * s > 80.0 * dt:
        return 0.0
    e = 2.0 * xd * yd / dt
    return math.sqrt(2.0 * math.pi * dt) * _erfcx_nb(s / math.sqrt(2.0 * dt)) / (math.exp(e) + 1.0)


@njit
def _fold_nb(y, a, b):
    if a <= y <= b:
        return y
    w = b - a
    r = (y - a) % (2.0 * w)
    if r > w:
        r = 2.0 * w - r
    return a + r


# ---------------------------------------------------------------------------
# numpy building blocks


def _erfcx_np(z):
    from scipy.special import erfcx

    return erfcx(z)


def bridge_local_time(xd, yd, dt):
    """Conditional mean of the wall local time over one step of reflected Brownian motion.

    For a step of length dt that starts at distance ``xd`` from a wall and
    ends at distance ``yd``, the local time (normalized as the Skorokhod
    push) has conditional mean

        sqrt(2 pi dt) erfcx((xd + yd) / sqrt(2 dt)) / (exp(2 xd yd / dt) + 1).

    The other wall of an interval is ignored (its contribution is of order
    exp(-width^2 / 2dt)).
    """
    xd = np.asarray(xd, dtype=np.float64)
    yd = np.asarray(yd, dtype=np.float64)
    s = xd + yd
    out = np.zeros(np.broadcast(xd, yd).shape)
    m = np.broadcast_to(s * s <= 80.0 * dt, out.shape)
    if np.any(m):
        xs, ys = np.broadcast_to(xd, out.shape)[m], np.broadcast_to(yd, out.shape)[m]
        out[m] = math.sqrt(2.0 * math.pi * dt) * _erfcx_np((xs + ys) / math.sqrt(2.0 * dt)) / (np.exp(2.0 * xs * ys / dt) + 1.0)
    return out


def fold(y, a, b):
    """Mirror-reflect points of the real line into [a, b]."""
    y = np.asarray(y, dtype=np.float64)
    w = b - a
    r = np.mod(y - a, 2.0 * w)
    # points already inside are returned untouched
    return np.where((y >= a) & (y <= b), y, a + np.where(r > w, 2.0 * w - r, r))


def _project_np(kind, params, x):
    if kind == INTERVAL:
        return np.clip(x, params[0], params[1])
    c, r = params[1:], params[0]
    rel = x - c
    norm = np.sqrt(np.sum(rel * rel, axis=-1, keepdims=True))
    scale = np.where(norm > r, r / np.where(norm > 0, norm, 1.0), 1.0)
    return np.where(norm > r, c + rel * scale, x)


def _inward_normal_np(kind, params, x):
    if kind == INTERVAL:
        c = 0.5 * (params[0] + params[1])
        r = 0.5 * (params[1] - params[0])
        return -(x - c) / r
    return -(x - params[1:]) / params[0]


def _clamped_index(s, n):
    s = np.clip(s, 0.0, n - 1.0)
    if n == 1:
        return np.zeros(np.shape(s), dtype=np.int64), np.zeros(np.shape(s))
    i = np.minimum(s.astype(np.int64), n - 2)
    return i, s - i


def _interp2_np(tab, t_lo, t_step, x_lo, x_step, t, x):
    nt, nx = tab.shape
    i, wt = _clamped_index(np.asarray((t - t_lo) / t_step, dtype=np.float64), nt)
    j, wx = _clamped_index(np.asarray((x - x_lo) / x_step, dtype=np.float64), nx)
    i1 = i + 1 if nt > 1 else i
    j1 = j + 1 if nx > 1 else j
    # a + w (b - a) reproduces constant tables exactly
    lo = tab[i, j] + wx * (tab[i, j1] - tab[i, j])
    hi = tab[i1, j] + wx * (tab[i1, j1] - tab[i1, j])
    return lo + wt * (hi - lo)


def _interp1_np(tab, lo, step, s_val):
    n = tab.shape[0]
    i, w = _clamped_index(np.asarray((s_val - lo) / step, dtype=np.float64), n)
    i1 = i + 1 if n > 1 else i
    return tab[i] + w * (tab[i1] - tab[i])


# ---------------------------------------------------------------------------
# path storage


@njit
def _reflected_paths_nb(kind, params, x0, dB):
    P, M, N = dB.shape
    X = np.empty((P, M + 1, N))
    dL = np.zeros((P, M))
    nrm = np.zeros((P, M, N))
    y = np.empty(N)
    py = np.empty(N)
    nv = np.empty(N)
    for p in range(P):
        for i in range(N):
            X[p, 0, i] = x0[p, i]
        for k in range(M):
            for i in range(N):
                y[i] = X[p, k, i] + dB[p, k, i]
            _project_nb(kind, params, y, py)
            s = 0.0
            for i in range(N):
                d = y[i] - py[i]
                s += d * d
                X[p, k + 1, i] = py[i]
            if s > 0.0:
                dL[p, k] = math.sqrt(s)
                _inward_normal_nb(kind, params, py, nv)
                for i in range(N):
                    nrm[p, k, i] = nv[i]
    return X, dL, nrm


def _reflected_paths_np(kind, params, x0, dB, drift=None, dt=0.0):
    P, M, N = dB.shape
    X = np.empty((P, M + 1, N))
    dL = np.zeros((P, M))
    nrm = np.zeros((P, M, N))
    X[:, 0] = x0
    for k in range(M):
        y = X[:, k] + dB[:, k]
        if drift is not None:
            y = y + drift(X[:, k]) * dt
        py = _project_np(kind, params, y)
        d = np.sqrt(np.sum((y - py) ** 2, axis=-1))
        X[:, k + 1] = py
        dL[:, k] = d
        hit = d > 0
        nrm[hit, k] = _inward_normal_np(kind, params, py[hit])
    return X, dL, nrm


def reflected_paths(kind, params, x0, dB, drift=None, dt=0.0):
    if drift is None and _accel.backend() == "numba":
        return _reflected_paths_nb(kind, params, x0, dB)
    return _reflected_paths_np(kind, params, x0, dB, drift, dt)


@njit
def _penalized_paths_nb(kind, params, x0, dB, n, dt):
    P, M, N = dB.shape
    X = np.empty((P, M + 1, N))
    dK = np.zeros((P, M, N))
    y = np.empty(N)
    py = np.empty(N)
    exact = n * dt > 0.5
    decay = math.exp(-2.0 * n * dt)
    for p in range(P):
        for i in range(N):
            X[p, 0, i] = x0[p, i]
        for k in range(M):
            if exact:
                for i in range(N):
                    y[i] = X[p, k, i] + dB[p, k, i]
                _project_nb(kind, params, y, py)
                for i in range(N):
                    nx = py[i] + (y[i] - py[i]) * decay
                    dK[p, k, i] = nx - y[i]
                    X[p, k + 1, i] = nx
            else:
                for i in range(N):
                    y[i] = X[p, k, i]
                _project_nb(kind, params, y, py)
                for i in range(N):
                    kk = -n * 2.0 * (y[i] - py[i]) * dt
                    dK[p, k, i] = kk
                    X[p, k + 1, i] = y[i] + dB[p, k, i] + kk
    return X, dK


def _penalized_paths_np(kind, params, x0, dB, n, dt, drift=None):
    P, M, N = dB.shape
    X = np.empty((P, M + 1, N))
    dK = np.zeros((P, M, N))
    X[:, 0] = x0
    exact = n * dt > 0.5
    decay = math.exp(-2.0 * n * dt)
    for k in range(M):
        xk = X[:, k]
        b = drift(xk) * dt if drift is not None else 0.0
        if exact:
            y = xk + dB[:, k] + b
            py = _project_np(kind, params, y)
            nxt = py + (y - py) * decay
            dK[:, k] = nxt - y
        else:
            kk = -n * 2.0 * (xk - _project_np(kind, params, xk)) * dt
            dK[:, k] = kk
            nxt = xk + dB[:, k] + b + kk
        X[:, k + 1] = nxt
    return X, dK


def penalized_paths(kind, params, x0, dB, n, dt, drift=None):
    if drift is None and _accel.backend() == "numba":
        return _penalized_paths_nb(kind, params, x0, dB, float(n), dt)
    return _penalized_paths_np(kind, params, x0, dB, float(n), dt, drift)


# ---------------------------------------------------------------------------
# streaming statistics (no path storage)


@njit
def _coupled_gaps_nb(kind, params, x0, dB, ns, dt, power):
    P, M, N = dB.shape
    J = ns.shape[0]
    sup_x = np.zeros((P, J))
    sup_k = np.zeros((P, J))
    LT = np.zeros(P)
    xr = np.empty(N)
    kr = np.empty(N)
    xp = np.empty((J, N))
    kp = np.empty((J, N))
    y = np.empty(N)
    py = np.empty(N)
    nv = np.empty(N)
    for p in range(P):
        for i in range(N):
            xr[i] = x0[p, i]
            kr[i] = 0.0
            for j in range(J):
                xp[j, i] = x0[p, i]
                kp[j, i] = 0.0
        L = 0.0
        for k in range(M):
            # reflected
            for i in range(N):
                y[i] = xr[i] + dB[p, k, i]
            _project_nb(kind, params, y, py)
            s = 0.0
            for i in range(N):
                d = y[i] - py[i]
                s += d * d
                xr[i] = py[i]
            if s > 0.0:
                dl = math.sqrt(s)
                L += dl
                _inward_normal_nb(kind, params, py, nv)
                for i in range(N):
                    kr[i] += nv[i] * dl
            # penalized family
            for j in range(J):
                n = ns[j]
                if n * dt > 0.5:
                    decay = math.exp(-2.0 * n * dt)
                    for i in range(N):
                        y[i] = xp[j, i] + dB[p, k, i]
                    _project_nb(kind, params, y, py)
                    for i in range(N):
                        nx = py[i] + (y[i] - py[i]) * decay
                        kp[j, i] += nx - y[i]
                        xp[j, i] = nx
                else:
                    for i in range(N):
                        y[i] = xp[j, i]
                    _project_nb(kind, params, y, py)
                    for i in range(N):
                        kk = -n * 2.0 * (y[i] - py[i]) * dt
                        kp[j, i] += kk
                        xp[j, i] = y[i] + dB[p, k, i] + kk
                sx = 0.0
                sk = 0.0
                for i in range(N):
                    sx += (xp[j, i] - xr[i]) ** 2
                    sk += (kp[j, i] - kr[i]) ** 2
                gx = sx ** (0.5 * power)
                gk = math.sqrt(sk)
                if gx > sup_x[p, j]:
                    sup_x[p, j] = gx
                if gk > sup_k[p, j]:
                    sup_k[p, j] = gk
        LT[p] = L
    return sup_x, sup_k, LT


def _coupled_gaps_np(kind, params, x0, dB, ns, dt, power):
    P, M, N = dB.shape
    J = len(ns)
    sup_x = np.zeros((P, J))
    sup_k = np.zeros((P, J))
    LT = np.zeros(P)
    xr = x0.copy()
    kr = np.zeros((P, N))
    xp = np.repeat(x0[:, None, :], J, axis=1)
    kp = np.zeros((P, J, N))
    ns = np.asarray(ns, dtype=np.float64)
    exact = (ns * dt > 0.5)[None, :, None]
    decay = np.exp(-2.0 * ns * dt)[None, :, None]
    nn = ns[None, :, None]
    for k in range(M):
        y = xr + dB[:, k]
        py = _project_np(kind, params, y)
        dl = np.sqrt(np.sum((y - py) ** 2, axis=-1))
        LT += dl
        xr = py
        kr = kr + np.where(dl[:, None] > 0, _inward_normal_np(kind, params, py), 0.0) * dl[:, None]
        # both branches are computed; the flag picks one per n
        ye = xp + dB[:, k][:, None, :]
        pye = _project_np(kind, params, ye)
        xe = pye + (ye - pye) * decay
        kk = -nn * 2.0 * (xp - _project_np(kind, params, xp)) * dt
        xe_k = np.where(exact, xe, xp + dB[:, k][:, None, :] + kk)
        kp = kp + np.where(exact, xe - ye, kk)
        xp = xe_k
        gx = np.sum((xp - xr[:, None, :]) ** 2, axis=-1) ** (0.5 * power)
        gk = np.sqrt(np.sum((kp - kr[:, None, :]) ** 2, axis=-1))
        np.maximum(sup_x, gx, out=sup_x)
        np.maximum(sup_k, gk, out=sup_k)
    return sup_x, sup_k, LT


def coupled_gaps(kind, params, x0, dB, ns, dt, power=2.0):
    """Per-path sup|X^n - X|^power and sup|K^n - K| for each n, plus L_T."""
    ns = np.asarray(ns, dtype=np.float64)
    if _accel.backend() == "numba":
        return _coupled_gaps_nb(kind, params, x0, dB, ns, dt, float(power))
    return _coupled_gaps_np(kind, params, x0, dB, ns, dt, float(power))


@njit
def _reflected_local_time_nb(kind, params, x0, dB):
    P, M, N = dB.shape
    LT = np.zeros(P)
    x = np.empty(N)
    y = np.empty(N)
    py = np.empty(N)
    for p in range(P):
        for i in range(N):
            x[i] = x0[p, i]
        L = 0.0
        for k in range(M):
            for i in range(N):
                y[i] = x[i] + dB[p, k, i]
            _project_nb(kind, params, y, py)
            s = 0.0
            for i in range(N):
                d = y[i] - py[i]
                s += d * d
                x[i] = py[i]
            if s > 0.0:
                L += math.sqrt(s)
        LT[p] = L
    return LT


def _reflected_local_time_np(kind, params, x0, dB):
    P, M, N = dB.shape
    x = x0.copy()
    LT = np.zeros(P)
    for k in range(M):
        y = x + dB[:, k]
        x = _project_np(kind, params, y)
        LT += np.sqrt(np.sum((y - x) ** 2, axis=-1))
    return LT


def reflected_local_time(kind, params, x0, dB):
    if _accel.backend() == "numba":
        return _reflected_local_time_nb(kind, params, x0, dB)
    return _reflected_local_time_np(kind, params, x0, dB)


@njit
def _bridge_local_time_1d_nb(a, b, x0, dB, dt):
    P, M = dB.shape
    LT = np.zeros(P)
    for p in range(P):
        x = x0[p]
        L = 0.0
        for k in range(M):
            y = _fold_nb(x + dB[p, k], a, b)
            L += _bridge_local_time_nb(x - a, y - a, dt) + _bridge_local_time_nb(b - x, b - y, dt)
            x = y
        LT[p] = L
    return LT


def _bridge_local_time_1d_np(a, b, x0, dB, dt):
    x = x0.copy()
    LT = np.zeros(x.shape[0])
    for k in range(dB.shape[1]):
        y = fold(x + dB[:, k], a, b)
        LT += bridge_local_time(x - a, y - a, dt) + bridge_local_time(b - x, b - y, dt)
        x = y
    return LT


def bridge_local_time_1d(a, b, x0, dB, dt):
    """L_T on an interval from mirror-folded paths and per-step conditional local times."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    dB = np.ascontiguousarray(dB, dtype=np.float64)
    if _accel.backend() == "numba":
        return _bridge_local_time_1d_nb(float(a), float(b), x0, dB, float(dt))
    return _bridge_local_time_1d_np(float(a), float(b), x0, dB, float(dt))


@njit
def _skorokhod_local_time_1d_nb(a, b, x0, dB, U, dt):
    P, M = dB.shape
    LT = np.zeros(P)
    for p in range(P):
        x = x0[p]
        L = 0.0
        for k in range(M):
            w = dB[p, k]
            # running extreme of the step given its endpoint, toward the nearer wall
            r = math.sqrt(w * w - 2.0 * dt * math.log(1.0 - U[p, k]))
            if x - a <= b - x:
                push = max(0.0, a - (x + 0.5 * (w - r)))
                y = x + w + push
                if y > b:
                    push += y - b
                    y = b
            else:
                push = max(0.0, x + 0.5 * (w + r) - b)
                y = x + w - push
                if y < a:
                    push += a - y
                    y = a
            L += push
            x = y
        LT[p] = L
    return LT


def _skorokhod_local_time_1d_np(a, b, x0, dB, U, dt):
    x = x0.copy()
    LT = np.zeros(x.shape[0])
    for k in range(dB.shape[1]):
        w = dB[:, k]
        r = np.sqrt(w * w - 2.0 * dt * np.log(1.0 - U[:, k]))
        low = x - a <= b - x
        pa = np.maximum(0.0, a - (x + 0.5 * (w - r)))
        pb = np.maximum(0.0, x + 0.5 * (w + r) - b)
        y = np.where(low, x + w + pa, x - pb + w)
        push = np.where(low, pa, pb)
        push = push + np.where(low & (y > b), y - b, 0.0) + np.where(~low & (y < a), a - y, 0.0)
        y = np.where(low, np.minimum(y, b), np.maximum(y, a))
        LT += push
        x = y
    return LT


def skorokhod_local_time_1d(a, b, x0, dB, U, dt):
    """L_T on an interval by exact one-wall Skorokhod steps.

    Each step draws the running minimum (or maximum, toward the nearer wall)
    of the Brownian step given its endpoint from the uniform ``U``, so
    (X_{k+1}, dL_k) has the exact law of reflection at that wall. Only a
    step reaching both walls (width comparable to sqrt(dt)) is approximate.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    dB = np.ascontiguousarray(dB, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if _accel.backend() == "numba":
        return _skorokhod_local_time_1d_nb(float(a), float(b), x0, dB, U, float(dt))
    return _skorokhod_local_time_1d_np(float(a), float(b), x0, dB, U, float(dt))


# ---------------------------------------------------------------------------
# 1-D Monte Carlo accumulators over tabulated data
#
# grid = (t_lo, t_step, x_lo, x_step). ``ftab`` is the volume integrand on
# (t, x), ``htab`` the boundary integrand at (t, {a, b}), ``term`` the
# terminal functional on x (same x axis).


PROJECTION = 0
REFLECTION = 1


@njit
def _bsde_reflected_1d_nb(a, b, x0s, dB, t0, dt, ftab, htab, term, grid, scheme):
    P, M = dB.shape
    Q = x0s.shape[0]
    t_lo, t_step, x_lo, x_step = grid[0], grid[1], grid[2], grid[3]
    out = np.empty((P, Q))
    for p in range(P):
        for q in range(Q):
            x = x0s[q]
            acc = 0.0
            for k in range(M):
                t = t0 + k * dt
                acc += _interp2_nb(ftab, t_lo, t_step, x_lo, x_step, t, x) * dt
                y = x + dB[p, k]
                if scheme == 0:
                    if y > b:
                        acc += _interp1_nb(htab[:, 1], t_lo, t_step, t + dt) * (y - b)
                        y = b
                    elif y < a:
                        acc += _interp1_nb(htab[:, 0], t_lo, t_step, t + dt) * (a - y)
                        y = a
                else:
                    y = _fold_nb(y, a, b)
                    la = _bridge_local_time_nb(x - a, y - a, dt)
                    lb = _bridge_local_time_nb(b - x, b - y, dt)
                    if la > 0.0:
                        acc += _interp1_nb(htab[:, 0], t_lo, t_step, t + dt) * la
                    if lb > 0.0:
                        acc += _interp1_nb(htab[:, 1], t_lo, t_step, t + dt) * lb
                x = y
            out[p, q] = acc + _interp1_nb(term, x_lo, x_step, x)
    return out


def _bsde_reflected_1d_np(a, b, x0s, dB, t0, dt, ftab, htab, term, grid, scheme):
    P, M = dB.shape
    t_lo, t_step, x_lo, x_step = grid
    x = np.broadcast_to(x0s[None, :], (P, x0s.shape[0])).copy()
    acc = np.zeros_like(x)
    for k in range(M):
        t = t0 + k * dt
        acc += _interp2_np(ftab, t_lo, t_step, x_lo, x_step, t, x) * dt
        y = x + dB[:, k][:, None]
        hb = _interp1_np(htab[:, 1], t_lo, t_step, t + dt)
        ha = _interp1_np(htab[:, 0], t_lo, t_step, t + dt)
        if scheme == PROJECTION:
            acc += np.where(y > b, hb * (y - b), 0.0) + np.where(y < a, ha * (a - y), 0.0)
            y = np.clip(y, a, b)
        else:
            y = fold(y, a, b)
            acc += ha * bridge_local_time(x - a, y - a, dt) + hb * bridge_local_time(b - x, b - y, dt)
        x = y
    return acc + _interp1_np(term, x_lo, x_step, x)


def bsde_reflected_1d(a, b, x0s, dB, t0, dt, ftab, htab, term, grid, scheme=REFLECTION):
    """Per-path values of term(X_T) + sum f dt + sum h dL for each start in ``x0s``.

    ``scheme`` is PROJECTION (clip, dL = overshoot) or REFLECTION (mirror
    fold, dL replaced by its conditional mean given the step's endpoints).
    Returns shape (paths, starts); all starts share the increments ``dB``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if _accel.backend() == "numba":
        return _bsde_reflected_1d_nb(a, b, x0s, dB, t0, dt, ftab, htab, term, grid, int(scheme))
    return _bsde_reflected_1d_np(a, b, x0s, dB, t0, dt, ftab, htab, term, grid, int(scheme))


@njit
def _bsde_penalized_1d_nb(a, b, x0s, dB, t0, dt, n, ftab, htab, term, grid):
    P, M = dB.shape
    Q = x0s.shape[0]
    t_lo, t_step, x_lo, x_step = grid[0], grid[1], grid[2], grid[3]
    exact = n * dt > 0.5
    decay = math.exp(-2.0 * n * dt)
    out = np.empty((P, Q))
    for p in range(P):
        for q in range(Q):
            x = x0s[q]
            acc = 0.0
            for k in range(M):
                t = t0 + k * dt
                acc += _interp2_nb(ftab, t_lo, t_step, x_lo, x_step, t, x) * dt
                # -n <delta, n_vec> h = 2 n |x - proj x| h at the nearer end
                if x > b:
                    acc += 2.0 * n * (x - b) * _interp1_nb(htab[:, 1], t_lo, t_step, t) * dt
                elif x < a:
                    acc += 2.0 * n * (a - x) * _interp1_nb(htab[:, 0], t_lo, t_step, t) * dt
                if exact:
                    y = x + dB[p, k]
                    py = min(max(y, a), b)
                    x = py + (y - py) * decay
                else:
                    py = min(max(x, a), b)
                    x = x + dB[p, k] - 2.0 * n * (x - py) * dt
            out[p, q] = acc + _interp1_nb(term, x_lo, x_step, x)
    return out


def _bsde_penalized_1d_np(a, b, x0s, dB, t0, dt, n, ftab, htab, term, grid):
    P, M = dB.shape
    t_lo, t_step, x_lo, x_step = grid
    exact = n * dt > 0.5
    decay = math.exp(-2.0 * n * dt)
    x = np.broadcast_to(x0s[None, :], (P, x0s.shape[0])).copy()
    acc = np.zeros_like(x)
    for k in range(M):
        t = t0 + k * dt
        acc += _interp2_np(ftab, t_lo, t_step, x_lo, x_step, t, x) * dt
        hb = _interp1_np(htab[:, 1], t_lo, t_step, t)
        ha = _interp1_np(htab[:, 0], t_lo, t_step, t)
        acc += np.where(x > b, 2.0 * n * (x - b) * hb * dt, 0.0)
        acc += np.where(x < a, 2.0 * n * (a - x) * ha * dt, 0.0)
        if exact:
            y = x + dB[:, k][:, None]
            py = np.clip(y, a, b)
            x = py + (y - py) * decay
        else:
            py = np.clip(x, a, b)
            x = x + dB[:, k][:, None] - 2.0 * n * (x - py) * dt
    return acc + _interp1_np(term, x_lo, x_step, x)


def bsde_penalized_1d(a, b, x0s, dB, t0, dt, n, ftab, htab, term, grid):
    """Penalized analogue of :func:`bsde_reflected_1d`; boundary data enter as a volume term."""
    grid = np.asarray(grid, dtype=np.float64)
    if _accel.backend() == "numba":
        return _bsde_penalized_1d_nb(a, b, x0s, dB, t0, dt, float(n), ftab, htab, term, grid)
    return _bsde_penalized_1d_np(a, b, x0s, dB, t0, dt, float(n), ftab, htab, term, grid)


@njit
def _weighted_functional_1d_nb(a, b, x0, dB, dt, lam, mu, wdr, wdl, grid, scheme):
    P, M = dB.shape
    t_lo, t_step, x_lo, x_step = grid[0], grid[1], grid[2], grid[3]
    out = np.empty(P)
    for p in range(P):
        x = x0[p]
        L = 0.0
        acc = 0.0
        for k in range(M):
            t = k * dt
            acc += math.exp(lam * t + mu * L) * _interp2_nb(wdr, t_lo, t_step, x_lo, x_step, t, x) * dt
            y = x + dB[p, k]
            la = 0.0
            lb = 0.0
            if scheme == 0:
                if y > b:
                    lb = y - b
                    y = b
                elif y < a:
                    la = a - y
                    y = a
            else:
                y = _fold_nb(y, a, b)
                la = _bridge_local_time_nb(x - a, y - a, dt)
                lb = _bridge_local_time_nb(b - x, b - y, dt)
            if la + lb > 0.0:
                L += la + lb
                w = math.exp(lam * (t + dt) + mu * L)
                acc += w * (la * _interp2_nb(wdl, t_lo, t_step, x_lo, x_step, t + dt, a)
                            + lb * _interp2_nb(wdl, t_lo, t_step, x_lo, x_step, t + dt, b))
            x = y
        out[p] = acc
    return out


def _weighted_functional_1d_np(a, b, x0, dB, dt, lam, mu, wdr, wdl, grid, scheme):
    P, M = dB.shape
    t_lo, t_step, x_lo, x_step = grid
    x = x0.copy()
    L = np.zeros(P)
    acc = np.zeros(P)
    wa = lambda t: _interp2_np(wdl, t_lo, t_step, x_lo, x_step, t, a)  # noqa: E731
    wb = lambda t: _interp2_np(wdl, t_lo, t_step, x_lo, x_step, t, b)  # noqa: E731
    for k in range(M):
        t = k * dt
        acc += np.exp(lam * t + mu * L) * _interp2_np(wdr, t_lo, t_step, x_lo, x_step, t, x) * dt
        y = x + dB[:, k]
        if scheme == PROJECTION:
            la = np.maximum(a - y, 0.0)
            lb = np.maximum(y - b, 0.0)
            y = np.clip(y, a, b)
        else:
            y = fold(y, a, b)
            la = bridge_local_time(x - a, y - a, dt)
            lb = bridge_local_time(b - x, b - y, dt)
        L += la + lb
        acc += np.exp(lam * (t + dt) + mu * L) * (la * wa(t + dt) + lb * wb(t + dt))
        x = y
    return acc


def weighted_functional_1d(a, b, x0, dB, dt, lam, mu, wdr, wdl, grid, scheme=1):
    """Per-path int e^{lam r + mu L_r} (wdr dr + wdl dL_r) along reflected paths from ``x0``."""
    grid = np.asarray(grid, dtype=np.float64)
    if _accel.backend() == "numba":
        return _weighted_functional_1d_nb(a, b, x0, dB, dt, lam, mu, wdr, wdl, grid, int(scheme))
    return _weighted_functional_1d_np(a, b, x0, dB, dt, lam, mu, wdr, wdl, grid, int(scheme))
