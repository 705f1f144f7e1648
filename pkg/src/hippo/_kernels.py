"""Compiled inner loops for the three convex subproblems."""
from __future__ import annotations

import numpy as np
from numba import njit

LPMAX = 50.0


@njit(cache=True)
def soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _lasso_sweep(X, sq, beta, resid, pen, active_only, is_active):
    n, p = X.shape
    max_change = 0.0
    for j in range(p):
        if active_only and not is_active[j]:
            continue
        old = beta[j]
        z = 0.0
        for i in range(n):
            z += X[i, j] * resid[i]
        z += sq[j] * old
        new = soft(z, pen[j] / 2.0) / sq[j]
        d = new - old
        if d != 0.0:
            for i in range(n):
                resid[i] -= X[i, j] * d
            beta[j] = new
            if abs(d) > max_change:
                max_change = abs(d)
        if new != 0.0:
            is_active[j] = True
    return max_change


@njit(cache=True)
def lasso_cd(X, y, beta, pen, max_iter, tol):
    """Minimize ||y - X b||^2 + sum_j pen_j |b_j| in place (cyclic CD, active sets).

    Returns (sweeps, converged).
    """
    n, p = X.shape
    sq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        sq[j] = s
    resid = y - X @ beta
    is_active = beta != 0.0
    for j in range(p):
        if pen[j] == 0.0:
            is_active[j] = True
    sweeps = 0
    while sweeps < max_iter:
        change = _lasso_sweep(X, sq, beta, resid, pen, False, is_active)
        sweeps += 1
        if change < tol:
            return sweeps, True
        while sweeps < max_iter:
            change = _lasso_sweep(X, sq, beta, resid, pen, True, is_active)
            sweeps += 1
            if change < tol:
                break
    return sweeps, False


@njit(cache=True)
def _theta_sweep(X, eta_sq, theta, lp, r, wpen, active_only, is_active, max_halvings):
    n, p = X.shape
    max_change = 0.0
    for j in range(p):
        if active_only and not is_active[j]:
            continue
        g = 0.0
        h = 0.0
        sx = 0.0
        for i in range(n):
            x = X[i, j]
            sx += x
            if lp[i] > -LPMAX and lp[i] < LPMAX:
                g += x * (1.0 - r[i])
                h += x * x * r[i]
            else:
                g += x
        old = theta[j]
        if old == 0.0 and abs(g) <= wpen[j]:
            continue
        if h < 1e-12:
            h = 1e-12
        d = soft(old - g / h, wpen[j] / h) - old
        if d == 0.0:
            continue
        base = 0.0
        for i in range(n):
            base += r[i]
        base += wpen[j] * abs(old)
        accepted = False
        for _ in range(max_halvings):
            trial = d * sx + wpen[j] * abs(old + d)
            for i in range(n):
                v = lp[i] + X[i, j] * d
                if v > LPMAX:
                    v = LPMAX
                elif v < -LPMAX:
                    v = -LPMAX
                trial += eta_sq[i] * np.exp(-v)
            # allow rounding-level increases so sub-sqrt(eps) Newton steps are not rejected
            if trial <= base + 1e-13 * (abs(base) + 1.0):
                accepted = True
                break
            d *= 0.5
        if not accepted:
            continue
        theta[j] = old + d
        for i in range(n):
            lp[i] += X[i, j] * d
            v = lp[i]
            if v > LPMAX:
                v = LPMAX
            elif v < -LPMAX:
                v = -LPMAX
            r[i] = eta_sq[i] * np.exp(-v)
        if abs(d) > max_change:
            max_change = abs(d)
        if theta[j] != 0.0:
            is_active[j] = True
    return max_change


@njit(cache=True)
def theta_cd(X, eta_sq, theta, wpen, max_iter, tol, max_halvings=60):
    """Minimize sum_i [x_i'theta + eta_i^2 exp(-x_i'theta)] + sum_j wpen_j |theta_j| in place.

    One damped proximal-Newton step per coordinate visit; the step is halved
    until the coordinate objective does not increase. Returns (sweeps, converged).
    """
    n, p = X.shape
    lp = X @ theta
    r = np.empty(n)
    for i in range(n):
        v = min(max(lp[i], -LPMAX), LPMAX)
        r[i] = eta_sq[i] * np.exp(-v)
    is_active = theta != 0.0
    for j in range(p):
        if wpen[j] == 0.0:
            is_active[j] = True
    sweeps = 0
    while sweeps < max_iter:
        change = _theta_sweep(X, eta_sq, theta, lp, r, wpen, False, is_active, max_halvings)
        sweeps += 1
        if change < tol:
            return sweeps, True
        while sweeps < max_iter:
            change = _theta_sweep(X, eta_sq, theta, lp, r, wpen, True, is_active, max_halvings)
            sweeps += 1
            if change < tol:
                break
    return sweeps, False


@njit(cache=True)
def _quad_obj(G, c, wpen, b):
    k = b.shape[0]
    val = 0.0
    for a in range(k):
        s = 0.0
        for e in range(k):
            s += G[a, e] * b[e]
        val += b[a] * s - 2.0 * c[a] * b[a] + wpen[a] * abs(b[a])
    return val


@njit(cache=True)
def fista_gram(G, c, wpen, beta, L, max_iter, tol):
    """Accelerated proximal gradient for b'Gb - 2c'b + sum_j wpen_j |b_j| in place.

    Momentum is reset whenever the objective would increase, which keeps the
    iterates monotone. Stops when the max coefficient change drops below tol.
    Returns (iterations, converged, final objective).
    """
    k = beta.shape[0]
    x_old = beta.copy()
    yv = beta.copy()
    x_new = np.empty(k)
    grad = np.empty(k)
    t = 1.0
    f_old = _quad_obj(G, c, wpen, x_old)
    it = 0
    while it < max_iter:
        it += 1
        for a in range(k):
            s = 0.0
            for e in range(k):
                s += G[a, e] * yv[e]
            grad[a] = 2.0 * (s - c[a])
        for a in range(k):
            x_new[a] = soft(yv[a] - grad[a] / L, wpen[a] / L)
        f_new = _quad_obj(G, c, wpen, x_new)
        if f_new > f_old + 1e-13 * abs(f_old):
            if t > 1.0:
                # restart from the last accepted point with a plain proximal step
                t = 1.0
            else:
                # a plain step failed to descend: L was underestimated
                L *= 2.0
            for a in range(k):
                yv[a] = x_old[a]
            continue
        change = 0.0
        for a in range(k):
            dlt = abs(x_new[a] - x_old[a])
            if dlt > change:
                change = dlt
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        mom = (t - 1.0) / t_next
        for a in range(k):
            yv[a] = x_new[a] + mom * (x_new[a] - x_old[a])
            x_old[a] = x_new[a]
        t = t_next
        f_old = f_new
        if change < tol:
            for a in range(k):
                beta[a] = x_old[a]
            return it, True, f_old
    for a in range(k):
        beta[a] = x_old[a]
    return it, False, f_old


@njit(cache=True)
def power_max_eig(G, iters):
    """Largest eigenvalue of a PSD matrix by ``iters`` power-iteration steps from the all-ones start."""
    k = G.shape[0]
    v = np.ones(k) / np.sqrt(k)
    est = 0.0
    for _ in range(iters):
        w = G @ v
        nrm = np.sqrt(np.sum(w * w))
        if nrm == 0.0:
            return 0.0
        est = nrm
        v = w / nrm
    return est
