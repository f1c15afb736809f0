"""Hot loops over batches of trajectories.

Every kernel has a loop form compiled with numba (``*_jit``) and a vectorized
numpy form (``*_np``) that runs across paths one round at a time.  The public
wrappers pick the compiled form when numba is available and not disabled via
``AIPWLAB_DISABLE_NUMBA``.  Both forms perform the same floating-point
operations per path, so they agree to rounding.

Shapes: ``X, A`` are ``(N, n)`` int64; ``Y, W`` are ``(N, n)`` float64, where
``W`` is the per-round loss weight (``g^2/pi^2`` or 1).  Each kernel returns
``preds`` of shape ``(N, n, n_actions)``: the learner's prediction at the
round's context for every action, made before the round is revealed.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import njit, use_numba


# --------------------------------------------------------------------------
# tabular OGD on the box [-L, L]^(X x A)


@njit(cache=True)
def ogd_tabular_jit(X, A, Y, W, eta, L, init):
    N, n = X.shape
    n_a = init.shape[1]
    preds = np.empty((N, n, n_a))
    losses = np.empty((N, n))
    final = np.empty((N,) + init.shape)
    for p in range(N):
        mu = init.copy()
        for i in range(n):
            x = X[p, i]
            a = A[p, i]
            for b in range(n_a):
                preds[p, i, b] = mu[x, b]
            r = mu[x, a] - Y[p, i]
            losses[p, i] = W[p, i] * r * r
            v = mu[x, a] - eta[i] * 2.0 * W[p, i] * r
            mu[x, a] = min(max(v, -L), L)
        final[p] = mu
    return preds, losses, final


def ogd_tabular_np(X, A, Y, W, eta, L, init):
    N, n = X.shape
    mu = np.broadcast_to(init, (N,) + init.shape).copy()
    rows = np.arange(N)
    preds = np.empty((N, n, init.shape[1]))
    losses = np.empty((N, n))
    for i in range(n):
        x, a = X[:, i], A[:, i]
        preds[:, i] = mu[rows, x]
        r = mu[rows, x, a] - Y[:, i]
        losses[:, i] = W[:, i] * r * r
        mu[rows, x, a] = np.clip(mu[rows, x, a] - eta[i] * 2.0 * W[:, i] * r, -L, L)
    return preds, losses, mu


def ogd_tabular(X, A, Y, W, eta, L, init):
    """Projected OGD on a table; ``eta[i]`` is used after round ``i``."""
    args = (np.ascontiguousarray(X, np.int64), np.ascontiguousarray(A, np.int64),
            np.ascontiguousarray(Y, float), np.ascontiguousarray(W, float),
            np.ascontiguousarray(eta, float), float(L), np.ascontiguousarray(init, float))
    return (ogd_tabular_jit if use_numba() else ogd_tabular_np)(*args)


# --------------------------------------------------------------------------
# linear OGD on the ball ||theta|| <= R


@njit(cache=True)
def ogd_linear_jit(X, A, Y, W, eta, R, phi, init):
    N, n = X.shape
    n_a = phi.shape[1]
    d = phi.shape[2]
    preds = np.empty((N, n, n_a))
    losses = np.empty((N, n))
    final = np.empty((N, d))
    for p in range(N):
        th = init.copy()
        for i in range(n):
            x = X[p, i]
            a = A[p, i]
            for b in range(n_a):
                s = 0.0
                for k in range(d):
                    s += phi[x, b, k] * th[k]
                preds[p, i, b] = s
            r = preds[p, i, a] - Y[p, i]
            losses[p, i] = W[p, i] * r * r
            c = eta[i] * 2.0 * W[p, i] * r
            nrm = 0.0
            for k in range(d):
                th[k] = th[k] - c * phi[x, a, k]
                nrm += th[k] * th[k]
            nrm = math.sqrt(nrm)
            if nrm > R:
                scale = R / nrm
                for k in range(d):
                    th[k] *= scale
        final[p] = th
    return preds, losses, final


def ogd_linear_np(X, A, Y, W, eta, R, phi, init):
    N, n = X.shape
    th = np.broadcast_to(init, (N, init.size)).copy()
    rows = np.arange(N)
    preds = np.empty((N, n, phi.shape[1]))
    losses = np.empty((N, n))
    for i in range(n):
        x, a = X[:, i], A[:, i]
        preds[:, i] = np.einsum("nbk,nk->nb", phi[x], th)
        r = preds[rows, i, a] - Y[:, i]
        losses[:, i] = W[:, i] * r * r
        th = th - (eta[i] * 2.0 * W[:, i] * r)[:, None] * phi[x, a]
        nrm = np.sqrt(np.sum(th * th, axis=1))
        th = th * np.where(nrm > R, R / np.where(nrm > 0, nrm, 1.0), 1.0)[:, None]
    return preds, losses, th


def ogd_linear(X, A, Y, W, eta, R, phi, init):
    """Projected OGD on ``theta`` with predictions ``phi(x, a) . theta``."""
    args = (np.ascontiguousarray(X, np.int64), np.ascontiguousarray(A, np.int64),
            np.ascontiguousarray(Y, float), np.ascontiguousarray(W, float),
            np.ascontiguousarray(eta, float), float(R), np.ascontiguousarray(phi, float),
            np.ascontiguousarray(init, float))
    return (ogd_linear_jit if use_numba() else ogd_linear_np)(*args)


# --------------------------------------------------------------------------
# aggregating forecaster over a finite class of tables


@njit(cache=True)
def _logsumexp(v):
    m = v.max()
    s = 0.0
    for k in range(v.size):
        s += math.exp(v[k] - m)
    return m + math.log(s)


@njit(cache=True)
def aggregating_jit(X, A, Y, experts, L, eta):
    N, n = X.shape
    m = experts.shape[0]
    n_a = experts.shape[2]
    preds = np.empty((N, n, n_a))
    losses = np.empty((N, n))
    final = np.empty((N, m))
    buf = np.empty(m)
    for p in range(N):
        logw = np.full(m, -math.log(m))
        for i in range(n):
            x = X[p, i]
            for b in range(n_a):
                for f in range(m):
                    d = -L - experts[f, x, b]
                    buf[f] = logw[f] - eta * d * d
                g_lo = -_logsumexp(buf) / eta
                for f in range(m):
                    d = L - experts[f, x, b]
                    buf[f] = logw[f] - eta * d * d
                g_hi = -_logsumexp(buf) / eta
                v = (g_lo - g_hi) / (4.0 * L)
                preds[p, i, b] = min(max(v, -L), L)
            a = A[p, i]
            r = preds[p, i, a] - Y[p, i]
            losses[p, i] = r * r
            for f in range(m):
                d = Y[p, i] - experts[f, x, a]
                logw[f] -= eta * d * d
            logw -= _logsumexp(logw)
        final[p] = logw
    return preds, losses, final


def _lse(v, axis):
    mx = np.max(v, axis=axis, keepdims=True)
    return np.squeeze(mx, axis) + np.log(np.sum(np.exp(v - mx), axis=axis))


def aggregating_np(X, A, Y, experts, L, eta):
    N, n = X.shape
    m = experts.shape[0]
    rows = np.arange(N)
    logw = np.full((N, m), -math.log(m))
    preds = np.empty((N, n, experts.shape[2]))
    losses = np.empty((N, n))
    for i in range(n):
        x, a = X[:, i], A[:, i]
        e = np.transpose(experts[:, x, :], (1, 2, 0))  # (N, n_a, m)
        g_lo = -_lse(logw[:, None, :] - eta * (-L - e) ** 2, 2) / eta
        g_hi = -_lse(logw[:, None, :] - eta * (L - e) ** 2, 2) / eta
        preds[:, i] = np.clip((g_lo - g_hi) / (4.0 * L), -L, L)
        r = preds[rows, i, a] - Y[:, i]
        losses[:, i] = r * r
        logw = logw - eta * (Y[:, i][:, None] - experts[:, x, a].T) ** 2
        logw = logw - _lse(logw, 1)[:, None]
    return preds, losses, logw


def aggregating(X, A, Y, experts, L, eta):
    """Aggregating forecaster for squared loss; returns final log-weights."""
    args = (np.ascontiguousarray(X, np.int64), np.ascontiguousarray(A, np.int64),
            np.ascontiguousarray(Y, float), np.ascontiguousarray(experts, float),
            float(L), float(eta))
    return (aggregating_jit if use_numba() else aggregating_np)(*args)


# --------------------------------------------------------------------------
# ball-constrained weighted least squares (hindsight comparator)


@njit(cache=True)
def ball_lsq_jit(H, b, c, R, max_iter, tol):
    N, d = b.shape
    theta = np.zeros((N, d))
    obj = np.empty(N)
    gap = np.empty(N)
    iters = np.empty(N, dtype=np.int64)
    for p in range(N):
        lam = np.linalg.eigvalsh(H[p])[-1]
        step = 0.5 / lam if lam > 0 else 0.0
        th = np.zeros(d)
        grad = np.empty(d)
        k = 0
        while True:
            for j in range(d):
                s = 0.0
                for l in range(d):
                    s += H[p, j, l] * th[l]
                grad[j] = 2.0 * (s - b[p, j])
            gn = 0.0
            gt = 0.0
            for j in range(d):
                gn += grad[j] * grad[j]
                gt += grad[j] * th[j]
            fw = gt + R * math.sqrt(gn)
            if fw <= tol or k >= max_iter or step == 0.0:
                break
            nrm = 0.0
            for j in range(d):
                th[j] -= step * grad[j]
                nrm += th[j] * th[j]
            nrm = math.sqrt(nrm)
            if nrm > R:
                for j in range(d):
                    th[j] *= R / nrm
            k += 1
        q = 0.0
        for j in range(d):
            s = 0.0
            for l in range(d):
                s += H[p, j, l] * th[l]
            q += th[j] * s - 2.0 * b[p, j] * th[j]
        theta[p] = th
        obj[p] = q + c[p]
        gap[p] = max(fw, 0.0)
        iters[p] = k
    return theta, obj, gap, iters


def ball_lsq_np(H, b, c, R, max_iter, tol):
    N, d = b.shape
    lam = np.linalg.eigvalsh(H)[:, -1]
    step = np.where(lam > 0, 0.5 / np.where(lam > 0, lam, 1.0), 0.0)
    th = np.zeros((N, d))
    iters = np.zeros(N, dtype=np.int64)
    active = np.ones(N, dtype=bool)
    fw = np.empty(N)
    while True:
        grad = 2.0 * (np.einsum("njl,nl->nj", H, th) - b)
        fw = np.sum(grad * th, axis=1) + R * np.sqrt(np.sum(grad * grad, axis=1))
        active &= (fw > tol) & (iters < max_iter) & (step > 0)
        if not active.any():
            break
        upd = th - step[:, None] * grad
        nrm = np.sqrt(np.sum(upd * upd, axis=1))
        upd = upd * np.where(nrm > R, R / np.where(nrm > 0, nrm, 1.0), 1.0)[:, None]
        th = np.where(active[:, None], upd, th)
        iters += active
    obj = np.einsum("nj,njl,nl->n", th, H, th) - 2.0 * np.sum(b * th, axis=1) + c
    return th, obj, np.maximum(fw, 0.0), iters


def ball_lsq(H, b, c, R, max_iter=10_000, tol=1e-10):
    """Minimize ``theta' H theta - 2 b' theta + c`` over ``||theta|| <= R``.

    Projected gradient with step ``1 / (2 lambda_max(H))``.  ``gap`` is the
    Frank-Wolfe certificate ``grad' theta + R ||grad||``, an upper bound on
    ``obj - min``.
    """
    args = (np.ascontiguousarray(H, float), np.ascontiguousarray(b, float),
            np.ascontiguousarray(c, float), float(R), int(max_iter), float(tol))
    return (ball_lsq_jit if use_numba() else ball_lsq_np)(*args)
