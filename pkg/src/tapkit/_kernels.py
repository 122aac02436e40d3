"""Inner loops: YIN difference function, Levinson-Durbin, Durand-Kerner, LSTM
recurrences.

Every kernel has two implementations with the same contract:

* ``*_jit``   scalar loops compiled by numba (identity-decorated without numba)
* ``*_np``    vectorised numpy, no compilation

The unsuffixed name is bound at import time according to
``tapkit._jit.USE_JIT``. Both variants agree to rounding error; they are not
bit-identical to each other, but each is deterministic on its own.
"""
import numpy as np

from ._jit import USE_JIT, optional_njit

# ---------------------------------------------------------------------------
# YIN difference function
#
# segs: (T, W + tau_max) analysis segments. Returns d: (T, tau_max + 1) with
# d[t, tau] = sum_{j<W} (x[j] - x[j + tau])**2.


@optional_njit
def yin_difference_jit(segs, W, tau_max):
    T = segs.shape[0]
    d = np.zeros((T, tau_max + 1))
    for t in range(T):
        x = segs[t]
        for tau in range(1, tau_max + 1):
            acc = 0.0
            for j in range(W):
                diff = x[j] - x[j + tau]
                acc += diff * diff
            d[t, tau] = acc
    return d


def yin_difference_np(segs, W, tau_max):
    segs = np.asarray(segs, dtype=np.float64)
    T, L = segs.shape
    head = segs[:, :W]
    e0 = np.sum(head * head, axis=1)
    csum = np.concatenate([np.zeros((T, 1)), np.cumsum(segs * segs, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    etau = csum[:, taus + W] - csum[:, taus]
    nfft = 1 << int(np.ceil(np.log2(L + W)))
    fa = np.fft.rfft(segs, nfft, axis=1)
    fb = np.fft.rfft(head, nfft, axis=1)
    cross = np.fft.irfft(fa * np.conj(fb), nfft, axis=1)[:, : tau_max + 1]
    d = e0[:, None] + etau - 2.0 * cross
    d[:, 0] = 0.0
    return np.maximum(d, 0.0)


# ---------------------------------------------------------------------------
# Levinson-Durbin
#
# r: (T, p + 1) autocorrelation rows. Returns (a, err, ok) where a[:, 0] = 1
# and the prediction polynomial is 1 + a1 z^-1 + ... + ap z^-p. Rows whose
# recursion breaks down (zero energy, |k| >= 1) come back with ok = False.


@optional_njit
def levinson_jit(r, order):
    T = r.shape[0]
    a = np.zeros((T, order + 1))
    err = np.zeros(T)
    ok = np.ones(T, dtype=np.bool_)
    tmp = np.zeros(order + 1)
    for t in range(T):
        a[t, 0] = 1.0
        e = r[t, 0]
        if not e > 1e-12:
            ok[t] = False
            continue
        for i in range(1, order + 1):
            acc = r[t, i]
            for j in range(1, i):
                acc += a[t, j] * r[t, i - j]
            k = -acc / e
            if not abs(k) < 1.0:
                ok[t] = False
                break
            for j in range(1, i):
                tmp[j] = a[t, j] + k * a[t, i - j]
            for j in range(1, i):
                a[t, j] = tmp[j]
            a[t, i] = k
            e *= 1.0 - k * k
        if ok[t]:
            err[t] = e
        else:
            a[t, :] = 0.0
            a[t, 0] = 1.0
    return a, err, ok


def levinson_np(r, order):
    r = np.asarray(r, dtype=np.float64)
    T = r.shape[0]
    a = np.zeros((T, order + 1))
    a[:, 0] = 1.0
    e = r[:, 0].copy()
    ok = e > 1e-12
    e_safe = np.where(ok, e, 1.0)
    for i in range(1, order + 1):
        acc = r[:, i] + np.sum(a[:, 1:i] * r[:, i - 1 : 0 : -1], axis=1) if i > 1 else r[:, i].copy()
        k = -acc / e_safe
        ok &= np.abs(k) < 1.0
        k = np.where(ok, k, 0.0)
        if i > 1:
            a[:, 1:i] = a[:, 1:i] + k[:, None] * a[:, i - 1 : 0 : -1]
        a[:, i] = k
        e_safe = e_safe * (1.0 - k * k)
    a[~ok] = 0.0
    a[~ok, 0] = 1.0
    err = np.where(ok, e_safe, 0.0)
    return a, err, ok


# ---------------------------------------------------------------------------
# Durand-Kerner (Weierstrass) simultaneous root iteration
#
# coeffs: (T, n + 1) monic polynomials, highest power first. Initial points
# (0.4 + 0.9j)**k are the textbook deterministic choice.


@optional_njit
def durand_kerner_jit(coeffs, max_iter, tol):
    T = coeffs.shape[0]
    n = coeffs.shape[1] - 1
    roots = np.zeros((T, n), dtype=np.complex128)
    iters = np.zeros(T, dtype=np.int64)
    seed = 0.4 + 0.9j
    for t in range(T):
        z = np.empty(n, dtype=np.complex128)
        p = 1.0 + 0.0j
        for k in range(n):
            z[k] = p
            p *= seed
        it = 0
        while it < max_iter:
            it += 1
            delta = 0.0
            for i in range(n):
                num = coeffs[t, 0] + 0.0j
                for c in range(1, n + 1):
                    num = num * z[i] + coeffs[t, c]
                den = 1.0 + 0.0j
                for j in range(n):
                    if j != i:
                        den *= z[i] - z[j]
                if den == 0:
                    den = 1e-300 + 0.0j
                step = num / den
                z[i] -= step
                if abs(step) > delta:
                    delta = abs(step)
            if delta < tol:
                break
        roots[t] = z
        iters[t] = it
    return roots, iters


def durand_kerner_np(coeffs, max_iter, tol):
    # Jacobi-style sweeps differ from the in-place Gauss-Seidel loop above, so
    # the numpy path uses the same in-place ordering, vectorised across rows.
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    T, n1 = coeffs.shape
    n = n1 - 1
    z = np.tile((0.4 + 0.9j) ** np.arange(n), (T, 1))
    iters = np.zeros(T, dtype=np.int64)
    active = np.ones(T, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        rows = np.flatnonzero(active)
        iters[rows] += 1
        zr = z[rows]
        cr = coeffs[rows]
        delta = np.zeros(rows.shape[0])
        for i in range(n):
            zi = zr[:, i]
            num = cr[:, 0].copy()
            for c in range(1, n + 1):
                num = num * zi + cr[:, c]
            diffs = zi[:, None] - zr
            diffs[:, i] = 1.0
            den = np.prod(diffs, axis=1)
            den[den == 0] = 1e-300
            step = num / den
            zr[:, i] = zi - step
            delta = np.maximum(delta, np.abs(step))
        z[rows] = zr
        active[rows[delta < tol]] = False
    return z, iters


# ---------------------------------------------------------------------------
# LSTM recurrence (one direction, gate order i, f, g, o)
#
# xw: (T, 4H) input projections with bias already added; W_hh: (4H, H).
# Returns h (T, H), c (T, H), acts (T, 4H) post-nonlinearity gate values.


@optional_njit
def lstm_forward_jit(xw, W_hh):
    T = xw.shape[0]
    H = W_hh.shape[1]
    h = np.zeros((T, H))
    c = np.zeros((T, H))
    acts = np.zeros((T, 4 * H))
    hp = np.zeros(H)
    cp = np.zeros(H)
    for t in range(T):
        pre = xw[t] + W_hh @ hp
        for k in range(H):
            ig = 1.0 / (1.0 + np.exp(-pre[k]))
            fg = 1.0 / (1.0 + np.exp(-pre[H + k]))
            gg = np.tanh(pre[2 * H + k])
            og = 1.0 / (1.0 + np.exp(-pre[3 * H + k]))
            ck = fg * cp[k] + ig * gg
            c[t, k] = ck
            h[t, k] = og * np.tanh(ck)
            acts[t, k] = ig
            acts[t, H + k] = fg
            acts[t, 2 * H + k] = gg
            acts[t, 3 * H + k] = og
        for k in range(H):
            hp[k] = h[t, k]
            cp[k] = c[t, k]
    return h, c, acts


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward_np(xw, W_hh):
    T = xw.shape[0]
    H = W_hh.shape[1]
    h = np.zeros((T, H))
    c = np.zeros((T, H))
    acts = np.zeros((T, 4 * H))
    hp = np.zeros(H)
    cp = np.zeros(H)
    for t in range(T):
        pre = xw[t] + W_hh @ hp
        ig = _sigmoid(pre[:H])
        fg = _sigmoid(pre[H : 2 * H])
        gg = np.tanh(pre[2 * H : 3 * H])
        og = _sigmoid(pre[3 * H :])
        cp = fg * cp + ig * gg
        hp = og * np.tanh(cp)
        c[t] = cp
        h[t] = hp
        acts[t] = np.concatenate((ig, fg, gg, og))
    return h, c, acts


# dh_out: (T, H) gradient w.r.t. this direction's outputs. Returns dpre (T, 4H),
# the gradient w.r.t. gate pre-activations; parameter and input gradients
# follow from it with plain matrix products.


@optional_njit
def lstm_backward_jit(dh_out, acts, c, W_hh):
    T, H = dh_out.shape
    dpre = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        for k in range(H):
            ig = acts[t, k]
            fg = acts[t, H + k]
            gg = acts[t, 2 * H + k]
            og = acts[t, 3 * H + k]
            tc = np.tanh(c[t, k])
            dh = dh_out[t, k] + dh_next[k]
            dc = dc_next[k] + dh * og * (1.0 - tc * tc)
            cprev = c[t - 1, k] if t > 0 else 0.0
            dpre[t, k] = dc * gg * ig * (1.0 - ig)
            dpre[t, H + k] = dc * cprev * fg * (1.0 - fg)
            dpre[t, 2 * H + k] = dc * ig * (1.0 - gg * gg)
            dpre[t, 3 * H + k] = dh * tc * og * (1.0 - og)
            dc_next[k] = dc * fg
        dh_next = W_hh.T @ dpre[t]
    return dpre


def lstm_backward_np(dh_out, acts, c, W_hh):
    T, H = dh_out.shape
    dpre = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    zero = np.zeros(H)
    for t in range(T - 1, -1, -1):
        ig, fg, gg, og = acts[t, :H], acts[t, H : 2 * H], acts[t, 2 * H : 3 * H], acts[t, 3 * H :]
        tc = np.tanh(c[t])
        dh = dh_out[t] + dh_next
        dc = dc_next + dh * og * (1.0 - tc * tc)
        cprev = c[t - 1] if t > 0 else zero
        dpre[t, :H] = dc * gg * ig * (1.0 - ig)
        dpre[t, H : 2 * H] = dc * cprev * fg * (1.0 - fg)
        dpre[t, 2 * H : 3 * H] = dc * ig * (1.0 - gg * gg)
        dpre[t, 3 * H :] = dh * tc * og * (1.0 - og)
        dc_next = dc * fg
        dh_next = W_hh.T @ dpre[t]
    return dpre


# the FFT form of the YIN difference beats the direct jit loop at W=512
# (see benchmarks/bench_kernels.py), so it is used on both paths
yin_difference = yin_difference_np

if USE_JIT:
    levinson = levinson_jit
    durand_kerner = durand_kerner_jit
    lstm_forward = lstm_forward_jit
    lstm_backward = lstm_backward_jit
else:
    levinson = levinson_np
    durand_kerner = durand_kerner_np
    lstm_forward = lstm_forward_np
    lstm_backward = lstm_backward_np

BACKEND = "numba" if USE_JIT else "numpy"
