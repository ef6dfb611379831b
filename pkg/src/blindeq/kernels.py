"""Hot kernels: VAE loss/gradient, Adam training loop, CMA and NLMS sweeps.

Each kernel exists twice: an explicit-loop version compiled with numba and
a vectorized (or per-sample, where the recursion is inherently sequential)
numpy version. ``BLINDEQ_BACKEND`` picks which one the public names bind
to; both stay importable so the test-suite can compare them.

Parameter vector layout (complex, length ``9 + M``)::

    [ conv1 taps (5) | conv1 bias | conv2 taps (2) | conv2 bias | hhat (M) ]

stored as interleaved float64 ``(re, im)`` pairs, i.e. ``theta.view(complex128)``.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

CONV1_LEN = 5
CONV2_LEN = 2
N_DECODER = CONV1_LEN + 1 + CONV2_LEN + 1
EPS_Q = 1e-7
EPS_C = 1e-12
LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# loop kernels (numba)
# ---------------------------------------------------------------------------


@njit
def _conv(x, f, off, out):
    # out[n] = sum_k f[k] x[n + off - k], zero outside x
    n_x = x.size
    for n in range(out.size):
        acc = 0.0 * f[0]
        for k in range(f.size):
            i = n + off - k
            if 0 <= i < n_x:
                acc += f[k] * x[i]
        out[n] = acc


@njit
def _conv_adj_input(g, f, off, out):
    # adjoint of _conv w.r.t. x: out[i] = sum_k conj(f[k]) g[i - off + k]
    n_g = g.size
    for i in range(out.size):
        acc = 0.0 * g[0]
        for k in range(f.size):
            n = i - off + k
            if 0 <= n < n_g:
                acc += np.conj(f[k]) * g[n]
        out[i] = acc


@njit
def _conv_adj_filter(g, x, off, out):
    # adjoint of _conv w.r.t. f: out[k] = sum_n g[n] conj(x[n + off - k])
    n_x = x.size
    for k in range(out.size):
        acc = 0.0 * g[0]
        for n in range(g.size):
            i = n + off - k
            if 0 <= i < n_x:
                acc += g[n] * np.conj(x[i])
        out[k] = acc


@njit
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit
def _bernoulli_entropy(q):
    return -q * math.log(q) - (1.0 - q) * math.log(1.0 - q)


@njit
def loss_grad_loop(y, theta, h_off, want_grad):
    """Loss pieces and gradient for one observed block ``y``.

    Returns ``(loss, A, C, grad)`` where ``grad`` has the layout of ``theta``
    (zeros when ``want_grad`` is false).
    """
    n = y.size
    p = np.empty(theta.size // 2, dtype=np.complex128)
    for i in range(p.size):
        p[i] = complex(theta[2 * i], theta[2 * i + 1])
    f1 = p[0:CONV1_LEN]
    b1 = p[CONV1_LEN]
    f2 = p[CONV1_LEN + 1 : CONV1_LEN + 1 + CONV2_LEN]
    b2 = p[N_DECODER - 1]
    h = p[N_DECODER:]
    m_len = h.size

    # decoder forward
    a = np.empty(n, dtype=np.complex128)
    _conv(y, f1, (CONV1_LEN - 1) // 2, a)
    r = np.empty(n, dtype=np.complex128)
    for i in range(n):
        a[i] += b1
        ar = a[i].real
        ai = a[i].imag
        r[i] = complex(ar / (1.0 + abs(ar)), ai / (1.0 + abs(ai))) + y[i]
    z = np.empty(n, dtype=np.complex128)
    _conv(r, f2, (CONV2_LEN - 1) // 2, z)
    qi = np.empty(n)
    qq = np.empty(n)
    dqi = np.empty(n)
    dqq = np.empty(n)
    m = np.empty(n, dtype=np.complex128)
    var = np.empty(n)
    ent = 0.0
    for i in range(n):
        z[i] += b2
        si = _sigmoid(z[i].real)
        sq = _sigmoid(z[i].imag)
        dqi[i] = si * (1.0 - si)
        dqq[i] = sq * (1.0 - sq)
        if si < EPS_Q:
            si = EPS_Q
            dqi[i] = 0.0
        elif si > 1.0 - EPS_Q:
            si = 1.0 - EPS_Q
            dqi[i] = 0.0
        if sq < EPS_Q:
            sq = EPS_Q
            dqq[i] = 0.0
        elif sq > 1.0 - EPS_Q:
            sq = 1.0 - EPS_Q
            dqq[i] = 0.0
        qi[i] = si
        qq[i] = sq
        m[i] = complex(2.0 * si - 1.0, 2.0 * sq - 1.0)
        var[i] = 4.0 * si * (1.0 - si) + 4.0 * sq * (1.0 - sq)
        ent += _bernoulli_entropy(si) + _bernoulli_entropy(sq)

    # expected residual C = sum |y - m*h|^2 + sum_n sum_k |h_{n-k}|^2 var_k
    s = np.empty(n, dtype=np.complex128)
    _conv(m, h, h_off, s)
    c_val = 0.0
    for i in range(n):
        d = y[i] - s[i]
        c_val += d.real * d.real + d.imag * d.imag
    h2 = np.empty(m_len)
    for k in range(m_len):
        h2[k] = h[k].real * h[k].real + h[k].imag * h[k].imag
    # sum over n of the variance term: each (n, k) pair with n - (k - off) in range
    for k in range(m_len):
        for j in range(n):
            i_out = j - h_off + k
            if 0 <= i_out < n:
                c_val += h2[k] * var[j]
    a_val = -2.0 * n * LOG2 + ent
    c_floor = c_val if c_val > EPS_C else EPS_C
    loss = n * math.log(c_floor) - a_val

    grad = np.zeros(theta.size)
    if not want_grad:
        return loss, a_val, c_val, grad

    g_p = np.zeros(p.size, dtype=np.complex128)
    d_c = n / c_val if c_val > EPS_C else 0.0
    g_s = np.empty(n, dtype=np.complex128)
    for i in range(n):
        g_s[i] = 2.0 * d_c * (s[i] - y[i])
    g_m = np.empty(n, dtype=np.complex128)
    _conv_adj_input(g_s, h, h_off, g_m)
    g_h = np.empty(m_len, dtype=np.complex128)
    _conv_adj_filter(g_s, m, h_off, g_h)
    for k in range(m_len):
        acc_var = 0.0
        for j in range(n):
            i_out = j - h_off + k
            if 0 <= i_out < n:
                acc_var += var[j]
        g_h[k] += 2.0 * d_c * acc_var * h[k]
    for k in range(m_len):
        g_p[N_DECODER + k] = g_h[k]

    g_z = np.empty(n, dtype=np.complex128)
    for j in range(n):
        # weight of var_j in C: sum of h2 over taps whose output lands inside the block
        w_var = 0.0
        for k in range(m_len):
            i_out = j - h_off + k
            if 0 <= i_out < n:
                w_var += h2[k]
        g_qi = 2.0 * g_m[j].real + d_c * w_var * 4.0 * (1.0 - 2.0 * qi[j]) - math.log((1.0 - qi[j]) / qi[j])
        g_qq = 2.0 * g_m[j].imag + d_c * w_var * 4.0 * (1.0 - 2.0 * qq[j]) - math.log((1.0 - qq[j]) / qq[j])
        g_z[j] = complex(g_qi * dqi[j], g_qq * dqq[j])

    g_tmp = np.empty(CONV2_LEN, dtype=np.complex128)
    _conv_adj_filter(g_z, r, (CONV2_LEN - 1) // 2, g_tmp)
    b2_acc = 0.0 * g_z[0]
    for i in range(n):
        b2_acc += g_z[i]
    for k in range(CONV2_LEN):
        g_p[CONV1_LEN + 1 + k] = g_tmp[k]
    g_p[N_DECODER - 1] = b2_acc

    g_r = np.empty(n, dtype=np.complex128)
    _conv_adj_input(g_z, f2, (CONV2_LEN - 1) // 2, g_r)
    b1_acc = 0.0 * g_r[0]
    for i in range(n):
        ar = abs(a[i].real) + 1.0
        ai = abs(a[i].imag) + 1.0
        g_r[i] = complex(g_r[i].real / (ar * ar), g_r[i].imag / (ai * ai))
        b1_acc += g_r[i]
    g_f1 = np.empty(CONV1_LEN, dtype=np.complex128)
    _conv_adj_filter(g_r, y, (CONV1_LEN - 1) // 2, g_f1)
    for k in range(CONV1_LEN):
        g_p[k] = g_f1[k]
    g_p[CONV1_LEN] = b1_acc

    for i in range(p.size):
        grad[2 * i] = g_p[i].real
        grad[2 * i + 1] = g_p[i].imag
    return loss, a_val, c_val, grad


@njit
def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam step; ``t`` is the 1-based step index after this update."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@njit
def decide_loop(y, theta, out):
    """Hard decisions of the decoder: bit 0 set when I >= 0, bit 1 when Q >= 0."""
    n = y.size
    f1 = np.empty(CONV1_LEN, dtype=np.complex128)
    for k in range(CONV1_LEN):
        f1[k] = complex(theta[2 * k], theta[2 * k + 1])
    b1 = complex(theta[2 * CONV1_LEN], theta[2 * CONV1_LEN + 1])
    f2 = np.empty(CONV2_LEN, dtype=np.complex128)
    for k in range(CONV2_LEN):
        i = CONV1_LEN + 1 + k
        f2[k] = complex(theta[2 * i], theta[2 * i + 1])
    b2 = complex(theta[2 * N_DECODER - 2], theta[2 * N_DECODER - 1])
    a = np.empty(n, dtype=np.complex128)
    _conv(y, f1, (CONV1_LEN - 1) // 2, a)
    r = np.empty(n, dtype=np.complex128)
    for i in range(n):
        ar = a[i].real + b1.real
        ai = a[i].imag + b1.imag
        r[i] = complex(ar / (1.0 + abs(ar)), ai / (1.0 + abs(ai))) + y[i]
    z = np.empty(n, dtype=np.complex128)
    _conv(r, f2, (CONV2_LEN - 1) // 2, z)
    for i in range(n):
        zi = z[i] + b2
        out[i] = (1 if zi.real >= 0.0 else 0) + (2 if zi.imag >= 0.0 else 0)


STOP_LOSS = 0
STOP_DECISIONS = 1


@njit
def train_loop_kernel(
    y, theta, starts, n_sub, h_off, lr, beta1, beta2, eps,
    window, rel_tol, stop_rule, check_every, flip_tol, monitor, loss_trace,
):
    """Run Adam over sub-sequences ``y[starts[t] : starts[t] + n_sub]``.

    Stopping rules:

    * ``STOP_LOSS``: every ``window`` updates, the mean loss of the last
      window is compared with the one before; a relative improvement below
      ``rel_tol`` stops.
    * ``STOP_DECISIONS``: every ``check_every`` updates the decoder's hard
      decisions on ``monitor`` are compared with those ``window`` updates
      earlier; fewer than ``flip_tol`` changed symbols stops.

    ``loss_trace`` is filled in place. Returns ``(updates_used, converged,
    theta_out)``; on exhaustion ``theta_out`` is the snapshot at the end of the
    window with the lowest mean loss.
    """
    m = np.zeros(theta.size)
    v = np.zeros(theta.size)
    best = theta.copy()
    best_mean = np.inf
    prev_mean = np.inf
    acc = 0.0
    max_updates = starts.size
    lag = window // check_every
    ring = np.zeros((lag + 1, monitor.size), dtype=np.int8)
    n_checks = 0
    for t in range(max_updates):
        s0 = starts[t]
        loss, _a, _c, grad = loss_grad_loop(y[s0 : s0 + n_sub], theta, h_off, True)
        loss_trace[t] = loss
        acc += loss
        adam_update(theta, grad, m, v, t + 1, lr, beta1, beta2, eps)
        if not np.all(np.isfinite(theta)):
            return t + 1, False, best
        if (t + 1) % window == 0:
            cur_mean = acc / window
            acc = 0.0
            if cur_mean < best_mean:
                best_mean = cur_mean
                best[:] = theta
            if stop_rule == STOP_LOSS and prev_mean < np.inf:
                improvement = (prev_mean - cur_mean) / max(abs(prev_mean), 1e-300)
                if improvement < rel_tol:
                    return t + 1, True, theta.copy()
            prev_mean = cur_mean
        if stop_rule == STOP_DECISIONS and (t + 1) % check_every == 0:
            slot = n_checks % (lag + 1)
            decide_loop(monitor, theta, ring[slot])
            if n_checks >= lag:
                old = ring[(n_checks - lag) % (lag + 1)]
                changed = 0
                for i in range(monitor.size):
                    if ring[slot, i] != old[i]:
                        changed += 1
                if changed < flip_tol * monitor.size:
                    return t + 1, True, theta.copy()
            n_checks += 1
    return max_updates, False, best


@njit
def cma_loop(y, taps, mu, r2, passes):
    """Godard p=2 CMA sweeps, in place on ``taps``.

    Output ``z_n = sum_k taps[k] y[n + c - k]`` with ``c = (T-1)//2``.
    Returns the global sample index of the first non-finite tap, or -1.
    """
    n = y.size
    n_taps = taps.size
    c = (n_taps - 1) // 2
    win = np.empty(n_taps, dtype=np.complex128)
    for p in range(passes):
        for i in range(n):
            z = 0.0j
            for k in range(n_taps):
                j = i + c - k
                win[k] = y[j] if 0 <= j < n else 0.0j
                z += taps[k] * win[k]
            e = (z.real * z.real + z.imag * z.imag - r2) * z
            for k in range(n_taps):
                taps[k] -= mu * e * np.conj(win[k])
            if not (math.isfinite(taps[0].real) and math.isfinite(taps[0].imag)):
                return p * n + i
            if not math.isfinite(e.real) or not math.isfinite(e.imag):
                return p * n + i
    for k in range(n_taps):
        if not (math.isfinite(taps[k].real) and math.isfinite(taps[k].imag)):
            return passes * n - 1
    return -1


@njit
def lms_loop(y, x, taps, mu, normalize, delta, passes):
    """(N)LMS sweeps toward ``x`` using the same centered window as :func:`cma_loop`."""
    n = y.size
    n_taps = taps.size
    c = (n_taps - 1) // 2
    win = np.empty(n_taps, dtype=np.complex128)
    for p in range(passes):
        for i in range(n):
            z = 0.0j
            energy = 0.0
            for k in range(n_taps):
                j = i + c - k
                win[k] = y[j] if 0 <= j < n else 0.0j
                z += taps[k] * win[k]
                energy += win[k].real * win[k].real + win[k].imag * win[k].imag
            e = x[i] - z
            step = mu / (energy + delta) if normalize else mu
            for k in range(n_taps):
                taps[k] += step * e * np.conj(win[k])
            if not math.isfinite(e.real) or not math.isfinite(e.imag):
                return p * n + i
    for k in range(n_taps):
        if not (math.isfinite(taps[k].real) and math.isfinite(taps[k].imag)):
            return passes * n - 1
    return -1


# ---------------------------------------------------------------------------
# numpy kernels
# ---------------------------------------------------------------------------


def _conv_np(x, f, off):
    return np.convolve(x, f)[off : off + x.size]


def _conv_adj_input_np(g, f, off, n_x):
    # correlate g with conj(f): out[i] = sum_k conj(f[k]) g[i - off + k]
    full = np.convolve(g, np.conj(f[::-1]))
    start = f.size - 1 - off
    out = np.zeros(n_x, dtype=np.result_type(g, f))
    lo, hi = max(start, 0), min(start + n_x, full.size)
    out[lo - start : hi - start] = full[lo:hi]
    return out


def _conv_adj_filter_np(g, x, off, n_f):
    # out[k] = sum_n g[n] conj(x[n + off - k])
    xp = np.concatenate([np.zeros(n_f, dtype=x.dtype), x, np.zeros(g.size + n_f, dtype=x.dtype)])
    out = np.empty(n_f, dtype=np.result_type(g, x))
    n = np.arange(g.size)
    for k in range(n_f):
        out[k] = np.sum(g * np.conj(xp[n + off - k + n_f]))
    return out


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _var_weights_np(n, m_len, h_off):
    # w[j, k] = 1 when tap k applied to symbol j lands inside the block
    j = np.arange(n)[:, None]
    k = np.arange(m_len)[None, :]
    i_out = j - h_off + k
    return ((i_out >= 0) & (i_out < n)).astype(np.float64)


def loss_grad_numpy(y, theta, h_off, want_grad):
    n = y.size
    p = np.asarray(theta, dtype=np.float64).view(np.complex128)
    f1, b1 = p[:CONV1_LEN], p[CONV1_LEN]
    f2, b2 = p[CONV1_LEN + 1 : N_DECODER - 1], p[N_DECODER - 1]
    h = p[N_DECODER:]

    a = _conv_np(y, f1, (CONV1_LEN - 1) // 2) + b1
    r = a.real / (1.0 + np.abs(a.real)) + 1j * (a.imag / (1.0 + np.abs(a.imag))) + y
    z = _conv_np(r, f2, (CONV2_LEN - 1) // 2) + b2
    si, sq = _sigmoid_np(z.real), _sigmoid_np(z.imag)
    qi, qq = np.clip(si, EPS_Q, 1 - EPS_Q), np.clip(sq, EPS_Q, 1 - EPS_Q)
    m = (2 * qi - 1) + 1j * (2 * qq - 1)
    var = 4 * qi * (1 - qi) + 4 * qq * (1 - qq)
    ent = np.sum(-qi * np.log(qi) - (1 - qi) * np.log(1 - qi) - qq * np.log(qq) - (1 - qq) * np.log(1 - qq))

    s = _conv_np(m, h, h_off)
    h2 = h.real**2 + h.imag**2
    wmask = _var_weights_np(n, h.size, h_off)
    w_var = wmask @ h2
    c_val = float(np.sum(np.abs(y - s) ** 2) + var @ w_var)
    a_val = -2.0 * n * LOG2 + ent
    loss = n * math.log(max(c_val, EPS_C)) - a_val
    if not want_grad:
        return loss, a_val, c_val, np.zeros(theta.size)

    d_c = n / c_val if c_val > EPS_C else 0.0
    g_s = 2.0 * d_c * (s - y)
    g_m = _conv_adj_input_np(g_s, h, h_off, n)
    g_h = _conv_adj_filter_np(g_s, m, h_off, h.size) + 2.0 * d_c * (var @ wmask) * h
    g_qi = 2 * g_m.real + d_c * w_var * 4 * (1 - 2 * qi) - np.log((1 - qi) / qi)
    g_qq = 2 * g_m.imag + d_c * w_var * 4 * (1 - 2 * qq) - np.log((1 - qq) / qq)
    dqi = np.where((si < EPS_Q) | (si > 1 - EPS_Q), 0.0, si * (1 - si))
    dqq = np.where((sq < EPS_Q) | (sq > 1 - EPS_Q), 0.0, sq * (1 - sq))
    g_z = g_qi * dqi + 1j * (g_qq * dqq)

    g_f2 = _conv_adj_filter_np(g_z, r, (CONV2_LEN - 1) // 2, CONV2_LEN)
    g_r = _conv_adj_input_np(g_z, f2, (CONV2_LEN - 1) // 2, n)
    g_a = g_r.real / (1 + np.abs(a.real)) ** 2 + 1j * (g_r.imag / (1 + np.abs(a.imag)) ** 2)
    g_f1 = _conv_adj_filter_np(g_a, y, (CONV1_LEN - 1) // 2, CONV1_LEN)

    g_p = np.concatenate([g_f1, [g_a.sum()], g_f2, [g_z.sum()], g_h])
    return loss, a_val, c_val, g_p.view(np.float64).copy()


def decide_numpy(y, theta):
    p = np.asarray(theta, dtype=np.float64).view(np.complex128)
    a = _conv_np(y, p[:CONV1_LEN], (CONV1_LEN - 1) // 2) + p[CONV1_LEN]
    r = a.real / (1.0 + np.abs(a.real)) + 1j * (a.imag / (1.0 + np.abs(a.imag))) + y
    z = _conv_np(r, p[CONV1_LEN + 1 : N_DECODER - 1], (CONV2_LEN - 1) // 2) + p[N_DECODER - 1]
    return ((z.real >= 0).astype(np.int8) + 2 * (z.imag >= 0).astype(np.int8)).astype(np.int8)


def train_loop_numpy(
    y, theta, starts, n_sub, h_off, lr, beta1, beta2, eps,
    window, rel_tol, stop_rule, check_every, flip_tol, monitor, loss_trace,
):
    m = np.zeros(theta.size)
    v = np.zeros(theta.size)
    best = theta.copy()
    best_mean = np.inf
    prev_mean = np.inf
    acc = 0.0
    lag = window // check_every
    history = []
    for t, s0 in enumerate(starts):
        loss, _a, _c, grad = loss_grad_numpy(y[s0 : s0 + n_sub], theta, h_off, True)
        loss_trace[t] = loss
        acc += loss
        adam_update_numpy(theta, grad, m, v, t + 1, lr, beta1, beta2, eps)
        if not np.all(np.isfinite(theta)):
            return t + 1, False, best
        if (t + 1) % window == 0:
            cur_mean = acc / window
            acc = 0.0
            if cur_mean < best_mean:
                best_mean = cur_mean
                best[:] = theta
            if stop_rule == STOP_LOSS and prev_mean < np.inf:
                if (prev_mean - cur_mean) / max(abs(prev_mean), 1e-300) < rel_tol:
                    return t + 1, True, theta.copy()
            prev_mean = cur_mean
        if stop_rule == STOP_DECISIONS and (t + 1) % check_every == 0:
            history.append(decide_numpy(monitor, theta))
            if len(history) > lag:
                old = history.pop(0)
                if np.count_nonzero(history[-1] != old) < flip_tol * monitor.size:
                    return t + 1, True, theta.copy()
    return starts.size, False, best


adam_update_numpy = getattr(adam_update, "py_func", adam_update)


def _window_matrix(y, n_taps):
    c = (n_taps - 1) // 2
    padded = np.concatenate([np.zeros(n_taps, complex), y, np.zeros(n_taps, complex)])
    idx = np.arange(y.size)[:, None] + c - np.arange(n_taps)[None, :] + n_taps
    return padded[idx]


def cma_numpy(y, taps, mu, r2, passes):
    wins = _window_matrix(y, taps.size)
    n = y.size
    with np.errstate(over="ignore", invalid="ignore"):
        for p in range(passes):
            for i in range(n):
                w = wins[i]
                z = taps @ w
                e = (z.real * z.real + z.imag * z.imag - r2) * z
                taps -= mu * e * np.conj(w)
                if not (np.isfinite(taps[0]) and np.isfinite(e)):
                    return p * n + i
    if not np.all(np.isfinite(taps)):
        return passes * n - 1
    return -1


def lms_numpy(y, x, taps, mu, normalize, delta, passes):
    wins = _window_matrix(y, taps.size)
    energy = np.sum(wins.real**2 + wins.imag**2, axis=1)
    n = y.size
    with np.errstate(over="ignore", invalid="ignore"):
        for p in range(passes):
            for i in range(n):
                w = wins[i]
                e = x[i] - taps @ w
                step = mu / (energy[i] + delta) if normalize else mu
                taps += step * e * np.conj(w)
                if not np.isfinite(e):
                    return p * n + i
    if not np.all(np.isfinite(taps)):
        return passes * n - 1
    return -1


if USE_NUMBA:
    loss_grad = loss_grad_loop
    train_loop = train_loop_kernel
    cma_sweep = cma_loop
    lms_sweep = lms_loop
else:
    loss_grad = loss_grad_numpy
    train_loop = train_loop_numpy
    cma_sweep = cma_numpy
    lms_sweep = lms_numpy
