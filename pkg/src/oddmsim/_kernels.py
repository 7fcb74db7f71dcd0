"""Compiled per-frame detection kernel (numba).

Implements the same cancellation schedule as the numpy engine in
``detectors``; the engine dispatches here for large frames. The two paths are
cross-checked by the test suite. All randomness (noise, dither) is drawn by
the caller, so results do not depend on the backend.

Combine codes: 0 = MRC / scalar-form MMSE, 2 = full MMSE.
Slicer codes:  0 = ML, 1 = subtractive dither, 2 = posterior mean.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _initial_residual(r, gains, support, shat):
    mn = r.shape[0]
    resid = r.copy()
    for si in range(support.shape[0]):
        l = support[si]
        for q in range(mn):
            qs = q - l
            if qs < 0:
                qs += mn
            resid[q] -= gains[l, q] * shat[qs]
    return resid


@njit(cache=True)
def _chol_solve(a, b, n):
    """In-place Cholesky factorization of Hermitian PD `a`, then solve a x = b."""
    for i in range(n):
        s = a[i, i].real
        for k in range(i):
            v = a[i, k]
            s -= v.real * v.real + v.imag * v.imag
        if s <= 0.0:
            raise np.linalg.LinAlgError("covariance not positive definite")
        d = np.sqrt(s)
        a[i, i] = d
        for j in range(i + 1, n):
            acc = a[j, i]
            for k in range(i):
                acc -= a[j, k] * np.conj(a[i, k])
            a[j, i] = acc / d
    # forward: L z = b
    z = np.empty(n, dtype=np.complex128)
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= a[i, k] * z[k]
        z[i] = acc / a[i, i].real
    # backward: L^H x = z
    x = np.empty(n, dtype=np.complex128)
    for i in range(n - 1, -1, -1):
        acc = z[i]
        for k in range(i + 1, n):
            acc -= np.conj(a[k, i]) * x[k]
        x[i] = acc / a[i, i].real
    return x


@njit(cache=True)
def detect_frame(
    r,
    gains,
    support,
    m_count,
    n_dop,
    lm,
    combine_plan,
    slicer_plan,
    m0,
    sigma_z2,
    power,
    points,
    dither,
    shat,
    row_var,
    frozen,
    fmat,
    decisions,
    equalized,
    normalizer,
    collect,
    shat_snaps,
):
    mn = m_count * n_dop
    n_sup = support.shape[0]
    n_ite = combine_plan.shape[0]
    n_pts = points.shape[0]
    lm1 = lm + 1
    n_cols = 2 * lm + 1

    resid = _initial_residual(r, gains, support, shat)

    s_tilde = np.empty(n_dop, dtype=np.complex128)
    norm = np.empty(n_dop, dtype=np.float64)
    post_var = np.empty(n_dop, dtype=np.float64)
    x_tilde = np.empty(n_dop, dtype=np.complex128)
    feedback = np.empty(n_dop, dtype=np.complex128)
    fb_time = np.empty(n_dop, dtype=np.complex128)
    stack = np.empty((lm1, n_cols), dtype=np.complex128)
    amat = np.empty((lm1, lm1), dtype=np.complex128)
    branches = np.empty(lm1, dtype=np.complex128)
    vcol = np.empty(n_cols, dtype=np.float64)
    probs = np.empty(n_pts, dtype=np.float64)

    for it in range(n_ite):
        combine = combine_plan[it]
        slicer = slicer_plan[it]
        for dm in range(m_count):
            m = (m0 + dm) % m_count
            if frozen[m]:
                continue

            if combine == 0:
                for nd in range(n_dop):
                    q = nd * m_count + m
                    num = 0.0 + 0.0j
                    energy = 0.0
                    for si in range(n_sup):
                        l = support[si]
                        idx = q + l
                        if idx >= mn:
                            idx -= mn
                        g = gains[l, idx]
                        rt = resid[idx] + g * shat[q]
                        num += np.conj(g) * rt
                        energy += g.real * g.real + g.imag * g.imag
                    if energy == 0.0:
                        raise ValueError("degenerate channel: all-zero spreading vector")
                    s_tilde[nd] = num / energy
                    norm[nd] = energy
            else:
                for c in range(n_cols):
                    dl = c - lm
                    if dl == 0:
                        vcol[c] = power
                    else:
                        vcol[c] = row_var[(m + dl) % m_count]
                for nd in range(n_dop):
                    q = nd * m_count + m
                    for j in range(lm1):
                        idx = q + j
                        if idx >= mn:
                            idx -= mn
                        # columns c in [j, j+lm] carry tap row j-(c-lm); the
                        # rest of the stack row is structurally zero and the
                        # loops below never read it
                        for c in range(j, j + lm + 1):
                            stack[j, c] = gains[j - c + lm, idx]
                        branches[j] = resid[idx] + stack[j, lm] * shat[q]
                    for j1 in range(lm1):
                        for j2 in range(j1 + 1):
                            acc = 0.0 + 0.0j
                            for c in range(j1, j2 + lm + 1):
                                v = vcol[c]
                                if v == 0.0:
                                    continue
                                acc += v * stack[j1, c] * np.conj(stack[j2, c])
                            amat[j1, j2] = acc
                        amat[j1, j1] += sigma_z2
                    y = _chol_solve(amat, stack[:, lm].copy(), lm1)
                    mu = 0.0
                    wr = 0.0 + 0.0j
                    for j in range(lm1):
                        cy = np.conj(y[j])
                        mu += (cy * stack[j, lm]).real
                        wr += cy * branches[j]
                    s_tilde[nd] = wr / mu
                    norm[nd] = mu
                    pv = power * (1.0 - mu) / mu
                    post_var[nd] = pv if pv > 0.0 else 0.0

            # DD-domain observation
            for n in range(n_dop):
                acc = 0.0 + 0.0j
                for nd in range(n_dop):
                    acc += fmat[n, nd] * s_tilde[nd]
                x_tilde[n] = acc

            if slicer == 0 or slicer == 1:
                for n in range(n_dop):
                    xv = x_tilde[n]
                    if slicer == 1:
                        xv = xv + dither[it, m, n]
                    best = 0
                    bestd = 1e300
                    for a in range(n_pts):
                        dr = xv.real - points[a].real
                        di = xv.imag - points[a].imag
                        d2 = dr * dr + di * di
                        if d2 < bestd:
                            bestd = d2
                            best = a
                    decisions[it, m, n] = best
                    if slicer == 1:
                        feedback[n] = points[best] - dither[it, m, n]
                    else:
                        feedback[n] = points[best]
                if combine != 0:
                    row_var[m] = 0.0
            else:
                var_dd = 0.0
                for nd in range(n_dop):
                    var_dd += post_var[nd]
                var_dd /= n_dop
                pv_sum = 0.0
                for n in range(n_dop):
                    xv = x_tilde[n]
                    best = 0
                    bestd = 1e300
                    for a in range(n_pts):
                        dr = xv.real - points[a].real
                        di = xv.imag - points[a].imag
                        d2 = dr * dr + di * di
                        probs[a] = d2
                        if d2 < bestd:
                            bestd = d2
                            best = a
                    decisions[it, m, n] = best
                    if var_dd < 1e-12:
                        feedback[n] = points[best]
                    else:
                        wsum = 0.0
                        mean = 0.0 + 0.0j
                        for a in range(n_pts):
                            w = np.exp(-(probs[a] - bestd) / var_dd)
                            probs[a] = w
                            wsum += w
                            mean += w * points[a]
                        mean /= wsum
                        pvar = 0.0
                        for a in range(n_pts):
                            dr = points[a].real - mean.real
                            di = points[a].imag - mean.imag
                            pvar += probs[a] * (dr * dr + di * di)
                        pvar /= wsum
                        feedback[n] = mean
                        pv_sum += pvar
                row_var[m] = pv_sum / n_dop

            # back to time domain and immediate residual patch
            for nd in range(n_dop):
                acc = 0.0 + 0.0j
                for n in range(n_dop):
                    acc += np.conj(fmat[n, nd]) * feedback[n]
                fb_time[nd] = acc
            for nd in range(n_dop):
                q = nd * m_count + m
                delta = fb_time[nd] - shat[q]
                if delta.real != 0.0 or delta.imag != 0.0:
                    shat[q] = fb_time[nd]
                    for si in range(n_sup):
                        l = support[si]
                        idx = q + l
                        if idx >= mn:
                            idx -= mn
                        resid[idx] -= gains[l, idx] * delta
            if collect:
                for nd in range(n_dop):
                    q = nd * m_count + m
                    equalized[it, q] = s_tilde[nd]
                    normalizer[it, q] = norm[nd]
        for q in range(mn):
            shat_snaps[it, q] = shat[q]
