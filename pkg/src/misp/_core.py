"""Compiled kernels for the snow-density log posterior.

The unconstrained vector ``u`` is laid out as::

    gamma (J+1) | log sigma2 (J+1) | logit-scaled phi (1) | log tau2 (C) |
    alpha (S) | log_z (S*J, row-major by site)

All functions here are plain numba kernels over arrays; argument checking
and bookkeeping live in :mod:`misp.model`.
"""

import math

import numba as nb
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)
SQRT5 = math.sqrt(5.0)

# below this standardized argument log Phi switches to its asymptotic series
ASYMPTOTIC_CUT = -20.0

DATA_TN = 0
DATA_T4 = 1


@nb.njit(cache=True, error_model="numpy")
def log_ndtr(a):
    if a < ASYMPTOTIC_CUT:
        a2 = a * a
        inv = 1.0 / a2
        series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)))
        return -0.5 * a2 - math.log(-a) - 0.5 * LOG_2PI + math.log(series)
    if a > 0.0:
        return math.log1p(-0.5 * math.erfc(a / SQRT2))
    return math.log(0.5 * math.erfc(-a / SQRT2))


@nb.njit(cache=True, error_model="numpy")
def mills(a):
    """phi(a) / Phi(a)."""
    return math.exp(-0.5 * a * a - 0.5 * LOG_2PI - log_ndtr(a))


@nb.njit(cache=True, error_model="numpy")
def t4_cdf(t):
    # F(t) = (1 - q)^2 (2 + q) / 4 for t <= 0, q = |t| / sqrt(4 + t^2)
    at = abs(t)
    r = math.sqrt(4.0 + t * t)
    one_minus_q = 4.0 / (r * (r + at))
    low = 0.25 * one_minus_q * one_minus_q * (3.0 - one_minus_q)
    if t <= 0.0:
        return low
    return 1.0 - low


@nb.njit(cache=True, error_model="numpy")
def log_t4_cdf(t):
    at = abs(t)
    r = math.sqrt(4.0 + t * t)
    one_minus_q = 4.0 / (r * (r + at))
    low = 0.25 * one_minus_q * one_minus_q * (3.0 - one_minus_q)
    if t <= 0.0:
        return math.log(low)
    return math.log1p(-low)


@nb.njit(cache=True, error_model="numpy")
def t4_pdf(t):
    return 0.375 * (1.0 + 0.25 * t * t) ** -2.5


@nb.njit(cache=True, error_model="numpy")
def obs_logpdf_grad(y, mu, v, model):
    """Truncated-below-zero log density and its derivatives in (mu, v)."""
    s = math.sqrt(v)
    a = mu / s
    if model == DATA_TN:
        z = (y - mu) / s
        lp = -0.5 * LOG_2PI - 0.5 * math.log(v) - 0.5 * z * z - log_ndtr(a)
        lam = mills(a)
        dmu = z / s - lam / s
        dv = -0.5 / v + 0.5 * z * z / v + lam * a / (2.0 * v)
    else:
        z = (y - mu) / s
        u = 1.0 + 0.25 * z * z
        lp = math.log(0.375) - 0.5 * math.log(v) - 2.5 * math.log(u) - log_t4_cdf(a)
        lam = t4_pdf(a) / t4_cdf(a)
        dmu = 1.25 * z / (u * s) - lam / s
        dv = -0.5 / v + 0.625 * z * z / (u * v) + lam * a / (2.0 * v)
    return lp, dmu, dv


@nb.njit(cache=True, error_model="numpy")
def corr_and_deriv(dist, phi, nu_code):
    n = dist.shape[0]
    R = np.empty((n, n))
    dR = np.empty((n, n))
    for i in range(n):
        for k in range(n):
            d = dist[i, k]
            if nu_code == 0:
                e = math.exp(-phi * d)
                R[i, k] = e
                dR[i, k] = -d * e
            elif nu_code == 1:
                t = SQRT3 * phi * d
                e = math.exp(-t)
                R[i, k] = (1.0 + t) * e
                dR[i, k] = -t * e * SQRT3 * d
            else:
                t = SQRT5 * phi * d
                e = math.exp(-t)
                R[i, k] = (1.0 + t + t * t / 3.0) * e
                dR[i, k] = -(t / 3.0) * (1.0 + t) * e * SQRT5 * d
    return R, dR


@nb.njit(cache=True, error_model="numpy")
def chol_inverse(R, jitter):
    """Inverse and log-determinant of R + jitter*I; escalates jitter tenfold to 1e-6."""
    n = R.shape[0]
    j = jitter
    while True:
        A = R.copy()
        for i in range(n):
            A[i, i] += j
        ok = True
        L = np.zeros((n, n))
        for c in range(n):
            acc = A[c, c]
            for k in range(c):
                acc -= L[c, k] * L[c, k]
            if not acc > 0.0:
                ok = False
                break
            L[c, c] = math.sqrt(acc)
            for r in range(c + 1, n):
                acc2 = A[r, c]
                for k in range(c):
                    acc2 -= L[r, k] * L[c, k]
                L[r, c] = acc2 / L[c, c]
        if ok:
            break
        if j >= 1e-6:
            return np.full((n, n), np.nan), np.nan
        j = min(j * 10.0, 1e-6)
    logdet = 0.0
    for i in range(n):
        logdet += 2.0 * math.log(L[i, i])
    # invert lower-triangular L then form L^-T L^-1
    Li = np.zeros((n, n))
    for c in range(n):
        Li[c, c] = 1.0 / L[c, c]
        for r in range(c + 1, n):
            acc = 0.0
            for k in range(c, r):
                acc -= L[r, k] * Li[k, c]
            Li[r, c] = acc / L[r, r]
    Rinv = Li.T @ Li
    return Rinv, logdet


@nb.njit(cache=True, error_model="numpy")
def log_posterior_grad(u, K, site_idx, camp_idx, y, wt, dist, J, S, C,
                       rho_ice, nu_code, data_model, gmean, gsd, ig_a, ig_b,
                       phi_lo, phi_hi, tau_a, tau_b, jitter):
    grad = np.zeros(u.size)
    P = J + 1
    o_ls = P
    o_phi = 2 * P
    o_tau = o_phi + 1
    o_alpha = o_tau + C
    o_lz = o_alpha + S

    lp = 0.0
    # hyperparameter priors with log-Jacobian terms
    for f in range(P):
        g = u[f]
        r = (g - gmean[f]) / gsd[f]
        lp += -0.5 * LOG_2PI - math.log(gsd[f]) - 0.5 * r * r
        grad[f] += -r / gsd[f]
        ls = u[o_ls + f]
        a = ig_a[f]
        b = ig_b[f]
        lp += a * math.log(b) - math.lgamma(a) - a * ls - b * math.exp(-ls)
        grad[o_ls + f] += -a + b * math.exp(-ls)
    uphi = u[o_phi]
    if uphi >= 0:
        sp = 1.0 / (1.0 + math.exp(-uphi))
    else:
        e = math.exp(uphi)
        sp = e / (1.0 + e)
    width = phi_hi - phi_lo
    phi = phi_lo + width * sp
    # uniform density cancels the width factor of the Jacobian
    lp += -abs(uphi) - 2.0 * math.log1p(math.exp(-abs(uphi)))
    grad[o_phi] += 1.0 - 2.0 * sp
    for c in range(C):
        lt = u[o_tau + c]
        lp += tau_a * math.log(tau_b) - math.lgamma(tau_a) + tau_a * lt - tau_b * math.exp(lt)
        grad[o_tau + c] += tau_a - tau_b * math.exp(lt)

    # Gaussian-process layers sharing one correlation matrix
    R, dR = corr_and_deriv(dist, phi, nu_code)
    Rinv, logdetR = chol_inverse(R, jitter)
    if not math.isfinite(logdetR):
        return -np.inf, grad
    trRdR = 0.0
    for i in range(S):
        for k in range(S):
            trRdR += Rinv[i, k] * dR[k, i]
    dphi = 0.0
    res = np.empty(S)
    for f in range(P):
        for s in range(S):
            if f == 0:
                res[s] = u[o_alpha + s] - u[0]
            else:
                res[s] = u[o_lz + s * J + (f - 1)] - u[f]
        Rr = Rinv @ res
        q = 0.0
        tot = 0.0
        for s in range(S):
            q += res[s] * Rr[s]
            tot += Rr[s]
        sig2 = math.exp(u[o_ls + f])
        lp += -0.5 * S * LOG_2PI - 0.5 * S * u[o_ls + f] - 0.5 * logdetR - 0.5 * q / sig2
        grad[f] += tot / sig2
        grad[o_ls + f] += -0.5 * S + 0.5 * q / sig2
        for s in range(S):
            if f == 0:
                grad[o_alpha + s] -= Rr[s] / sig2
            else:
                grad[o_lz + s * J + (f - 1)] -= Rr[s] / sig2
        quad = Rr @ (dR @ Rr)
        dphi += -0.5 * trRdR + 0.5 * quad / sig2
    grad[o_phi] += dphi * width * sp * (1.0 - sp)

    # data model
    zexp = np.empty(S * J)
    for k in range(S * J):
        zexp[k] = math.exp(u[o_lz + k])
    N = y.size
    for i in range(N):
        s = site_idx[i]
        w = u[o_alpha + s]
        for j in range(J):
            w += K[i, j] * zexp[s * J + j]
        if w >= 0:
            sg = 1.0 / (1.0 + math.exp(-w))
        else:
            e = math.exp(w)
            sg = e / (1.0 + e)
        mu = rho_ice * sg
        dmu_dw = rho_ice * sg * (1.0 - sg)
        c = camp_idx[i]
        v = math.exp(u[o_tau + c]) * wt[i]
        lpi, dmu, dv = obs_logpdf_grad(y[i], mu, v, data_model)
        lp += lpi
        gw = dmu * dmu_dw
        grad[o_alpha + s] += gw
        for j in range(J):
            if K[i, j] != 0.0:
                grad[o_lz + s * J + j] += gw * K[i, j] * zexp[s * J + j]
        grad[o_tau + c] += dv * v
    return lp, grad
