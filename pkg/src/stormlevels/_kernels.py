"""Compiled inner loops for the Metropolis-within-Gibbs sampler.

Everything here works on plain arrays. Process index k runs over
(mu, log_sigma, xi); hyperparameter index m over (sill, range, smoothness).
"""

import math

import numpy as np
from numba import njit

LOG2PI = math.log(2.0 * math.pi)
EULER = 0.5772156649015329
# odd-order Taylor coefficients of 1/Gamma(1 + z) (z^1, z^3, ..., z^11)
_RG_ODD = (0.5772156649015329, -0.0420026350340952, -0.0421977345555443,
           0.0072189432466630, -0.0002152416741149, -0.0000201348547807)

POWEXP, MATERN = 0, 1


# --------------------------------------------------------------------------- GEV

@njit(cache=True)
def gev_logpdf1(y, mu, log_sigma, xi):
    z = (y - mu) / math.exp(log_sigma)
    if abs(xi) < 1e-8:
        return -log_sigma - z - math.exp(-z)
    a = xi * z
    if a <= -1.0:
        return -np.inf
    log_t = -math.log1p(a) / xi
    return -log_sigma + (1.0 + xi) * log_t - math.exp(log_t)


@njit(cache=True)
def site_loglik(ycol, mu, log_sigma, xi):
    s = 0.0
    for i in range(ycol.shape[0]):
        v = ycol[i]
        if v != v:
            continue
        lp = gev_logpdf1(v, mu, log_sigma, xi)
        if lp == -np.inf:
            return -np.inf
        s += lp
    return s


# ------------------------------------------------------------------ Bessel K_nu

@njit(cache=True)
def _gam1(mu):
    # (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu), series near zero to avoid cancellation
    if abs(mu) < 0.1:
        m2 = mu * mu
        c0, c1, c2, c3, c4, c5 = _RG_ODD
        return -(c0 + m2 * (c1 + m2 * (c2 + m2 * (c3 + m2 * (c4 + m2 * c5)))))
    return (1.0 / math.gamma(1.0 - mu) - 1.0 / math.gamma(1.0 + mu)) / (2.0 * mu)


@njit(cache=True)
def bessel_k(nu, x):
    """Modified Bessel function of the second kind K_nu(x), nu >= 0, x > 0.

    Temme's series for x < 2, Steed's continued fraction otherwise, then
    forward recurrence in the order.
    """
    if x <= 0.0:
        return np.inf
    eps = 1e-16
    nl = int(nu + 0.5)
    xmu = nu - nl
    xmu2 = xmu * xmu
    xi = 1.0 / x
    xi2 = 2.0 * xi
    if x < 2.0:
        x2 = 0.5 * x
        pimu = math.pi * xmu
        fact = 1.0 if abs(pimu) < eps else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = xmu * d
        fact2 = 1.0 if abs(e) < eps else math.sinh(e) / e
        gampl = 1.0 / math.gamma(1.0 + xmu)
        gammi = 1.0 / math.gamma(1.0 - xmu)
        gam1 = _gam1(xmu)
        gam2 = 0.5 * (gammi + gampl)
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        s = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        s1 = p
        for i in range(1, 10000):
            ff = (i * ff + p + q) / (i * i - xmu2)
            c *= d / i
            p /= i - xmu
            q /= i + xmu
            dl = c * ff
            s += dl
            s1 += c * (p - i * ff)
            if abs(dl) < abs(s) * eps:
                break
        rkmu = s
        rk1 = s1 * xi2
    else:
        b = 2.0 * (1.0 + x)
        d = 1.0 / b
        h = d
        delh = d
        q1 = 0.0
        q2 = 1.0
        a1 = 0.25 - xmu2
        q = a1
        c = a1
        a = -a1
        s = 1.0 + q * delh
        for i in range(2, 10000):
            a -= 2.0 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1 = q2
            q2 = qnew
            q += c * qnew
            b += 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h += delh
            dels = q * delh
            s += dels
            if abs(dels / s) < eps:
                break
        h = a1 * h
        rkmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi
    for i in range(1, nl + 1):
        tmp = (xmu + i) * xi2 * rk1 + rkmu
        rkmu = rk1
        rk1 = tmp
    return rkmu


# ------------------------------------------------------------------- covariance

@njit(cache=True)
def correlation1(d, kind, rng, smooth):
    if d <= 0.0:
        return 1.0
    r = d / rng
    if kind == POWEXP:
        return math.exp(-(r ** smooth))
    if r > 700.0:
        return 0.0
    return (2.0 ** (1.0 - smooth) / math.gamma(smooth)) * r ** smooth * bessel_k(smooth, r)


@njit(cache=True)
def build_cov(D, kind, sill, rng, smooth, jitter, out):
    n = D.shape[0]
    for i in range(n):
        out[i, i] = sill + jitter
        for j in range(i):
            c = sill * correlation1(D[i, j], kind, rng, smooth)
            out[i, j] = c
            out[j, i] = c


@njit(cache=True)
def chol_lower(A, L):
    """In-place style Cholesky of A into L; returns False if not positive definite."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        ljj = math.sqrt(s)
        L[j, j] = ljj
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / ljj
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def factor_cov(D, kind, sill, rng, smooth, jitter, C, L):
    """Build and factor a covariance, escalating jitter x10 up to 1e-4."""
    build_cov(D, kind, sill, rng, smooth, jitter, C)
    if chol_lower(C, L):
        return True
    n = D.shape[0]
    step = max(jitter, 1e-12)
    while True:
        step *= 10.0
        if step > 1e-4 * (1.0 + 1e-12):
            return False
        for i in range(n):
            C[i, i] = sill + step
        if chol_lower(C, L):
            return True


@njit(cache=True)
def chol_logdet(L):
    s = 0.0
    for i in range(L.shape[0]):
        s += math.log(L[i, i])
    return 2.0 * s


@njit(cache=True)
def chol_quad(L, r):
    """r' (L L')^{-1} r by forward substitution."""
    n = r.shape[0]
    u = np.empty(n)
    q = 0.0
    for i in range(n):
        t = r[i]
        for k in range(i):
            t -= L[i, k] * u[k]
        u[i] = t / L[i, i]
        q += u[i] * u[i]
    return q


@njit(cache=True)
def chol_inverse(L, Q):
    n = L.shape[0]
    Linv = np.zeros((n, n))
    for j in range(n):
        Linv[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, n):
            t = 0.0
            for k in range(j, i):
                t -= L[i, k] * Linv[k, j]
            Linv[i, j] = t / L[i, i]
    for i in range(n):
        for j in range(i + 1):
            t = 0.0
            for k in range(i, n):
                t += Linv[k, i] * Linv[k, j]
            Q[i, j] = t
            Q[j, i] = t


@njit(cache=True)
def quad_form(Q, r):
    n = r.shape[0]
    s = 0.0
    for i in range(n):
        t = 0.0
        for j in range(n):
            t += Q[i, j] * r[j]
        s += r[i] * t
    return s


# ------------------------------------------------------------------------ priors

@njit(cache=True)
def invgamma_logpdf(x, a, b):
    return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x


@njit(cache=True)
def gamma_logpdf(x, a, b):
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x


@njit(cache=True)
def hyper_logprior(m, x, hp):
    if m == 0:
        return invgamma_logpdf(x, hp[0], hp[1])
    return gamma_logpdf(x, hp[0], hp[1])


@njit(cache=True)
def pc_logprior1(xi, lam, pc_d, pc_ls, lo, step, d_lo, d_hi):
    n = pc_d.shape[0]
    hi = lo + step * (n - 1)
    if xi < lo or xi > hi:
        return -np.inf
    pos = (xi - lo) / step
    i = int(pos)
    if i >= n - 1:
        i = n - 2
    f = pos - i
    d = pc_d[i] + f * (pc_d[i + 1] - pc_d[i])
    ls = pc_ls[i] + f * (pc_ls[i + 1] - pc_ls[i])
    if xi < 0.0:
        norm = math.log(-math.expm1(-lam * d_lo))
    else:
        norm = math.log(-math.expm1(-lam * d_hi))
    return math.log(0.5) + math.log(lam) - lam * d + ls - norm


# ----------------------------------------------------------------------- updates

@njit(cache=True)
def site_delta(j, prop, y, eta, resid, Q, w, ll, pc_on, lam,
               pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi, means):
    """Log-posterior change from replacing eta[j] by ``prop``; also returns the new site loglik."""
    if abs(prop[2]) >= 5.0:
        return -np.inf, -np.inf
    ll_new = site_loglik(y[:, j], prop[0], prop[1], prop[2])
    if ll_new == -np.inf:
        return -np.inf, ll_new
    delta = w[j] * (ll_new - ll[j])
    n = eta.shape[0]
    for k in range(3):
        r_old = resid[k, j]
        r_new = prop[k] - means[k, j]
        s = 0.0
        for i in range(n):
            if i != j:
                s += Q[k, j, i] * resid[k, i]
        delta += -0.5 * Q[k, j, j] * (r_new * r_new - r_old * r_old) - (r_new - r_old) * s
    if pc_on:
        a = pc_logprior1(prop[2], lam, pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi)
        b = pc_logprior1(eta[j, 2], lam, pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi)
        delta += a - b
    return delta, ll_new


@njit(cache=True)
def hyper_target(hyp_k, kind, resid_k, D, jitter, hp_k, sampled_k, C, L):
    """Log target of one process's covariance parameters on the log scale.

    GP density (without the 2 pi constant) + hyperpriors of sampled
    parameters + log-Jacobian. Leaves the factor in ``L``; returns -inf when
    factorization fails.
    """
    ok = factor_cov(D, kind, hyp_k[0], hyp_k[1], hyp_k[2], jitter, C, L)
    if not ok:
        return -np.inf
    val = -0.5 * chol_quad(L, resid_k) - 0.5 * chol_logdet(L)
    for m in range(3):
        if sampled_k[m]:
            val += hyper_logprior(m, hyp_k[m], hp_k[m]) + math.log(hyp_k[m])
    return val


@njit(cache=True)
def refresh_process(k, X, p, beta, eta, hyp, kind, D, jitter, Q, logdet, resid, means, C, L):
    """Recompute precision, log-determinant and residuals for process k."""
    ok = factor_cov(D, kind[k], hyp[k, 0], hyp[k, 1], hyp[k, 2], jitter, C, L)
    if not ok:
        return False
    chol_inverse(L, Q[k])
    logdet[k] = chol_logdet(L)
    n = eta.shape[0]
    for i in range(n):
        m = 0.0
        for c in range(p[k]):
            m += X[k, i, c] * beta[k, c]
        means[k, i] = m
        resid[k, i] = eta[i, k] - m
    return True


@njit(cache=True)
def draw_beta(k, X, p, beta, eta, Q, beta_prec, z, resid, means):
    """Exact draw of beta_k | eta_k, covariance (normal prior, variance 1/beta_prec)."""
    n = eta.shape[0]
    pk = p[k]
    QX = np.zeros((n, pk))
    for i in range(n):
        for c in range(pk):
            t = 0.0
            for l in range(n):
                t += Q[k, i, l] * X[k, l, c]
            QX[i, c] = t
    P = np.zeros((pk, pk))
    b = np.zeros(pk)
    for a in range(pk):
        for c in range(pk):
            t = 0.0
            for i in range(n):
                t += X[k, i, a] * QX[i, c]
            P[a, c] = t
        P[a, a] += beta_prec
        t = 0.0
        for i in range(n):
            t += QX[i, a] * eta[i, k]
        b[a] = t
    LP = np.zeros((pk, pk))
    if not chol_lower(P, LP):
        return False
    # mean = P^{-1} b ; draw = mean + LP^{-T} z
    u = np.empty(pk)
    for i in range(pk):
        t = b[i]
        for c in range(i):
            t -= LP[i, c] * u[c]
        u[i] = t / LP[i, i]
    for i in range(pk):
        u[i] += z[i]
    for i in range(pk - 1, -1, -1):
        t = u[i]
        for c in range(i + 1, pk):
            t -= LP[c, i] * beta[k, c]
        beta[k, i] = t / LP[i, i]
    for i in range(n):
        m = 0.0
        for c in range(pk):
            m += X[k, i, c] * beta[k, c]
        means[k, i] = m
        resid[k, i] = eta[i, k] - m
    return True


@njit(cache=True)
def run_block(n_iter, y, D, X, p, kind, jitter, beta_prec, hp, sampled,
              do_eta, do_beta, do_hyper, do_pc,
              pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi, lam_prior,
              eta, beta, hyp, Q, logdet, resid, means, ll, w, lam,
              site_sd, hyp_sd, lam_sd,
              z_site, u_site, z_beta, z_hyp, u_hyp, z_lam, u_lam,
              acc_site, acc_hyp, acc_lam, eta_sum, eta_sumsq):
    n = eta.shape[0]
    C = np.empty((n, n))
    L = np.empty((n, n))
    prop = np.empty(3)
    trial = np.empty(3)
    for it in range(n_iter):
        if do_eta:
            for j in range(n):
                for c in range(3):
                    prop[c] = eta[j, c] + site_sd[j, c] * z_site[it, j, c]
                delta, ll_new = site_delta(j, prop, y, eta, resid, Q, w, ll, do_pc, lam[0],
                                           pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi, means)
                if u_site[it, j] < delta:
                    for c in range(3):
                        eta[j, c] = prop[c]
                        resid[c, j] = prop[c] - means[c, j]
                    ll[j] = ll_new
                    acc_site[j] += 1
        if do_beta:
            for k in range(3):
                draw_beta(k, X, p, beta, eta, Q, beta_prec, z_beta[it, k], resid, means)
        if do_hyper:
            for k in range(3):
                cur = 0.0
                have_cur = False
                for m in range(3):
                    if not sampled[k, m]:
                        continue
                    if not have_cur:
                        cur = hyper_target(hyp[k], kind[k], resid[k], D, jitter, hp[k], sampled[k], C, L)
                        have_cur = True
                    for c in range(3):
                        trial[c] = hyp[k, c]
                    trial[m] = hyp[k, m] * math.exp(hyp_sd[k, m] * z_hyp[it, k, m])
                    if kind[k] == POWEXP and m == 2 and trial[2] > 2.0:
                        continue
                    new = hyper_target(trial, kind[k], resid[k], D, jitter, hp[k], sampled[k], C, L)
                    if u_hyp[it, k, m] < new - cur:
                        hyp[k, m] = trial[m]
                        chol_inverse(L, Q[k])
                        logdet[k] = chol_logdet(L)
                        acc_hyp[k, m] += 1
                        cur = new
        if do_pc:
            lam_new = lam[0] * math.exp(lam_sd[0] * z_lam[it])
            d = (invgamma_logpdf(lam_new, lam_prior[0], lam_prior[1]) + math.log(lam_new)
                 - invgamma_logpdf(lam[0], lam_prior[0], lam_prior[1]) - math.log(lam[0]))
            for j in range(n):
                d += (pc_logprior1(eta[j, 2], lam_new, pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi)
                      - pc_logprior1(eta[j, 2], lam[0], pc_d, pc_ls, pc_lo, pc_step, pc_dlo, pc_dhi))
            if u_lam[it] < d:
                lam[0] = lam_new
                acc_lam[0] += 1
        for j in range(n):
            for c in range(3):
                eta_sum[j, c] += eta[j, c]
                eta_sumsq[j, c] += eta[j, c] * eta[j, c]
