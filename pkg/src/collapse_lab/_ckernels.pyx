# cython: language_level=3
"""Compiled hot kernels; mirrors ``_pykernels`` function for function."""
import numpy as np

from libc.math cimport cos, sin, sqrt, fabs, pow, hypot, atan2, fmod, M_PI

cdef enum:
    STATUS_OK = 0
    STATUS_DEGENERATE = 1
    STATUS_UNDERFLOW = 2
    STATUS_MAX_STEPS = 3

cdef double EPS = np.finfo(float).eps

# Dormand-Prince 5(4)
cdef double[7] C_ = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7][6] A_ = [
    [0, 0, 0, 0, 0, 0],
    [1.0 / 5, 0, 0, 0, 0, 0],
    [3.0 / 40, 9.0 / 40, 0, 0, 0, 0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0],
    [35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
]
cdef double[7] E_ = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200,
                     22.0 / 525, -1.0 / 40]


cdef inline double abs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline double cmod(double complex z) nogil:
    # overflow/underflow-safe modulus
    return hypot(z.real, z.imag)


cpdef double collapse_rate(const double[::1] coeffs, double tau, double T, double gamma,
                           double t):
    cdef double x = M_PI * (t - tau) / T
    cdef double f = 0.0
    cdef Py_ssize_t n
    for n in range(coeffs.shape[0]):
        f += coeffs[n] * cos(n * x)
    return gamma * (f - 1.0) / f


cdef int _rhs(const double complex[:, ::1] H, const double complex[::1] y,
              const signed char[:, ::1] masks, double lam, double hbar, double floor,
              double complex[::1] out, double[::1] ratio, double* bad) nogil:
    cdef Py_ssize_t D = H.shape[0]
    cdef Py_ssize_t m = masks.shape[0]
    cdef Py_ssize_t i, j
    cdef double complex acc
    cdef double complex mi = -1j / hbar
    cdef double a, q, w, coef
    for i in range(D):
        acc = 0
        for j in range(D):
            acc = acc + H[i, j] * y[j]
        out[i] = mi * acc
    if m == 0:
        return STATUS_OK
    for j in range(m):
        a = 0.0
        q = 0.0
        for i in range(D):
            w = abs2(y[i])
            if masks[j, i]:
                a += w
            else:
                q += w
        if a <= floor * (a + q):
            bad[0] = a / (a + q) if a + q > 0 else 0.0
            return STATUS_DEGENERATE
        ratio[j] = q / a
    for i in range(D):
        coef = 0.0
        for j in range(m):
            if masks[j, i]:
                coef -= ratio[j]
            else:
                coef += 1.0
        out[i] = out[i] + lam * coef * y[i]
    return STATUS_OK


def integrate_collapse(H, psi0, masks, coeffs, double tau, double T, double gamma,
                       double hbar, double t0, double t1, double rtol, double atol,
                       double cap_frac, long max_steps, double floor, double first_step):
    """Compiled counterpart of ``_pykernels.integrate_collapse``."""
    cdef const double complex[:, ::1] Hv = np.ascontiguousarray(H, dtype=complex)
    cdef Py_ssize_t D = Hv.shape[0]
    cdef const signed char[:, ::1] mv = np.ascontiguousarray(
        np.asarray(masks, dtype=np.int8).reshape(-1, D))
    cdef const double[::1] cv = np.ascontiguousarray(coeffs, dtype=float)
    cdef Py_ssize_t m = mv.shape[0]
    cdef double complex[::1] y = np.array(psi0, dtype=complex)
    cdef double complex[::1] ytmp = np.empty(D, dtype=complex)
    cdef double complex[:, ::1] k = np.empty((7, D), dtype=complex)
    cdef double[::1] ratio = np.empty(max(m, 1))
    cdef double bad = 0.0
    cdef double t = t0, h, t_new, lam, err, sc, e_re, e_im, fac, cap, ya, yb
    cdef double complex ev
    cdef Py_ssize_t i, j, s
    cdef int status
    cdef long n_rej = 0, n_iter = 0
    cdef double t_end = tau + T
    cdef bint has_targets = m > 0

    lam = collapse_rate(cv, tau, T, gamma, t) if has_targets else 0.0
    status = _rhs(Hv, y, mv, lam, hbar, floor, k[0], ratio, &bad)
    if status != STATUS_OK:
        return None, None, None, 0, status, t, bad
    ts = [t]
    ys = [np.asarray(y).copy()]
    fs = [np.asarray(k[0]).copy()]
    if t1 <= t:
        return np.array(ts), np.array(ys), np.array(fs), 0, STATUS_OK, t, 0.0

    if first_step > 0:
        h = first_step
    else:
        ya = 0.0
        yb = 0.0
        for i in range(D):
            sc = atol + rtol * cmod(y[i])
            ya += (cmod(y[i]) / sc) ** 2
            yb += (cmod(k[0, i]) / sc) ** 2
        ya = sqrt(ya / D)
        yb = sqrt(yb / D)
        h = 1e-6 if (ya < 1e-5 or yb < 1e-5) else 0.01 * ya / yb

    while t < t1:
        n_iter += 1
        if n_iter > max_steps:
            return None, None, None, n_rej, STATUS_MAX_STEPS, t, 0.0
        cap = t1 - t
        if cap_frac > 0 and cap_frac * (t_end - t) < cap:
            cap = cap_frac * (t_end - t)
        if h > cap:
            h = cap
        if h <= 16 * EPS * max(fabs(t), 1.0):
            return None, None, None, n_rej, STATUS_UNDERFLOW, t, h
        for s in range(1, 7):
            for i in range(D):
                ev = y[i]
                for j in range(s):
                    if A_[s][j] != 0.0:
                        ev = ev + h * A_[s][j] * k[j, i]
                ytmp[i] = ev
            lam = collapse_rate(cv, tau, T, gamma, t + C_[s] * h) if has_targets else 0.0
            status = _rhs(Hv, ytmp, mv, lam, hbar, floor, k[s], ratio, &bad)
            if status != STATUS_OK:
                return None, None, None, n_rej, status, t + C_[s] * h, bad
        # ytmp now holds the fifth-order solution (FSAL stage)
        err = 0.0
        for i in range(D):
            ev = 0
            for s in range(7):
                if E_[s] != 0.0:
                    ev = ev + E_[s] * k[s, i]
            ev = h * ev
            ya = cmod(y[i])
            yb = cmod(ytmp[i])
            sc = atol + rtol * (ya if ya > yb else yb)
            ya = cmod(ev) / sc
            err += ya * ya
        err = sqrt(err / D)
        if err <= 1.0:
            # snap so no sub-ulp remainder is left before t1
            t_new = t + h if t + h < t1 - 16 * EPS * max(fabs(t1), 1.0) else t1
            t = t_new
            for i in range(D):
                y[i] = ytmp[i]
                k[0, i] = k[6, i]
            ts.append(t)
            ys.append(np.asarray(y).copy())
            fs.append(np.asarray(k[0]).copy())
            if err == 0.0:
                fac = 10.0
            else:
                fac = 0.9 * pow(err, -0.2)
                if fac > 10.0:
                    fac = 10.0
            h *= fac
        else:
            n_rej += 1
            fac = 0.9 * pow(err, -0.2)
            if fac < 0.2:
                fac = 0.2
            h *= fac
    return np.array(ts), np.array(ys), np.array(fs), n_rej, STATUS_OK, t, 0.0


# ---------------------------------------------------------------------------
# Jacobi pair objective


cdef double _pair_obj(double theta, double phi, const double complex[:, ::1] M,
                      const double complex[:, ::1] Q, double Gpp, double Gqq,
                      double complex Gpq, double floor) nogil:
    cdef double c = cos(theta)
    cdef double sr = sin(theta)
    cdef double complex s = sr * (cos(phi) + 1j * sin(phi))
    cdef double complex sb = s.conjugate()
    cdef double ss = sr * sr
    cdef double complex cp[4]
    cdef double complex cq[4]
    cdef double cross, np2, nq2, total = 0.0
    cdef double complex zp, zq, z
    cdef Py_ssize_t a, b, j
    cdef bint okp, okq
    cp[0] = c * c
    cp[1] = c * sb
    cp[2] = s * c
    cp[3] = ss
    cq[0] = ss
    cq[1] = -sb * c
    cq[2] = -c * s
    cq[3] = c * c
    cross = 2.0 * c * (sb * Gpq).real
    np2 = c * c * Gpp + ss * Gqq + cross
    nq2 = ss * Gpp + c * c * Gqq - cross
    okp = np2 > floor * floor
    okq = nq2 > floor * floor
    for j in range(M.shape[1]):
        zp = 0
        zq = 0
        for a in range(4):
            zp = zp + cp[a].conjugate() * M[a, j]
            zq = zq + cq[a].conjugate() * M[a, j]
        if okp:
            total += abs2(zp) / np2
        if okq:
            total += abs2(zq) / nq2
    if okp and okq:
        z = 0
        for a in range(4):
            for b in range(4):
                z = z + cp[a].conjugate() * Q[a, b] * cq[b]
        total += abs2(z) / (np2 * nq2)
    return total


def pair_objective(double theta, double phi, M, Q, double Gpp, double Gqq, Gpq, double floor):
    cdef const double complex[:, ::1] Mv = np.ascontiguousarray(M, dtype=complex)
    cdef const double complex[:, ::1] Qv = np.ascontiguousarray(Q, dtype=complex)
    return _pair_obj(theta, phi, Mv, Qv, Gpp, Gqq, complex(Gpq), floor)


cdef double INV_PHI = (sqrt(5.0) - 1.0) / 2.0


cdef double _golden(int which, double fixed, double a, double b,
                    const double complex[:, ::1] M, const double complex[:, ::1] Q,
                    double Gpp, double Gqq, double complex Gpq, double floor,
                    double* best) nogil:
    # which == 0: vary theta (phi fixed); which == 1: vary phi (theta fixed)
    cdef double c = b - INV_PHI * (b - a)
    cdef double d = a + INV_PHI * (b - a)
    cdef double fc, fd
    cdef int it
    if which == 0:
        fc = _pair_obj(c, fixed, M, Q, Gpp, Gqq, Gpq, floor)
        fd = _pair_obj(d, fixed, M, Q, Gpp, Gqq, Gpq, floor)
    else:
        fc = _pair_obj(fixed, c, M, Q, Gpp, Gqq, Gpq, floor)
        fd = _pair_obj(fixed, d, M, Q, Gpp, Gqq, Gpq, floor)
    for it in range(100):
        if fabs(b - a) <= 1e-13 * (1.0 + fabs(c) + fabs(d)):
            break
        if fc < fd:
            b = d
            d = c
            fd = fc
            c = b - INV_PHI * (b - a)
            if which == 0:
                fc = _pair_obj(c, fixed, M, Q, Gpp, Gqq, Gpq, floor)
            else:
                fc = _pair_obj(fixed, c, M, Q, Gpp, Gqq, Gpq, floor)
        else:
            a = c
            c = d
            fc = fd
            d = a + INV_PHI * (b - a)
            if which == 0:
                fd = _pair_obj(d, fixed, M, Q, Gpp, Gqq, Gpq, floor)
            else:
                fd = _pair_obj(fixed, d, M, Q, Gpp, Gqq, Gpq, floor)
    if fc < fd:
        best[0] = fc
        return c
    best[0] = fd
    return d


def optimize_pair(M, Q, double Gpp, double Gqq, Gpq, double floor, int n_theta, int n_phi,
                  int rounds):
    """Compiled counterpart of ``_pykernels.optimize_pair``."""
    cdef const double complex[:, ::1] Mv = np.ascontiguousarray(M, dtype=complex)
    cdef const double complex[:, ::1] Qv = np.ascontiguousarray(Q, dtype=complex)
    cdef double complex g = complex(Gpq)
    cdef double tb = 0.0, pb = 0.0, vb = 1e300, v, th, ph, x, dt, dp
    cdef int i, j, r
    # theta and theta +- pi/2 differ by a column swap, which leaves R unchanged
    for i in range(n_theta):
        th = -0.25 * M_PI + 0.5 * M_PI * i / n_theta
        for j in range(n_phi):
            ph = M_PI * j / n_phi
            v = _pair_obj(th, ph, Mv, Qv, Gpp, Gqq, g, floor)
            if v < vb:
                tb, pb, vb = th, ph, v
    dt = 0.5 * M_PI / n_theta
    dp = M_PI / n_phi
    cdef double a, b, e = 1e-6
    if fabs(tb) < 1e-12:
        tb = 0.0
        # every phase ties at theta = 0; take the phase of steepest first-order descent
        a = (_pair_obj(e, 0.0, Mv, Qv, Gpp, Gqq, g, floor)
             - _pair_obj(-e, 0.0, Mv, Qv, Gpp, Gqq, g, floor))
        b = (_pair_obj(e, 0.5 * M_PI, Mv, Qv, Gpp, Gqq, g, floor)
             - _pair_obj(-e, 0.5 * M_PI, Mv, Qv, Gpp, Gqq, g, floor))
        pb = fmod(atan2(b, a) + M_PI, M_PI)
    for r in range(rounds):
        x = _golden(0, pb, tb - dt, tb + dt, Mv, Qv, Gpp, Gqq, g, floor, &v)
        if v < vb:
            tb, vb = x, v
        x = _golden(1, tb, pb - dp, pb + dp, Mv, Qv, Gpp, Gqq, g, floor, &v)
        if v < vb:
            pb, vb = x, v
        dt *= 0.5
        dp *= 0.5
    return tb, pb, vb
