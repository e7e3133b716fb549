# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched QP kernels; mirrors ``_kernels_py`` line for line."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

cdef enum:
    QMAX = 8
    RMAX = 64
    KMAX = QMAX + RMAX

cdef int OPTIMAL = 0
cdef int INFEASIBLE = 1
cdef int MAX_ITER = 2


cdef int _lu_solve(int n, double* A, double* b) noexcept nogil:
    """Gaussian elimination with partial pivoting on row-major A (n x n); b overwritten."""
    cdef int i, j, k, piv
    cdef double m, tmp, best
    for k in range(n):
        piv = k
        best = fabs(A[k * n + k])
        for i in range(k + 1, n):
            if fabs(A[i * n + k]) > best:
                best = fabs(A[i * n + k])
                piv = i
        if best < 1e-14:
            return -1
        if piv != k:
            for j in range(n):
                tmp = A[k * n + j]; A[k * n + j] = A[piv * n + j]; A[piv * n + j] = tmp
            tmp = b[k]; b[k] = b[piv]; b[piv] = tmp
        for i in range(k + 1, n):
            m = A[i * n + k] / A[k * n + k]
            if m != 0.0:
                for j in range(k, n):
                    A[i * n + j] -= m * A[k * n + j]
                b[i] -= m * b[k]
    for i in range(n - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, n):
            tmp -= A[i * n + j] * b[j]
        b[i] = tmp / A[i * n + i]
    return 0


cdef int _inverse(int n, const double* A, double* out) noexcept nogil:
    cdef double work[QMAX * QMAX]
    cdef double col[QMAX]
    cdef int i, j
    for j in range(n):
        for i in range(n * n):
            work[i] = A[i]
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        if _lu_solve(n, work, col) != 0:
            return -1
        for i in range(n):
            out[i * n + j] = col[i]
    return 0


cdef int _solve_one(int q, int r, const double* Q, const double* F, const double* G,
                    const double* h, const unsigned char* mask, int max_iter, double tol,
                    double* u, int* active, double* lam, int* n_active) noexcept nogil:
    cdef double Qinv[QMAX * QMAX]
    cdef double n[QMAX]
    cdef double Qn[QMAX]
    cdef double z[QMAX]
    cdef double QiN[QMAX * QMAX]
    cdef double M[QMAX * QMAX]
    cdef double rr[QMAX]
    cdef int i, j, a, c, p, k, kdrop, it = 0
    cdef double s, worst, lam_p, t1, t2, t, zn, nQn, acc, ratio
    cdef bint in_set
    if _inverse(q, Q, Qinv) != 0:
        return INFEASIBLE
    for i in range(q):
        acc = 0.0
        for j in range(q):
            acc -= Qinv[i * q + j] * F[j]
        u[i] = acc
    k = 0
    while True:
        it += 1
        if it > max_iter:
            n_active[0] = k
            return MAX_ITER
        p = -1
        worst = -tol
        for i in range(r):
            if not mask[i]:
                continue
            in_set = False
            for a in range(k):
                if active[a] == i:
                    in_set = True
                    break
            if in_set:
                continue
            s = h[i]
            for j in range(q):
                s -= G[i * q + j] * u[j]
            if s < worst:
                worst = s
                p = i
        if p < 0:
            n_active[0] = k
            return OPTIMAL
        for j in range(q):
            n[j] = -G[p * q + j]
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                n_active[0] = k
                return MAX_ITER
            for i in range(q):
                acc = 0.0
                for j in range(q):
                    acc += Qinv[i * q + j] * n[j]
                Qn[i] = acc
            for i in range(q):
                z[i] = Qn[i]
            if k > 0:
                # QiN = Qinv @ N  with N[:, a] = -G[active[a]]
                for i in range(q):
                    for a in range(k):
                        acc = 0.0
                        for j in range(q):
                            acc -= Qinv[i * q + j] * G[active[a] * q + j]
                        QiN[i * k + a] = acc
                for a in range(k):
                    for c in range(k):
                        acc = 0.0
                        for j in range(q):
                            acc -= G[active[a] * q + j] * QiN[j * k + c]
                        M[a * k + c] = acc
                    acc = 0.0
                    for j in range(q):
                        acc -= G[active[a] * q + j] * Qn[j]
                    rr[a] = acc
                if _lu_solve(k, M, rr) != 0:
                    n_active[0] = k
                    return INFEASIBLE
                for i in range(q):
                    acc = 0.0
                    for a in range(k):
                        acc += QiN[i * k + a] * rr[a]
                    z[i] = Qn[i] - acc
            t1 = INFINITY
            kdrop = -1
            for a in range(k):
                if rr[a] > tol:
                    ratio = lam[a] / rr[a]
                    if ratio < t1:
                        t1 = ratio
                        kdrop = a
            zn = 0.0
            nQn = 0.0
            for j in range(q):
                zn += z[j] * n[j]
                nQn += n[j] * Qn[j]
            if zn <= 1e-10 * nQn:
                if kdrop < 0:
                    n_active[0] = k
                    return INFEASIBLE
                for a in range(k):
                    lam[a] -= t1 * rr[a]
                lam_p += t1
                for a in range(kdrop, k - 1):
                    active[a] = active[a + 1]
                    lam[a] = lam[a + 1]
                k -= 1
                continue
            t2 = 0.0
            for j in range(q):
                t2 += G[p * q + j] * u[j]
            t2 = (t2 - h[p]) / zn
            t = t1 if t1 < t2 else t2
            for j in range(q):
                u[j] += t * z[j]
            for a in range(k):
                lam[a] -= t * rr[a]
            lam_p += t
            if t2 <= t1:
                active[k] = p
                lam[k] = lam_p
                k += 1
                break
            for a in range(kdrop, k - 1):
                active[a] = active[a + 1]
                lam[a] = lam[a + 1]
            k -= 1


def _check(int q, int r):
    if q > QMAX or r > RMAX:
        raise ValueError(f"compiled kernel supports q <= {QMAX}, rows <= {RMAX}")


def solve_batch(const double[:, :, ::1] Q, const double[:, ::1] F, const double[:, :, ::1] G,
                const double[:, ::1] h, const unsigned char[:, ::1] mask, int max_iter=200, double tol=1e-12):
    cdef int B = F.shape[0], q = F.shape[1], r = G.shape[1]
    _check(q, r)
    u_arr = np.zeros((B, q))
    lam_arr = np.zeros((B, r))
    status_arr = np.zeros(B, dtype=np.int8)
    act_arr = np.zeros((B, r), dtype=np.uint8)
    cdef double[:, ::1] u = u_arr
    cdef double[:, ::1] lam = lam_arr
    cdef signed char[::1] status = status_arr
    cdef unsigned char[:, ::1] act = act_arr
    cdef int active[RMAX]
    cdef double lam_a[RMAX]
    cdef int n_act, b, a, st
    cdef const double* Gp
    cdef const double* hp
    cdef const unsigned char* mp
    with nogil:
        for b in range(B):
            Gp = NULL
            hp = NULL
            mp = NULL
            if r > 0:
                Gp = &G[b, 0, 0]
                hp = &h[b, 0]
                mp = &mask[b, 0]
            st = _solve_one(q, r, &Q[b, 0, 0], &F[b, 0], Gp, hp, mp, max_iter, tol,
                            &u[b, 0], active, lam_a, &n_act)
            status[b] = st
            for a in range(n_act):
                lam[b, active[a]] = lam_a[a] if lam_a[a] > 0.0 else 0.0
                act[b, active[a]] = 1
    return u_arr, lam_arr, status_arr, act_arr


def backward_batch(const double[:, :, ::1] Q, const double[:, :, ::1] G, const double[:, ::1] u,
                   const double[:, ::1] lam, const unsigned char[:, ::1] act,
                   const signed char[::1] status, const double[:, ::1] gu, double drop_tol=1e-10):
    cdef int B = u.shape[0], q = u.shape[1], r = G.shape[1]
    _check(q, r)
    dQ_arr = np.zeros((B, q, q))
    dF_arr = np.zeros((B, q))
    dG_arr = np.zeros((B, r, q))
    dh_arr = np.zeros((B, r))
    cdef double[:, :, ::1] dQ = dQ_arr
    cdef double[:, ::1] dF = dF_arr
    cdef double[:, :, ::1] dG = dG_arr
    cdef double[:, ::1] dh = dh_arr
    cdef int A[RMAX]
    cdef double K[KMAX * KMAX]
    cdef double w[KMAX]
    cdef int b, i, j, a, k, m, dropped = 0, n_marked, weakest
    for b in range(B):
        if status[b] != OPTIMAL:
            continue
        k = 0
        n_marked = 0
        for i in range(r):
            if act[b, i]:
                n_marked += 1
                if lam[b, i] > drop_tol:
                    A[k] = i
                    k += 1
        dropped += n_marked - k
        while True:
            m = q + k
            for i in range(m * m):
                K[i] = 0.0
            for i in range(q):
                for j in range(q):
                    K[i * m + j] = Q[b, i, j]
            for a in range(k):
                for j in range(q):
                    K[j * m + q + a] = G[b, A[a], j]
                    K[(q + a) * m + j] = G[b, A[a], j]
            for i in range(q):
                w[i] = -gu[b, i]
            for a in range(k):
                w[q + a] = 0.0
            if _lu_solve(m, K, w) == 0:
                break
            weakest = 0
            for a in range(1, k):
                if lam[b, A[a]] < lam[b, A[weakest]]:
                    weakest = a
            for a in range(weakest, k - 1):
                A[a] = A[a + 1]
            k -= 1
            dropped += 1
        for i in range(q):
            dF[b, i] = w[i]
            for j in range(q):
                dQ[b, i, j] = 0.5 * (w[i] * u[b, j] + u[b, i] * w[j])
        for a in range(k):
            i = A[a]
            dh[b, i] = -w[q + a]
            for j in range(q):
                dG[b, i, j] = lam[b, i] * w[j] + w[q + a] * u[b, j]
    return dQ_arr, dF_arr, dG_arr, dh_arr, dropped


cdef double _violation(int q, int r, const double* G, const double* h, const unsigned char* mask,
                       const double* u,
                       double delta, unsigned char* viol) noexcept nogil:
    cdef int i, j
    cdef double s, f = 0.0
    for j in range(q):
        f += delta * u[j] * u[j]
    for i in range(r):
        s = -h[i]
        for j in range(q):
            s += G[i * q + j] * u[j]
        if mask[i] and s > 0:
            viol[i] = 1
            f += s * s
        else:
            viol[i] = 0
    return f


def fallback_batch(const double[:, :, ::1] G, const double[:, ::1] h,
                   const unsigned char[:, ::1] mask, const double[:, ::1] u0, double delta=1e-6, int max_iter=50):
    cdef int B = G.shape[0], r = G.shape[1], q = G.shape[2]
    _check(q, r)
    u_arr = np.array(u0, copy=True)
    vset_arr = np.zeros((B, r), dtype=np.uint8)
    cdef double[:, ::1] u = u_arr
    cdef unsigned char[:, ::1] vset = vset_arr
    cdef unsigned char V[RMAX]
    cdef unsigned char Vn[RMAX]
    cdef double M[QMAX * QMAX]
    cdef double M2[QMAX * QMAX]
    cdef double d[QMAX]
    cdef double trial[QMAX]
    cdef int b, i, j, l, it
    cdef double f, fn, slope, t, dd, uu, acc
    cdef bint same
    with nogil:
        for b in range(B):
            if r == 0:
                continue
            f = _violation(q, r, &G[b, 0, 0], &h[b, 0], &mask[b, 0], &u[b, 0], delta, V)
            for it in range(max_iter):
                for j in range(q):
                    d[j] = 0.0
                    for l in range(q):
                        M[j * q + l] = delta if j == l else 0.0
                for i in range(r):
                    if V[i]:
                        for j in range(q):
                            d[j] += G[b, i, j] * h[b, i]
                            for l in range(q):
                                M[j * q + l] += G[b, i, j] * G[b, i, l]
                for j in range(q * q):
                    M2[j] = M[j]
                _lu_solve(q, M2, d)
                dd = 0.0
                uu = 0.0
                for j in range(q):
                    d[j] -= u[b, j]
                    dd += d[j] * d[j]
                    uu += u[b, j] * u[b, j]
                if dd <= 1e-28 * (1.0 + uu):
                    break
                slope = 0.0
                for j in range(q):
                    acc = 0.0
                    for l in range(q):
                        acc += M[j * q + l] * d[l]
                    slope -= 2.0 * d[j] * acc
                t = 1.0
                while True:
                    for j in range(q):
                        trial[j] = u[b, j] + t * d[j]
                    fn = _violation(q, r, &G[b, 0, 0], &h[b, 0], &mask[b, 0], trial, delta, Vn)
                    if fn <= f + 1e-4 * t * slope or t < 1e-10:
                        break
                    t *= 0.5
                for j in range(q):
                    u[b, j] = trial[j]
                same = t == 1.0
                for i in range(r):
                    if Vn[i] != V[i]:
                        same = False
                    V[i] = Vn[i]
                f = fn
                if same:
                    break
            for i in range(r):
                vset[b, i] = V[i]
    return u_arr, vset_arr


def fallback_backward(const double[:, :, ::1] G, const double[:, ::1] h, const double[:, ::1] u,
                      const unsigned char[:, ::1] vset, const double[:, ::1] gu,
                      double delta=1e-6):
    cdef int B = G.shape[0], r = G.shape[1], q = G.shape[2]
    _check(q, r)
    dG_arr = np.zeros((B, r, q))
    dh_arr = np.zeros((B, r))
    cdef double[:, :, ::1] dG = dG_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double M[QMAX * QMAX]
    cdef double w[QMAX]
    cdef int b, i, j, l
    cdef double gw, res
    for b in range(B):
        for j in range(q):
            w[j] = gu[b, j]
            for l in range(q):
                M[j * q + l] = delta if j == l else 0.0
        for i in range(r):
            if vset[b, i]:
                for j in range(q):
                    for l in range(q):
                        M[j * q + l] += G[b, i, j] * G[b, i, l]
        _lu_solve(q, M, w)
        for i in range(r):
            if not vset[b, i]:
                continue
            gw = 0.0
            res = h[b, i]
            for j in range(q):
                gw += G[b, i, j] * w[j]
                res -= G[b, i, j] * u[b, j]
            dh[b, i] = gw
            for j in range(q):
                dG[b, i, j] = w[j] * res - gw * u[b, j]
    return dG_arr, dh_arr
