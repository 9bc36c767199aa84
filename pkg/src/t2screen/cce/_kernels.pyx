# Compiled Hahn-echo propagation core. Contract matches kernels_py.hahn_echo_batch.
#
# Per cluster the echo factor at total time t = 2*tau reduces to a phased Gram
# form in the joint eigenbases (M = V0^H V1, u_j = exp(-2*pi*i*w1_j*tau),
# p_i = exp(-2*pi*i*w0_i*tau)):
#
#   G_ik(tau) = sum_j M_ij conj(M_kj) u_j
#   L(2*tau)  = (1/d) sum_ik p_i conj(p_k) |G_ik(tau)|^2
#
# Small dimensions run a rank-1 accumulation over j with split real/imag
# arrays; large dimensions batch all time steps into one zgemm. On uniform
# grids the phase vectors are updated recursively instead of calling sincos.

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport zgemm
from scipy.linalg.cython_lapack cimport zheevd

cnp.import_array()

ctypedef double complex zcplx

cdef double TWO_PI = 6.283185307179586476925287
cdef int SMALL_D = 12


cdef inline void _phases(double* base_r, double* base_i, double* cur_r, double* cur_i,
                         double* w, double tau, double dtau, int d, int k,
                         bint uniform) nogil:
    # advance (or recompute) exp(-2*pi*i*w*tau) for all d levels
    cdef int p
    cdef double ar, ai, ph
    if uniform and k > 0:
        for p in range(d):
            ar = cur_r[p] * base_r[p] - cur_i[p] * base_i[p]
            ai = cur_r[p] * base_i[p] + cur_i[p] * base_r[p]
            cur_r[p] = ar
            cur_i[p] = ai
    else:
        for p in range(d):
            ph = -TWO_PI * w[p] * tau
            cur_r[p] = cos(ph)
            cur_i[p] = sin(ph)


def hahn_echo_batch(zcplx[:, :, ::1] h0, zcplx[:, :, ::1] h1, double[::1] tau_ms):
    """Echo factors for (n, d, d) stacks of conditional Hamiltonians (kHz, ms)."""
    cdef Py_ssize_t n = h0.shape[0]
    cdef int d = <int> h0.shape[1]
    cdef Py_ssize_t n_t = tau_ms.shape[0]
    out_arr = np.empty((n, n_t), dtype=np.complex128)
    cdef zcplx[:, ::1] out = out_arr
    if n == 0 or n_t == 0:
        return out_arr

    cdef bint uniform = True
    cdef double dtau = 0.0
    cdef Py_ssize_t q
    if n_t > 1:
        dtau = tau_ms[1] - tau_ms[0]
        for q in range(1, n_t):
            if abs((tau_ms[q] - tau_ms[q - 1]) - dtau) > 1e-12 * (abs(dtau) + 1e-30):
                uniform = False
                break
        if tau_ms[0] != 0.0:
            uniform = False
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef char opN = b'N'
    cdef char opT = b'T'
    cdef char opC = b'C'
    cdef zcplx alpha = 1.0
    cdef zcplx beta = 0.0
    cdef int dd = d * d
    cdef int info = 0
    cdef int lwork, lrwork, liwork
    cdef int lm1 = -1
    cdef zcplx wk_q
    cdef double rwk_q
    cdef int iwk_q
    cdef Py_ssize_t i, k
    cdef int r, c, j, p
    cdef double t, gr, gi, mr_, mi_, ur, ui, qv, sr, si, accr, acci
    cdef zcplx* v0
    cdef zcplx* v1
    cdef zcplx* mm
    cdef double* w0
    cdef double* w1
    cdef double* mr
    cdef double* mi
    cdef double* tjr
    cdef double* tji
    cdef double* gre
    cdef double* gim
    cdef double* p0r
    cdef double* p0i
    cdef double* p1r
    cdef double* p1i
    cdef double* b0r
    cdef double* b0i
    cdef double* b1r
    cdef double* b1i
    cdef zcplx* wstack
    cdef zcplx* gstack
    cdef zcplx* work
    cdef double* rwork
    cdef int* iwork
    cdef bint small = d <= SMALL_D

    with nogil:
        v0 = <zcplx*> malloc(dd * sizeof(zcplx))
        v1 = <zcplx*> malloc(dd * sizeof(zcplx))
        mm = <zcplx*> malloc(dd * sizeof(zcplx))
        w0 = <double*> malloc(d * sizeof(double))
        w1 = <double*> malloc(d * sizeof(double))
        mr = <double*> malloc(dd * sizeof(double))
        mi = <double*> malloc(dd * sizeof(double))
        gre = <double*> malloc(dd * sizeof(double))
        gim = <double*> malloc(dd * sizeof(double))
        p0r = <double*> malloc(d * sizeof(double))
        p0i = <double*> malloc(d * sizeof(double))
        p1r = <double*> malloc(d * sizeof(double))
        p1i = <double*> malloc(d * sizeof(double))
        b0r = <double*> malloc(d * sizeof(double))
        b0i = <double*> malloc(d * sizeof(double))
        b1r = <double*> malloc(d * sizeof(double))
        b1i = <double*> malloc(d * sizeof(double))
        tjr = <double*> malloc(d * dd * sizeof(double)) if small else NULL
        tji = <double*> malloc(d * dd * sizeof(double)) if small else NULL
        wstack = NULL if small else <zcplx*> malloc(dd * sizeof(zcplx))
        gstack = NULL if small else <zcplx*> malloc(dd * sizeof(zcplx))

        # workspace query + allocation
        zheevd(&jobz, &uplo, &d, v0, &d, w0, &wk_q, &lm1, &rwk_q, &lm1, &iwk_q, &lm1, &info)
        lwork = <int> wk_q.real
        lrwork = <int> rwk_q
        liwork = iwk_q
        if lwork < 2 * d + dd:
            lwork = 2 * d + dd
        if lrwork < 1 + 5 * d + 2 * dd:
            lrwork = 1 + 5 * d + 2 * dd
        if liwork < 3 + 5 * d:
            liwork = 3 + 5 * d
        work = <zcplx*> malloc(lwork * sizeof(zcplx))
        rwork = <double*> malloc(lrwork * sizeof(double))
        iwork = <int*> malloc(liwork * sizeof(int))

        for i in range(n):
            # LAPACK reads the C-ordered Hermitian buffer as H^T = H^*, whose
            # eigenvectors are conj(V); eigenvalues are unchanged. Hence
            # M = V0^H V1 = conj(v0^H v1) with v = returned vectors.
            for r in range(d):
                for c in range(d):
                    v0[r * d + c] = h0[i, r, c]
                    v1[r * d + c] = h1[i, r, c]
            zheevd(&jobz, &uplo, &d, v0, &d, w0, work, &lwork, rwork, &lrwork, iwork, &liwork, &info)
            zheevd(&jobz, &uplo, &d, v1, &d, w1, work, &lwork, rwork, &lrwork, iwork, &liwork, &info)
            zgemm(&opC, &opN, &d, &d, &d, &alpha, v0, &d, v1, &d, &beta, mm, &d)
            # column-major mm[c*d+r] = (row r, col c); conjugate for M
            for p in range(dd):
                mr[p] = mm[p].real
                mi[p] = -mm[p].imag

            if uniform:
                for p in range(d):
                    t = -TWO_PI * w0[p] * dtau
                    b0r[p] = cos(t)
                    b0i[p] = sin(t)
                    t = -TWO_PI * w1[p] * dtau
                    b1r[p] = cos(t)
                    b1i[p] = sin(t)

            if small:
                # T_j tensors: T^j_ik = M_ij conj(M_kj), stored j-major
                for j in range(d):
                    for k in range(d):
                        mr_ = mr[j * d + k]   # M_kj real
                        mi_ = -mi[j * d + k]  # conj(M_kj) imag
                        for r in range(d):
                            # (i=r): M_rj * conj(M_kj)
                            tjr[j * dd + k * d + r] = mr[j * d + r] * mr_ - mi[j * d + r] * mi_
                            tji[j * dd + k * d + r] = mr[j * d + r] * mi_ + mi[j * d + r] * mr_
                if d == 4:
                    # fixed-bound variant so the compiler can unroll/vectorize;
                    # spin-1/2 pairs dominate every production bath
                    for k in range(n_t):
                        t = tau_ms[k]
                        _phases(b0r, b0i, p0r, p0i, w0, t, dtau, 4, <int> k, uniform)
                        _phases(b1r, b1i, p1r, p1i, w1, t, dtau, 4, <int> k, uniform)
                        for p in range(16):
                            gre[p] = 0.0
                            gim[p] = 0.0
                        for j in range(4):
                            ur = p1r[j]
                            ui = p1i[j]
                            for p in range(16):
                                gre[p] += ur * tjr[j * 16 + p] - ui * tji[j * 16 + p]
                                gim[p] += ur * tji[j * 16 + p] + ui * tjr[j * 16 + p]
                        accr = 0.0
                        acci = 0.0
                        for c in range(4):
                            sr = 0.0
                            si = 0.0
                            for r in range(4):
                                qv = gre[c * 4 + r] * gre[c * 4 + r] + gim[c * 4 + r] * gim[c * 4 + r]
                                sr += qv * p0r[r]
                                si += qv * p0i[r]
                            accr += sr * p0r[c] + si * p0i[c]
                            acci += si * p0r[c] - sr * p0i[c]
                        out[i, k] = (accr + 1j * acci) * 0.25
                else:
                    for k in range(n_t):
                        t = tau_ms[k]
                        _phases(b0r, b0i, p0r, p0i, w0, t, dtau, d, <int> k, uniform)
                        _phases(b1r, b1i, p1r, p1i, w1, t, dtau, d, <int> k, uniform)
                        for p in range(dd):
                            gre[p] = 0.0
                            gim[p] = 0.0
                        for j in range(d):
                            ur = p1r[j]
                            ui = p1i[j]
                            for p in range(dd):
                                gre[p] += ur * tjr[j * dd + p] - ui * tji[j * dd + p]
                                gim[p] += ur * tji[j * dd + p] + ui * tjr[j * dd + p]
                        accr = 0.0
                        acci = 0.0
                        for c in range(d):
                            sr = 0.0
                            si = 0.0
                            for r in range(d):
                                qv = gre[c * d + r] * gre[c * d + r] + gim[c * d + r] * gim[c * d + r]
                                sr += qv * p0r[r]
                                si += qv * p0i[r]
                            # multiply by conj(p0_c)
                            accr += sr * p0r[c] + si * p0i[c]
                            acci += si * p0r[c] - sr * p0i[c]
                        out[i, k] = (accr + 1j * acci) / d
            else:
                # big clusters: one zgemm per time with L1-resident buffers
                #   G_k = W_k M^H = W_k mm^T  (M = conj(mm))
                for k in range(n_t):
                    t = tau_ms[k]
                    _phases(b1r, b1i, p1r, p1i, w1, t, dtau, d, <int> k, uniform)
                    _phases(b0r, b0i, p0r, p0i, w0, t, dtau, d, <int> k, uniform)
                    for c in range(d):
                        ur = p1r[c]
                        ui = p1i[c]
                        for r in range(d):
                            p = c * d + r
                            wstack[p] = (mr[p] * ur - mi[p] * ui) + 1j * (mr[p] * ui + mi[p] * ur)
                    zgemm(&opN, &opT, &d, &d, &d, &alpha, wstack, &d, mm, &d,
                          &beta, gstack, &d)
                    accr = 0.0
                    acci = 0.0
                    for c in range(d):
                        sr = 0.0
                        si = 0.0
                        for r in range(d):
                            gr = gstack[c * d + r].real
                            gi = gstack[c * d + r].imag
                            qv = gr * gr + gi * gi
                            sr += qv * p0r[r]
                            si += qv * p0i[r]
                        accr += sr * p0r[c] + si * p0i[c]
                        acci += si * p0r[c] - sr * p0i[c]
                    out[i, k] = (accr + 1j * acci) / d

        free(v0); free(v1); free(mm); free(w0); free(w1); free(mr); free(mi)
        free(gre); free(gim); free(p0r); free(p0i); free(p1r); free(p1i)
        free(b0r); free(b0i); free(b1r); free(b1i)
        if small:
            free(tjr); free(tji)
        else:
            free(wstack); free(gstack)
        free(work); free(rwork); free(iwork)

    return out_arr
