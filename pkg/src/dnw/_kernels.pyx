# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled node-by-node graph propagation.

Same contracts as ``_kernels_py``. Parents arrive in CSC form (``indptr``,
``indices``) with ascending parent index inside each column, which fixes the
summation order of every node input.
"""

from libc.math cimport sqrt, tanh, isfinite

ctypedef signed char i8
ctypedef unsigned char u8

cdef enum:
    K_INPUT = 0
    K_HIDDEN = 1
    K_OUTPUT = 2
    A_IDENTITY = 0
    A_RELU = 1
    A_TANH = 2


def forward_nodes(const double[:, ::1] W, const long[::1] indptr, const long[::1] indices,
                  double[:, ::1] Z, double[:, ::1] I, double[:, ::1] xhat,
                  double[::1] mean, double[::1] var, double[::1] inv_std,
                  const double[::1] gamma, const double[::1] beta,
                  const i8[::1] act, const i8[::1] kind, const u8[::1] skip,
                  bint normalize, bint train,
                  const double[::1] run_mean, const double[::1] run_var,
                  const double[:, ::1] shift, bint has_shift, double eps):
    cdef Py_ssize_t N = Z.shape[0]
    cdef Py_ssize_t B = Z.shape[1]
    cdef Py_ssize_t v, b, p, u
    cdef double w, m, s, d, y, z, inv
    cdef long reads = 0
    for v in range(N):
        if kind[v] == K_INPUT:
            continue
        if skip[v]:
            for b in range(B):
                I[v, b] = 0.0
                Z[v, b] = 0.0
                xhat[v, b] = 0.0
            continue
        for b in range(B):
            I[v, b] = 0.0
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            w = W[u, v]
            reads += 1
            for b in range(B):
                I[v, b] += w * Z[u, b]
        if has_shift:
            for b in range(B):
                I[v, b] += shift[v, b]
        if kind[v] == K_OUTPUT:
            for b in range(B):
                Z[v, b] = I[v, b]
                if not isfinite(Z[v, b]):
                    return reads, v
            continue
        if normalize:
            if train:
                m = 0.0
                for b in range(B):
                    m += I[v, b]
                m = m / B
                s = 0.0
                for b in range(B):
                    d = I[v, b] - m
                    s += d * d
                s = s / B
            else:
                m = run_mean[v]
                s = run_var[v]
            inv = 1.0 / sqrt(s + eps)
            mean[v] = m
            var[v] = s
            inv_std[v] = inv
            for b in range(B):
                xhat[v, b] = (I[v, b] - m) * inv
        else:
            for b in range(B):
                xhat[v, b] = I[v, b]
        for b in range(B):
            y = gamma[v] * xhat[v, b] + beta[v]
            if act[v] == A_RELU:
                z = y if y > 0.0 else 0.0
            elif act[v] == A_TANH:
                z = tanh(y)
            else:
                z = y
            if not isfinite(z):
                return reads, v
            Z[v, b] = z
    return reads, -1


def backward_nodes(const double[:, ::1] W, const long[::1] indptr, const long[::1] indices,
                   const double[:, ::1] Z, const double[:, ::1] xhat, const double[::1] inv_std,
                   const double[::1] gamma, const i8[::1] act, const i8[::1] kind,
                   const u8[::1] skip, bint normalize, bint train,
                   double[:, ::1] dZ, double[:, ::1] dI,
                   double[::1] dgamma, double[::1] dbeta):
    """Reverse sweep. ``dZ`` must hold dL/dZ for output nodes on entry and is
    accumulated in place for every other node."""
    cdef Py_ssize_t N = Z.shape[0]
    cdef Py_ssize_t B = Z.shape[1]
    cdef Py_ssize_t v, b, p, u
    cdef double g, zb, m1, m2, dx, w, sg, sb
    for v in range(N - 1, -1, -1):
        dgamma[v] = 0.0
        dbeta[v] = 0.0
        if skip[v]:
            for b in range(B):
                dI[v, b] = 0.0
            continue
        if kind[v] == K_INPUT or kind[v] == K_OUTPUT:
            for b in range(B):
                dI[v, b] = dZ[v, b]
        else:
            sg = 0.0
            sb = 0.0
            m1 = 0.0
            m2 = 0.0
            for b in range(B):
                zb = Z[v, b]
                if act[v] == A_RELU:
                    g = dZ[v, b] if zb > 0.0 else 0.0
                elif act[v] == A_TANH:
                    g = dZ[v, b] * (1.0 - zb * zb)
                else:
                    g = dZ[v, b]
                sg += g * xhat[v, b]
                sb += g
                dx = g * gamma[v]
                dI[v, b] = dx
                m1 += dx
                m2 += dx * xhat[v, b]
            dgamma[v] = sg
            dbeta[v] = sb
            if normalize:
                if train:
                    m1 = m1 / B
                    m2 = m2 / B
                    for b in range(B):
                        dI[v, b] = inv_std[v] * (dI[v, b] - m1 - xhat[v, b] * m2)
                else:
                    for b in range(B):
                        dI[v, b] = inv_std[v] * dI[v, b]
        if kind[v] == K_INPUT:
            continue
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            w = W[u, v]
            for b in range(B):
                dZ[u, b] += w * dI[v, b]


def edge_grad(const double[:, ::1] Z, const double[:, ::1] dI, const u8[:, ::1] cand,
              double[:, ::1] G):
    """G[u, v] = sum_b Z[u, b] dI[v, b] over candidate pairs, ascending b."""
    cdef Py_ssize_t N = Z.shape[0]
    cdef Py_ssize_t B = Z.shape[1]
    cdef Py_ssize_t u, v, b
    cdef double s
    for u in range(N):
        for v in range(N):
            if not cand[u, v]:
                G[u, v] = 0.0
                continue
            s = 0.0
            for b in range(B):
                s += Z[u, b] * dI[v, b]
            G[u, v] = s
