"""Pure-Python/numpy implementation of the graph propagation kernels.

Used when the compiled extension is missing or ``DNW_PURE_PYTHON=1``.
Signatures and in-place semantics mirror ``_kernels.pyx``.
"""

import numpy as np

from .graph import HIDDEN, INPUT, OUTPUT
from .numerics import RELU, TANH


def _parents(indptr, indices, v):
    return indices[indptr[v]:indptr[v + 1]]


# overflow is detected by the finiteness checks, not by numpy warnings
@np.errstate(over="ignore", invalid="ignore")
def forward_nodes(W, indptr, indices, Z, I, xhat, mean, var, inv_std, gamma, beta,
                  act, kind, skip, normalize, train, run_mean, run_var, shift,
                  has_shift, eps):
    N, B = Z.shape
    reads = 0
    for v in range(N):
        if kind[v] == INPUT:
            continue
        if skip[v]:
            I[v] = 0.0
            Z[v] = 0.0
            xhat[v] = 0.0
            continue
        acc = np.zeros(B)
        for u in _parents(indptr, indices, v):
            acc += W[u, v] * Z[u]
            reads += 1
        if has_shift:
            acc += shift[v]
        I[v] = acc
        if kind[v] == OUTPUT:
            Z[v] = acc
            if not np.all(np.isfinite(acc)):
                return reads, v
            continue
        if normalize:
            if train:
                m = acc.sum() / B
                d = acc - m
                s = (d * d).sum() / B
            else:
                m, s = run_mean[v], run_var[v]
            inv = 1.0 / np.sqrt(s + eps)
            mean[v], var[v], inv_std[v] = m, s, inv
            xhat[v] = (acc - m) * inv
        else:
            xhat[v] = acc
        y = gamma[v] * xhat[v] + beta[v]
        if act[v] == RELU:
            z = np.where(y > 0.0, y, 0.0)
        elif act[v] == TANH:
            z = np.tanh(y)
        else:
            z = y
        if not np.all(np.isfinite(z)):
            return reads, v
        Z[v] = z
    return reads, -1


@np.errstate(over="ignore", invalid="ignore")
def backward_nodes(W, indptr, indices, Z, xhat, inv_std, gamma, act, kind, skip,
                   normalize, train, dZ, dI, dgamma, dbeta):
    N, B = Z.shape
    for v in range(N - 1, -1, -1):
        dgamma[v] = 0.0
        dbeta[v] = 0.0
        if skip[v]:
            dI[v] = 0.0
            continue
        if kind[v] != HIDDEN:
            dI[v] = dZ[v]
        else:
            z = Z[v]
            if act[v] == RELU:
                g = np.where(z > 0.0, dZ[v], 0.0)
            elif act[v] == TANH:
                g = dZ[v] * (1.0 - z * z)
            else:
                g = dZ[v].copy()
            dgamma[v] = (g * xhat[v]).sum()
            dbeta[v] = g.sum()
            dx = g * gamma[v]
            if normalize and train:
                m1 = dx.sum() / B
                m2 = (dx * xhat[v]).sum() / B
                dx = inv_std[v] * (dx - m1 - xhat[v] * m2)
            elif normalize:
                dx = inv_std[v] * dx
            dI[v] = dx
        if kind[v] == INPUT:
            continue
        for u in _parents(indptr, indices, v):
            dZ[u] += W[u, v] * dI[v]


def edge_grad(Z, dI, cand, G):
    """G[u, v] = sum_b Z[u, b] dI[v, b], accumulated in ascending b."""
    N, B = Z.shape
    acc = np.zeros((N, N))
    for b in range(B):
        acc += np.multiply.outer(Z[:, b], dI[:, b])
    G[...] = np.where(cand.astype(bool), acc, 0.0)
