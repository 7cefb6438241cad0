"""Row-vectorised node operation f(x) = act(gamma * standardize(x) + beta).

Arrays are (n_nodes, batch). Rows whose kind is not HIDDEN pass through
unchanged: input nodes take their state from the input map and output nodes
apply no operation.
"""

from dataclasses import dataclass

import numpy as np

from .graph import HIDDEN
from .numerics import IDENTITY, RELU, TANH

EPS = 1e-5
RUNNING_MOMENTUM = 0.9


@dataclass
class NodeCache:
    xhat: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray


def _act(y, act):
    z = y.copy()
    relu = act == RELU
    tanh = act == TANH
    if relu.any():
        z[relu] = np.where(y[relu] > 0.0, y[relu], 0.0)
    if tanh.any():
        z[tanh] = np.tanh(y[tanh])
    return z


def _act_grad(z, act):
    d = np.ones_like(z)
    relu = act == RELU
    tanh = act == TANH
    if relu.any():
        d[relu] = (z[relu] > 0.0).astype(np.float64)
    if tanh.any():
        d[tanh] = 1.0 - z[tanh] ** 2
    return d


def forward(I, gamma, beta, act, kind, normalize, train, run_mean=None, run_var=None, eps=EPS):
    n, B = I.shape
    hidden = (kind == HIDDEN)[:, None]
    if normalize:
        if train:
            mean = I.mean(axis=1)
            var = ((I - mean[:, None]) ** 2).mean(axis=1)
        else:
            mean, var = np.asarray(run_mean, dtype=np.float64), np.asarray(run_var, dtype=np.float64)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (I - mean[:, None]) * inv_std[:, None]
    else:
        mean = np.zeros(n)
        var = np.zeros(n)
        inv_std = np.ones(n)
        xhat = I.copy()
    y = gamma[:, None] * xhat + beta[:, None]
    z = np.where(hidden, _act(y, act), I)
    xhat = np.where(hidden, xhat, I)
    return z, NodeCache(xhat, mean, var, inv_std)


def backward(dZ, Z, cache, gamma, act, kind, normalize, train):
    """dL/dI, dL/dgamma and dL/dbeta from dL/dZ."""
    hidden = kind == HIDDEN
    B = dZ.shape[1]
    g = dZ * _act_grad(Z, act)
    dgamma = np.where(hidden, (g * cache.xhat).sum(axis=1), 0.0)
    dbeta = np.where(hidden, g.sum(axis=1), 0.0)
    dx = g * gamma[:, None]
    if normalize and train:
        m1 = dx.sum(axis=1, keepdims=True) / B
        m2 = (dx * cache.xhat).sum(axis=1, keepdims=True) / B
        dx = cache.inv_std[:, None] * (dx - m1 - cache.xhat * m2)
    elif normalize:
        dx = cache.inv_std[:, None] * dx
    dI = np.where(hidden[:, None], dx, dZ)
    return dI, dgamma, dbeta


def update_running(run_mean, run_var, mean, var, rows):
    """Exponential moving average of batch statistics on ``rows`` (in place)."""
    m = RUNNING_MOMENTUM
    run_mean[rows] = m * run_mean[rows] + (1.0 - m) * mean[rows]
    run_var[rows] = m * run_var[rows] + (1.0 - m) * var[rows]


def identity_act_codes(n):
    return np.full(n, IDENTITY, dtype=np.int8)
