"""Deterministic numerical kernels: PRNG, activations, loss and finite differences.

The generator is SplitMix64::

    state <- state + 0x9E3779B97F4A7C15          (mod 2**64)
    z <- state
    z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9    (mod 2**64)
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB    (mod 2**64)
    output z ^ (z >> 31)

A double in [0, 1) is ``(output >> 11) * 2**-53``. Any port that follows the
recurrence reproduces the streams bit for bit.
"""

import math

import numpy as np

from .errors import InvalidRangeError, NumericError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)

IDENTITY, RELU, TANH = 0, 1, 2
ACTIVATIONS = {"identity": IDENTITY, "relu": RELU, "tanh": TANH}


def _mix(z):
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 stream. Single owner; not thread safe."""

    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def next_double(self):
        return (self.next_u64() >> 11) * _INV53

    def u64_array(self, n):
        """The next ``n`` outputs, identical to ``n`` calls of ``next_u64``."""
        n = int(n)
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform_array(self, n, lo=0.0, hi=1.0):
        if not lo < hi:
            raise InvalidRangeError(f"uniform needs lo < hi, got [{lo}, {hi})")
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV53
        return lo + (hi - lo) * u

    def normal_array(self, n):
        """Standard normals by Box-Muller, two uniforms per draw."""
        u = self.uniform_array(2 * n).reshape(n, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return r * np.cos(2.0 * math.pi * u[:, 1])

    def randbelow(self, n):
        return int(self.next_double() * n)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)

    def spawn(self):
        """Independent child stream seeded from this one."""
        return Rng(self.next_u64())


def uniform(rng, lo, hi):
    """One draw in ``[lo, hi)``."""
    if not lo < hi:
        raise InvalidRangeError(f"uniform needs lo < hi, got [{lo}, {hi})")
    v = lo + (hi - lo) * rng.next_double()
    # rounding in lo + (hi-lo)*u can land exactly on hi
    return v if v < hi else math.nextafter(hi, lo)


def activate(y, code):
    if code == RELU:
        return np.where(y > 0.0, y, 0.0)
    if code == TANH:
        return np.tanh(y)
    return np.array(y, dtype=np.float64, copy=True)


def activation_grad(z, code):
    """Derivative of the activation expressed through its output ``z``.

    relu'(0) is taken as 0.
    """
    if code == RELU:
        return (z > 0.0).astype(np.float64)
    if code == TANH:
        return 1.0 - z * z
    return np.ones_like(z)


def softmax_ce(logits, labels):
    """Mean softmax cross-entropy over the batch axis.

    ``logits`` has shape (C, B) and ``labels`` shape (B,). Returns the loss and
    its gradient with respect to ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    C, B = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")
    if B and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    shifted = logits - logits.max(axis=0, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=0))
    logp = shifted - logz
    cols = np.arange(B)
    loss = -logp[labels, cols].mean()
    grad = np.exp(logp)
    grad[labels, cols] -= 1.0
    grad /= B
    return float(loss), grad


def finite_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not h > 0:
        raise InvalidRangeError("step h must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    shape = x.shape
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(flat.reshape(shape))
        flat[i] = orig - h
        fm = f(flat.reshape(shape))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(shape)
