"""Datasets: synthetic interleaved spirals and CSV files."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ParseError
from ..numerics import Rng


@dataclass
class Dataset:
    features: np.ndarray  # (F, N)
    labels: np.ndarray  # (N,)
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int

    @property
    def n_features(self):
        return self.features.shape[0]

    @property
    def X_train(self):
        return self.features[:, self.train_idx]

    @property
    def y_train(self):
        return self.labels[self.train_idx]

    @property
    def X_test(self):
        return self.features[:, self.test_idx]

    @property
    def y_test(self):
        return self.labels[self.test_idx]


def split_indices(n, test_fraction, rng):
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    perm = rng.permutation(n)
    n_test = int(math.floor(n * test_fraction + 0.5))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def gen_spirals(n_per_class, classes=2, noise_sd=0.1, seed=0, test_fraction=0.2, turns=1.5):
    """Interleaved 2-D spiral arms, one per class, with Gaussian noise."""
    if n_per_class < 1 or classes < 2:
        raise ValueError("need n_per_class >= 1 and classes >= 2")
    rng = Rng(seed)
    t = (np.arange(n_per_class) + 0.5) / n_per_class
    radius = 0.1 + 1.9 * t
    xs, ys = [], []
    for c in range(classes):
        angle = 2.0 * math.pi * (turns * t + c / classes)
        xs.append(np.stack([radius * np.cos(angle), radius * np.sin(angle)]))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    X = np.concatenate(xs, axis=1)
    if noise_sd > 0:
        X = X + noise_sd * rng.normal_array(X.size).reshape(X.shape)
    y = np.concatenate(ys)
    train_idx, test_idx = split_indices(y.size, test_fraction, rng)
    return Dataset(X, y, train_idx, test_idx, classes)


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, test_fraction=0.2, seed=0, n_classes=None):
    """Rows are feature columns followed by an integer label; optional header."""
    with open(path, newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise ParseError("no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise ParseError("need at least one feature column and a label", rows[0][0])
    feats, labels = [], []
    for line, row in rows:
        if len(row) != width:
            raise ParseError(f"expected {width} columns, got {len(row)}", line)
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise ParseError("non-numeric cell", line) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite cell", line)
        lab = vals[-1]
        if lab != int(lab) or lab < 0 or (n_classes is not None and lab >= n_classes):
            raise ParseError(f"label {row[-1].strip()!r} out of range", line)
        feats.append(vals[:-1])
        labels.append(int(lab))
    y = np.array(labels, dtype=np.int64)
    C = int(y.max()) + 1 if n_classes is None else int(n_classes)
    X = np.array(feats, dtype=np.float64).T.copy()
    train_idx, test_idx = split_indices(y.size, test_fraction, Rng(seed))
    return Dataset(X, y, train_idx, test_idx, C)


def save_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for j in range(dataset.labels.size):
            w.writerow([repr(float(x)) for x in dataset.features[:, j]] + [int(dataset.labels[j])])
