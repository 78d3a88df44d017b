"""Sparse "label index:value" dataset handling and train/test splitting.

The on-disk format is one example per line: a label token followed by
whitespace-separated index:value pairs with 1-based, strictly increasing
indices.  Label alphabets {-1,+1}, {0,1} and {1,2} are remapped to {0,1};
anything else is rejected so that preprocessing stays explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .targets import LogisticRegressionData

__all__ = [
    "SparseDataset",
    "SparseFormatError",
    "parse_sparse_lines",
    "load_sparse_dataset",
    "serialize_sparse_dataset",
    "save_sparse_dataset",
    "split_train_test",
    "to_dense",
    "subsample",
    "synthetic_logistic_data",
]


class SparseFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SparseDataset:
    """Rows of (label, ((index, value), ...)) plus the max feature index seen."""

    rows: tuple[tuple[int, tuple[tuple[int, float], ...]], ...]
    max_index: int

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for label, _ in self.rows], dtype=int)


_LABEL_MAPS = (
    ({-1, 1}, {-1: 0, 1: 1}),
    ({0, 1}, {0: 0, 1: 1}),
    ({1, 2}, {1: 0, 2: 1}),
)


def _remap_labels(raw_labels: list[int]) -> list[int]:
    observed = set(raw_labels)
    for alphabet, mapping in _LABEL_MAPS:
        if observed <= alphabet:
            return [mapping[v] for v in raw_labels]
    raise SparseFormatError(
        f"label alphabet {sorted(observed)} is not one of {{-1,+1}}, {{0,1}}, {{1,2}}"
    )


def parse_sparse_lines(lines) -> SparseDataset:
    raw_labels: list[int] = []
    row_pairs: list[tuple[tuple[int, float], ...]] = []
    max_index = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = int(float(tokens[0]))
            if float(tokens[0]) != label:
                raise ValueError
        except ValueError:
            raise SparseFormatError(f"line {lineno}: bad label token {tokens[0]!r}") from None
        pairs = []
        previous = 0
        for token in tokens[1:]:
            idx_text, sep, val_text = token.partition(":")
            if not sep:
                raise SparseFormatError(f"line {lineno}: token {token!r} is not index:value")
            try:
                idx = int(idx_text)
                val = float(val_text)
            except ValueError:
                raise SparseFormatError(f"line {lineno}: token {token!r} is not index:value") from None
            if idx < 1:
                raise SparseFormatError(f"line {lineno}: index {idx} is not positive")
            if idx <= previous:
                raise SparseFormatError(
                    f"line {lineno}: index {idx} does not increase (previous {previous})"
                )
            if not math.isfinite(val):
                raise SparseFormatError(f"line {lineno}: non-finite value in {token!r}")
            previous = idx
            pairs.append((idx, val))
        max_index = max(max_index, previous)
        raw_labels.append(label)
        row_pairs.append(tuple(pairs))
    labels = _remap_labels(raw_labels) if raw_labels else []
    rows = tuple((lab, pairs) for lab, pairs in zip(labels, row_pairs))
    return SparseDataset(rows, max_index)


def load_sparse_dataset(path) -> SparseDataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sparse_lines(fh)


def serialize_sparse_dataset(ds: SparseDataset) -> str:
    lines = []
    for label, pairs in ds.rows:
        parts = [str(label)] + [f"{idx}:{value!r}" for idx, value in pairs]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def save_sparse_dataset(ds: SparseDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_sparse_dataset(ds))


def split_train_test(
    ds: SparseDataset, fraction: float, repeat_index: int, seed: int
) -> tuple[SparseDataset, SparseDataset]:
    """Deterministic shuffled split keyed by (seed, repeat_index)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must lie strictly between 0 and 1")
    if ds.n_rows < 2:
        raise ValueError("need at least 2 rows to split")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(repeat_index,)))
    order = rng.permutation(ds.n_rows)
    cut = int(fraction * ds.n_rows)
    train = tuple(ds.rows[i] for i in order[:cut])
    test = tuple(ds.rows[i] for i in order[cut:])
    return SparseDataset(train, ds.max_index), SparseDataset(test, ds.max_index)


def subsample(ds: SparseDataset, n_rows: int, seed: int) -> SparseDataset:
    """Uniform row subsample without replacement (for oversize datasets)."""
    if n_rows >= ds.n_rows:
        return ds
    rng = np.random.default_rng(seed)
    keep = rng.choice(ds.n_rows, size=n_rows, replace=False)
    keep.sort()
    return SparseDataset(tuple(ds.rows[i] for i in keep), ds.max_index)


def to_dense(ds: SparseDataset) -> LogisticRegressionData:
    """Densify to a design matrix with an intercept column appended."""
    n = ds.n_rows
    x = np.zeros((n, ds.max_index + 1))
    x[:, -1] = 1.0
    labels = np.empty(n, dtype=int)
    for i, (label, pairs) in enumerate(ds.rows):
        labels[i] = label
        for idx, value in pairs:
            x[i, idx - 1] = value
    return LogisticRegressionData(x, labels)


def synthetic_logistic_data(
    n: int, d_x: int, seed: int, beta_star: np.ndarray | None = None
) -> tuple[LogisticRegressionData, np.ndarray]:
    """Draw features ~ N(0, I) and labels from a known coefficient vector.

    Returns (data, beta_star) where beta_star includes the intercept as its
    last component, matching the design-matrix layout.
    """
    rng = np.random.default_rng(seed)
    if beta_star is None:
        beta_star = np.concatenate([rng.normal(0.0, 1.5, size=d_x), [0.3]])
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_star.shape != (d_x + 1,):
        raise ValueError("beta_star must have d_x + 1 components (intercept last)")
    raw = rng.standard_normal((n, d_x))
    design = np.hstack([raw, np.ones((n, 1))])
    probs = 1.0 / (1.0 + np.exp(-design @ beta_star))
    labels = (rng.uniform(size=n) < probs).astype(int)
    return LogisticRegressionData(design, labels), beta_star
