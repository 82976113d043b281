"""Synthetic classification episodes for pre-training the backbone.

Two controllable task families stand in for the synthetic prior:
Gaussian mixture clusters (one component per class) and a frozen random
two-layer teacher network whose argmax labels uniform inputs.  Both are
pure functions of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .tensor import get_default_dtype


@dataclass
class Episode:
    """One in-context task: labeled support rows plus query rows."""

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.support_x = np.asarray(self.support_x)
        self.support_y = np.asarray(self.support_y, dtype=np.int64)
        self.query_x = np.asarray(self.query_x)
        if self.query_y is not None:
            self.query_y = np.asarray(self.query_y, dtype=np.int64)
        if self.support_x.ndim != 2 or self.query_x.ndim != 2:
            raise ValueError("episode features must be 2-d (rows x features)")
        if self.support_x.shape[0] < 1:
            raise ValueError("episode needs at least one support row")
        if self.support_x.shape[1] != self.query_x.shape[1]:
            raise ValueError(
                f"support has {self.support_x.shape[1]} features, "
                f"query has {self.query_x.shape[1]}")
        if self.support_y.shape[0] != self.support_x.shape[0]:
            raise ValueError("one label per support row required")

    @property
    def n_support(self) -> int:
        return self.support_x.shape[0]

    @property
    def n_query(self) -> int:
        return self.query_x.shape[0]

    @property
    def n_features(self) -> int:
        return self.support_x.shape[1]

    @property
    def n_classes(self) -> int:
        labels = [self.support_y]
        if self.query_y is not None:
            labels.append(self.query_y)
        return int(max(ys.max() for ys in labels)) + 1


@dataclass
class PriorConfig:
    """Ranges and family weights for random episode generation."""

    d_range: tuple[int, int] = (2, 10)
    c_range: tuple[int, int] = (2, 10)
    n_support_range: tuple[int, int] = (20, 100)
    n_query_range: tuple[int, int] = (10, 30)
    gaussian_weight: float = 0.5
    mlp_weight: float = 0.5
    noise: float = 1.0
    mean_scale: float = 2.5  # cluster mean spread for the gaussian family

    def __post_init__(self):
        for name in ("d_range", "c_range", "n_support_range", "n_query_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} must be a nonempty range, got ({lo}, {hi})")
        if self.c_range[0] < 2 or self.c_range[1] > 10:
            raise ValueError("class counts must lie in [2, 10]")
        if self.gaussian_weight < 0 or self.mlp_weight < 0:
            raise ValueError("family weights must be nonnegative")
        if self.gaussian_weight + self.mlp_weight == 0:
            raise ValueError("at least one family weight must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")


def _pick(key: int, lo: int, hi: int) -> int:
    return lo + int(rng.randint(key, 1, hi - lo + 1)[0])


def sample_episode(cfg: PriorConfig, seed: int) -> Episode:
    """Draw one labeled episode; byte-identical for identical seeds."""
    k_dims, k_fam, k_task = rng.gamma_spaced_keys(rng.derive_key(seed), 3)
    d = _pick(rng.derive_key(k_dims, 0), *cfg.d_range)
    c = _pick(rng.derive_key(k_dims, 1), *cfg.c_range)
    n_s = max(_pick(rng.derive_key(k_dims, 2), *cfg.n_support_range), c)
    n_q = _pick(rng.derive_key(k_dims, 3), *cfg.n_query_range)

    total = cfg.gaussian_weight + cfg.mlp_weight
    use_gaussian = rng.uniform(k_fam, ()) < cfg.gaussian_weight / total
    if use_gaussian:
        means = rng.normal(rng.derive_key(k_task, 0), (c, d),
                           std=cfg.mean_scale)
        stds = rng.uniform(rng.derive_key(k_task, 1), (c, d),
                           lo=0.5, hi=1.5) * max(cfg.noise, 1e-3)
        return gaussian_mixture_episode(means, stds, n_s, n_q, k_task)
    return mlp_teacher_episode(d, c, n_s, n_q, k_task, noise=cfg.noise)


def gaussian_mixture_episode(means: np.ndarray, stds: np.ndarray,
                             n_support: int, n_query: int,
                             seed: int) -> Episode:
    """Episode from one Gaussian cluster per class.

    ``means`` and ``stds`` are (C, d); support labels are constructed to
    cover every class at least once.
    """
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    c, d = means.shape
    if n_support < c:
        raise ValueError(f"need at least {c} support rows to cover {c} classes")
    key = rng.derive_key(seed, 0xA11)
    # first C labels enumerate the classes, remainder is uniform, then shuffle
    extra = rng.randint(rng.derive_key(key, 0), n_support - c, c) if n_support > c \
        else np.empty(0, dtype=np.int64)
    y_s = np.concatenate([np.arange(c, dtype=np.int64), extra])
    y_s = y_s[rng.permutation(rng.derive_key(key, 1), n_support)]
    y_q = rng.randint(rng.derive_key(key, 2), n_query, c)

    dtype = get_default_dtype()
    xs = means[y_s] + stds[y_s] * rng.normal(rng.derive_key(key, 3),
                                             (n_support, d))
    xq = means[y_q] + stds[y_q] * rng.normal(rng.derive_key(key, 4),
                                             (n_query, d))
    return Episode(xs.astype(dtype), y_s, xq.astype(dtype), y_q)


def mlp_teacher_episode(d: int, c: int, n_support: int, n_query: int,
                        seed: int, noise: float = 1.0,
                        hidden: int = 32) -> Episode:
    """Episode labeled by the argmax of a frozen random two-layer network.

    Inputs are uniform on [-sqrt(3), sqrt(3)] (unit variance).  A pool is
    labeled in one shot and the support rows are picked stratified so
    every class appears; if the pool misses a class under the drawn
    teacher, the teacher is redrawn, with a forced relabel of the
    highest-scoring rows as a final deterministic fallback.
    """
    key = rng.derive_key(seed, 0xB22)
    pool_size = max(8 * (n_support + n_query), 512)
    lim = float(np.sqrt(3.0))

    pool = None
    labels = None
    for attempt in range(20):
        k = rng.derive_key(key, attempt)
        pool = rng.uniform(rng.derive_key(k, 0), (pool_size, d), -lim, lim)
        w1 = rng.normal(rng.derive_key(k, 1), (d, hidden), std=1.0 / np.sqrt(d))
        b1 = rng.normal(rng.derive_key(k, 2), (hidden,), std=0.1)
        w2 = rng.normal(rng.derive_key(k, 3), (hidden, c),
                        std=1.0 / np.sqrt(hidden))
        logits = np.maximum(pool @ w1 + b1, 0.0) @ w2
        logits -= logits.mean(axis=0)  # centering balances argmax shares
        labels = np.argmax(logits, axis=1)
        if len(np.unique(labels)) == c:
            break
    else:
        # force coverage: relabel the strongest rows of each missing class
        ranked = np.argsort(-logits, axis=0)
        taken = set()
        for cls in range(c):
            if cls in labels:
                continue
            for row in ranked[:, cls]:
                if int(row) not in taken:
                    labels[row] = cls
                    taken.add(int(row))
                    break

    # stratified support: one row per class first, remainder random
    order = rng.permutation(rng.derive_key(key, 0xC0), pool_size)
    support_idx = []
    seen = set()
    for i in order:
        if labels[i] not in seen:
            support_idx.append(int(i))
            seen.add(int(labels[i]))
        if len(seen) == c:
            break
    rest = [int(i) for i in order if int(i) not in set(support_idx)]
    support_idx = np.array(support_idx + rest[:n_support - len(support_idx)])
    support_idx = support_idx[rng.permutation(rng.derive_key(key, 0xC1),
                                              len(support_idx))]
    query_idx = np.array(rest[n_support - len(seen):
                              n_support - len(seen) + n_query])

    jitter = 0.1 * noise
    dtype = get_default_dtype()
    xs = pool[support_idx] + jitter * rng.normal(rng.derive_key(key, 0xC2),
                                                 (len(support_idx), d))
    xq = pool[query_idx] + jitter * rng.normal(rng.derive_key(key, 0xC3),
                                               (len(query_idx), d))
    return Episode(xs.astype(dtype), labels[support_idx],
                   xq.astype(dtype), labels[query_idx])


def make_classification_data(kind: str, n: int, d: int, n_classes: int,
                             seed: int, *, mean_scale: float = 2.0,
                             noise: float = 1.0,
                             informative: Optional[np.ndarray] = None,
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Full synthetic dataset drawn i.i.d. from one fixed task.

    ``kind`` is "gaussian" (one cluster per class) or "mlp" (frozen
    teacher labels).  ``informative``, when given for the gaussian kind,
    restricts class-mean differences to those feature columns; the rest
    are pure noise dimensions.
    """
    key = rng.derive_key(seed, 0xD5)
    if kind == "gaussian":
        means = rng.normal(rng.derive_key(key, 0), (n_classes, d),
                           std=mean_scale)
        if informative is not None:
            mask = np.zeros(d, dtype=bool)
            mask[np.asarray(informative)] = True
            means[:, ~mask] = 0.0
        stds = rng.uniform(rng.derive_key(key, 1), (n_classes, d),
                           0.5, 1.5) * max(noise, 1e-3)
        y = rng.randint(rng.derive_key(key, 2), n, n_classes)
        # guarantee every class occurs
        y[:n_classes] = np.arange(n_classes)
        y = y[rng.permutation(rng.derive_key(key, 3), n)]
        x = means[y] + stds[y] * rng.normal(rng.derive_key(key, 4), (n, d))
        return x.astype(np.float64), y
    if kind == "mlp":
        ep = mlp_teacher_episode(d, n_classes, n, 1, key, noise=noise)
        return ep.support_x.astype(np.float64), ep.support_y
    raise ValueError(f"unknown dataset kind {kind!r}")


__all__ = [
    "Episode",
    "PriorConfig",
    "gaussian_mixture_episode",
    "make_classification_data",
    "mlp_teacher_episode",
    "sample_episode",
]
