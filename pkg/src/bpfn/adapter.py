"""Batch-ensemble feature encoders mapping arbitrary-width inputs to the
backbone's padded width.

The stack carries K parallel virtual encoders.  Each layer shares one
weight matrix W; path k owns rank-one scalers r_k (input), s_k (output)
and bias b_k, so the materialized weight of path k is
diag(s_k) W diag(r_k).  All K paths evaluate in one batched matmul.
An optional periodic embedding maps every feature through trainable
sine/cosine frequencies before the first layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from . import tensor as T
from .tensor import Tensor

PERIODIC_MAX_FEATURES = 1000  # wider inputs skip the periodic embedding

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AdapterConfig:
    k_paths: int = 16
    hidden: int = 100
    out_width: int = 100  # must equal the backbone d_max
    dropout: float = 0.1
    periodic: bool = True
    n_frequencies: int = 16
    frequency_scale: float = 0.1

    def __post_init__(self):
        if self.k_paths < 1:
            raise ValueError("k_paths must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.hidden < 1 or self.out_width < 1:
            raise ValueError("layer widths must be positive")


class BatchEnsembleLinear:
    """Shared weight plus K rank-one path scalers and biases.

    weight: (n_in, n_out); r: (K, n_in); s: (K, n_out); b: (K, n_out).
    Path k maps x to s_k * ((r_k * x) @ W) + b_k.
    """

    def __init__(self, weight: Tensor, r: Tensor, s: Tensor, b: Tensor):
        k, n_in = r.shape
        if weight.shape != (n_in, s.shape[1]) or s.shape[0] != k \
                or b.shape != s.shape:
            raise T.ShapeError("batch_ensemble_linear", weight.shape, r.shape,
                               s.shape, b.shape)
        self.weight = weight
        self.r = r
        self.s = s
        self.b = b

    @property
    def k_paths(self) -> int:
        return self.r.shape[0]

    @property
    def n_in(self) -> int:
        return self.r.shape[1]

    @property
    def n_out(self) -> int:
        return self.s.shape[1]

    @classmethod
    def init(cls, n_in: int, n_out: int, k_paths: int, key: int) -> \
            "BatchEnsembleLinear":
        """W fan-in uniform, r random signs, s ones, b zeros."""
        dtype = T.get_default_dtype()
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(rng.derive_key(key, 0), (n_in, n_out),
                        -bound, bound).astype(dtype)
        r = rng.rand_sign(rng.derive_key(key, 1), (k_paths, n_in)).astype(dtype)
        return cls(Tensor(w), Tensor(r),
                   Tensor(np.ones((k_paths, n_out), dtype=dtype)),
                   Tensor(np.zeros((k_paths, n_out), dtype=dtype)))

    def forward_all(self, x: Tensor) -> Tensor:
        """All paths at once: x is (K, N, n_in) or broadcastable (1, N,
        n_in); output (K, N, n_out)."""
        scaled = T.mul(x, T.reshape(self.r, (self.k_paths, 1, self.n_in)))
        out = T.matmul(scaled, self.weight)
        out = T.mul(out, T.reshape(self.s, (self.k_paths, 1, self.n_out)))
        return T.add(out, T.reshape(self.b, (self.k_paths, 1, self.n_out)))

    def materialized(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Equivalent plain weight/bias of path k: diag(s_k) W^T diag(r_k)."""
        w_map = self.weight.data.T  # (n_out, n_in), maps x by W x
        return (self.s.data[k][:, None] * w_map * self.r.data[k][None, :],
                self.b.data[k])


def be_linear_forward(x: np.ndarray, layer: BatchEnsembleLinear,
                      k: int) -> np.ndarray:
    """Single-path evaluation: s_k * ((r_k * x) @ W) + b_k per row."""
    if not 0 <= k < layer.k_paths:
        raise IndexError(f"path {k} out of range for {layer.k_paths} paths")
    x = np.asarray(x)
    if x.shape[-1] != layer.n_in:
        raise T.ShapeError("be_linear_forward", x.shape, (layer.n_in,))
    return (layer.s.data[k] * ((layer.r.data[k] * x) @ layer.weight.data)
            + layer.b.data[k])


class PeriodicEmbedding:
    """Per-feature trainable frequencies producing [cos, sin] features."""

    def __init__(self, frequencies: Tensor):
        self.frequencies = frequencies  # (d, n_frequencies)

    @classmethod
    def init(cls, d: int, n_frequencies: int, scale: float,
             key: int) -> "PeriodicEmbedding":
        dtype = T.get_default_dtype()
        f = rng.normal(key, (d, n_frequencies), std=scale).astype(dtype)
        return cls(Tensor(f))

    @property
    def n_out(self) -> int:
        d, n = self.frequencies.shape
        return 2 * d * n

    def forward(self, x: Tensor) -> Tensor:
        """(..., d) -> (..., 2 d n_frequencies) via cos/sin of 2 pi c x."""
        d, n = self.frequencies.shape
        lead = x.shape[:-1]
        xi = T.reshape(x, lead + (d, 1))
        angles = T.mul(T.mul(xi, self.frequencies), _TWO_PI)
        feats = T.concat([T.cos(angles), T.sin(angles)], axis=-1)
        return T.reshape(feats, lead + (2 * d * n,))


class EncoderStack:
    """K-path encoder: [periodic] -> linear -> ReLU -> dropout -> linear."""

    def __init__(self, cfg: AdapterConfig, n_features: int,
                 periodic: Optional[PeriodicEmbedding],
                 layer1: BatchEnsembleLinear, layer2: BatchEnsembleLinear):
        self.cfg = cfg
        self.n_features = n_features
        self.periodic = periodic
        self.layer1 = layer1
        self.layer2 = layer2

    @property
    def k_paths(self) -> int:
        return self.cfg.k_paths

    @property
    def out_width(self) -> int:
        return self.cfg.out_width

    def parameters(self) -> dict[str, Tensor]:
        named = {
            "layer1.weight": self.layer1.weight, "layer1.r": self.layer1.r,
            "layer1.s": self.layer1.s, "layer1.b": self.layer1.b,
            "layer2.weight": self.layer2.weight, "layer2.r": self.layer2.r,
            "layer2.s": self.layer2.s, "layer2.b": self.layer2.b,
        }
        if self.periodic is not None:
            named["periodic.frequencies"] = self.periodic.frequencies
        return named

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.parameters().items()}

    def set_trainable(self, flag: bool) -> None:
        for t in self.parameters().values():
            t.trainable = flag

    def replace_params(self, arrays: dict[str, np.ndarray]) -> "EncoderStack":
        current = self.parameters()
        fresh = {
            name: Tensor(arrays.get(name, t.data), trainable=t.trainable)
            for name, t in current.items()
        }
        periodic = None
        if self.periodic is not None:
            periodic = PeriodicEmbedding(fresh["periodic.frequencies"])
        layer1 = BatchEnsembleLinear(fresh["layer1.weight"], fresh["layer1.r"],
                                     fresh["layer1.s"], fresh["layer1.b"])
        layer2 = BatchEnsembleLinear(fresh["layer2.weight"], fresh["layer2.r"],
                                     fresh["layer2.s"], fresh["layer2.b"])
        return EncoderStack(self.cfg, self.n_features, periodic, layer1, layer2)

    def copy(self) -> "EncoderStack":
        return self.replace_params(
            {k: v.copy() for k, v in self.named_arrays().items()})

    def trainable_parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())


def init_stack(n_features: int, cfg: AdapterConfig, seed: int) -> EncoderStack:
    """Fresh stack for inputs of width ``n_features``.

    The periodic embedding is dropped automatically for very wide inputs,
    where the expanded feature count would dominate memory.
    """
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    key = rng.derive_key(seed, 0xADA)
    periodic = None
    d_in = n_features
    if cfg.periodic and n_features <= PERIODIC_MAX_FEATURES:
        periodic = PeriodicEmbedding.init(n_features, cfg.n_frequencies,
                                          cfg.frequency_scale,
                                          rng.derive_key(key, 0))
        d_in = periodic.n_out
    layer1 = BatchEnsembleLinear.init(d_in, cfg.hidden, cfg.k_paths,
                                      rng.derive_key(key, 1))
    layer2 = BatchEnsembleLinear.init(cfg.hidden, cfg.out_width, cfg.k_paths,
                                      rng.derive_key(key, 2))
    return EncoderStack(cfg, n_features, periodic, layer1, layer2)


def encode(x, stack: EncoderStack, training: bool = False,
           seed: int = 0, *, paths: Optional[slice] = None) -> Tensor:
    """Latents for all K paths: (K, N, out_width).

    Any feature count is accepted, including widths beyond the backbone
    limit; dropout fires only when ``training`` is set and is keyed by
    (seed, layer id) through the counter RNG.  ``paths`` restricts the
    evaluation to a contiguous path slice; the dropout mask is drawn for
    the full stack and sliced, so chunked and whole-stack evaluation
    agree path by path.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.ndim != 2:
        raise T.ShapeError("encode", xt.shape, ("N", stack.n_features))
    if xt.shape[1] != stack.n_features:
        raise T.ShapeError("encode", xt.shape, (stack.n_features,),
                           detail="feature width differs from stack input")
    if stack.periodic is not None:
        xt = stack.periodic.forward(xt)
    layer1, layer2 = stack.layer1, stack.layer2
    lo, hi = 0, stack.k_paths
    if paths is not None:
        lo, hi, step = paths.indices(stack.k_paths)
        layer1 = _slice_paths(layer1, paths)
        layer2 = _slice_paths(layer2, paths)
    n = xt.shape[0]
    h = T.relu(layer1.forward_all(T.reshape(xt, (1, n, xt.shape[1]))))
    if training and stack.cfg.dropout > 0:
        rate = stack.cfg.dropout
        keep = rng.uniform(rng.derive_key(seed, 0xD20),
                           (stack.k_paths, n, stack.cfg.hidden)) >= rate
        mask = keep[lo:hi].astype(xt.dtype) / np.asarray(1.0 - rate,
                                                         dtype=xt.dtype)
        h = T.mul(h, Tensor(mask))
    return layer2.forward_all(h)


def _slice_paths(layer: BatchEnsembleLinear, sl: slice) -> BatchEnsembleLinear:
    return BatchEnsembleLinear(layer.weight, _slice_tensor(layer.r, sl),
                               _slice_tensor(layer.s, sl),
                               _slice_tensor(layer.b, sl))


def _slice_tensor(t: Tensor, sl: slice) -> Tensor:
    start, stop, step = sl.indices(t.shape[0])
    if step != 1:
        raise ValueError("path slices must be contiguous")
    return T.narrow(t, 0, start, stop - start)


__all__ = [
    "AdapterConfig",
    "BatchEnsembleLinear",
    "EncoderStack",
    "PERIODIC_MAX_FEATURES",
    "PeriodicEmbedding",
    "be_linear_forward",
    "encode",
    "init_stack",
]
