"""The in-context transformer: masked forward pass and pre-training.

Support rows and query rows are embedded into one token sequence and
processed by a pre-norm transformer in a single pass.  The attention
mask restricts support tokens to other support tokens, and each query
token to the support block plus itself, so queries never leak
information into each other.  Rows of a table are unordered, so there
are no positional encodings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from . import rng
from . import tensor as T
from .prior import Episode, PriorConfig, sample_episode
from .tensor import Tensor

log = logging.getLogger(__name__)

N_HEAD_CLASSES = 10  # the classification head is fixed at 10 logits
_MASKED = float("-inf")


class DimensionalityError(ValueError):
    """Input has more features than the padded width supports."""


@dataclass(frozen=True)
class BackboneConfig:
    d_max: int = 100
    d_token: int = 64
    n_layers: int = 3
    n_heads: int = 4
    c_max: int = N_HEAD_CLASSES
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_token % self.n_heads != 0:
            raise ValueError(
                f"d_token={self.d_token} not divisible by n_heads={self.n_heads}")
        if self.c_max != N_HEAD_CLASSES:
            raise ValueError(f"the output head is fixed at {N_HEAD_CLASSES} classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_token // self.n_heads

    @property
    def d_hidden(self) -> int:
        return 4 * self.d_token


class BackboneWeights:
    """Transformer parameters as a flat name -> Tensor map."""

    def __init__(self, cfg: BackboneConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: BackboneConfig, seed: int) -> "BackboneWeights":
        """Fan-in-scaled uniform init; the head starts at zero so the
        initial prediction is exactly uniform."""
        dtype = T.get_default_dtype()
        key = rng.derive_key(seed, 0xBAC)
        idx = [0]

        def lin(n_in: int, n_out: int) -> np.ndarray:
            idx[0] += 1
            bound = 1.0 / np.sqrt(n_in)
            return rng.uniform(rng.derive_key(key, idx[0]),
                               (n_in, n_out), -bound, bound).astype(dtype)

        d, h = cfg.d_token, cfg.d_hidden
        p: dict[str, np.ndarray] = {
            "w_x": lin(cfg.d_max, d),
            "w_y": rng.normal(rng.derive_key(key, 0xE), (1, d),
                              std=1.0 / np.sqrt(d)).astype(dtype),
        }
        for i in range(cfg.n_layers):
            pre = f"layers.{i}."
            for name, n_in, n_out in (("attn.wq", d, d), ("attn.wk", d, d),
                                      ("attn.wv", d, d), ("attn.wo", d, d),
                                      ("mlp.w1", d, h), ("mlp.w2", h, d)):
                p[pre + name] = lin(n_in, n_out)
                p[pre + name + ".bias"] = np.zeros(n_out, dtype=dtype)
            for ln in ("ln1", "ln2"):
                p[pre + ln + ".gain"] = np.ones(d, dtype=dtype)
                p[pre + ln + ".bias"] = np.zeros(d, dtype=dtype)
        p["ln_f.gain"] = np.ones(d, dtype=dtype)
        p["ln_f.bias"] = np.zeros(d, dtype=dtype)
        p["head.w"] = np.zeros((d, cfg.c_max), dtype=dtype)
        p["head.b"] = np.zeros(cfg.c_max, dtype=dtype)
        return cls(cfg, {k: Tensor(v, name=k) for k, v in p.items()})

    def set_trainable(self, flag: bool) -> None:
        for t in self.params.values():
            t.trainable = flag

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def replace_params(self, arrays: dict[str, np.ndarray]) -> "BackboneWeights":
        params = {
            k: Tensor(arrays.get(k, t.data), trainable=t.trainable, name=k)
            for k, t in self.params.items()
        }
        return BackboneWeights(self.cfg, params)

    def copy(self) -> "BackboneWeights":
        return self.replace_params({k: v.copy() for k, v in
                                    self.named_arrays().items()})


def zero_pad(x: np.ndarray, d_max: int) -> np.ndarray:
    """Extend feature vectors (or a row matrix) with zeros to width d_max."""
    x = np.asarray(x)
    d = x.shape[-1]
    if d > d_max:
        raise DimensionalityError(
            f"{d} features exceed the padded width {d_max}; route the input "
            "through the encoder stack instead of zero-padding")
    if d == d_max:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, d_max - d)]
    return np.pad(x, pad)


def pad_episode(episode: Episode, d_max: int) -> Episode:
    return Episode(zero_pad(episode.support_x, d_max), episode.support_y,
                   zero_pad(episode.query_x, d_max), episode.query_y)


def attention_mask(n_support: int, n_query: int) -> np.ndarray:
    """Boolean allow-matrix over the (support + query) token sequence.

    Support rows see only support columns; query row i sees the support
    columns plus column i, never another query.
    """
    t = n_support + n_query
    mask = np.zeros((t, t), dtype=bool)
    mask[:, :n_support] = True
    q = np.arange(n_support, t)
    mask[q, q] = True
    return mask


def embed_tokens(episode: Episode, weights: BackboneWeights) -> np.ndarray:
    """Token matrix: support rows get x @ W_x + y * w_y, queries x @ W_x.

    The label enters as a raw scalar multiplying the shared label
    embedding row.
    """
    tokens = _embed(Tensor(episode.support_x), episode.support_y,
                    Tensor(episode.query_x), weights)
    return tokens.data


def _embed(support_x: Tensor, support_y: np.ndarray, query_x: Tensor,
           weights: BackboneWeights) -> Tensor:
    w_x, w_y = weights.params["w_x"], weights.params["w_y"]
    labels = np.asarray(support_y, dtype=w_y.dtype)[..., None]
    sup = T.add(T.matmul(support_x, w_x), T.mul(Tensor(labels), w_y))
    qry = T.matmul(query_x, w_x)
    return T.concat([sup, qry], axis=-2)


def _transformer_logits(support_x: Tensor, support_y: np.ndarray,
                        query_x: Tensor, weights: BackboneWeights, *,
                        training: bool = False, drop_key: int = 0) -> Tensor:
    """Batched core: feature widths must equal d_max already.

    Accepts (N, d_max) or (B, N, d_max) inputs; support_y is (N,) or
    (B, N).  Returns query logits (..., N_q, c_max).
    """
    cfg = weights.cfg
    n_s = support_x.shape[-2]
    n_q = query_x.shape[-2]
    if n_s < 1:
        raise ValueError("empty support set: in-context prediction needs "
                         "at least one labeled row")
    if support_x.shape[-1] != cfg.d_max or query_x.shape[-1] != cfg.d_max:
        raise T.ShapeError("pfn_forward", support_x.shape, (cfg.d_max,),
                           detail="inputs must be padded or encoded to d_max")

    h = _embed(support_x, support_y, query_x, weights)
    t_total = n_s + n_q
    mask = attention_mask(n_s, n_q)
    scale = 1.0 / np.sqrt(cfg.d_head)
    p = weights.params
    batched = h.ndim == 3
    lead = h.shape[:-2]

    def heads(x: Tensor) -> Tensor:
        # (..., T, D) -> (..., H, T, d_head)
        x = T.reshape(x, lead + (t_total, cfg.n_heads, cfg.d_head))
        return T.transpose(x, (1, 0, 2) if not batched else (0, 2, 1, 3))

    def merge(x: Tensor) -> Tensor:
        x = T.transpose(x, (1, 0, 2) if not batched else (0, 2, 1, 3))
        return T.reshape(x, lead + (t_total, cfg.d_token))

    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        x = T.layer_norm(h, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
        q = heads(T.add(T.matmul(x, p[pre + "attn.wq"]), p[pre + "attn.wq.bias"]))
        k = heads(T.add(T.matmul(x, p[pre + "attn.wk"]), p[pre + "attn.wk.bias"]))
        v = heads(T.add(T.matmul(x, p[pre + "attn.wv"]), p[pre + "attn.wv.bias"]))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1) if not batched
                                               else (0, 1, 3, 2))), scale)
        scores = T.mask_fill(scores, mask, _MASKED)
        attn = T.softmax(scores, axis=-1)
        if training and cfg.dropout > 0:
            attn = T.dropout(attn, cfg.dropout,
                             rng.derive_key(drop_key, i, 0))
        ctx = merge(T.matmul(attn, v))
        ctx = T.add(T.matmul(ctx, p[pre + "attn.wo"]), p[pre + "attn.wo.bias"])
        if training and cfg.dropout > 0:
            ctx = T.dropout(ctx, cfg.dropout, rng.derive_key(drop_key, i, 1))
        h = T.add(h, ctx)

        x = T.layer_norm(h, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
        x = T.gelu(T.add(T.matmul(x, p[pre + "mlp.w1"]), p[pre + "mlp.w1.bias"]))
        if training and cfg.dropout > 0:
            x = T.dropout(x, cfg.dropout, rng.derive_key(drop_key, i, 2))
        x = T.add(T.matmul(x, p[pre + "mlp.w2"]), p[pre + "mlp.w2.bias"])
        h = T.add(h, x)

    h = T.layer_norm(h, p["ln_f.gain"], p["ln_f.bias"])
    h_q = T.narrow(h, -2, n_s, n_q)
    return T.add(T.matmul(h_q, p["head.w"]), p["head.b"])


def pfn_forward(episode: Episode, weights: BackboneWeights) -> np.ndarray:
    """Logits (N_q, c_max) for one episode already at width d_max."""
    out = _transformer_logits(Tensor(episode.support_x), episode.support_y,
                              Tensor(episode.query_x), weights)
    return out.data


def predictive_probs(logits: Union[np.ndarray, Tensor],
                     n_classes: int) -> np.ndarray:
    """Posterior over the first ``n_classes`` entries.

    Logits of absent classes are masked to -inf before the softmax, so
    their probability is exactly zero and the first C entries sum to 1.
    """
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if n_classes > arr.shape[-1]:
        raise ValueError(
            f"{n_classes} classes exceed the {arr.shape[-1]}-way head; "
            "use the error-correcting-code path")
    masked = arr.copy()
    masked[..., n_classes:] = _MASKED
    masked -= masked.max(axis=-1, keepdims=True)
    e = np.exp(masked)
    probs = e / e.sum(axis=-1, keepdims=True)
    return probs[..., :n_classes]


def query_nll(logits: Tensor, labels: np.ndarray, n_classes: int) -> Tensor:
    """Mean cross-entropy of query labels under the masked softmax."""
    c_max = logits.shape[-1]
    class_mask = np.zeros(c_max, dtype=bool)
    class_mask[:n_classes] = True
    masked = T.mask_fill(logits, class_mask, _MASKED)
    logp = T.log_softmax(masked, axis=-1)
    idx = np.broadcast_to(np.asarray(labels, dtype=np.int64),
                          logp.shape[:-1])
    picked = T.take_along_last(logp, idx)
    return T.neg(T.tmean(picked))


@dataclass
class PretrainResult:
    weights: BackboneWeights
    history: list[dict]


def pretrain_backbone(cfg: BackboneConfig, prior: PriorConfig, steps: int,
                      seed: int, *, batch_episodes: int = 8,
                      learning_rate: float = 1e-3,
                      eval_every: int = 50) -> PretrainResult:
    """Minimize mean query cross-entropy over sampled prior episodes.

    steps=0 returns the initialized weights unchanged.  Aborts with a
    diagnostic if the loss turns non-finite.
    """
    from .optim import OptimizerConfig, OptimizerState, optimizer_step

    if prior.d_range[1] > cfg.d_max:
        raise ValueError(
            f"prior d_hi={prior.d_range[1]} exceeds backbone d_max={cfg.d_max}")
    weights = BackboneWeights.init(cfg, seed)
    history: list[dict] = []
    if steps == 0:
        return PretrainResult(weights, history)

    weights.set_trainable(True)
    opt_cfg = OptimizerConfig(learning_rate=learning_rate, weight_decay=0.0)
    state = OptimizerState.for_params(weights.named_arrays())
    episode_key = rng.derive_key(seed, 0xEA)

    for step in range(steps):
        batch = _episode_batch(prior, rng.derive_key(episode_key, step),
                               batch_episodes)
        with T.GradTape() as tape:
            loss = _batch_loss(batch, weights, training=True,
                               drop_key=rng.derive_key(seed, 0xD0, step))
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"pre-training diverged at step {step}: loss={loss.item()}")
            grad_map = tape.backward(loss)
        history.append({"step": step, "loss": float(loss.data)})
        if step % eval_every == 0 or step == steps - 1:
            log.info("pretrain step %d loss %.4f", step, float(loss.data))
        name_of = {id(t): n for n, t in weights.params.items()}
        grads = {name_of[id(t)]: g for t, g in grad_map.items()
                 if id(t) in name_of}
        arrays, state = optimizer_step(state, weights.named_arrays(), grads,
                                       opt_cfg)
        weights = weights.replace_params(arrays)
    weights.set_trainable(False)
    return PretrainResult(weights, history)


def _batch_loss(batch: list[Episode], weights: BackboneWeights, *,
                training: bool, drop_key: int) -> Tensor:
    d_max = weights.cfg.d_max
    padded = [pad_episode(e, d_max) for e in batch]
    sx = Tensor(np.stack([e.support_x for e in padded]))
    sy = np.stack([e.support_y for e in padded])
    qx = Tensor(np.stack([e.query_x for e in padded]))
    qy = np.stack([e.query_y for e in padded])
    n_classes = int(max(e.n_classes for e in batch))
    logits = _transformer_logits(sx, sy, qx, weights, training=training,
                                 drop_key=drop_key)
    return query_nll(logits, qy, n_classes)


def _episode_batch(prior: PriorConfig, key: int, count: int) -> list[Episode]:
    """Episodes sharing one sampled (d, C, N_s, N_q) so they stack."""
    probe = sample_episode(prior, rng.derive_key(key, 0))
    pinned = PriorConfig(
        d_range=(probe.n_features, probe.n_features),
        c_range=(probe.n_classes, probe.n_classes),
        n_support_range=(probe.n_support, probe.n_support),
        n_query_range=(probe.n_query, probe.n_query),
        gaussian_weight=prior.gaussian_weight, mlp_weight=prior.mlp_weight,
        noise=prior.noise, mean_scale=prior.mean_scale)
    episodes = [probe]
    for i in range(1, count):
        episodes.append(sample_episode(pinned, rng.derive_key(key, i)))
    return episodes


def heldout_accuracy(weights: BackboneWeights, prior: PriorConfig, seed: int,
                     n_episodes: int = 32) -> float:
    """Mean query accuracy over freshly sampled episodes."""
    correct = 0
    total = 0
    for i in range(n_episodes):
        ep = sample_episode(prior, rng.derive_key(seed, 0x7E57, i))
        padded = pad_episode(ep, weights.cfg.d_max)
        probs = predictive_probs(pfn_forward(padded, weights), ep.n_classes)
        correct += int((probs.argmax(axis=-1) == ep.query_y).sum())
        total += ep.n_query
    return correct / total


__all__ = [
    "BackboneConfig",
    "BackboneWeights",
    "DimensionalityError",
    "N_HEAD_CLASSES",
    "PretrainResult",
    "attention_mask",
    "embed_tokens",
    "heldout_accuracy",
    "pad_episode",
    "pfn_forward",
    "predictive_probs",
    "pretrain_backbone",
    "query_nll",
    "zero_pad",
]
