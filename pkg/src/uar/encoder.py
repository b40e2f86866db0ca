"""Temporal transformer encoder with sliding-window attention.

The same architecture serves both levels of the pipeline: a frame encoder
that aggregates a clip of frame features into one vector through a cls
token, and a clip encoder that either aggregates a clip-vector sequence
(cls) or updates it in place (no cls, one output row per clip). Blocks are
pre-norm: x + attn(ln(x)), then x + ffn(ln(x)), with a final layer norm
after the stack.

Attention is restricted to a window of w/2 positions in the past and w/2 in
the future; cls tokens attend to and are attended by everything. The mask
produces exact zeros in the attention weights, so positions outside the
window have exactly zero gradient influence. A module-level counter records
how many (query, key) pairs each call leaves visible, which is how the
linear-vs-quadratic cost behavior is asserted without a banded kernel.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError


@dataclass
class EncoderConfig:
    model_dim: int = 64
    depth: int = 3
    heads: int = 4
    window: int = 32
    ffn_dim: int = 0  # 0 means 4 * model_dim
    max_seq_len: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim < 1 or self.depth < 1 or self.max_seq_len < 1:
            raise ParameterError("model_dim, depth and max_seq_len must be positive")
        if self.window < 2 or self.window % 2 != 0:
            raise ParameterError(f"window must be even and >= 2, got {self.window}")
        if self.heads < 1 or self.model_dim % self.heads != 0:
            raise ParameterError(
                f"heads must divide model_dim, got {self.heads} vs {self.model_dim}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def ffn(self):
        return self.ffn_dim if self.ffn_dim else 4 * self.model_dim


# -- windowed attention ----------------------------------------------------

ATTENTION_STATS = {"calls": 0, "visible_pairs": 0}


def reset_attention_stats():
    ATTENTION_STATS["calls"] = 0
    ATTENTION_STATS["visible_pairs"] = 0


@functools.lru_cache(maxsize=64)
def _window_mask(n, window, n_global):
    idx = np.arange(n)
    mask = np.abs(idx[:, None] - idx[None, :]) <= window // 2
    if n_global:
        mask[:n_global, :] = True
        mask[:, :n_global] = True
    mask.setflags(write=False)
    return mask


def window_mask(n, window, n_global=0):
    """Boolean (n, n) visibility mask: |i - j| <= window/2, with the first
    n_global rows/columns fully visible."""
    if n < 1:
        raise ShapeError("mask needs at least one position")
    return _window_mask(int(n), int(window), int(n_global))


def sliding_window_attention(x, wq, bq, wk, bk, wv, bv, wo, bo,
                             heads, window, n_global=0, dropout_rate=0.0, rng=None):
    """Multi-head self-attention over x (n, d) under the window mask."""
    n, d = x.shape
    if d % heads != 0:
        raise ShapeError(f"heads ({heads}) must divide model dim ({d})")
    head_dim = d // heads
    mask = window_mask(n, window, n_global)
    ATTENTION_STATS["calls"] += 1
    ATTENTION_STATS["visible_pairs"] += int(mask.sum())

    q = ad.add(ad.matmul(x, wq), bq)
    k = ad.add(ad.matmul(x, wk), bk)
    v = ad.add(ad.matmul(x, wv), bv)
    outs = []
    for h in range(heads):
        cols = np.s_[:, h * head_dim:(h + 1) * head_dim]
        qh, kh, vh = ad.slice_(q, cols), ad.slice_(k, cols), ad.slice_(v, cols)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(head_dim))
        att = ad.softmax(scores, axis=-1, mask=mask)
        if dropout_rate > 0.0:
            att = ad.dropout(att, dropout_rate, rng)
        outs.append(ad.matmul(att, vh))
    merged = outs[0] if heads == 1 else ad.concat(outs, axis=1)
    return ad.add(ad.matmul(merged, wo), bo)


# -- parameters ------------------------------------------------------------


def sinusoid_table(rows, dim):
    """Interleaved sin/cos position table, the classic fixed encoding."""
    pos = np.arange(rows, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_encoder_params(cfg, rng, prefix="enc"):
    """Fresh parameter dict: N(0, 0.02) projections, zero biases, unit
    layer-norm gains. The positional table stays a trainable parameter but
    starts from sinusoids rather than noise: with a random table the network
    first has to discover which rows are neighbors, which costs far more
    steps than small training budgets allow. Row 0 is reserved for cls."""
    d, f = cfg.model_dim, cfg.ffn
    params = {}

    def normal(name, shape, std=0.02):
        params[f"{prefix}.{name}"] = ad.Tensor(rng.normal(0.0, std, shape), requires_grad=True)

    def fill(name, shape, value):
        params[f"{prefix}.{name}"] = ad.Tensor(np.full(shape, value), requires_grad=True)

    normal("cls", (1, d))
    params[f"{prefix}.pos"] = ad.Tensor(
        sinusoid_table(cfg.max_seq_len + 1, d), requires_grad=True)
    for i in range(cfg.depth):
        b = f"blocks.{i}"
        fill(f"{b}.ln1.g", (d,), 1.0)
        fill(f"{b}.ln1.b", (d,), 0.0)
        for proj in ("wq", "wk", "wv", "wo"):
            normal(f"{b}.attn.{proj}", (d, d))
        for bias in ("bq", "bk", "bv", "bo"):
            fill(f"{b}.attn.{bias}", (d,), 0.0)
        fill(f"{b}.ln2.g", (d,), 1.0)
        fill(f"{b}.ln2.b", (d,), 0.0)
        normal(f"{b}.ffn.w1", (d, f))
        fill(f"{b}.ffn.b1", (f,), 0.0)
        normal(f"{b}.ffn.w2", (f, d))
        fill(f"{b}.ffn.b2", (d,), 0.0)
    fill("lnf.g", (d,), 1.0)
    fill("lnf.b", (d,), 0.0)
    return params


def param_count(cfg):
    """Total parameter count, computable without instantiating anything."""
    d, f = cfg.model_dim, cfg.ffn
    per_block = 2 * d + 4 * d * d + 4 * d + 2 * d + d * f + f + f * d + d
    return d + (cfg.max_seq_len + 1) * d + cfg.depth * per_block + 2 * d


class TemporalEncoder:
    """One encoder level. mode "aggregate" prepends a cls token and returns
    its final embedding (1, d); mode "update" returns one row per input
    position (n, d). Both share the positional rows 1..n, so the two modes
    differ only in cls usage."""

    def __init__(self, cfg, rng=None, params=None, name="enc"):
        self.cfg = cfg
        self.name = name
        if params is None:
            if rng is None:
                raise ParameterError("need an rng (or prebuilt params)")
            params = init_encoder_params(cfg, rng, name)
        self.params = params

    def _p(self, suffix):
        return self.params[f"{self.name}.{suffix}"]

    def encode(self, x, mode="aggregate", training=False, rng=None, return_sequence=False):
        if mode not in ("aggregate", "update"):
            raise ParameterError(f"unknown mode {mode!r}")
        n, d = x.shape
        if d != self.cfg.model_dim:
            raise ShapeError(f"expected feature dim {self.cfg.model_dim}, got {d}")
        if n < 1:
            raise ShapeError("need at least one input position")
        if n > self.cfg.max_seq_len:
            raise ShapeError(f"sequence of {n} exceeds max_seq_len={self.cfg.max_seq_len}")

        pos = self._p("pos")
        if mode == "aggregate":
            h = ad.add(ad.concat([self._p("cls"), x], axis=0),
                       ad.slice_(pos, np.s_[0:n + 1, :]))
            n_global = 1
        else:
            h = ad.add(x, ad.slice_(pos, np.s_[1:n + 1, :]))
            n_global = 0

        rate = self.cfg.dropout if training else 0.0
        if rate > 0.0 and rng is None:
            raise ParameterError("training-mode dropout needs an rng")
        for i in range(self.cfg.depth):
            h = self._block(i, h, n_global, rate, rng)
        h = ad.layer_norm(h, self._p("lnf.g"), self._p("lnf.b"))
        if mode == "aggregate" and not return_sequence:
            return ad.slice_(h, np.s_[0:1, :])
        return h

    def _block(self, i, h, n_global, rate, rng):
        b = f"blocks.{i}"
        a = ad.layer_norm(h, self._p(f"{b}.ln1.g"), self._p(f"{b}.ln1.b"))
        att = sliding_window_attention(
            a,
            self._p(f"{b}.attn.wq"), self._p(f"{b}.attn.bq"),
            self._p(f"{b}.attn.wk"), self._p(f"{b}.attn.bk"),
            self._p(f"{b}.attn.wv"), self._p(f"{b}.attn.bv"),
            self._p(f"{b}.attn.wo"), self._p(f"{b}.attn.bo"),
            heads=self.cfg.heads, window=self.cfg.window,
            n_global=n_global, dropout_rate=rate, rng=rng,
        )
        h = ad.add(h, att)
        f = ad.layer_norm(h, self._p(f"{b}.ln2.g"), self._p(f"{b}.ln2.b"))
        f = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(f, self._p(f"{b}.ffn.w1")),
                                            self._p(f"{b}.ffn.b1"))),
                             self._p(f"{b}.ffn.w2")),
                   self._p(f"{b}.ffn.b2"))
        return ad.add(h, f)
