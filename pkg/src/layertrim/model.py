"""Causal decoder-only transformer with parallel attention/FFN blocks.

Each block applies one pre-LayerNorm, a fused input projection that emits
Q, K, V and both SwiGLU halves in a single matmul, per-head normalization
of queries and keys, and a fused output projection over the concatenated
attention and FFN branch outputs. Both branches read the same normalized
input and their fused projection is added back onto the residual stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-5
INIT_STD = 0.02


def default_d_ff(d_model: int) -> int:
    """8/3 * d_model rounded to the nearest multiple of 8."""
    return max(8, int(round(d_model * 8.0 / 3.0 / 8.0)) * 8)


@dataclass
class ModelConfig:
    d_model: int
    n_heads: int
    n_layers: int
    vocab_size: int
    context_len: int
    d_ff: int = 0  # 0 means "use default_d_ff(d_model)"
    tie_embeddings: bool = True

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = default_d_ff(self.d_model)

    def violations(self) -> list[str]:
        out = []
        for name in ("d_model", "n_heads", "n_layers", "vocab_size", "context_len", "d_ff"):
            if getattr(self, name) <= 0:
                out.append(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.n_heads > 0 and self.d_model % self.n_heads != 0:
            out.append(f"model.d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.context_len < 2:
            out.append(f"model.context_len must be >= 2, got {self.context_len}")
        return out

    def validate(self) -> "ModelConfig":
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class ParamCounts:
    total: int
    per_layer: int


def param_count(cfg: ModelConfig) -> ParamCounts:
    """Closed-form parameter total and the per-decoder-layer share.

    The per-layer count is what one truncation step removes.
    """
    d, f, hd = cfg.d_model, cfg.d_ff, cfg.head_dim
    fused_in = d * (3 * d + 2 * f) + (3 * d + 2 * f)
    fused_out = (d + f) * d + d
    per_layer = 2 * d + fused_in + 2 * hd + 2 * hd + fused_out
    total = cfg.vocab_size * d + cfg.context_len * d + cfg.n_layers * per_layer + 2 * d
    if not cfg.tie_embeddings:
        total += d * cfg.vocab_size
    counts = ParamCounts(total=total, per_layer=per_layer)
    return counts


def base_param_count(cfg: ModelConfig) -> int:
    """Parameters that survive any truncation (everything but the stack)."""
    pc = param_count(cfg)
    return pc.total - cfg.n_layers * pc.per_layer


class DecoderBlock:
    """One parallel attention + SwiGLU-FFN block with fused projections."""

    PARTS = (
        "pre_ln.gain", "pre_ln.bias",
        "fused_in.weight", "fused_in.bias",
        "q_ln.gain", "q_ln.bias",
        "k_ln.gain", "k_ln.bias",
        "fused_out.weight", "fused_out.bias",
    )

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None, dtype=np.float32):
        d, f, hd = cfg.d_model, cfg.d_ff, cfg.head_dim
        self.cfg = cfg
        fan_in = 3 * d + 2 * f
        if rng is None:
            w_in = np.zeros((d, fan_in), dtype=dtype)
            w_out = np.zeros((d + f, d), dtype=dtype)
        else:
            w_in = rng.normal(0.0, INIT_STD, (d, fan_in)).astype(dtype)
            w_out = rng.normal(0.0, INIT_STD, (d + f, d)).astype(dtype)
        self.params: dict[str, Tensor] = {
            "pre_ln.gain": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
            "pre_ln.bias": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
            "fused_in.weight": Tensor(w_in, requires_grad=True),
            "fused_in.bias": Tensor(np.zeros(fan_in, dtype=dtype), requires_grad=True),
            "q_ln.gain": Tensor(np.ones(hd, dtype=dtype), requires_grad=True),
            "q_ln.bias": Tensor(np.zeros(hd, dtype=dtype), requires_grad=True),
            "k_ln.gain": Tensor(np.ones(hd, dtype=dtype), requires_grad=True),
            "k_ln.bias": Tensor(np.zeros(hd, dtype=dtype), requires_grad=True),
            "fused_out.weight": Tensor(w_out, requires_grad=True),
            "fused_out.bias": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        }

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        b, t, d = x.shape
        h, hd, f = cfg.n_heads, cfg.head_dim, cfg.d_ff
        p = self.params

        normed = T.layer_norm(x, p["pre_ln.gain"], p["pre_ln.bias"], LN_EPS)
        flat = T.reshape(normed, (b * t, d))
        fused = T.affine(flat, p["fused_in.weight"], p["fused_in.bias"])

        q = T.slice_last(fused, 0, d)
        k = T.slice_last(fused, d, 2 * d)
        v = T.slice_last(fused, 2 * d, 3 * d)
        ff_in = T.slice_last(fused, 3 * d, 3 * d + 2 * f)

        def to_heads(z: Tensor) -> Tensor:
            return T.permute(T.reshape(z, (b, t, h, hd)), (0, 2, 1, 3))

        q = T.layer_norm(to_heads(q), p["q_ln.gain"], p["q_ln.bias"], LN_EPS)
        k = T.layer_norm(to_heads(k), p["k_ln.gain"], p["k_ln.bias"], LN_EPS)
        v = to_heads(v)

        # 1/sqrt(hd) applied to q (cheaper than scaling the T x T scores)
        scores = T.matmul(T.scale(q, 1.0 / np.sqrt(hd)), T.permute(k, (0, 1, 3, 2)))
        weights = T.softmax_causal(scores)
        attn = T.matmul(weights, v)
        attn = T.reshape(T.permute(attn, (0, 2, 1, 3)), (b * t, d))

        ff_out = T.swiglu(ff_in)
        merged = T.concat_last(attn, ff_out)
        update = T.affine(merged, p["fused_out.weight"], p["fused_out.bias"])
        return T.add(x, T.reshape(update, (b, t, d)))


class CausalLM:
    """Token + learned-position embeddings, a stack of DecoderBlocks, final
    LayerNorm, and a (by default tied) output projection to vocab logits."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32, init: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        d, v, ctx = cfg.d_model, cfg.vocab_size, cfg.context_len
        rng = np.random.default_rng(seed) if init else None
        if rng is None:
            tok = np.zeros((v, d), dtype=dtype)
            pos = np.zeros((ctx, d), dtype=dtype)
        else:
            tok = rng.normal(0.0, INIT_STD, (v, d)).astype(dtype)
            pos = rng.normal(0.0, INIT_STD, (ctx, d)).astype(dtype)
        self.tok_emb = Tensor(tok, requires_grad=True)
        self.pos_emb = Tensor(pos, requires_grad=True)
        self.layers = [DecoderBlock(cfg, rng, dtype) for _ in range(cfg.n_layers)]
        self.final_ln_gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.final_ln_bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        if cfg.tie_embeddings:
            self.head = None
        else:
            hw = np.zeros((d, v), dtype=dtype) if rng is None else rng.normal(0.0, INIT_STD, (d, v)).astype(dtype)
            self.head = Tensor(hw, requires_grad=True)

    # -- parameter bookkeeping ---------------------------------------------

    def named_parameters(self):
        yield "tok_emb", self.tok_emb
        yield "pos_emb", self.pos_emb
        for i, layer in enumerate(self.layers):
            for part in DecoderBlock.PARTS:
                yield f"layers.{i}.{part}", layer.params[part]
        yield "final_ln.gain", self.final_ln_gain
        yield "final_ln.bias", self.final_ln_bias
        if self.head is not None:
            yield "head.weight", self.head

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_layer_trainable(self, index: int, trainable: bool) -> None:
        for p in self.layers[index].params.values():
            p.requires_grad = trainable

    # -- forward -------------------------------------------------------------

    def forward_logits(self, tokens: np.ndarray, live: list[int] | None = None) -> Tensor:
        """Next-token logits [B, T, vocab]; logits at position i depend only
        on tokens <= i. ``live`` restricts which stack layers execute (used
        by staggered layer dropping); None runs all of them."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise T.ShapeError(f"tokens must be [B, T], got {tokens.shape}")
        b, t = tokens.shape
        cfg = self.cfg
        if t > cfg.context_len:
            raise T.ShapeError(f"sequence length {t} exceeds context_len {cfg.context_len}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise IndexError(f"token ids outside [0, {cfg.vocab_size})")

        positions = np.broadcast_to(np.arange(t), (b, t))
        h = T.add(T.embedding(self.tok_emb, tokens), T.embedding(self.pos_emb, positions))
        indices = range(len(self.layers)) if live is None else live
        for i in indices:
            h = self.layers[i].forward(h)
        h = T.layer_norm(h, self.final_ln_gain, self.final_ln_bias, LN_EPS)
        flat = T.reshape(h, (b * t, cfg.d_model))
        if self.head is None:
            logits = T.matmul(flat, T.transpose(self.tok_emb))
        else:
            logits = T.matmul(flat, self.head)
        return T.reshape(logits, (b, t, cfg.vocab_size))

    def lm_loss(self, batch: np.ndarray, live: list[int] | None = None, ignore_index: int = -1) -> Tensor:
        """Mean next-token cross entropy on a teacher-forced [B, T+1] batch."""
        batch = np.asarray(batch)
        logits = self.forward_logits(batch[:, :-1], live=live)
        b, t, v = logits.shape
        return T.cross_entropy_lm(T.reshape(logits, (b * t, v)), batch[:, 1:].reshape(-1), ignore_index)
