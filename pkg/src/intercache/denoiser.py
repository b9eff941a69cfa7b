"""A small, training-free video DiT over a token grid, plus its MAC cost model.

Latents are ``(L, d)`` arrays with tokens flattened in (frame, row, col)
order.  Every step runs ``blocks`` transformer blocks of self-attention,
prompt cross-attention and a pointwise FFN, then moves the latent a fraction
``eta_t`` toward the block-stack output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_finite, check_tokens
from .config import ModelConfig

LN_EPS = 1e-6
NEUTRAL = (1.0, 1.0)


@dataclass(frozen=True)
class BlockWeights:
    sa_q: np.ndarray
    sa_k: np.ndarray
    sa_v: np.ndarray
    sa_o: np.ndarray
    ca_q: np.ndarray
    ca_k: np.ndarray
    ca_o: np.ndarray
    ffn_in: np.ndarray
    ffn_in_bias: np.ndarray
    ffn_out: np.ndarray
    ffn_out_bias: np.ndarray


@dataclass(frozen=True)
class DiTWeights:
    blocks: tuple[BlockWeights, ...]


@dataclass(frozen=True)
class PromptEmbedding:
    """Model-side view of a prompt.

    ``keys`` and ``paints`` are ``(L', d)``; ``region`` is an ``(L, L')``
    boolean matrix marking the latent cells each token is bound to.
    """
    keys: np.ndarray
    paints: np.ndarray
    diff_indices: tuple[int, ...]
    region: np.ndarray

    def __post_init__(self):
        if self.keys.shape[0] < 1:
            raise ValueError("prompt must hold at least one token")
        if any(i < 0 or i >= self.keys.shape[0] for i in self.diff_indices):
            raise ValueError("diff_indices out of range")

    @property
    def length(self) -> int:
        return self.keys.shape[0]

    def with_diff(self, diff_indices) -> "PromptEmbedding":
        return PromptEmbedding(self.keys, self.paints, tuple(sorted(diff_indices)), self.region)

    def region_of_token(self, j: int) -> set[int]:
        return set(np.flatnonzero(self.region[:, j]).tolist())


def init_weights(config: ModelConfig) -> DiTWeights:
    rng = np.random.default_rng(config.weight_seed)
    d, hidden = config.d, config.ffn_mult * config.d
    dtype = np.dtype(config.dtype)

    def gauss(fan_in, fan_out):
        return (rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)).astype(dtype)

    blocks = []
    for _ in range(config.blocks):
        blocks.append(BlockWeights(
            sa_q=gauss(d, d), sa_k=gauss(d, d), sa_v=gauss(d, d), sa_o=gauss(d, d),
            ca_q=gauss(d, d), ca_k=gauss(d, d),
            # cross-attention values are paint vectors; keep them in paint space
            ca_o=np.eye(d, dtype=dtype),
            ffn_in=gauss(d, hidden), ffn_in_bias=np.zeros(hidden, dtype=dtype),
            ffn_out=gauss(hidden, d), ffn_out_bias=np.zeros(d, dtype=dtype),
        ))
    return DiTWeights(tuple(blocks))


def init_noise(config: ModelConfig) -> np.ndarray:
    rng = np.random.default_rng(config.noise_seed)
    noise = rng.standard_normal((config.n_tokens, config.d)) * config.noise_std
    return noise.astype(config.dtype)


def layer_norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def gelu_tanh(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x ** 3)))


def self_attention(x_active, weights: BlockWeights, heads: int) -> np.ndarray:
    """Multi-head attention among exactly the given tokens; returns the residual delta."""
    x = check_tokens(x_active, weights.sa_q.shape[0])
    n, d = x.shape
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    q = x @ weights.sa_q
    k = x @ weights.sa_k
    v = x @ weights.sa_v
    out = np.empty_like(v)
    # one head at a time keeps the n x n logits buffer bounded
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        probs = softmax((q[:, sl] * scale) @ k[:, sl].T)
        out[:, sl] = probs @ v[:, sl]
    return out @ weights.sa_o


def cross_attention_weights(x_active, prompt: PromptEmbedding, gamma_k: float,
                            config: ModelConfig, weights: BlockWeights,
                            cells: np.ndarray | None = None) -> np.ndarray:
    """Per-head attention rows ``(heads, n, L')`` over prompt tokens.

    Differential-token keys are scaled by ``gamma_k``.  The region prior is
    treated as part of the key, so it is scaled along with it.
    """
    x = check_tokens(x_active, config.d)
    check_finite(prompt.keys, "prompt embedding")
    n = x.shape[0]
    region = prompt.region if cells is None else prompt.region[cells]
    if region.shape[0] != n:
        raise ValueError("region rows do not match the active tokens")
    dh = config.head_dim
    q = x @ weights.ca_q
    k = prompt.keys.astype(x.dtype, copy=False) @ weights.ca_k
    key_scale = None
    if prompt.diff_indices and gamma_k != 1.0:
        key_scale = np.ones(prompt.length, dtype=x.dtype)
        key_scale[list(prompt.diff_indices)] = gamma_k
    bias = config.region_bias * region.astype(x.dtype)
    rows = np.empty((config.heads, n, prompt.length), dtype=x.dtype)
    for h in range(config.heads):
        sl = slice(h * dh, (h + 1) * dh)
        logits = (q[:, sl] @ k[:, sl].T) / math.sqrt(dh)
        if config.region_bias:
            logits += bias
        if key_scale is not None:
            logits *= key_scale
        rows[h] = softmax(logits)
    return rows


def cross_attention(x_active, prompt: PromptEmbedding, gamma_k: float, gamma_o: float,
                    config: ModelConfig, weights: BlockWeights,
                    cells: np.ndarray | None = None) -> np.ndarray:
    """Prompt cross-attention residual delta, already multiplied by ``gamma_o``.

    ``cells`` gives the latent indices of the active tokens when they are a
    gathered subset; by default the tokens are the whole latent.
    """
    rows = cross_attention_weights(x_active, prompt, gamma_k, config, weights, cells)
    dh = config.head_dim
    paints = prompt.paints.astype(rows.dtype, copy=False)
    out = np.empty((rows.shape[1], config.d), dtype=rows.dtype)
    for h in range(config.heads):
        sl = slice(h * dh, (h + 1) * dh)
        out[:, sl] = rows[h] @ paints[:, sl]
    out = out @ weights.ca_o
    if gamma_o != 1.0:
        out *= gamma_o
    return out


def ffn(x_active, weights: BlockWeights) -> np.ndarray:
    x = check_tokens(x_active, weights.ffn_in.shape[0])
    hidden = gelu_tanh(x @ weights.ffn_in + weights.ffn_in_bias)
    return hidden @ weights.ffn_out + weights.ffn_out_bias


def block_stack(x: np.ndarray, prompt: PromptEmbedding, gamma_k: float, gamma_o: float,
                config: ModelConfig, weights: DiTWeights,
                cells: np.ndarray | None = None) -> np.ndarray:
    """Run every transformer block over ``x`` (full latent or a gathered subset)."""
    g = config.residual_gain
    h = x
    for blk in weights.blocks:
        h = h + g * self_attention(layer_norm(h), blk, config.heads)
        h = h + cross_attention(layer_norm(h), prompt, gamma_k, gamma_o, config, blk, cells)
        h = h + g * ffn(layer_norm(h), blk)
    return h


def denoise_step_full(x, prompt: PromptEmbedding, t: int, gamma_k: float, gamma_o: float,
                      config: ModelConfig, weights: DiTWeights) -> np.ndarray:
    if not 0 <= t < config.steps:
        raise ValueError(f"step index {t} outside [0, {config.steps})")
    x = check_finite(np.asarray(x))
    h = block_stack(x, prompt, gamma_k, gamma_o, config, weights)
    return x + config.eta(t) * (h - x)


def full_denoise(prompt: PromptEmbedding, config: ModelConfig, weights: DiTWeights,
                 factors: Sequence[tuple[float, float]] | None = None) -> np.ndarray:
    """Denoise from the shared initial noise; returns the ``(N+1, L, d)`` trajectory.

    ``factors`` optionally gives a ``(gamma_k, gamma_o)`` pair per step.
    """
    traj = np.empty((config.steps + 1, config.n_tokens, config.d), dtype=config.dtype)
    traj[0] = init_noise(config)
    for t in range(config.steps):
        gk, go = factors[t] if factors is not None else NEUTRAL
        traj[t + 1] = denoise_step_full(traj[t], prompt, t, gk, go, config, weights)
    return traj


MAC_KINDS = ("self_attn", "cross_attn", "ffn", "step", "full_run")


def self_attn_quadratic_macs(n: int, d: int) -> int:
    """The n^2 part of self-attention: logits plus the value mix."""
    return 2 * n * n * d


def mac_count(kind: str, n, prompt_len: int, config: ModelConfig) -> int:
    """Exact multiply-accumulate count for one sublayer, one step, or a run.

    For ``full_run``, ``n`` is the sequence of active-token counts per step.
    """
    d = config.d
    if kind == "full_run":
        return sum(mac_count("step", n_t, prompt_len, config) for n_t in n)
    if kind not in MAC_KINDS:
        raise ValueError(f"unknown MAC kind {kind!r}")
    n = int(n)
    if n < 0:
        raise ValueError("active token count must be >= 0")
    if n == 0:
        return 0
    if kind == "self_attn":
        return 4 * n * d * d + self_attn_quadratic_macs(n, d)
    if kind == "cross_attn":
        return 2 * n * d * d + 2 * prompt_len * d * d + 2 * n * prompt_len * d
    if kind == "ffn":
        return 2 * n * d * (config.ffn_mult * d)
    per_block = sum(mac_count(k, n, prompt_len, config) for k in ("self_attn", "cross_attn", "ffn"))
    return config.blocks * per_block
