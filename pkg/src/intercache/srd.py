"""Selective region denoising: hierarchical masks, gathered block computation, latent fusion.

Masks are boolean arrays of shape ``(frames, rows, cols)``.  Only tokens in
the visible mask are fed through the transformer; only tokens in the edit
mask keep their recomputed values, everything else is copied from the cached
source trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import check_finite, check_mask
from .config import ModelConfig
from .denoiser import DiTWeights, PromptEmbedding, block_stack, mac_count
from .world import region_oracle


@dataclass(frozen=True)
class MaskSet:
    base: np.ndarray
    edit: np.ndarray
    see: np.ndarray
    r: int
    r_prime: int

    @property
    def gather(self) -> "GatherMap":
        return GatherMap.from_mask(self.see)


@dataclass(frozen=True)
class GatherMap:
    indices: np.ndarray   # strictly increasing flat latent indices where see is set
    inverse: np.ndarray   # flat index -> position in ``indices``, or -1

    @classmethod
    def from_mask(cls, see: np.ndarray) -> "GatherMap":
        flat = np.asarray(see, dtype=bool).reshape(-1)
        indices = np.flatnonzero(flat)
        inverse = np.full(flat.size, -1, dtype=np.int64)
        inverse[indices] = np.arange(indices.size)
        return cls(indices, inverse)

    def __len__(self):
        return int(self.indices.size)

    def gather(self, x: np.ndarray) -> np.ndarray:
        return x[self.indices]

    def scatter(self, x: np.ndarray, values: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[self.indices] = values
        return out


def keyframe_propagate(masks: np.ndarray, group_size: int) -> np.ndarray:
    """Give every frame the mask of the first (key) frame of its group."""
    if group_size < 1:
        raise ValueError("group size must be >= 1")
    masks = np.asarray(masks, dtype=bool)
    keys = (np.arange(masks.shape[0]) // group_size) * group_size
    return masks[keys]


def project_to_latent(pixel_mask: np.ndarray, pool_factor: int,
                      latent_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Max-pool ``(frames, H*p, W*p)`` pixel masks down to ``(frames, H, W)``."""
    pm = np.asarray(pixel_mask, dtype=bool)
    p = pool_factor
    if pm.ndim != 3 or p < 1 or pm.shape[1] % p or pm.shape[2] % p:
        raise ValueError(f"pixel mask {pm.shape} is not a whole multiple of pool factor {p}")
    f, hp, wp = pm.shape
    if latent_shape is not None and (hp // p, wp // p) != tuple(latent_shape):
        raise ValueError(f"pixel mask {pm.shape} does not project onto latent grid {latent_shape}")
    return pm.reshape(f, hp // p, p, wp // p, p).any(axis=(2, 4))


def _dilate_axis(mask: np.ndarray, r: int, axis: int) -> np.ndarray:
    n = mask.shape[axis]
    pad = [(0, 0)] * mask.ndim
    pad[axis] = (r, r)
    padded = np.pad(mask, pad)
    out = np.zeros_like(mask)
    for k in range(2 * r + 1):
        out |= np.take(padded, np.arange(k, k + n), axis=axis)
    return out


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    """Per-frame dilation with a (2r+1) x (2r+1) all-ones kernel, zero borders."""
    if r < 0:
        raise ValueError("dilation radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if r == 0:
        return mask.copy()
    # the square kernel is separable: dilate rows, then columns
    return _dilate_axis(_dilate_axis(mask, r, mask.ndim - 2), r, mask.ndim - 1)


class MaskContainmentError(AssertionError):
    pass


def build_mask_set(base: np.ndarray, r: int, r_prime: int,
                   dilate_fn: Callable[[np.ndarray, int], np.ndarray] = dilate) -> MaskSet:
    if r_prime < r or r < 0:
        raise ValueError("need r_prime >= r >= 0")
    base = np.asarray(base, dtype=bool)
    edit = np.asarray(dilate_fn(base, r), dtype=bool)
    see = np.asarray(dilate_fn(base, r_prime), dtype=bool)
    if np.any(base & ~edit) or np.any(edit & ~see):
        raise MaskContainmentError("mask hierarchy violated: need see >= edit >= base")
    return MaskSet(base, edit, see, r, r_prime)


def masks_for_request(source_scene, divergent_slots, config: ModelConfig, srd) -> MaskSet:
    """Region oracle, key-frame propagation, max-pool projection, then dilation."""
    pixel = region_oracle(source_scene, divergent_slots, config, srd.pool_factor)
    pixel = keyframe_propagate(pixel, srd.group_size)
    base = project_to_latent(pixel, srd.pool_factor, (config.grid_h, config.grid_w))
    return build_mask_set(base, srd.r, srd.r_prime)


def srd_step(x: np.ndarray, source_next: np.ndarray, masks: MaskSet, prompt: PromptEmbedding,
             t: int, gamma_k: float, gamma_o: float, config: ModelConfig,
             weights: DiTWeights) -> np.ndarray:
    """One step computed on the visible tokens only, fused with the source latent.

    ``source_next`` is the cached source latent after its own step ``t``.
    """
    if not 0 <= t < config.steps:
        raise ValueError(f"step index {t} outside [0, {config.steps})")
    shape = (config.frames, config.grid_h, config.grid_w)
    see = check_mask(masks.see, shape)
    edit = check_mask(masks.edit, shape)
    source_next = check_finite(np.asarray(source_next))
    out = source_next.copy()
    idx = np.flatnonzero(see.reshape(-1))
    if idx.size == 0:
        return out
    xs = check_finite(np.asarray(x))[idx]
    h = block_stack(xs, prompt, gamma_k, gamma_o, config, weights, cells=idx)
    candidate = xs + config.eta(t) * (h - xs)
    keep = edit.reshape(-1)[idx]
    out[idx[keep]] = candidate[keep]
    return out


def stage2_mac_fraction(masks: MaskSet, config: ModelConfig, prompt_len: int,
                        steps_in_stage2: int) -> float:
    """MACs of the stage-2 steps relative to running them at full length."""
    if steps_in_stage2 <= 0:
        return 0.0
    n_see = int(np.count_nonzero(masks.see))
    full = steps_in_stage2 * mac_count("step", config.n_tokens, prompt_len, config)
    return steps_in_stage2 * mac_count("step", n_see, prompt_len, config) / full


def format_mask(mask: np.ndarray, title: str = "") -> str:
    """Text rendering, one grid per frame, '#' for set cells."""
    mask = np.asarray(mask, dtype=bool)
    lines = [title] if title else []
    for f, frame in enumerate(mask):
        lines.append(f"frame {f}: {int(frame.sum())} set")
        lines.extend("".join("#" if v else "." for v in row) for row in frame)
    lines.append(f"total: {int(mask.sum())} / {mask.size}")
    return "\n".join(lines)


def format_mask_set(masks: MaskSet) -> str:
    parts = [format_mask(masks.base, "[base]"),
             format_mask(masks.edit, f"[edit r={masks.r}]"),
             format_mask(masks.see, f"[see r'={masks.r_prime}]")]
    return "\n".join(parts)
