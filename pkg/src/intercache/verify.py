"""Built-in invariant checks run by ``intercache verify``."""
from __future__ import annotations

import tempfile
from typing import Callable

import numpy as np

from .cache import CacheEntry, LatentCache
from .config import ModelConfig, SchedulerParams, TgaaParams, WorkloadParams
from .denoiser import full_denoise, init_noise, init_weights
from .scheduler import StagePlan, plan_stages
from .srd import MaskContainmentError, build_mask_set, dilate, srd_step
from . import tgaa
from .world import Vocabulary, build_prompt, embed_prompt, gen_workload, prompt_embedding

SMALL = ModelConfig(frames=2, grid_h=8, grid_w=8, d=16, heads=2, blocks=1, steps=4)


def dilate_bruteforce(mask: np.ndarray, r: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    f, h, w = mask.shape
    out = np.zeros_like(mask)
    for k in range(f):
        for i in range(h):
            for j in range(w):
                out[k, i, j] = mask[k, max(0, i - r):i + r + 1, max(0, j - r):j + r + 1].any()
    return out


def check_dilation_oracle(dilate_fn, rng) -> str:
    for _ in range(20):
        m = rng.random((2, 12, 12)) < rng.uniform(0.02, 0.3)
        r = int(rng.integers(0, 4))
        if not np.array_equal(np.asarray(dilate_fn(m, r), dtype=bool), dilate_bruteforce(m, r)):
            raise AssertionError(f"dilation differs from brute force at r={r}")
    return "20 random masks match"


def check_containment(dilate_fn, rng) -> str:
    for _ in range(50):
        base = rng.random((2, 10, 10)) < rng.uniform(0.0, 0.3)
        r = int(rng.integers(0, 3))
        build_mask_set(base, r, r + int(rng.integers(0, 3)), dilate_fn=dilate_fn)
    return "50 random mask sets nest"


def _small_setup():
    vocab = Vocabulary(0)
    weights = init_weights(SMALL)
    scene = gen_workload(WorkloadParams(clusters=1, prompts_per_cluster=1, max_objects=1),
                         SMALL, vocab)[0].scene
    return vocab, weights, scene


def check_fusion(dilate_fn, rng) -> str:
    vocab, weights, scene = _small_setup()
    pe = prompt_embedding(scene, vocab, SMALL, diff_indices=(1,))
    x = init_noise(SMALL)
    for _ in range(10):
        base = rng.random((SMALL.frames, SMALL.grid_h, SMALL.grid_w)) < 0.1
        masks = build_mask_set(base, 1, 2, dilate_fn=dilate_fn)
        sl = rng.standard_normal(x.shape).astype(x.dtype)
        out = srd_step(x, sl, masks, pe, 1, 2.0, 1.5, SMALL, weights)
        keep = ~masks.edit.reshape(-1)
        if not np.array_equal(out[keep], sl[keep]):
            raise AssertionError("non-edit tokens differ from the source latent")
    return "non-edit tokens equal the source latent on 10 steps"


def check_tgaa_neutrality(dilate_fn, rng) -> str:
    vocab, weights, scene = _small_setup()
    off = TgaaParams(enabled_key=False, enabled_output=False)
    plan = StagePlan(1, 3, SMALL.steps, 0.8)
    table = tgaa.schedule(plan, 0.8, 0.75, off)
    if any(v != (1.0, 1.0) for v in table.values()):
        raise AssertionError("disabled TGAA produced non-neutral factors")
    pe = prompt_embedding(scene, vocab, SMALL, diff_indices=(1, 2))
    factors = [table.get(t, (1.0, 1.0)) for t in range(SMALL.steps)]
    a = full_denoise(pe, SMALL, weights, factors)
    b = full_denoise(pe, SMALL, weights)
    if not np.array_equal(a, b):
        raise AssertionError("neutral factors changed the trajectory")
    return "disabled TGAA is bit-identical to no TGAA"


def check_scheduler(dilate_fn, rng) -> str:
    for _ in range(5):
        k1 = float(rng.uniform(0, 1))
        params = SchedulerParams(tau=float(rng.uniform(0.3, 0.95)), k1_frac=k1,
                                 k2_frac=float(rng.uniform(k1, 1)), stage3_min=int(rng.integers(0, 3)))
        n = int(rng.integers(1, 60))
        prev = (0, 0)
        for m in np.linspace(-1, 1, 401):
            plan = plan_stages(float(m), n, params)
            if plan.k1 < prev[0] or plan.k2 < prev[1]:
                raise AssertionError("stage boundaries not monotone in m")
            if m < params.tau and (plan.k1, plan.k2) != (0, 0):
                raise AssertionError("miss produced a non-empty plan")
            prev = (plan.k1, plan.k2)
    return "monotone over 5 parameter sets"


def check_cache_roundtrip(dilate_fn, rng) -> str:
    vocab, weights, _ = _small_setup()
    items = gen_workload(WorkloadParams(clusters=3, prompts_per_cluster=3), SMALL, vocab)
    cache = LatentCache((SMALL.frames, SMALL.grid_h, SMALL.grid_w, SMALL.d))
    for i, item in enumerate(items[:5]):
        traj = rng.standard_normal((SMALL.steps + 1, SMALL.n_tokens, SMALL.d)).astype(np.float32)
        emb = embed_prompt(build_prompt(item.scene), vocab)
        if cache.lookup(emb, 1.0).hit:
            continue
        cache.insert(CacheEntry(f"e{i}", build_prompt(item.scene), emb, item.scene, traj))
    with tempfile.TemporaryDirectory() as tmp:
        cache.save(tmp)
        loaded = LatentCache.load(tmp)
    for _ in range(30):
        q = rng.standard_normal(cache.entries[0].embedding.shape[0])
        q /= np.linalg.norm(q)
        a, b = cache.lookup(q, 0.0), loaded.lookup(q, 0.0)
        if a.entry.entry_id != b.entry.entry_id or a.m != b.m:
            raise AssertionError("lookup changed after save/load")
    for e, f in zip(cache.entries, loaded.entries):
        if not np.array_equal(e.trajectory, f.trajectory):
            raise AssertionError("trajectory changed after save/load")
    return f"{len(cache)} entries round-trip"


CHECKS: list[tuple[str, Callable]] = [
    ("dilation matches brute force", check_dilation_oracle),
    ("mask containment", check_containment),
    ("fusion exactness", check_fusion),
    ("TGAA neutrality", check_tgaa_neutrality),
    ("scheduler monotonicity", check_scheduler),
    ("cache round-trip", check_cache_roundtrip),
]


def run_checks(dilate_fn=dilate, seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            detail = fn(dilate_fn, rng)
            results.append((name, True, detail))
        except (AssertionError, MaskContainmentError, ValueError) as exc:
            results.append((name, False, str(exc)))
    return results
