"""Request pipeline and stream simulator.

A request is embedded and matched against the cache.  On a miss it is
generated from scratch and stored.  On a hit the stage plan splits the
``N`` steps into full reuse of the source latent, selective region steps
with amplified cross-attention, and full-compute repair steps.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tgaa
from .cache import CacheEntry, LatentCache, MatchResult
from .config import RunConfig
from .denoiser import DiTWeights, denoise_step_full, full_denoise, init_weights, mac_count
from .scheduler import StagePlan, plan_stages
from .srd import MaskSet, build_mask_set, format_mask_set, masks_for_request, srd_step
from .world import (IncomparablePrompts, Scene, Vocabulary, WorkItem, alignment_score,
                    build_prompt, describe, embed_prompt, prompt_embedding, token_diff)


@dataclass
class RequestRecord:
    index: int
    mode: str
    prompt: str
    tokens: list[int]
    cluster: int | None
    m: float | None
    hit: bool
    source_id: str | None
    k1: int
    k2: int
    n_steps: int
    see_tokens: int | None
    edit_tokens: int | None
    macs_stage2: int
    macs_stage3: int
    macs_total: int
    macs_baseline: int
    compute_fraction: float
    align_normalized: float | None = None
    align_d_target: float | None = None
    align_d_source: float | None = None
    ref_distance: float | None = None
    wall_time: float = 0.0

    def to_json(self, include_reference: bool = True) -> dict:
        rec = asdict(self)
        if not include_reference:
            rec.pop("ref_distance")
        return rec


WALL_TIME_FIELDS = ("wall_time",)


@dataclass
class Pipeline:
    """Everything a request needs: config, vocabulary, weights and the cache."""
    config: RunConfig
    vocab: Vocabulary
    weights: DiTWeights
    cache: LatentCache
    frozen: bool = False
    _references: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, config: RunConfig, vocab: Vocabulary | None = None,
              cache: LatentCache | None = None) -> "Pipeline":
        m = config.model
        vocab = vocab or Vocabulary(config.workload.vocab_seed)
        cache = cache if cache is not None else LatentCache((m.frames, m.grid_h, m.grid_w, m.d))
        return cls(config, vocab, init_weights(m), cache)


def _step_macs(n: int, prompt_len: int, pipe: Pipeline) -> int:
    return mac_count("step", n, prompt_len, pipe.config.model)


def request_macs(plan: StagePlan, see_tokens: int, prompt_len: int, pipe: Pipeline) -> dict:
    """Closed-form MAC tally of a request under ``plan``; reused steps cost nothing."""
    L = pipe.config.model.n_tokens
    stage2 = len(plan.srd_steps) * _step_macs(see_tokens, prompt_len, pipe)
    stage3 = len(plan.full_steps) * _step_macs(L, prompt_len, pipe)
    baseline = plan.n * _step_macs(L, prompt_len, pipe)
    return {"macs_stage2": stage2, "macs_stage3": stage3, "macs_total": stage2 + stage3,
            "macs_baseline": baseline, "compute_fraction": (stage2 + stage3) / baseline}


def compute_reference(scene: Scene, pipe: Pipeline) -> np.ndarray:
    """Final latent of a plain full-compute run for ``scene`` (memoized)."""
    key = scene
    ref = pipe._references.get(key)
    if ref is None:
        pe = prompt_embedding(scene, pipe.vocab, pipe.config.model)
        ref = full_denoise(pe, pipe.config.model, pipe.weights)[-1]
        pipe._references[key] = ref
    return ref


def _diff_and_masks(scene: Scene, source: CacheEntry, pipe: Pipeline) -> tuple[tuple[int, ...], MaskSet]:
    model = pipe.config.model
    target_tokens, source_tokens = build_prompt(scene), tuple(source.tokens)
    try:
        report = token_diff(target_tokens, source_tokens)
    except IncomparablePrompts:
        # different templates: amplify tokens the source lacks and recompute everything
        diff = tuple(i for i, tok in enumerate(target_tokens) if tok not in set(source_tokens))
        ones = np.ones((model.frames, model.grid_h, model.grid_w), dtype=bool)
        return diff, build_mask_set(ones, pipe.config.srd.r, pipe.config.srd.r_prime)
    masks = masks_for_request(source.scene, report.divergent_slots, model, pipe.config.srd)
    return report.diff_indices, masks


def generate_hit(scene: Scene, source: CacheEntry, plan: StagePlan, pipe: Pipeline,
                 tgaa_params=None, masks: MaskSet | None = None) -> tuple[np.ndarray, np.ndarray | None, dict]:
    """Run the staged generation for a hit; returns (final latent, masks.see or None, trajectory pieces).

    ``plan.mode`` selects chorus (TGAA + selective steps) or nirvana (reuse then full compute).
    """
    cfg = pipe.config
    model = cfg.model
    traj = source.trajectory
    chorus = plan.mode == "chorus"
    diff, auto_masks = _diff_and_masks(scene, source, pipe)
    masks = masks if masks is not None else auto_masks
    pe = prompt_embedding(scene, pipe.vocab, model, diff if chorus else ())
    params = cfg.tgaa if tgaa_params is None else tgaa_params
    if chorus:
        factors = tgaa.schedule(plan, plan.m, cfg.scheduler.tau, params)
    else:
        factors = {t: (1.0, 1.0) for t in range(plan.k1, plan.n)}
    x = traj[plan.k1].copy()
    states = {plan.k1: x}
    for t in plan.srd_steps:
        x = srd_step(x, traj[t + 1], masks, pe, t, *factors[t], model, pipe.weights)
        states[t + 1] = x
    for t in plan.full_steps:
        x = denoise_step_full(x, pe, t, *factors[t], model, pipe.weights)
        states[t + 1] = x
    return x, (masks if chorus and len(plan.srd_steps) else None), states


def _make_entry(entry_id: str, scene: Scene, embedding, trajectory) -> CacheEntry:
    return CacheEntry(entry_id, build_prompt(scene), embedding, scene, trajectory)


def process_request(scene: Scene, index: int, pipe: Pipeline, mode: str | None = None,
                    cluster: int | None = None, entry_prefix: str = "req",
                    mask_log: list | None = None) -> tuple[np.ndarray, RequestRecord]:
    """Serve one request; ``mask_log`` collects text renderings of stage-2 masks."""
    cfg = pipe.config
    model = cfg.model
    mode = mode or cfg.mode
    started = time.perf_counter()
    tokens = build_prompt(scene)
    emb = embed_prompt(tokens, pipe.vocab)
    tau = math.inf if mode == "baseline" else cfg.scheduler.tau
    match: MatchResult = pipe.cache.lookup(emb, tau)
    m = match.m if match.entry is not None else None
    L = model.n_tokens
    see_tokens = edit_tokens = None
    align = {}
    source_id = None

    if not match.hit:
        plan = StagePlan(0, 0, model.steps, m if m is not None else -math.inf, mode)
        pe = prompt_embedding(scene, pipe.vocab, model)
        trajectory = full_denoise(pe, model, pipe.weights)
        final = trajectory[-1]
        if not pipe.frozen:
            pipe.cache.insert(_make_entry(f"{entry_prefix}{index}", scene, emb, trajectory))
    else:
        source = match.entry
        source_id = source.entry_id
        plan = plan_stages(match.m, model.steps, cfg.scheduler, mode)
        final, masks, states = generate_hit(scene, source, plan, pipe)
        if masks is not None:
            see_tokens = int(np.count_nonzero(masks.see))
            edit_tokens = int(np.count_nonzero(masks.edit))
            if mask_log is not None:
                mask_log.append(f"request {index}: {describe(scene, pipe.vocab)}\n{format_mask_set(masks)}")
        try:
            align = alignment_score(final, scene, source.scene, pipe.vocab, model)
        except (ValueError, IncomparablePrompts):
            align = {}
        if cfg.cache.insert_on_hit and not pipe.frozen:
            trajectory = np.concatenate([source.trajectory[:plan.k1],
                                         np.stack([states[t] for t in range(plan.k1, plan.n + 1)])])
            pipe.cache.insert(_make_entry(f"{entry_prefix}{index}", scene, emb, trajectory))

    n_see = see_tokens if see_tokens is not None else L
    macs = request_macs(plan, n_see, len(tokens), pipe)
    ref_distance = None
    if cfg.reference_oracle:
        ref = compute_reference(scene, pipe)
        ref_distance = float(np.mean((final.astype(np.float64) - ref) ** 2))
    record = RequestRecord(
        index=index, mode=mode, prompt=describe(scene, pipe.vocab), tokens=list(tokens),
        cluster=cluster, m=m, hit=match.hit, source_id=source_id, k1=plan.k1, k2=plan.k2,
        n_steps=plan.n, see_tokens=see_tokens, edit_tokens=edit_tokens, **macs,
        align_normalized=align.get("normalized"), align_d_target=align.get("d_target"),
        align_d_source=align.get("d_source"), ref_distance=ref_distance,
        wall_time=time.perf_counter() - started)
    return final, record


def warm_start(items: Iterable[WorkItem | Scene], pipe: Pipeline) -> int:
    """Generate and insert every prefix request with reuse disabled."""
    n = 0
    for i, item in enumerate(items):
        scene = item.scene if isinstance(item, WorkItem) else item
        pe = prompt_embedding(scene, pipe.vocab, pipe.config.model)
        trajectory = full_denoise(pe, pipe.config.model, pipe.weights)
        emb = embed_prompt(build_prompt(scene), pipe.vocab)
        pipe.cache.insert(_make_entry(f"warm{i}", scene, emb, trajectory))
        n += 1
    return n


def run_stream(stream: Sequence[WorkItem], config: RunConfig, warm: Sequence[WorkItem] = (),
               pipe: Pipeline | None = None) -> list[RequestRecord]:
    pipe = pipe or Pipeline.build(config)
    warm_start(warm, pipe)
    pipe.frozen = config.cache.frozen
    records = []
    for i, item in enumerate(stream):
        _, rec = process_request(item.scene, i, pipe, cluster=item.cluster)
        records.append(rec)
    return records


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _summarize(records: Sequence[dict]) -> dict:
    fractions = [r["compute_fraction"] for r in records]
    hit_fractions = [r["compute_fraction"] for r in records if r["hit"]]
    mean_cf = float(np.mean(fractions))
    mean_hit_cf = _mean(hit_fractions)
    hits = sum(1 for r in records if r["hit"])
    return {
        "requests": len(records),
        "hits": hits,
        "hit_rate": hits / len(records),
        "mean_compute_fraction": mean_cf,
        "mean_compute_fraction_hits": mean_hit_cf,
        "speedup_proxy": 1.0 / mean_cf,
        "hit_speedup_proxy": (1.0 / mean_hit_cf) if mean_hit_cf else None,
        "mean_align_normalized": _mean(r.get("align_normalized") for r in records),
        "mean_ref_distance": _mean(r.get("ref_distance") for r in records),
    }


def aggregate(records: Sequence[RequestRecord | dict], window: int = 100) -> dict:
    """Windowed hit rate and compute fraction plus overall and per-mode summaries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if not records:
        raise ValueError("no records to aggregate")
    recs = [r.to_json() if isinstance(r, RequestRecord) else r for r in records]
    windows = []
    for start in range(0, len(recs), window):
        chunk = recs[start:start + window]
        windows.append({
            "start": start, "end": start + len(chunk), "requests": len(chunk),
            "hit_rate": sum(1 for r in chunk if r["hit"]) / len(chunk),
            "mean_compute_fraction": float(np.mean([r["compute_fraction"] for r in chunk])),
            "mean_align_normalized": _mean(r.get("align_normalized") for r in chunk),
        })
    modes = sorted({r["mode"] for r in recs})
    return {
        "window": window,
        "windows": windows,
        "overall": _summarize(recs),
        "by_mode": {mode: _summarize([r for r in recs if r["mode"] == mode]) for mode in modes},
    }


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def records_to_jsonl(records: Sequence[RequestRecord], include_reference: bool = True) -> str:
    return "".join(json.dumps(r.to_json(include_reference)) + "\n" for r in records)


def write_records(path, records: Sequence[RequestRecord], include_reference: bool = True) -> None:
    _atomic_write(path, records_to_jsonl(records, include_reference))


def read_records(path) -> list[dict]:
    required = {"index", "mode", "hit", "compute_fraction"}
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict) or not required <= rec.keys():
                raise ValueError(f"{path}:{lineno}: malformed record (missing fields)")
            out.append(rec)
    return out


def write_summary(path, summary: dict) -> None:
    _atomic_write(path, json.dumps(summary, indent=2) + "\n")


def write_windows_csv(path, summary: dict) -> None:
    lines = ["start,end,requests,hit_rate,mean_compute_fraction"]
    for w in summary["windows"]:
        lines.append(f"{w['start']},{w['end']},{w['requests']},{w['hit_rate']:.6f},"
                     f"{w['mean_compute_fraction']:.6f}")
    _atomic_write(path, "\n".join(lines) + "\n")
