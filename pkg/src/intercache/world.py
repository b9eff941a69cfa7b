"""Synthetic prompt world: vocabulary, scenes, prompts, reference fields, workloads.

A scene is a background plus a list of objects, each with an attribute, a
verb, a rectangle on the latent grid and a per-frame drift.  Prompts follow
the fixed template ``[background, (attribute, object, verb) * k]`` so token
diffs are positional and exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ModelConfig, WorkloadParams
from .denoiser import PromptEmbedding

EMBED_DIM = 64
MAX_PROMPT_LEN = 16
MAX_OBJECTS = (MAX_PROMPT_LEN - 1) // 3

TOKEN_CLASSES = {
    "background": ("beach", "forest", "desert", "city street", "snowfield", "meadow",
                   "harbor", "canyon", "library", "volcano"),
    "object": ("dog", "cat", "horse", "car", "bird", "robot", "boat", "fox", "bear", "kite"),
    "attribute": ("spotted", "wild", "red", "striped", "golden", "fluffy", "rusty", "tiny",
                  "glowing", "wooden"),
    "verb": ("runs", "sits", "jumps", "walks", "flies", "rests", "spins", "swims"),
}

# per-purpose salts for the vector generators
_PAINT, _KEY, _HASH = 1, 2, 3


class IncomparablePrompts(ValueError):
    pass


class Vocabulary:
    """Token ids, classes, and the deterministic per-token vectors."""

    def __init__(self, seed: int = 0, classes: dict[str, Sequence[str]] | None = None):
        self.seed = int(seed)
        classes = TOKEN_CLASSES if classes is None else classes
        self.names: list[str] = []
        self.token_class: list[str] = []
        self.by_class: dict[str, tuple[int, ...]] = {}
        for cls, names in classes.items():
            ids = []
            for name in names:
                ids.append(len(self.names))
                self.names.append(name)
                self.token_class.append(cls)
            self.by_class[cls] = tuple(ids)
        self.ids = {name: i for i, name in enumerate(self.names)}
        if len(self.ids) != len(self.names):
            raise ValueError("token names must be unique")
        self._vec_cache: dict[tuple[int, int, int], np.ndarray] = {}

    def __len__(self):
        return len(self.names)

    def _vector(self, purpose: int, token: int, dim: int) -> np.ndarray:
        key = (purpose, token, dim)
        vec = self._vec_cache.get(key)
        if vec is None:
            rng = np.random.default_rng([self.seed, purpose, token])
            vec = rng.standard_normal(dim)
            if purpose == _HASH:
                vec /= np.linalg.norm(vec)
            elif purpose == _PAINT:
                vec *= np.sqrt(dim) / np.linalg.norm(vec)
            vec.flags.writeable = False
            self._vec_cache[key] = vec
        return vec

    def paint(self, token: int, d: int) -> np.ndarray:
        """Unit-RMS colour of a token in latent space."""
        return self._vector(_PAINT, token, d)

    def key(self, token: int, d: int) -> np.ndarray:
        return self._vector(_KEY, token, d)

    def hash_vector(self, token: int) -> np.ndarray:
        return self._vector(_HASH, token, EMBED_DIM)

    def to_json(self) -> dict:
        return {"seed": self.seed,
                "tokens": [{"id": i, "name": n, "class": c}
                           for i, (n, c) in enumerate(zip(self.names, self.token_class))]}

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        classes: dict[str, list[str]] = {}
        for tok in sorted(data["tokens"], key=lambda t: t["id"]):
            classes.setdefault(tok["class"], []).append(tok["name"])
        vocab = cls(data.get("seed", 0), classes)
        for tok in data["tokens"]:
            if vocab.ids[tok["name"]] != tok["id"]:
                raise ValueError("vocabulary ids must be contiguous and grouped by class")
        return vocab


@dataclass(frozen=True)
class SceneObject:
    object: int
    attribute: int
    verb: int
    rows: tuple[int, int]   # half-open [start, stop) on frame 0
    cols: tuple[int, int]
    motion: tuple[int, int] = (0, 0)  # (rows, cols) drift per frame

    def frame_box(self, frame: int, grid_h: int, grid_w: int):
        """Clipped (r0, r1, c0, c1) of this object in ``frame``; may be empty."""
        dr, dc = self.motion[0] * frame, self.motion[1] * frame
        r0, r1 = max(0, self.rows[0] + dr), min(grid_h, self.rows[1] + dr)
        c0, c1 = max(0, self.cols[0] + dc), min(grid_w, self.cols[1] + dc)
        return r0, max(r0, r1), c0, max(c0, c1)


@dataclass(frozen=True)
class Scene:
    background: int
    objects: tuple[SceneObject, ...] = ()

    def __post_init__(self):
        if len(self.objects) > MAX_OBJECTS:
            raise ValueError(f"at most {MAX_OBJECTS} objects fit the prompt template")


@dataclass(frozen=True)
class WorkItem:
    cluster: int
    scene: Scene


@dataclass(frozen=True)
class DiffReport:
    diff_indices: tuple[int, ...]
    divergent_objects: tuple[tuple[int, tuple[int, int]], ...]  # (slot, (attribute, object))
    match_kind: tuple[str, ...]

    @property
    def divergent_slots(self) -> tuple[int, ...]:
        return tuple(slot for slot, _ in self.divergent_objects)


def build_prompt(scene: Scene) -> tuple[int, ...]:
    tokens = [scene.background]
    for obj in scene.objects:
        tokens.extend((obj.attribute, obj.object, obj.verb))
    return tuple(tokens)


def describe(scene: Scene, vocab: Vocabulary) -> str:
    parts = [f"{vocab.names[o.attribute]} {vocab.names[o.object]} {vocab.names[o.verb]}"
             for o in scene.objects]
    text = ", ".join(parts) if parts else "empty scene"
    return f"{text} in {vocab.names[scene.background]}"


def owner_map(scene: Scene, config: ModelConfig) -> np.ndarray:
    """Index of the object painting each latent cell, -1 for background.

    Later objects win where regions overlap.
    """
    owner = np.full((config.frames, config.grid_h, config.grid_w), -1, dtype=np.int64)
    for i, obj in enumerate(scene.objects):
        for f in range(config.frames):
            r0, r1, c0, c1 = obj.frame_box(f, config.grid_h, config.grid_w)
            owner[f, r0:r1, c0:c1] = i
    return owner


def object_cells(scene: Scene, slots: Iterable[int], config: ModelConfig) -> np.ndarray:
    """Union of the per-frame regions of the given object slots, in latent space."""
    mask = np.zeros((config.frames, config.grid_h, config.grid_w), dtype=bool)
    for slot in slots:
        obj = scene.objects[slot]
        for f in range(config.frames):
            r0, r1, c0, c1 = obj.frame_box(f, config.grid_h, config.grid_w)
            mask[f, r0:r1, c0:c1] = True
    return mask


def prompt_embedding(scene: Scene, vocab: Vocabulary, config: ModelConfig,
                     diff_indices: Iterable[int] = ()) -> PromptEmbedding:
    """Key vectors, paint vectors and the token-to-cell region prior for a scene."""
    tokens = build_prompt(scene)
    d, dtype = config.d, np.dtype(config.dtype)
    keys = np.stack([vocab.key(t, d) for t in tokens]).astype(dtype)
    paints = np.stack([vocab.paint(t, d) for t in tokens]).astype(dtype)
    owner = owner_map(scene, config).reshape(-1)
    region = np.zeros((config.n_tokens, len(tokens)), dtype=bool)
    region[:, 0] = owner < 0
    for i in range(len(scene.objects)):
        cells = owner == i
        region[:, 1 + 3 * i] = cells  # attribute
        region[:, 2 + 3 * i] = cells  # object
    for arr in (keys, paints, region):
        arr.flags.writeable = False
    return PromptEmbedding(keys, paints, tuple(sorted(set(diff_indices))), region)


def _normalize_rms(v: np.ndarray) -> np.ndarray:
    return v * (np.sqrt(v.shape[-1]) / np.linalg.norm(v))


def render_reference(scene: Scene, vocab: Vocabulary, config: ModelConfig) -> np.ndarray:
    """The ideal latent for a scene, ``(L, d)``: background paint with objects painted over."""
    d = config.d
    field_ = np.empty((config.n_tokens, d), dtype=np.float64)
    field_[:] = vocab.paint(scene.background, d)
    owner = owner_map(scene, config).reshape(-1)
    for i, obj in enumerate(scene.objects):
        field_[owner == i] = _normalize_rms(vocab.paint(obj.object, d) + vocab.paint(obj.attribute, d))
    return field_


def token_diff(target: Sequence[int], source: Sequence[int]) -> DiffReport:
    if len(target) != len(source) or len(target) % 3 != 1:
        raise IncomparablePrompts("incomparable prompts")
    diff = tuple(i for i, (a, b) in enumerate(zip(target, source)) if a != b)
    divergent, kinds = [], []
    for slot in range((len(target) - 1) // 3):
        attr, obj = 1 + 3 * slot, 2 + 3 * slot
        if target[obj] != source[obj]:
            kinds.append("object-changed")
        elif target[attr] != source[attr]:
            kinds.append("attribute-changed")
        else:
            kinds.append("unchanged")
            continue
        divergent.append((slot, (source[attr], source[obj])))
    return DiffReport(diff, tuple(divergent), tuple(kinds))


def region_oracle(source_scene: Scene, divergent_slots: Iterable[int], config: ModelConfig,
                  pool_factor: int) -> np.ndarray:
    """Pixel-space masks ``(frames, H*p, W*p)`` covering the divergent source objects."""
    latent = object_cells(source_scene, divergent_slots, config)
    return latent.repeat(pool_factor, axis=1).repeat(pool_factor, axis=2)


def embed_prompt(tokens: Sequence[int], vocab: Vocabulary) -> np.ndarray:
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty prompt")
    v = np.sum([vocab.hash_vector(t) for t in tokens], axis=0)
    return v / np.linalg.norm(v)


def _random_object(rng: np.random.Generator, vocab: Vocabulary, config: ModelConfig) -> SceneObject:
    h = int(rng.integers(3, max(4, config.grid_h // 2) + 1))
    w = int(rng.integers(3, max(4, config.grid_w // 2) + 1))
    h, w = min(h, config.grid_h), min(w, config.grid_w)
    r0 = int(rng.integers(0, config.grid_h - h + 1))
    c0 = int(rng.integers(0, config.grid_w - w + 1))
    motion = (0, 0)
    if rng.random() < 0.5:
        motion = (int(rng.integers(-1, 2)), int(rng.integers(-1, 2)))
    return SceneObject(
        object=int(rng.choice(vocab.by_class["object"])),
        attribute=int(rng.choice(vocab.by_class["attribute"])),
        verb=int(rng.choice(vocab.by_class["verb"])),
        rows=(r0, r0 + h), cols=(c0, c0 + w), motion=motion)


def _substitute(rng: np.random.Generator, current: int, pool: Sequence[int]) -> int:
    others = [t for t in pool if t != current]
    return int(rng.choice(others)) if others else current


def make_variant(base: Scene, params: WorkloadParams, vocab: Vocabulary,
                 rng: np.random.Generator) -> Scene:
    """Copy ``base`` with tokens swapped per the substitution probabilities; layout is kept."""
    bg = base.background
    if rng.random() < params.p_background:
        bg = _substitute(rng, bg, vocab.by_class["background"])
    objects = []
    for obj in base.objects:
        o, a, v = obj.object, obj.attribute, obj.verb
        if rng.random() < params.p_object:
            o = _substitute(rng, o, vocab.by_class["object"])
        if rng.random() < params.p_attribute:
            a = _substitute(rng, a, vocab.by_class["attribute"])
        if rng.random() < params.p_verb:
            v = _substitute(rng, v, vocab.by_class["verb"])
        objects.append(SceneObject(o, a, v, obj.rows, obj.cols, obj.motion))
    return Scene(bg, tuple(objects))


def gen_workload(params: WorkloadParams, config: ModelConfig,
                 vocab: Vocabulary | None = None) -> list[WorkItem]:
    """Clustered request stream: a base scene per cluster plus token-substituted variants."""
    vocab = vocab or Vocabulary(params.vocab_seed)
    rng = np.random.default_rng(params.seed)
    per_cluster: list[list[Scene]] = []
    for _ in range(params.clusters):
        n_obj = int(rng.integers(1, params.max_objects + 1)) if params.max_objects else 0
        n_obj = min(n_obj, MAX_OBJECTS)
        base = Scene(int(rng.choice(vocab.by_class["background"])),
                     tuple(_random_object(rng, vocab, config) for _ in range(n_obj)))
        scenes = [base]
        scenes.extend(make_variant(base, params, vocab, rng)
                      for _ in range(params.prompts_per_cluster - 1))
        per_cluster.append(scenes)
    labels = np.repeat(np.arange(params.clusters), params.prompts_per_cluster)
    rng.shuffle(labels)
    cursor = [0] * params.clusters
    stream = []
    for c in labels.tolist():
        stream.append(WorkItem(c, per_cluster[c][cursor[c]]))
        cursor[c] += 1
    return stream


def alignment_score(x: np.ndarray, target: Scene, source: Scene, vocab: Vocabulary,
                    config: ModelConfig, region: np.ndarray | None = None) -> dict:
    """Distance of ``x`` to the target and source reference fields over a region.

    ``normalized`` is +1 at the target reference and -1 at the source one.
    The region defaults to the cells of the divergent source objects.
    """
    if region is None:
        report = token_diff(build_prompt(target), build_prompt(source))
        region = object_cells(source, report.divergent_slots, config)
    cells = np.asarray(region, dtype=bool).reshape(-1)
    if cells.size != config.n_tokens:
        raise ValueError("region does not match the latent grid")
    if not cells.any():
        raise ValueError("empty evaluation region")
    x = np.asarray(x, dtype=np.float64)[cells]
    d_t = float(np.mean((x - render_reference(target, vocab, config)[cells]) ** 2))
    d_s = float(np.mean((x - render_reference(source, vocab, config)[cells]) ** 2))
    total = d_s + d_t
    return {"d_target": d_t, "d_source": d_s,
            "normalized": (d_s - d_t) / total if total > 0 else 0.0}


# -- workload and vocabulary files -------------------------------------------------

def scene_to_record(scene: Scene, vocab: Vocabulary) -> dict:
    return {
        "background": vocab.names[scene.background],
        "objects": [{"attribute": vocab.names[o.attribute], "object": vocab.names[o.object],
                     "verb": vocab.names[o.verb], "rows": list(o.rows), "cols": list(o.cols),
                     "motion": list(o.motion)} for o in scene.objects],
        "tokens": list(build_prompt(scene)),
    }


def scene_from_record(rec: dict, vocab: Vocabulary) -> Scene:
    ids = vocab.ids
    objects = tuple(SceneObject(ids[o["object"]], ids[o["attribute"]], ids[o["verb"]],
                                tuple(o["rows"]), tuple(o["cols"]), tuple(o.get("motion", (0, 0))))
                    for o in rec["objects"])
    scene = Scene(ids[rec["background"]], objects)
    if "tokens" in rec and list(build_prompt(scene)) != list(rec["tokens"]):
        raise ValueError("token ids disagree with the named tokens")
    return scene


def write_workload(path, items: Sequence[WorkItem], vocab: Vocabulary, warm_start: int = 0) -> None:
    with open(path, "w") as fh:
        for i, item in enumerate(items):
            rec = {"index": i, "section": "warm" if i < warm_start else "test",
                   "cluster": item.cluster, **scene_to_record(item.scene, vocab)}
            fh.write(json.dumps(rec) + "\n")


def read_workload(path, vocab: Vocabulary) -> tuple[list[WorkItem], list[WorkItem]]:
    """Return ``(warm_prefix, test_stream)``."""
    warm, test = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                item = WorkItem(int(rec["cluster"]), scene_from_record(rec, vocab))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed workload record ({exc})") from None
            (warm if rec.get("section") == "warm" else test).append(item)
    return warm, test


def write_vocabulary(path, vocab: Vocabulary) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=1) + "\n")


def read_vocabulary(path) -> Vocabulary:
    return Vocabulary.from_json(json.loads(Path(path).read_text()))
