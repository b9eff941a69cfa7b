"""Inter-request latent cache with exhaustive top-1 cosine retrieval."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .latent_io import CacheFormatError, read_trajectory, write_trajectory
from .world import Scene, SceneObject

INDEX_FILE = "index.jsonl"
LATENT_DIR = "latents"


@dataclass(frozen=True)
class CacheEntry:
    entry_id: str
    tokens: tuple[int, ...]
    embedding: np.ndarray
    scene: Scene
    trajectory: np.ndarray   # (N+1, L, d)
    seq: int = -1

    @property
    def final_latent(self) -> np.ndarray:
        return self.trajectory[-1]


@dataclass(frozen=True)
class MatchResult:
    entry: CacheEntry | None
    m: float
    hit: bool


def _scene_to_ids(scene: Scene) -> dict:
    return {"background": scene.background,
            "objects": [[o.object, o.attribute, o.verb, *o.rows, *o.cols, *o.motion]
                        for o in scene.objects]}


def _scene_from_ids(rec: dict) -> Scene:
    objs = tuple(SceneObject(o[0], o[1], o[2], (o[3], o[4]), (o[5], o[6]), (o[7], o[8]))
                 for o in rec["objects"])
    return Scene(rec["background"], objs)


class LatentCache:
    """Append-only store; lookups scan every entry.

    Ties on cosine similarity go to the earliest inserted entry.
    """

    def __init__(self, dims: tuple[int, int, int, int] | None = None):
        self.dims = dims
        self.entries: list[CacheEntry] = []
        self._ids: set[str] = set()
        self._emb = np.zeros((0, 0))

    def __len__(self):
        return len(self.entries)

    def insert(self, entry: CacheEntry) -> CacheEntry:
        if entry.entry_id in self._ids:
            raise ValueError(f"duplicate cache entry id {entry.entry_id!r}")
        emb = np.asarray(entry.embedding, dtype=np.float64)
        if abs(np.linalg.norm(emb) - 1.0) > 1e-6:
            raise ValueError("cache embeddings must have unit norm")
        if self._emb.size and emb.shape[0] != self._emb.shape[1]:
            raise ValueError("embedding dimension differs from stored entries")
        stored = CacheEntry(entry.entry_id, tuple(entry.tokens), emb, entry.scene,
                            entry.trajectory, len(self.entries))
        self.entries.append(stored)
        self._ids.add(stored.entry_id)
        self._emb = emb[None, :] if not self._emb.size else np.vstack([self._emb, emb])
        return stored

    def lookup(self, embedding, tau: float) -> MatchResult:
        if not self.entries:
            return MatchResult(None, -math.inf, False)
        q = np.asarray(embedding, dtype=np.float64)
        sims = self._emb @ q
        best = int(np.argmax(sims))  # first maximum = smallest sequence number
        m = float(sims[best])
        return MatchResult(self.entries[best], m, m >= tau)

    def save(self, directory) -> None:
        root = Path(directory)
        (root / LATENT_DIR).mkdir(parents=True, exist_ok=True)
        tmp = root / (INDEX_FILE + ".tmp")
        with open(tmp, "w") as fh:
            for e in self.entries:
                rec = {"id": e.entry_id, "tokens": list(e.tokens),
                       "embedding": [float(v) for v in e.embedding], "seq": e.seq,
                       "scene": _scene_to_ids(e.scene)}
                fh.write(json.dumps(rec) + "\n")
                write_trajectory(root / LATENT_DIR / f"{e.entry_id}.chrl", e.trajectory, self.dims)
        os.replace(tmp, root / INDEX_FILE)

    @classmethod
    def load(cls, directory, dtype=np.float32) -> "LatentCache":
        root = Path(directory)
        index = root / INDEX_FILE
        if not index.is_file():
            raise CacheFormatError(f"incompatible cache format: no {INDEX_FILE} in {root}")
        records = []
        with open(index) as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        records.append(json.loads(line))
                    except json.JSONDecodeError:
                        raise CacheFormatError(f"incompatible cache format: bad index line {lineno}") from None
        cache = cls()
        for rec in sorted(records, key=lambda r: r["seq"]):
            dims, traj = read_trajectory(root / LATENT_DIR / f"{rec['id']}.chrl", dtype)
            if cache.dims is None:
                cache.dims = dims
            elif dims != cache.dims:
                raise CacheFormatError("incompatible cache format: mixed latent shapes")
            cache.insert(CacheEntry(rec["id"], tuple(rec["tokens"]), np.array(rec["embedding"]),
                                    _scene_from_ids(rec["scene"]), traj))
        return cache
