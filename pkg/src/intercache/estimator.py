"""scikit-learn style facade over the serving pipeline."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator

from .config import RunConfig
from .serving import Pipeline, process_request, warm_start
from .world import Scene, WorkItem


def _scenes(X) -> list[Scene]:
    out = []
    for item in X:
        scene = item.scene if isinstance(item, WorkItem) else item
        if not isinstance(scene, Scene):
            raise TypeError(f"expected Scene or WorkItem, got {type(item).__name__}")
        out.append(scene)
    return out


class CachedVideoGenerator(BaseEstimator):
    """``fit`` warms the cache with full-compute generations; ``predict`` serves a stream.

    ``predict`` returns the stacked final latents, shape ``(n, L, d)``, and
    leaves the per-request records in ``records_``.
    """

    def __init__(self, config: RunConfig | None = None, mode: str = "chorus", reference_oracle: bool = False):
        self.config = config
        self.mode = mode
        self.reference_oracle = reference_oracle

    def fit(self, X=(), y=None):
        cfg = self.config or RunConfig()
        cfg = replace(cfg, mode=self.mode, reference_oracle=self.reference_oracle)
        self.pipeline_ = Pipeline.build(cfg)
        self.n_warm_ = warm_start(_scenes(X), self.pipeline_)
        self.pipeline_.frozen = cfg.cache.frozen
        self.cache_ = self.pipeline_.cache
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("call fit before predict")
        scenes = _scenes(X)
        start = len(getattr(self, "records_", []))
        finals, records = [], []
        for i, scene in enumerate(scenes):
            final, rec = process_request(scene, start + i, self.pipeline_)
            finals.append(final)
            records.append(rec)
        self.records_ = getattr(self, "records_", []) + records
        m = self.pipeline_.config.model
        return np.stack(finals) if finals else np.zeros((0, m.n_tokens, m.d), dtype=m.dtype)
