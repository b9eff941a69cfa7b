"""Inter-request latent caching simulator for a toy video diffusion transformer."""
from .cache import CacheEntry, LatentCache, MatchResult
from .config import RunConfig, load_config
from .estimator import CachedVideoGenerator
from .scheduler import StagePlan, plan_stages
from .serving import Pipeline, aggregate, process_request, run_stream
from .world import Vocabulary, gen_workload

__all__ = ["CacheEntry", "LatentCache", "MatchResult", "RunConfig", "load_config",
           "CachedVideoGenerator", "StagePlan", "plan_stages", "Pipeline", "aggregate",
           "process_request", "run_stream", "Vocabulary", "gen_workload"]
__version__ = "0.1.0"
