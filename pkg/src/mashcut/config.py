"""Run configuration: engine constants, ablation toggles, provenance hashing.

All numeric defaults are deliberately plain and documented here so a run is
reproducible from its config hash alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError

#: Comparisons on timeline seconds go through this epsilon.
TIME_EPSILON = 1e-6


@dataclass(frozen=True)
class ScorerConfig:
    """Weights of the deterministic global scorer."""

    dup_penalty: float = 1.0        # per duplicated source span across segments
    emotion_penalty: float = 0.5    # per antagonistic adjacent segment pair
    duration_weight: float = 0.2    # |timeline - music| duration mismatch
    beat_bonus: float = 0.2         # scale of the per-segment beat-fit bonus
    dup_overlap: float = 0.5        # seconds of source overlap that counts as a repeat
    beat_tolerance: float = 0.08    # cut-to-beat distance treated as on-beat


@dataclass(frozen=True)
class EngineConfig:
    """Thresholds, caps, and budgets for every pipeline stage."""

    scorer: ScorerConfig = field(default_factory=ScorerConfig)

    # beat detection
    beat_delta: float = 1.0         # peaks must exceed mean + delta * stddev
    beat_min_gap: float = 0.2       # seconds between retained beats
    default_hop: float = 0.01       # envelope sampling hop when unspecified

    # music segmentation (envelope path)
    energy_jump: float = 0.25       # windowed-mean jump on the normalized envelope
    energy_window: float = 0.5      # seconds of windowed mean on either side
    min_segment_beats: int = 4      # minimum segment length, in beat intervals
    min_segment_fallback: float = 2.0   # seconds, when beats are unknown

    # inner-loop editing
    max_iter: int = 3               # diagnose/refine rounds per segment
    max_queries: int = 3            # retrieval queries per instruction
    max_candidates: int = 8         # ranked candidates kept per segment
    min_clip: float = 0.8           # seconds; shorter clips are dropped
    beat_tolerance: float = 0.08    # cut snapping tolerance (mirrors scorer)
    duration_tolerance_fallback: float = 0.25  # when a segment has < 2 beats
    semantic_drift_floor: float = 0.2   # mean relevance below this is drift

    # coordination
    memo_window: int = 5            # recent completed-segment digests in a bundle
    digest_word_cap: int = 60
    negotiation_budget: int = 40
    oracle_guard: int = 10**6       # max exhaustive combinations

    def validate(self) -> None:
        if self.max_iter < 0 or self.max_queries < 1 or self.max_candidates < 1:
            raise ConfigError("editor caps must be positive")
        if self.negotiation_budget < 1:
            raise ConfigError("negotiation budget must be >= 1")
        if self.min_clip <= 0:
            raise ConfigError("min_clip must be > 0")


#: The five named ablation variants, keyed by their toggle triple
#: (preventive, region_decomposition, negotiation).
VARIANT_NAMES = {
    (True, True, True): "full",
    (True, False, False): "only_preventive",
    (True, True, False): "no_negotiation",
    (True, False, True): "no_region_decomposition",
    (False, True, True): "no_preventive",
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides its inputs."""

    backend: str = "scripted"
    seed: int = 0
    preventive: bool = True
    region_decomposition: bool = True
    negotiation: bool = True
    engine: EngineConfig = field(default_factory=EngineConfig)
    paths: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.backend not in ("scripted", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        self.engine.validate()

    @property
    def toggles(self) -> tuple[bool, bool, bool]:
        return (self.preventive, self.region_decomposition, self.negotiation)

    @property
    def variant_name(self) -> str:
        return VARIANT_NAMES.get(self.toggles, "custom")

    @property
    def corrective_enabled(self) -> bool:
        """The corrective loop runs when either corrective toggle is on."""
        return self.region_decomposition or self.negotiation

    def with_budget(self, budget: int) -> RunConfig:
        return replace(self, engine=replace(self.engine, negotiation_budget=budget))

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
