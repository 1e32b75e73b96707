"""Core domain types: edit intents, timelines, and the global scorer.

All types are immutable values; pipeline stages construct new instances
instead of mutating. Seconds are plain floats compared through a 1e-6
epsilon — no frame-rate coupling anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .config import TIME_EPSILON, ScorerConfig
from .errors import CompositionError, ScoreError, ValidationError
from .text import overlap, tokenize

# Closed emotion taxonomy; the antagonism relation drives both the pairwise
# scorer penalty and the emotion conflict predicate.
EMOTIONS = frozenset({"joyful", "energetic", "tense", "sad", "calm", "epic", "neutral"})

ANTAGONISTIC_PAIRS = frozenset(
    {
        frozenset({"joyful", "sad"}),
        frozenset({"calm", "tense"}),
        frozenset({"calm", "energetic"}),
    }
)


def antagonistic(a: str | None, b: str | None) -> bool:
    if a is None or b is None:
        return False
    return frozenset({a, b}) in ANTAGONISTIC_PAIRS


class IntentLevel(str, Enum):
    GENERAL = "general"
    DETAILED = "detailed"


class TaskFamily(str, Enum):
    ON_BEAT = "on_beat"
    STORY_DRIVEN = "story_driven"


@dataclass(frozen=True)
class EditIntent:
    """User editing intent: free-form text plus its taxonomy tags."""

    text: str
    intent_level: IntentLevel = IntentLevel.GENERAL
    task_family: TaskFamily = TaskFamily.ON_BEAT

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("intent text must be nonempty")
        object.__setattr__(self, "intent_level", IntentLevel(self.intent_level))
        object.__setattr__(self, "task_family", TaskFamily(self.task_family))


@dataclass(frozen=True)
class TimelineUnit:
    """One placed subclip: a source span positioned on the music timeline."""

    source_id: str
    source_in: float
    source_out: float
    timeline_start: float
    tags: frozenset[str] = frozenset()
    characters: frozenset[str] = frozenset()
    emotion: str | None = None

    def __post_init__(self) -> None:
        if self.source_in < 0:
            raise ValidationError(f"source_in must be >= 0, got {self.source_in}")
        if self.source_out <= self.source_in + TIME_EPSILON:
            raise ValidationError(
                f"source_out must exceed source_in ({self.source_in} .. {self.source_out})"
            )
        if self.timeline_start < 0:
            raise ValidationError("timeline_start must be >= 0")
        object.__setattr__(self, "tags", frozenset(self.tags))
        object.__setattr__(self, "characters", frozenset(self.characters))

    @property
    def duration(self) -> float:
        return self.source_out - self.source_in

    @property
    def timeline_end(self) -> float:
        return self.timeline_start + self.duration


@dataclass(frozen=True)
class TimelineMemo:
    """Compact execution state of one edited segment."""

    used_clip_spans: tuple[tuple[str, float, float], ...] = ()
    dominant_emotion: str | None = None
    main_characters: frozenset[str] = frozenset()
    last_shot_summary: str = ""
    revision_count: int = 0

    def __post_init__(self) -> None:
        if self.revision_count < 0:
            raise ValidationError("revision_count must be >= 0")
        if len(self.last_shot_summary.split()) > 60:
            raise ValidationError("last_shot_summary capped at 60 words")
        object.__setattr__(self, "used_clip_spans", tuple(map(tuple, self.used_clip_spans)))
        object.__setattr__(self, "main_characters", frozenset(self.main_characters))

    def bumped(self) -> TimelineMemo:
        return replace(self, revision_count=self.revision_count + 1)


@dataclass(frozen=True)
class SubTimeline:
    """The edited content for one music segment."""

    segment_index: int
    units: tuple[TimelineUnit, ...] = ()
    memo: TimelineMemo = field(default_factory=TimelineMemo)

    def __post_init__(self) -> None:
        if self.segment_index < 0:
            raise ValidationError("segment_index must be >= 0")
        units = tuple(self.units)
        for prev, cur in zip(units, units[1:]):
            if cur.timeline_start < prev.timeline_start - TIME_EPSILON:
                raise ValidationError(
                    f"segment {self.segment_index}: units not sorted by timeline_start"
                )
            if cur.timeline_start < prev.timeline_end - TIME_EPSILON:
                raise ValidationError(
                    f"segment {self.segment_index}: units overlap at {cur.timeline_start}"
                )
        object.__setattr__(self, "units", units)

    @property
    def start(self) -> float | None:
        return self.units[0].timeline_start if self.units else None

    @property
    def end(self) -> float | None:
        return self.units[-1].timeline_end if self.units else None

    @property
    def filled(self) -> float:
        return sum(u.duration for u in self.units)

    def internal_cuts(self) -> list[float]:
        """Cut positions between consecutive units inside this segment."""
        return [u.timeline_end for u in self.units[:-1]]


@dataclass(frozen=True)
class Timeline:
    """Final edit artifact: ordered sub-timelines against one music track."""

    segments: tuple[SubTimeline, ...]
    music_ref: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        for pos, sub in enumerate(self.segments):
            if sub.segment_index != pos:
                raise ValidationError(
                    f"segment indices must be contiguous from 0; position {pos} "
                    f"holds index {sub.segment_index}"
                )
        last_end = 0.0
        for sub in self.segments:
            for unit in sub.units:
                if unit.timeline_start < last_end - TIME_EPSILON:
                    raise ValidationError(
                        f"global unit order broken at {unit.timeline_start}"
                    )
                last_end = unit.timeline_end

    def units(self) -> list[TimelineUnit]:
        return [u for sub in self.segments for u in sub.units]

    @property
    def duration(self) -> float:
        ends = [u.timeline_end for u in self.units()]
        return max(ends) if ends else 0.0

    def internal_cuts(self) -> list[float]:
        """Transition points between consecutive units across the whole timeline.

        A gap between two units contributes both its end and start positions.
        """
        units = self.units()
        cuts: list[float] = []
        for prev, cur in zip(units, units[1:]):
            cuts.append(prev.timeline_end)
            if cur.timeline_start > prev.timeline_end + TIME_EPSILON:
                cuts.append(cur.timeline_start)
        return cuts


@dataclass(frozen=True)
class ScoreBreakdown:
    """Global score decomposed into its local, pairwise, and timeline terms."""

    local_scores: tuple[float, ...]
    pairwise_penalties: tuple[tuple[tuple[int, int], float], ...]
    global_term: float
    total: float

    def recompute_total(self) -> float:
        return (
            sum(self.local_scores)
            + sum(v for _, v in self.pairwise_penalties)
            + self.global_term
        )


def compose_timelines(subtimelines: list[SubTimeline], music_ref: str) -> Timeline:
    """Compose per-segment results into one timeline.

    Input order does not matter; sub-timelines are arranged by segment index.
    Raises CompositionError on duplicate/missing indices or units that
    overlap across a segment boundary.
    """
    ordered = sorted(subtimelines, key=lambda s: s.segment_index)
    seen: set[int] = set()
    for sub in ordered:
        if sub.segment_index in seen:
            raise CompositionError(f"duplicate segment index {sub.segment_index}")
        seen.add(sub.segment_index)
    if seen and seen != set(range(len(ordered))):
        missing = sorted(set(range(len(ordered))) - seen)
        raise CompositionError(f"segment indices not contiguous; missing {missing}")

    last_end = 0.0
    last_idx: int | None = None
    for sub in ordered:
        if sub.units and sub.units[0].timeline_start < last_end - TIME_EPSILON:
            raise CompositionError(
                f"segments {last_idx} and {sub.segment_index} overlap at "
                f"{sub.units[0].timeline_start:.3f}"
            )
        if sub.units:
            last_end = sub.units[-1].timeline_end
            last_idx = sub.segment_index
    return Timeline(segments=tuple(ordered), music_ref=music_ref)


def unit_relevance(unit: TimelineUnit, query_text: str) -> float:
    """Token overlap between a unit's semantic tags and a piece of text."""
    return overlap(set(tokenize(query_text)), set(unit.tags))


def offbeat_fraction(sub: SubTimeline, beats: list[float], tolerance: float) -> float:
    """Fraction of this segment's internal cuts farther than ``tolerance``
    from every beat. Zero when there are no internal cuts or no beats to
    judge against."""
    cuts = sub.internal_cuts()
    if not cuts or len(beats) < 2:
        return 0.0
    off = sum(1 for c in cuts if min(abs(c - b) for b in beats) > tolerance)
    return off / len(cuts)


def dominant_emotion(sub: SubTimeline) -> str | None:
    counts: dict[str, int] = {}
    for unit in sub.units:
        if unit.emotion:
            counts[unit.emotion] = counts.get(unit.emotion, 0) + 1
    if not counts:
        return None
    return min(counts, key=lambda e: (-counts[e], e))


def span_overlap(a: tuple[str, float, float], b: tuple[str, float, float]) -> float:
    """Seconds of overlap between two source spans; 0 for different sources."""
    if a[0] != b[0]:
        return 0.0
    return max(0.0, min(a[2], b[2]) - max(a[1], b[1]))


def _segment_score(
    sub: SubTimeline,
    beats: list[float],
    intent: EditIntent,
    cfg: ScorerConfig,
) -> float:
    if not sub.units:
        return 0.0
    mean_rel = sum(unit_relevance(u, intent.text) for u in sub.units) / len(sub.units)
    bonus = cfg.beat_bonus * (1.0 - offbeat_fraction(sub, beats, cfg.beat_tolerance))
    return mean_rel + bonus


def _pair_penalty(
    sub_i: SubTimeline,
    sub_j: SubTimeline,
    adjacent: bool,
    cfg: ScorerConfig,
) -> float:
    penalty = 0.0
    spans_i = [(u.source_id, u.source_in, u.source_out) for u in sub_i.units]
    spans_j = [(u.source_id, u.source_in, u.source_out) for u in sub_j.units]
    for a in spans_i:
        for b in spans_j:
            if span_overlap(a, b) > cfg.dup_overlap:
                penalty -= cfg.dup_penalty
    if adjacent and antagonistic(dominant_emotion(sub_i), dominant_emotion(sub_j)):
        penalty -= cfg.emotion_penalty
    return penalty


def global_score(
    timeline: Timeline,
    intent: EditIntent,
    segments: list,
    scorer_config: ScorerConfig | None = None,
) -> ScoreBreakdown:
    """Deterministic full-timeline objective.

    Per-segment terms reward intent relevance and on-beat cutting; pairwise
    terms penalize repeated source spans and antagonistic adjacent emotions;
    the global term penalizes total duration mismatch against the music.
    """
    cfg = scorer_config or ScorerConfig()
    if len(timeline.segments) != len(segments):
        raise ScoreError(
            f"timeline has {len(timeline.segments)} segments, music has {len(segments)}"
        )
    local = tuple(
        _segment_score(sub, list(seg.attributes.beats), intent, cfg)
        for sub, seg in zip(timeline.segments, segments)
    )
    pairwise: list[tuple[tuple[int, int], float]] = []
    n = len(timeline.segments)
    for i in range(n):
        for j in range(i + 1, n):
            p = _pair_penalty(
                timeline.segments[i], timeline.segments[j], adjacent=(j == i + 1), cfg=cfg
            )
            if p != 0.0:
                pairwise.append(((i, j), p))
    music_duration = segments[-1].end if segments else 0.0
    h = -cfg.duration_weight * abs(timeline.duration - music_duration)
    total = sum(local) + sum(v for _, v in pairwise) + h
    return ScoreBreakdown(
        local_scores=local,
        pairwise_penalties=tuple(pairwise),
        global_term=h,
        total=total,
    )
