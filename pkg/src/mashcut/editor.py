"""Inner-loop segment editing.

One segment at a time: generate retrieval queries from the instruction,
retrieve and rank whole-scene clip candidates, greedily assemble a rough
cut whose cuts land on beats, then diagnose and repair until the segment
passes or the iteration budget runs out. On exhaustion the best-scoring
iterate wins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .agents import AgentRequest, AgentRole, Backend, TokenLedger, invoke
from .config import TIME_EPSILON, EngineConfig
from .errors import EmptySegmentError, NeedMoreClips, RetrievalError, ValidationError
from .ingest import MusicSegment, VideoMeta, median_beat_interval
from .model import (
    SubTimeline,
    TaskFamily,
    TimelineMemo,
    TimelineUnit,
    antagonistic,
    dominant_emotion,
    span_overlap,
)
from .text import keywords, overlap, tokenize
from .trace import RunTrace

if TYPE_CHECKING:  # import only for annotations; coordinator imports us at runtime
    from .coordinator import ContextBundle


@dataclass(frozen=True)
class RetrievalQuery:
    segment_index: int
    text: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("query text must be nonempty")
        if not (0 < self.weight <= 1):
            raise ValidationError(f"query weight {self.weight} outside (0, 1]")


@dataclass(frozen=True)
class ClipCandidate:
    source_id: str
    start: float
    end: float
    caption: str
    keywords: frozenset[str] = frozenset()
    characters: frozenset[str] = frozenset()
    emotion: str | None = None
    relevance: float = 0.0

    def __post_init__(self) -> None:
        if self.end <= self.start + TIME_EPSILON:
            raise ValidationError("candidate end must exceed start")
        object.__setattr__(self, "keywords", frozenset(self.keywords))
        object.__setattr__(self, "characters", frozenset(self.characters))

    @property
    def duration(self) -> float:
        return self.end - self.start

    def doc_tokens(self) -> frozenset[str]:
        return self.keywords | frozenset(tokenize(self.caption))

    @property
    def span(self) -> tuple[str, float, float]:
        return (self.source_id, self.start, self.end)


@dataclass(frozen=True)
class LocalDiagnosis:
    """Outcome of one verification pass over a sub-timeline."""

    duration_error: float
    offbeat_cuts: tuple[float, ...] = ()
    consistency_flags: frozenset[str] = frozenset()
    duration_tolerance: float = 0.25

    def __post_init__(self) -> None:
        object.__setattr__(self, "offbeat_cuts", tuple(self.offbeat_cuts))
        object.__setattr__(self, "consistency_flags", frozenset(self.consistency_flags))

    @property
    def ok(self) -> bool:
        return (
            abs(self.duration_error) <= self.duration_tolerance + TIME_EPSILON
            and not self.offbeat_cuts
            and not self.consistency_flags
        )


@dataclass(frozen=True)
class RepairConstraints:
    """Structured repair directives carried into a re-edit."""

    avoid_spans: tuple[tuple[str, float, float], ...] = ()
    target_emotion: str | None = None
    require_characters: frozenset[str] = frozenset()
    align_end: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "avoid_spans", tuple(map(tuple, self.avoid_spans)))
        object.__setattr__(self, "require_characters", frozenset(self.require_characters))


# ---------------------------------------------------------------------------
# query generation
# ---------------------------------------------------------------------------

_FIELD_SEP = ";"


def parse_instruction_fields(instruction: str) -> dict[str, str]:
    """Split 'key=value' fields out of a scripted instruction string."""
    fields: dict[str, str] = {}
    body = instruction.split(":", 1)[1] if ":" in instruction else instruction
    for part in body.split(_FIELD_SEP):
        if "=" in part:
            key, value = part.split("=", 1)
            fields[key.strip().lower()] = value.strip()
    return fields


def scripted_query_payload(context: dict[str, Any]) -> list[dict[str, Any]]:
    """Scripted retrieval-query heuristic: theme, emotion, and action terms."""
    instruction = context["instruction"]
    limit = int(context.get("max_queries", 3))
    fields = parse_instruction_fields(instruction)
    theme = fields.get("theme", "")
    theme_terms = keywords(theme) or keywords(instruction)
    queries: list[dict[str, Any]] = []
    if theme_terms:
        queries.append({"text": " ".join(theme_terms), "weight": 1.0})
    emotion = fields.get("emotion", "").strip()
    if emotion:
        queries.append({"text": emotion, "weight": 0.5})
    if len(theme_terms) >= 2:
        queries.append({"text": theme_terms[-1], "weight": 0.75})
    seen: set[str] = set()
    unique = []
    for q in queries:
        if q["text"] not in seen:
            seen.add(q["text"])
            unique.append(q)
    if not unique:
        unique = [{"text": instruction, "weight": 1.0}]
    return unique[:limit]


def generate_queries(
    instruction: str,
    backend: Backend,
    *,
    segment_index: int = 0,
    cfg: EngineConfig | None = None,
    ledger: TokenLedger | None = None,
) -> list[RetrievalQuery]:
    """Ask the retrieval agent for up to ``max_queries`` search strings."""
    if not instruction.strip():
        raise ValidationError("instruction must be nonempty")
    cfg = cfg or EngineConfig()
    request = AgentRequest(
        agent_role=AgentRole.RETRIEVAL,
        context={"instruction": instruction, "max_queries": cfg.max_queries},
        expected_schema="query_list",
    )
    response = invoke(request, backend, ledger)
    out = [
        RetrievalQuery(segment_index=segment_index, text=q["text"], weight=float(q["weight"]))
        for q in response.payload[: cfg.max_queries]
    ]
    return out


# ---------------------------------------------------------------------------
# retrieval and ranking
# ---------------------------------------------------------------------------


def retrieve_clips(
    queries: list[RetrievalQuery],
    videos: list[VideoMeta],
    scope: set[str],
) -> list[ClipCandidate]:
    """Text search over scene captions and keywords within the scoped videos.

    Relevance is the best weighted token overlap across the queries; scenes
    with zero overlap are omitted. Candidates are whole scene spans.
    """
    known = {v.video_id for v in videos}
    if not scope:
        raise RetrievalError("retrieval scope is empty")
    unknown = scope - known
    if unknown:
        raise RetrievalError(f"scope names unknown videos: {sorted(unknown)}")
    query_tokens = [(set(tokenize(q.text)), q.weight) for q in queries]
    out: list[ClipCandidate] = []
    for video in videos:
        if video.video_id not in scope:
            continue
        for scene in video.scenes:
            doc = scene.keywords | frozenset(tokenize(scene.caption))
            rel = max((w * overlap(q, doc) for q, w in query_tokens), default=0.0)
            if rel <= 0:
                continue
            out.append(
                ClipCandidate(
                    source_id=video.video_id,
                    start=scene.start,
                    end=scene.end,
                    caption=scene.caption,
                    keywords=scene.keywords,
                    characters=scene.characters,
                    emotion=scene.emotion,
                    relevance=min(1.0, rel),
                )
            )
    out.sort(key=lambda c: (-c.relevance, c.source_id, c.start))
    return out


def rank_and_filter(
    candidates: list[ClipCandidate],
    instruction: str | None = None,
    intent: Any = None,
    attributes: Any = None,
    *,
    cfg: EngineConfig | None = None,
) -> list[ClipCandidate]:
    """Deduplicate near-identical spans, drop too-short clips, cap the list."""
    cfg = cfg or EngineConfig()
    usable = [c for c in candidates if c.duration >= cfg.min_clip - TIME_EPSILON]
    usable.sort(key=lambda c: (-c.relevance, c.source_id, c.start))
    kept: list[ClipCandidate] = []
    for cand in usable:
        dup = any(
            span_overlap(cand.span, other.span) > cfg.scorer.dup_overlap for other in kept
        )
        if not dup:
            kept.append(cand)
        if len(kept) >= cfg.max_candidates:
            break
    return kept


def apply_constraints(
    candidates: list[ClipCandidate],
    constraints: RepairConstraints | None,
    cfg: EngineConfig,
) -> list[ClipCandidate]:
    if constraints is None:
        return candidates
    out = []
    for c in candidates:
        if any(
            span_overlap(c.span, tuple(s)) > cfg.scorer.dup_overlap
            for s in constraints.avoid_spans
        ):
            continue
        if constraints.target_emotion and antagonistic(c.emotion, constraints.target_emotion):
            continue
        out.append(c)
    if constraints.require_characters:
        matching = [c for c in out if c.characters & constraints.require_characters]
        if matching:
            out = matching
    return out


# ---------------------------------------------------------------------------
# rough cut
# ---------------------------------------------------------------------------


def _nearest_beat(target: float, beats: list[float], lo: float, hi: float) -> float | None:
    """Beat closest to ``target`` within [lo, hi]; earlier wins ties."""
    best = None
    for b in beats:
        if lo - TIME_EPSILON <= b <= hi + TIME_EPSILON:
            if best is None or abs(b - target) < abs(best - target) - TIME_EPSILON:
                best = b
    return best


def _unit_from_candidate(cand: ClipCandidate, pos: float, duration: float) -> TimelineUnit:
    return TimelineUnit(
        source_id=cand.source_id,
        source_in=cand.start,
        source_out=cand.start + duration,
        timeline_start=pos,
        tags=cand.doc_tokens(),
        characters=cand.characters,
        emotion=cand.emotion,
    )


def _greedy_fill(
    candidates: list[ClipCandidate],
    order: list[int],
    segment: MusicSegment,
    cfg: EngineConfig,
    start_pos: float | None = None,
    align_end: bool = False,
) -> list[TimelineUnit]:
    beats = list(segment.attributes.beats)
    pos = segment.start if start_pos is None else start_pos
    units: list[TimelineUnit] = []
    for idx in order:
        cand = candidates[idx]
        remaining = segment.end - pos
        if remaining < cfg.min_clip - TIME_EPSILON:
            break
        tentative = pos + min(cand.duration, remaining)
        hi = min(pos + cand.duration, segment.end)
        end = _nearest_beat(tentative, beats, pos + cfg.min_clip, hi)
        if end is None:
            end = tentative
        units.append(_unit_from_candidate(cand, pos, end - pos))
        pos = end
    if align_end and units:
        units = _align_last_unit(units, candidates, segment, cfg)
    return units


def _align_last_unit(
    units: list[TimelineUnit],
    candidates: list[ClipCandidate],
    segment: MusicSegment,
    cfg: EngineConfig,
) -> list[TimelineUnit]:
    """Force the final cut onto a beat (trim or extend, within clip bounds)."""
    beats = list(segment.attributes.beats)
    last = units[-1]
    cand = _matching_candidate(last, candidates)
    hi = segment.end if cand is None else min(segment.end, last.timeline_start + cand.duration)
    target = _nearest_beat(last.timeline_end, beats, last.timeline_start + cfg.min_clip, hi)
    if target is None or abs(target - last.timeline_end) <= TIME_EPSILON:
        return units
    new_dur = target - last.timeline_start
    units[-1] = TimelineUnit(
        source_id=last.source_id,
        source_in=last.source_in,
        source_out=last.source_in + new_dur,
        timeline_start=last.timeline_start,
        tags=last.tags,
        characters=last.characters,
        emotion=last.emotion,
    )
    return units


def _matching_candidate(
    unit: TimelineUnit, candidates: list[ClipCandidate]
) -> ClipCandidate | None:
    for cand in candidates:
        if (
            cand.source_id == unit.source_id
            and cand.start - TIME_EPSILON <= unit.source_in
            and unit.source_in < cand.end
        ):
            return cand
    return None


def candidate_used(cand: ClipCandidate, units: list[TimelineUnit]) -> bool:
    return any(
        u.source_id == cand.source_id
        and span_overlap((u.source_id, u.source_in, u.source_out), cand.span) > TIME_EPSILON
        for u in units
    )


def build_memo(units: list[TimelineUnit], revision_count: int = 0) -> TimelineMemo:
    spans = tuple((u.source_id, u.source_in, u.source_out) for u in units)
    counts: dict[str, int] = {}
    for u in units:
        for ch in u.characters:
            counts[ch] = counts.get(ch, 0) + 1
    threshold = max(1, (len(units) + 1) // 2)
    main = frozenset(c for c, n in counts.items() if n >= threshold) or frozenset(counts)
    summary = ""
    if units:
        last = units[-1]
        parts = [last.source_id]
        if last.emotion:
            parts.append(last.emotion)
        parts.extend(sorted(last.tags)[:8])
        summary = " ".join(parts[:60])
    sub = SubTimeline(segment_index=0, units=tuple(units))  # reuse emotion helper
    return TimelineMemo(
        used_clip_spans=spans,
        dominant_emotion=dominant_emotion(sub),
        main_characters=main,
        last_shot_summary=summary,
        revision_count=revision_count,
    )


def rough_cut(
    candidates: list[ClipCandidate],
    segment: MusicSegment,
    instruction: str,
    backend: Backend,
    *,
    cfg: EngineConfig | None = None,
    ledger: TokenLedger | None = None,
    constraints: RepairConstraints | None = None,
) -> SubTimeline:
    """Assemble a preliminary sub-timeline by greedy beat-snapped filling.

    Candidates are consumed in the order the rough-cut agent proposes
    (rank order under the scripted backend); each placed clip is trimmed so
    its cut lands on a beat at least ``min_clip`` after the clip starts.
    """
    cfg = cfg or EngineConfig()
    if not candidates:
        raise EmptySegmentError(f"segment {segment.index}: no clip candidates")
    request = AgentRequest(
        agent_role=AgentRole.ROUGHCUT,
        context={
            "segment": {"index": segment.index, "start": segment.start, "end": segment.end},
            "candidates": [
                {"source_id": c.source_id, "start": c.start, "end": c.end,
                 "relevance": round(c.relevance, 6)}
                for c in candidates
            ],
            "instruction": instruction,
        },
        expected_schema="candidate_order",
    )
    response = invoke(request, backend, ledger)
    order = [i for i in response.payload if 0 <= i < len(candidates)]
    order += [i for i in range(len(candidates)) if i not in set(order)]
    units = _greedy_fill(
        candidates, order, segment, cfg,
        align_end=bool(constraints and constraints.align_end),
    )
    return SubTimeline(
        segment_index=segment.index, units=tuple(units), memo=build_memo(units)
    )


def scripted_roughcut_payload(context: dict[str, Any]) -> list[int]:
    """Scripted rough-cut ordering: keep the ranked candidate order."""
    return list(range(len(context.get("candidates", []))))


# ---------------------------------------------------------------------------
# diagnosis
# ---------------------------------------------------------------------------


def instruction_relevance(unit: TimelineUnit, instruction: str) -> float:
    return overlap(set(keywords(instruction)), set(unit.tags))


def diagnose_local(
    sub: SubTimeline,
    segment: MusicSegment,
    instruction: str,
    *,
    task_family: TaskFamily = TaskFamily.ON_BEAT,
    cfg: EngineConfig | None = None,
) -> LocalDiagnosis:
    """Verify one sub-timeline: duration fit, beat sync, consistency flags."""
    cfg = cfg or EngineConfig()
    beats = list(segment.attributes.beats)
    tolerance = median_beat_interval(beats, fallback=cfg.duration_tolerance_fallback)
    duration_error = sub.filled - segment.length

    offbeat: list[float] = []
    if len(beats) >= 2:
        for cut in sub.internal_cuts():
            if min(abs(cut - b) for b in beats) > cfg.beat_tolerance:
                offbeat.append(cut)

    flags: set[str] = set()
    units = list(sub.units)
    if units:
        bad = sum(
            1 for u in units if antagonistic(u.emotion, segment.attributes.emotion)
        )
        if bad / len(units) > 0.5:
            flags.add("emotion_mismatch")
        if task_family == TaskFamily.STORY_DRIVEN:
            for prev, cur in zip(units, units[1:]):
                if not (prev.characters & cur.characters):
                    flags.add("character_break")
                    break
        mean_rel = sum(instruction_relevance(u, instruction) for u in units) / len(units)
        if mean_rel < cfg.semantic_drift_floor:
            flags.add("semantic_drift")

    return LocalDiagnosis(
        duration_error=duration_error,
        offbeat_cuts=tuple(offbeat),
        consistency_flags=frozenset(flags),
        duration_tolerance=tolerance,
    )


def local_score(
    sub: SubTimeline,
    segment: MusicSegment,
    instruction: str,
    *,
    task_family: TaskFamily = TaskFamily.ON_BEAT,
    cfg: EngineConfig | None = None,
) -> float:
    """Inner-loop iterate quality: relevance + beat fit - consistency flags."""
    cfg = cfg or EngineConfig()
    if not sub.units:
        return 0.0
    diag = diagnose_local(sub, segment, instruction, task_family=task_family, cfg=cfg)
    mean_rel = sum(instruction_relevance(u, instruction) for u in sub.units) / len(sub.units)
    cuts = sub.internal_cuts()
    off_fraction = len(diag.offbeat_cuts) / len(cuts) if cuts else 0.0
    return mean_rel + 0.2 * (1.0 - off_fraction) - 0.3 * len(diag.consistency_flags)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


def scripted_refine_payload(context: dict[str, Any]) -> list[dict[str, Any]]:
    """Scripted repair planning over a serialized diagnosis.

    Ordering matters: snap offbeat cuts first, then fix duration, then swap
    antagonistic-emotion units. Emits ``need_more_clips`` when nothing
    admissible is left.
    """
    actions: list[dict[str, Any]] = []
    units = context["units"]
    cands = context["candidates"]
    beats = context["beats"]
    min_clip = context["min_clip"]
    internal_cuts = [u["end"] for u in units[:-1]]
    used = [c["used"] for c in cands]

    for cut in context["offbeat_cuts"]:
        nearest = None
        for b in beats:
            if nearest is None or abs(b - cut) < abs(nearest - cut):
                nearest = b
        if nearest is None:
            continue
        for k, pos in enumerate(internal_cuts):
            if abs(pos - cut) <= 1e-6:
                actions.append({"op": "snap", "cut_index": k, "to": nearest})
                break

    err = context["duration_error"]
    tolerance = context["duration_tolerance"]
    if err > tolerance and units:
        last = units[-1]
        if (last["end"] - last["start"]) - err >= min_clip:
            actions.append({"op": "trim", "amount": err})
        else:
            actions.append({"op": "drop_last"})
    elif err < -tolerance:
        free = [j for j in range(len(cands)) if not used[j]]
        if free:
            actions.append({"op": "append", "candidate": free[0]})
        else:
            actions.append({"op": "need_more_clips"})

    if "emotion_mismatch" in context["flags"]:
        segment_emotion = context["segment_emotion"]
        swapped_any = False
        taken: set[int] = set()
        for k, u in enumerate(units):
            if not u["antagonistic"]:
                continue
            slot = u["end"] - u["start"]
            best = None
            for j, c in enumerate(cands):
                if used[j] or j in taken or c["antagonistic"]:
                    continue
                if c["duration"] + 1e-9 < slot:
                    continue
                if best is None or c["relevance"] > cands[best]["relevance"]:
                    best = j
            if best is not None:
                actions.append({"op": "swap", "unit": k, "candidate": best})
                taken.add(best)
                swapped_any = True
        if not swapped_any and not actions:
            actions.append({"op": "need_more_clips"})

    if not actions:
        actions.append({"op": "need_more_clips"})
    return actions


def _refine_context(
    sub: SubTimeline,
    diagnosis: LocalDiagnosis,
    candidates: list[ClipCandidate],
    segment: MusicSegment,
    cfg: EngineConfig,
) -> dict[str, Any]:
    segment_emotion = segment.attributes.emotion
    units = [
        {
            "source_id": u.source_id,
            "source_in": u.source_in,
            "start": u.timeline_start,
            "end": u.timeline_end,
            "emotion": u.emotion,
            "antagonistic": antagonistic(u.emotion, segment_emotion),
        }
        for u in sub.units
    ]
    cands = [
        {
            "source_id": c.source_id,
            "in": c.start,
            "out": c.end,
            "duration": c.duration,
            "emotion": c.emotion,
            "relevance": round(c.relevance, 6),
            "used": candidate_used(c, list(sub.units)),
            "antagonistic": antagonistic(c.emotion, segment_emotion),
        }
        for c in candidates
    ]
    return {
        "segment": {"index": segment.index, "start": segment.start, "end": segment.end},
        "segment_emotion": segment_emotion,
        "beats": list(segment.attributes.beats),
        "units": units,
        "candidates": cands,
        "duration_error": diagnosis.duration_error,
        "duration_tolerance": diagnosis.duration_tolerance,
        "offbeat_cuts": list(diagnosis.offbeat_cuts),
        "flags": sorted(diagnosis.consistency_flags),
        "min_clip": cfg.min_clip,
    }


def _apply_snap(
    units: list[TimelineUnit],
    cut_index: int,
    target: float,
    candidates: list[ClipCandidate],
) -> list[TimelineUnit]:
    if not (0 <= cut_index < len(units) - 1):
        return units
    left, right = units[cut_index], units[cut_index + 1]
    delta = target - left.timeline_end
    if abs(delta) <= TIME_EPSILON:
        return units
    cand_left = _matching_candidate(left, candidates)
    new_left_out = left.source_out + delta
    if cand_left is not None and new_left_out > cand_left.end + TIME_EPSILON:
        return units
    new_right_in = right.source_in + delta
    cand_right = _matching_candidate(right, candidates)
    if cand_right is not None and new_right_in < cand_right.start - TIME_EPSILON:
        return units
    if new_left_out - left.source_in <= TIME_EPSILON:
        return units
    if right.source_out - new_right_in <= TIME_EPSILON:
        return units
    units = list(units)
    units[cut_index] = TimelineUnit(
        source_id=left.source_id, source_in=left.source_in, source_out=new_left_out,
        timeline_start=left.timeline_start, tags=left.tags,
        characters=left.characters, emotion=left.emotion,
    )
    units[cut_index + 1] = TimelineUnit(
        source_id=right.source_id, source_in=new_right_in, source_out=right.source_out,
        timeline_start=target, tags=right.tags,
        characters=right.characters, emotion=right.emotion,
    )
    return units


def refine(
    sub: SubTimeline,
    diagnosis: LocalDiagnosis,
    candidates: list[ClipCandidate],
    segment: MusicSegment,
    backend: Backend,
    *,
    cfg: EngineConfig | None = None,
    ledger: TokenLedger | None = None,
) -> SubTimeline:
    """Apply one round of repairs proposed by the refinement agent.

    An already-passing sub-timeline comes back unchanged. Raises
    NeedMoreClips when no admissible repair exists.
    """
    cfg = cfg or EngineConfig()
    if diagnosis.ok:
        return sub
    request = AgentRequest(
        agent_role=AgentRole.REFINE,
        context=_refine_context(sub, diagnosis, candidates, segment, cfg),
        expected_schema="refine_actions",
    )
    response = invoke(request, backend, ledger)
    units = list(sub.units)
    for action in response.payload:
        op = action["op"]
        if op == "need_more_clips":
            raise NeedMoreClips(f"segment {segment.index}: refinement exhausted candidates")
        if op == "snap":
            units = _apply_snap(units, int(action["cut_index"]), float(action["to"]), candidates)
        elif op == "trim" and units:
            amount = float(action["amount"])
            last = units[-1]
            if last.duration - amount > TIME_EPSILON:
                units[-1] = TimelineUnit(
                    source_id=last.source_id, source_in=last.source_in,
                    source_out=last.source_out - amount,
                    timeline_start=last.timeline_start, tags=last.tags,
                    characters=last.characters, emotion=last.emotion,
                )
        elif op == "drop_last" and units:
            units.pop()
        elif op == "append":
            j = int(action["candidate"])
            if 0 <= j < len(candidates) and units:
                pos = units[-1].timeline_end
                units.extend(_greedy_fill(candidates, [j], segment, cfg, start_pos=pos))
            elif 0 <= j < len(candidates):
                units.extend(_greedy_fill(candidates, [j], segment, cfg))
        elif op == "swap":
            k, j = int(action["unit"]), int(action["candidate"])
            if 0 <= k < len(units) and 0 <= j < len(candidates):
                slot = units[k]
                cand = candidates[j]
                if cand.duration >= slot.duration - TIME_EPSILON:
                    units[k] = _unit_from_candidate(cand, slot.timeline_start, slot.duration)
    return SubTimeline(
        segment_index=sub.segment_index,
        units=tuple(units),
        memo=build_memo(units, revision_count=sub.memo.revision_count + 1),
    )


# ---------------------------------------------------------------------------
# the full inner loop
# ---------------------------------------------------------------------------


def inner_loop_edit(
    bundle: ContextBundle,
    backend: Backend,
    *,
    segment: MusicSegment,
    videos: list[VideoMeta],
    task_family: TaskFamily = TaskFamily.ON_BEAT,
    cfg: EngineConfig | None = None,
    ledger: TokenLedger | None = None,
    trace: RunTrace | None = None,
    constraints: RepairConstraints | None = None,
) -> SubTimeline:
    """Edit one segment end to end: retrieve, rough-cut, diagnose, refine.

    Runs at most ``max_iter`` diagnose/refine rounds plus one relaxed
    re-retrieval; if nothing passes, returns the iterate with the highest
    local score. A segment that stays empty after relaxation comes back as
    an empty sub-timeline (the caller records the failure).
    """
    cfg = cfg or EngineConfig()
    instruction = bundle.instruction
    queries = generate_queries(
        instruction, backend, segment_index=segment.index, cfg=cfg, ledger=ledger
    )
    if trace is not None:
        trace.emit("queries", segment=segment.index, texts=[q.text for q in queries])

    def _retrieve(scope: set[str], qs: list[RetrievalQuery]) -> list[ClipCandidate]:
        found = retrieve_clips(qs, videos, scope)
        found = apply_constraints(found, constraints, cfg)
        return rank_and_filter(found, instruction, None, segment.attributes, cfg=cfg)

    def _relaxed() -> list[ClipCandidate]:
        relaxed_queries = [
            q for q in queries if q.text != segment.attributes.emotion
        ] or queries
        return _retrieve({v.video_id for v in videos}, relaxed_queries)

    candidates = _retrieve(set(bundle.retrieval_scope), queries)
    retried = False
    if not candidates:
        retried = True
        candidates = _relaxed()
        if not candidates:
            if trace is not None:
                trace.emit("inner_loop", segment=segment.index, status="failed",
                           reason="no candidates", evaluations=0)
            return SubTimeline(segment_index=segment.index, units=(), memo=build_memo([]))

    sub = rough_cut(candidates, segment, instruction, backend,
                    cfg=cfg, ledger=ledger, constraints=constraints)
    iterates: list[tuple[SubTimeline, float]] = []
    evaluations = 0

    def _score(s: SubTimeline) -> float:
        return local_score(s, segment, instruction, task_family=task_family, cfg=cfg)

    rounds = 0
    for round_no in range(cfg.max_iter + 1):
        diag = diagnose_local(sub, segment, instruction, task_family=task_family, cfg=cfg)
        evaluations += 1
        iterates.append((sub, _score(sub)))
        if diag.ok:
            if trace is not None:
                trace.emit("inner_loop", segment=segment.index, status="pass",
                           rounds=rounds, evaluations=evaluations,
                           revisions=sub.memo.revision_count)
            return sub
        if round_no == cfg.max_iter:
            break
        try:
            sub = refine(sub, diag, candidates, segment, backend, cfg=cfg, ledger=ledger)
            rounds += 1
        except NeedMoreClips:
            if retried:
                break
            retried = True
            extra = _relaxed()
            known = {c.span for c in candidates}
            merged = candidates + [c for c in extra if c.span not in known]
            candidates = rank_and_filter(merged, instruction, None,
                                         segment.attributes, cfg=cfg)
            if not candidates:
                break
            sub = rough_cut(candidates, segment, instruction, backend,
                            cfg=cfg, ledger=ledger, constraints=constraints)
            rounds += 1

    best_sub, _ = max(iterates, key=lambda pair: pair[1]) if iterates else (sub, 0.0)
    if trace is not None:
        trace.emit("inner_loop", segment=segment.index, status="fallback",
                   rounds=rounds, evaluations=evaluations,
                   revisions=best_sub.memo.revision_count)
    return best_sub
