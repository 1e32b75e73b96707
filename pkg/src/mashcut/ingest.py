"""Input loading and music analysis.

Video pools arrive as JSON manifests of pre-analyzed scene metadata; music
arrives either as a JSON annotation (beats, segment boundaries, emotions)
or as a sampled energy envelope. Everything downstream is derived
deterministically from these files.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TIME_EPSILON, EngineConfig
from .errors import AnalysisError, IngestError, ValidationError
from .model import EMOTIONS


@dataclass(frozen=True)
class Scene:
    """One pre-analyzed span of a source video."""

    start: float
    end: float
    caption: str
    keywords: frozenset[str] = frozenset()
    characters: frozenset[str] = frozenset()
    emotion: str | None = None

    def __post_init__(self) -> None:
        if self.end <= self.start + TIME_EPSILON:
            raise ValidationError(f"scene end must exceed start ({self.start} .. {self.end})")
        if not self.caption.strip():
            raise ValidationError("scene caption must be nonempty")
        object.__setattr__(self, "keywords", frozenset(k.lower() for k in self.keywords))
        object.__setattr__(self, "characters", frozenset(self.characters))

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    duration: float
    scenes: tuple[Scene, ...] = ()

    def __post_init__(self) -> None:
        if not self.video_id:
            raise ValidationError("video_id must be nonempty")
        if self.duration <= 0:
            raise ValidationError(f"video {self.video_id}: duration must be > 0")
        scenes = tuple(self.scenes)
        last_end = 0.0
        for scene in scenes:
            if scene.start < last_end - TIME_EPSILON:
                raise ValidationError(
                    f"video {self.video_id}: scenes overlap or are unsorted at {scene.start}"
                )
            if scene.end > self.duration + TIME_EPSILON:
                raise ValidationError(
                    f"video {self.video_id}: scene exceeds video duration at {scene.end}"
                )
            last_end = scene.end
        object.__setattr__(self, "scenes", scenes)

    def all_keywords(self) -> frozenset[str]:
        out: set[str] = set()
        for scene in self.scenes:
            out |= scene.keywords
        return frozenset(out)


@dataclass(frozen=True)
class AnnotatedSegment:
    start: float
    end: float
    emotion: str | None = None
    energy: float | None = None


@dataclass(frozen=True)
class MusicAnnotation:
    beats: tuple[float, ...] = ()
    segments: tuple[AnnotatedSegment, ...] = ()


@dataclass(frozen=True)
class MusicTrack:
    """A music input: sampled energy envelope, precomputed annotation, or both."""

    music_id: str
    duration: float
    envelope: tuple[float, ...] | None = None
    hop: float | None = None
    annotation: MusicAnnotation | None = None

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValidationError("track duration must be > 0")
        if self.envelope is None and self.annotation is None:
            raise ValidationError("track needs an envelope or an annotation")
        if self.envelope is not None:
            if self.hop is None or self.hop <= 0:
                raise ValidationError("envelope requires a positive hop")
            if any(v < 0 for v in self.envelope):
                raise ValidationError("envelope values must be >= 0")
            object.__setattr__(self, "envelope", tuple(float(v) for v in self.envelope))
        if self.annotation is not None:
            beats = self.annotation.beats
            for prev, cur in zip(beats, beats[1:]):
                if cur <= prev:
                    raise ValidationError("annotated beats must be strictly increasing")
            if beats and (beats[0] < 0 or beats[-1] > self.duration + TIME_EPSILON):
                raise ValidationError("annotated beats must lie within the track")


@dataclass(frozen=True)
class SegmentAttributes:
    """Per-segment energy, emotion, and rhythm summary."""

    energy_profile: str
    mean_energy: float
    emotion: str
    beats: tuple[float, ...] = ()
    tempo: float | None = None

    def __post_init__(self) -> None:
        if self.energy_profile not in ("low", "mid", "high"):
            raise ValidationError(f"unknown energy profile {self.energy_profile!r}")
        if self.emotion not in EMOTIONS:
            raise ValidationError(f"emotion {self.emotion!r} outside the taxonomy")
        object.__setattr__(self, "beats", tuple(self.beats))


@dataclass(frozen=True)
class MusicSegment:
    index: int
    start: float
    end: float
    attributes: SegmentAttributes = field(
        default_factory=lambda: SegmentAttributes("low", 0.0, "neutral")
    )

    def __post_init__(self) -> None:
        if self.end <= self.start + TIME_EPSILON:
            raise ValidationError("segment end must exceed start")
        for b in self.attributes.beats:
            if not (self.start - TIME_EPSILON <= b < self.end):
                raise ValidationError(
                    f"segment {self.index}: beat {b} outside half-open span"
                )

    @property
    def length(self) -> float:
        return self.end - self.start


# ---------------------------------------------------------------------------
# manifest loading
# ---------------------------------------------------------------------------


def load_video_manifest(path: str | Path) -> list[VideoMeta]:
    """Load a JSON video-pool manifest: {"videos": [{video_id, duration, scenes}]}."""
    raw = _read_json(path)
    if not isinstance(raw, dict) or not isinstance(raw.get("videos"), list):
        raise IngestError(f"{path}: manifest must be an object with a 'videos' list")
    videos: list[VideoMeta] = []
    seen: set[str] = set()
    for vi, entry in enumerate(raw["videos"]):
        where = f"videos[{vi}]"
        if not isinstance(entry, dict):
            raise IngestError(f"{path}: {where} must be an object")
        try:
            vid = str(entry["video_id"])
            duration = float(entry["duration"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"{path}: {where}: missing or bad field ({exc})") from exc
        if vid in seen:
            raise IngestError(f"{path}: duplicate video_id {vid!r}")
        seen.add(vid)
        scenes = []
        for si, s in enumerate(entry.get("scenes", [])):
            swhere = f"{where}.scenes[{si}]"
            try:
                scenes.append(
                    Scene(
                        start=float(s["start"]),
                        end=float(s["end"]),
                        caption=str(s["caption"]),
                        keywords=frozenset(map(str, s.get("keywords", []))),
                        characters=frozenset(map(str, s.get("characters", []))),
                        emotion=s.get("emotion"),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise IngestError(f"{path}: {swhere}: missing or bad field ({exc})") from exc
        videos.append(VideoMeta(video_id=vid, duration=duration, scenes=tuple(scenes)))
    return videos


def load_music_track(path: str | Path) -> MusicTrack:
    """Load a music input.

    ``*.json`` files are annotation documents ({music_id, duration, beats,
    segments, envelope?, hop?}); anything else is read as a two-column
    ``time value`` envelope series with a fixed hop.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        raw = _read_json(path)
        if not isinstance(raw, dict):
            raise IngestError(f"{path}: annotation must be a JSON object")
        try:
            duration = float(raw["duration"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"{path}: missing or bad 'duration' ({exc})") from exc
        segments = tuple(
            AnnotatedSegment(
                start=float(s["start"]),
                end=float(s["end"]),
                emotion=s.get("emotion"),
                energy=(None if s.get("energy") is None else float(s["energy"])),
            )
            for s in raw.get("segments", [])
        )
        annotation = MusicAnnotation(
            beats=tuple(float(b) for b in raw.get("beats", [])),
            segments=segments,
        )
        envelope = raw.get("envelope")
        return MusicTrack(
            music_id=str(raw.get("music_id", path.stem)),
            duration=duration,
            envelope=(tuple(map(float, envelope)) if envelope else None),
            hop=(float(raw["hop"]) if envelope else None),
            annotation=annotation,
        )
    return _load_envelope_file(path)


def _load_envelope_file(path: Path) -> MusicTrack:
    times: list[float] = []
    values: list[float] = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'time value', got {line!r}")
        try:
            times.append(float(parts[0]))
            values.append(float(parts[1]))
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: non-numeric column ({exc})") from exc
    if len(times) < 2:
        raise IngestError(f"{path}: envelope needs at least 2 samples")
    hop = times[1] - times[0]
    if hop <= 0:
        raise IngestError(f"{path}: time column must be increasing")
    for i, t in enumerate(times):
        if abs(t - i * hop - times[0]) > max(1e-9, hop * 1e-3):
            raise IngestError(f"{path}: hop is not fixed near sample {i}")
    return MusicTrack(
        music_id=path.stem,
        duration=times[0] + hop * len(values),
        envelope=tuple(values),
        hop=hop,
    )


def _read_json(path: str | Path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"{path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# beat detection and segmentation
# ---------------------------------------------------------------------------


def detect_beats(
    envelope: list[float] | tuple[float, ...],
    hop: float,
    *,
    delta: float = 1.0,
    min_gap: float = 0.2,
) -> list[float]:
    """Pick beats as envelope peaks above mean + delta * stddev.

    A peak is a local maximum (boundaries count when they exceed their one
    neighbor). Peaks closer than ``min_gap`` collapse to the larger one.
    Returns strictly increasing times in seconds.
    """
    env = np.asarray(envelope, dtype=float)
    if env.size < 3:
        raise AnalysisError(f"envelope too short ({env.size} samples, need >= 3)")
    threshold = env.mean() + delta * env.std()
    peaks: list[int] = []
    for i in range(env.size):
        left = env[i - 1] if i > 0 else -np.inf
        right = env[i + 1] if i < env.size - 1 else -np.inf
        if env[i] > left and env[i] >= right and env[i] > threshold:
            peaks.append(i)
    # Amplitude-greedy thinning keeps the larger of two close peaks.
    kept: list[int] = []
    for i in sorted(peaks, key=lambda i: (-env[i], i)):
        if all(abs(i - j) * hop >= min_gap for j in kept):
            kept.append(i)
    return [i * hop for i in sorted(kept)]


def track_beats(track: MusicTrack, cfg: EngineConfig | None = None) -> list[float]:
    """Annotated beats when present, detected beats otherwise."""
    cfg = cfg or EngineConfig()
    if track.annotation and track.annotation.beats:
        return list(track.annotation.beats)
    if track.envelope is None:
        return []
    return detect_beats(
        track.envelope, track.hop or cfg.default_hop,
        delta=cfg.beat_delta, min_gap=cfg.beat_min_gap,
    )


def median_beat_interval(beats: list[float], fallback: float = 0.25) -> float:
    if len(beats) < 2:
        return fallback
    gaps = [b - a for a, b in zip(beats, beats[1:])]
    return statistics.median(gaps)


def tempo_estimate(beats: list[float]) -> float | None:
    """Beats per minute from the median inter-beat interval."""
    if len(beats) < 2:
        return None
    return 60.0 / median_beat_interval(beats)


def segment_music(track: MusicTrack, cfg: EngineConfig | None = None) -> list[MusicSegment]:
    """Partition the track into music segments with derived attributes.

    An annotation with segments is used verbatim. Otherwise boundaries are
    placed at jumps of the windowed mean energy, subject to a minimum
    segment length of four beat intervals. Degenerate tracks come back as
    one full-length segment.
    """
    cfg = cfg or EngineConfig()
    beats = track_beats(track, cfg)
    if track.annotation and track.annotation.segments:
        spans = [(s.start, s.end, s) for s in track.annotation.segments]
    else:
        boundaries = _energy_boundaries(track, beats, cfg)
        edges = [0.0, *boundaries, track.duration]
        spans = [(a, b, None) for a, b in zip(edges, edges[1:])]
    _check_partition(spans, track.duration)
    segments = []
    for idx, (start, end, annotated) in enumerate(spans):
        attrs = derive_segment_attributes(start, end, track, annotated, beats=beats)
        segments.append(MusicSegment(index=idx, start=start, end=end, attributes=attrs))
    return segments


def _check_partition(spans: list[tuple], duration: float) -> None:
    prev = 0.0
    for start, end, _ in spans:
        if abs(start - prev) > TIME_EPSILON:
            raise ValidationError(f"segments leave a gap near {prev:.3f}")
        prev = end
    if abs(prev - duration) > TIME_EPSILON:
        raise ValidationError(f"segments stop at {prev:.3f}, track ends at {duration:.3f}")


def _energy_boundaries(track: MusicTrack, beats: list[float], cfg: EngineConfig) -> list[float]:
    if track.envelope is None:
        return []
    env = np.asarray(track.envelope, dtype=float)
    hop = track.hop or cfg.default_hop
    span = env.max() - env.min()
    if span <= 0:
        return []
    norm = (env - env.min()) / span
    w = max(1, round(cfg.energy_window / hop))
    jumps = np.zeros(env.size)
    for i in range(1, env.size):
        before = norm[max(0, i - w):i].mean()
        after = norm[i:i + w].mean()
        jumps[i] = abs(after - before)
    candidate = jumps >= cfg.energy_jump
    # One boundary per run of threshold crossings, at the strongest jump.
    peaks: list[int] = []
    i = 1
    while i < env.size:
        if candidate[i]:
            j = i
            while j + 1 < env.size and candidate[j + 1]:
                j += 1
            run = jumps[i:j + 1]
            peaks.append(i + int(np.argmax(run)))
            i = j + 1
        i += 1
    if len(beats) >= 2:
        min_len = cfg.min_segment_beats * median_beat_interval(beats)
    else:
        min_len = cfg.min_segment_fallback
    boundaries: list[float] = []
    last = 0.0
    for p in peaks:
        t = p * hop
        if t - last >= min_len and track.duration - t >= min_len:
            boundaries.append(t)
            last = t
    return boundaries


_EMOTION_BY_ENERGY = {
    # (profile, fast tempo?) -> emotion; tempo threshold is 120 bpm
    ("high", True): "energetic",
    ("high", False): "epic",
    ("mid", True): "joyful",
    ("mid", False): "joyful",
    ("low", True): "calm",
    ("low", False): "calm",
}


def derive_segment_attributes(
    start: float,
    end: float,
    track: MusicTrack,
    annotated: AnnotatedSegment | None = None,
    *,
    beats: list[float] | None = None,
    cfg: EngineConfig | None = None,
) -> SegmentAttributes:
    """Energy profile, emotion, and beat list for one segment span.

    Annotated emotion wins when present; otherwise a fixed map from
    (energy profile, tempo) stands in for affective analysis.
    """
    cfg = cfg or EngineConfig()
    if beats is None:
        beats = track_beats(track, cfg)
    seg_beats = tuple(b for b in beats if start - TIME_EPSILON <= b < end)
    mean_energy = _mean_energy(track, start, end, annotated)
    track_max = _track_max_energy(track)
    if track_max <= 0 or mean_energy < 0.33 * track_max:
        profile = "low"
    elif mean_energy > 0.66 * track_max:
        profile = "high"
    else:
        profile = "mid"
    tempo = tempo_estimate(list(seg_beats))
    if annotated is not None and annotated.emotion:
        emotion = annotated.emotion
    elif tempo is None and profile == "high":
        emotion = "neutral"
    else:
        emotion = _EMOTION_BY_ENERGY[(profile, bool(tempo and tempo >= 120.0))]
    return SegmentAttributes(
        energy_profile=profile,
        mean_energy=mean_energy,
        emotion=emotion,
        beats=seg_beats,
        tempo=tempo,
    )


def _mean_energy(
    track: MusicTrack, start: float, end: float, annotated: AnnotatedSegment | None
) -> float:
    if annotated is not None and annotated.energy is not None:
        return annotated.energy
    if track.envelope is None:
        return 0.0
    hop = track.hop or EngineConfig().default_hop
    lo = max(0, int(round(start / hop)))
    hi = min(len(track.envelope), max(lo + 1, int(round(end / hop))))
    window = track.envelope[lo:hi]
    return float(np.mean(window)) if window else 0.0


def _track_max_energy(track: MusicTrack) -> float:
    if track.envelope is not None:
        return float(max(track.envelope))
    if track.annotation:
        energies = [s.energy for s in track.annotation.segments if s.energy is not None]
        if energies:
            return max(energies)
    return 0.0
