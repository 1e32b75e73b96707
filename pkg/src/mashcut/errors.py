"""Exception hierarchy shared across the engine.

Every error carries a ``stage`` class attribute so the CLI can map failures
to distinct exit codes and name the failing stage on stderr.
"""

from __future__ import annotations


class MashcutError(Exception):
    """Base class for all engine errors."""

    stage = "engine"
    exit_code = 1


class ConfigError(MashcutError):
    stage = "config"
    exit_code = 2


class IngestError(MashcutError):
    stage = "ingest"
    exit_code = 3


class ValidationError(MashcutError):
    stage = "validate"
    exit_code = 4


class AnalysisError(MashcutError):
    stage = "analysis"
    exit_code = 5


class GraphError(MashcutError):
    stage = "task-graph"
    exit_code = 6


class RetrievalError(MashcutError):
    stage = "retrieval"
    exit_code = 7


class ScoreError(MashcutError):
    stage = "score"
    exit_code = 8


class CompositionError(MashcutError):
    stage = "compose"
    exit_code = 9


class AgentUnavailable(MashcutError):
    stage = "agent"
    exit_code = 10


class AgentProtocolError(MashcutError):
    stage = "agent"
    exit_code = 11


class OracleError(MashcutError):
    stage = "oracle"
    exit_code = 12


class StatsError(MashcutError):
    stage = "stats"
    exit_code = 13


class JudgeError(MashcutError):
    stage = "judge"
    exit_code = 14


class ReportError(MashcutError):
    stage = "report"
    exit_code = 15


class RenderError(MashcutError):
    stage = "render"
    exit_code = 16


class EmptySegmentError(MashcutError):
    """No usable clip candidates for a music segment."""

    stage = "edit"
    exit_code = 17


class NeedMoreClips(MashcutError):
    """Refinement cannot proceed without additional retrieval."""

    stage = "edit"
    exit_code = 18
