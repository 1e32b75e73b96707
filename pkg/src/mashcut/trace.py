"""Append-only run trace.

Events carry a logical sequence number rather than wall-clock time so that
two runs of the same configuration produce byte-identical traces. The
scheduler's dependency discipline is assertable from this log alone.
"""

from __future__ import annotations

import json
from typing import Any


class RunTrace:
    def __init__(self) -> None:
        self._events: list[dict[str, Any]] = []

    def emit(self, stage: str, **fields: Any) -> None:
        event = {"seq": len(self._events), "stage": stage}
        event.update(fields)
        self._events.append(event)

    @property
    def events(self) -> list[dict[str, Any]]:
        return list(self._events)

    def filter(self, stage: str) -> list[dict[str, Any]]:
        return [e for e in self._events if e["stage"] == stage]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self._events) + (
            "\n" if self._events else ""
        )
