"""Uniform decision-backend contract.

Every decision point in the pipeline issues an AgentRequest to a backend:
either the deterministic scripted backend (pure heuristics over the request
context) or a remote text-generation service. Responses are schema-checked
before any caller sees them, and all token traffic lands in a TokenLedger.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol

from .errors import AgentProtocolError, AgentUnavailable, ConfigError, ReportError


class AgentRole(str, Enum):
    MUSIC = "music"
    PLAN = "plan"
    CONSTRUCT = "construct"
    VIDEO = "video"
    RETRIEVAL = "retrieval"
    ROUGHCUT = "roughcut"
    REFINE = "refine"
    CONTROLLER = "controller"
    DIAGNOSTIC = "diagnostic"
    NEGOTIATOR = "negotiator"
    JUDGE = "judge"


@dataclass(frozen=True)
class AgentRequest:
    agent_role: AgentRole
    context: dict[str, Any]
    expected_schema: str

    def rendered(self) -> str:
        """Canonical text form of the request; also the token-count basis."""
        return json.dumps(
            {
                "role": self.agent_role.value,
                "schema": self.expected_schema,
                "context": self.context,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class AgentResponse:
    payload: Any
    tokens_in: int = 0
    tokens_out: int = 0

    def __post_init__(self) -> None:
        if self.tokens_in < 0 or self.tokens_out < 0:
            raise ValueError("token counts must be >= 0")


@dataclass
class BackendResult:
    payload: Any
    tokens_in: int | None = None  # native counts override the word estimate
    tokens_out: int | None = None


class Backend(Protocol):
    name: str

    def decide(self, request: AgentRequest, repair_note: str | None = None) -> BackendResult:
        ...


class TokenLedger:
    """Per-role cumulative token accounting; safe for concurrent writers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._per_role: dict[str, list[int]] = {}

    def add(self, role: AgentRole | str, tokens_in: int, tokens_out: int) -> None:
        key = role.value if isinstance(role, AgentRole) else str(role)
        with self._lock:
            entry = self._per_role.setdefault(key, [0, 0])
            entry[0] += tokens_in
            entry[1] += tokens_out

    @property
    def total(self) -> int:
        with self._lock:
            return sum(i + o for i, o in self._per_role.values())

    def per_role(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {
                role: {"tokens_in": i, "tokens_out": o, "total": i + o}
                for role, (i, o) in sorted(self._per_role.items())
            }

    def snapshot(self) -> dict[str, Any]:
        return {"per_role": self.per_role(), "total": self.total}


def count_tokens(text: str) -> int:
    """Whitespace word count: the backend-neutral token approximation."""
    return len(text.split())


def efficiency_report(ledger_full: TokenLedger, ledger_variant: TokenLedger) -> float:
    """Normalized efficiency of a variant run: full tokens / variant tokens.

    The full configuration scores exactly 1.0 against itself; cheaper
    variants score above 1.0.
    """
    if ledger_full.total <= 0:
        raise ReportError("full-configuration ledger recorded no tokens")
    if ledger_variant.total == 0:
        raise ReportError("variant ledger recorded no tokens")
    return ledger_full.total / ledger_variant.total


# ---------------------------------------------------------------------------
# response schemas
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _check_instruction_list(payload: Any) -> None:
    _require(isinstance(payload, list) and payload, "expected a nonempty list")
    for item in payload:
        _require(isinstance(item, str) and item.strip() != "", "instructions must be nonempty strings")


def _check_edge_list(payload: Any) -> None:
    _require(isinstance(payload, list), "expected a list of [from, to] pairs")
    for e in payload:
        _require(
            isinstance(e, (list, tuple)) and len(e) == 2
            and all(isinstance(v, int) and v >= 0 for v in e),
            f"bad edge {e!r}",
        )


def _check_query_list(payload: Any) -> None:
    _require(isinstance(payload, list) and payload, "expected a nonempty query list")
    for q in payload:
        _require(isinstance(q, dict), "queries must be objects")
        _require(isinstance(q.get("text"), str) and q["text"].strip() != "", "query text empty")
        w = q.get("weight")
        _require(isinstance(w, (int, float)) and 0 < w <= 1, f"weight {w!r} outside (0, 1]")


def _check_candidate_order(payload: Any) -> None:
    _require(isinstance(payload, list), "expected a list of candidate indices")
    _require(all(isinstance(i, int) and i >= 0 for i in payload), "indices must be ints >= 0")
    _require(len(set(payload)) == len(payload), "indices must be unique")


_REFINE_OPS = {
    "snap": {"cut_index", "to"},
    "trim": {"amount"},
    "append": {"candidate"},
    "swap": {"unit", "candidate"},
    "drop_last": set(),
    "need_more_clips": set(),
}


def _check_refine_actions(payload: Any) -> None:
    _require(isinstance(payload, list), "expected a list of actions")
    for a in payload:
        _require(isinstance(a, dict) and a.get("op") in _REFINE_OPS, f"bad action {a!r}")
        missing = _REFINE_OPS[a["op"]] - set(a)
        _require(not missing, f"action {a['op']} missing {sorted(missing)}")


def _check_context_plan(payload: Any) -> None:
    _require(isinstance(payload, dict), "expected an object")
    _require(isinstance(payload.get("recent"), list), "'recent' must be a list")
    for d in payload["recent"]:
        _require(isinstance(d, str), "digests must be strings")
    agg = payload.get("aggregate")
    _require(agg is None or isinstance(agg, str), "'aggregate' must be a string or null")
    _require(
        isinstance(payload.get("scope"), list)
        and all(isinstance(v, str) for v in payload["scope"]),
        "'scope' must be a list of video ids",
    )


def _check_extra_edges(payload: Any) -> None:
    _require(isinstance(payload, list), "expected a list of edges")
    for e in payload:
        _require(isinstance(e, dict), "edges must be objects")
        _require(isinstance(e.get("p"), int) and isinstance(e.get("q"), int), "p/q must be ints")
        types = e.get("types")
        _require(isinstance(types, list) and types, "'types' must be a nonempty list")


def _check_repair_plan(payload: Any) -> None:
    _require(isinstance(payload, dict), "expected an object")
    _require(
        isinstance(payload.get("instruction"), str) and payload["instruction"].strip() != "",
        "repair instruction empty",
    )
    _require(
        isinstance(payload.get("members_to_edit"), list)
        and all(isinstance(i, int) for i in payload["members_to_edit"]),
        "'members_to_edit' must be a list of segment indices",
    )


def _check_judge_scores(payload: Any) -> None:
    _require(isinstance(payload, dict) and payload, "expected a dimension->score object")
    for dim, score in payload.items():
        _require(isinstance(dim, str), "dimension names must be strings")
        _require(isinstance(score, (int, float)), f"score for {dim} must be numeric")


SCHEMAS: dict[str, Callable[[Any], None]] = {
    "instruction_list": _check_instruction_list,
    "edge_list": _check_edge_list,
    "query_list": _check_query_list,
    "candidate_order": _check_candidate_order,
    "refine_actions": _check_refine_actions,
    "context_plan": _check_context_plan,
    "extra_edges": _check_extra_edges,
    "repair_plan": _check_repair_plan,
    "judge_scores": _check_judge_scores,
}


def validate_payload(schema: str, payload: Any) -> None:
    if schema not in SCHEMAS:
        raise ConfigError(f"unknown response schema {schema!r}")
    SCHEMAS[schema](payload)


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------


@dataclass
class ScriptedBackend:
    """Deterministic backend: each role maps to a pure heuristic handler."""

    handlers: dict[AgentRole, Callable[[dict[str, Any]], Any]]
    seed: int = 0
    name: str = "scripted"

    def decide(self, request: AgentRequest, repair_note: str | None = None) -> BackendResult:
        handler = self.handlers.get(request.agent_role)
        if handler is None:
            raise ConfigError(f"no scripted handler for role {request.agent_role.value!r}")
        return BackendResult(payload=handler(request.context))


class RemoteBackend:
    """HTTP client for a remote text-generation service.

    Request body: {role, prompt, schema, model}. Expected response body:
    {"payload": <structured value>, "usage": {"tokens_in", "tokens_out"}?}.
    Retries transient failures with exponential backoff, then raises
    AgentUnavailable.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        model: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        transport: Callable[..., tuple[int, str]] | None = None,
        backoff: float = 0.5,
    ) -> None:
        if not endpoint:
            raise ConfigError("remote backend requires an endpoint URL")
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._transport = transport or self._http_post

    def _http_post(self, url: str, body: dict[str, Any], headers: dict[str, str],
                   timeout: float) -> tuple[int, str]:
        import requests

        try:
            resp = requests.post(url, json=body, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            raise ConnectionError(str(exc)) from exc
        return resp.status_code, resp.text

    def decide(self, request: AgentRequest, repair_note: str | None = None) -> BackendResult:
        prompt = request.rendered()
        if repair_note:
            prompt = f"{prompt}\n\nprevious response was invalid: {repair_note}"
        body = {
            "role": request.agent_role.value,
            "prompt": prompt,
            "schema": request.expected_schema,
        }
        if self.model:
            body["model"] = self.model
        headers = {"content-type": "application/json"}
        if self.auth_token:
            headers["authorization"] = f"Bearer {self.auth_token}"
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            try:
                status, text = self._transport(self.endpoint, body, headers, self.timeout)
            except (ConnectionError, TimeoutError) as exc:
                last_error = str(exc)
            else:
                if status == 200:
                    return self._parse(text)
                last_error = f"HTTP {status}"
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise AgentUnavailable(
            f"remote backend failed after {self.retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _parse(text: str) -> BackendResult:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AgentProtocolError(f"remote response is not JSON: {exc.msg}") from exc
        if not isinstance(doc, dict) or "payload" not in doc:
            raise AgentProtocolError("remote response missing 'payload'")
        usage = doc.get("usage") or {}
        return BackendResult(
            payload=doc["payload"],
            tokens_in=usage.get("tokens_in"),
            tokens_out=usage.get("tokens_out"),
        )


def invoke(
    request: AgentRequest,
    backend: Backend,
    ledger: TokenLedger | None = None,
) -> AgentResponse:
    """Dispatch one request and return a schema-valid response.

    A payload that fails schema validation earns the backend exactly one
    repair attempt (re-prompt carrying the validation error); a second
    failure raises AgentProtocolError. The ledger is charged for every
    attempt, including failed ones.
    """
    tokens_in_total = 0
    tokens_out_total = 0
    payload = None
    error: str | None = None
    for attempt in range(2):
        result = backend.decide(request, repair_note=error)
        rendered_out = json.dumps(result.payload, sort_keys=True, default=str)
        tokens_in_total += (
            result.tokens_in if result.tokens_in is not None else count_tokens(request.rendered())
        )
        tokens_out_total += (
            result.tokens_out if result.tokens_out is not None else count_tokens(rendered_out)
        )
        try:
            validate_payload(request.expected_schema, result.payload)
        except ValueError as exc:
            error = str(exc)
            payload = None
            continue
        payload = result.payload
        break
    if ledger is not None:
        ledger.add(request.agent_role, tokens_in_total, tokens_out_total)
    if payload is None:
        raise AgentProtocolError(
            f"{request.agent_role.value} payload failed schema "
            f"{request.expected_schema!r} after repair: {error}"
        )
    return AgentResponse(
        payload=payload, tokens_in=tokens_in_total, tokens_out=tokens_out_total
    )
