"""Every LLM touchpoint: prompt templates, backends, response parsing, comparisons.

Templates ship as text assets with named ``{placeholder}`` tokens and render
to exact prompt strings. Backends satisfy a one-method contract (``send``), so
the whole pipeline runs offline against a scripted transcript player; the live
HTTP adapter is optional and never required by tests. Pairwise voltage
verdicts are cached per unordered formula pair because real calls are costly
and nondeterministic.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Protocol, Sequence

from .formulas import Formula, FormulaError, parse_formula, render_formula

__all__ = [
    "TEMPLATE_IDS",
    "PromptError",
    "UnknownTemplate",
    "MissingBinding",
    "NoCandidatesFound",
    "AmbiguousWinner",
    "NoMarkedLine",
    "ComparatorFailure",
    "TranscriptMismatch",
    "TranscriptExhausted",
    "BackendUnavailable",
    "ChatRequest",
    "LLMBackend",
    "Exchange",
    "ScriptedBackend",
    "LiveBackend",
    "ComparatorCache",
    "CompareOutcome",
    "template_body",
    "render_prompt",
    "BulletCandidate",
    "extract_bullet_candidates",
    "parse_candidate_bullets",
    "parse_comparison_winner",
    "compare_voltage",
    "load_transcript",
    "save_transcript",
    "generation_response",
    "comparison_response",
]

TEMPLATE_IDS = (
    "initial_round_initial_cycle",
    "subsequent_round",
    "initial_round_subsequent_cycle",
    "voltage_compare",
)

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
_TOKEN = re.compile(r"[A-Za-z0-9.]+")


class PromptError(ValueError):
    pass


class UnknownTemplate(PromptError):
    def __init__(self, template_id: str):
        self.template_id = template_id
        super().__init__(f"unknown prompt template: {template_id!r}")


class MissingBinding(PromptError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing binding for placeholder {name!r}")


class NoCandidatesFound(ValueError):
    """No bullet line in the response yielded a parseable formula."""


class AmbiguousWinner(ValueError):
    """The marked line names both candidates or neither."""


class NoMarkedLine(ValueError):
    """The response contains no '*'-marked line."""


class ComparatorFailure(RuntimeError):
    """A pairwise comparison failed after the automatic retry."""

    def __init__(self, a: Formula, b: Formula, last_response: str = ""):
        self.pair = (a, b)
        self.last_response = last_response
        super().__init__(
            f"voltage comparison failed for {render_formula(a)} vs {render_formula(b)}"
        )


class TranscriptMismatch(RuntimeError):
    """The scripted transcript and the actual request sequence drifted apart."""


class TranscriptExhausted(RuntimeError):
    """More requests were sent than the scripted transcript contains."""


class BackendUnavailable(ConnectionError):
    """The live chat endpoint could not be reached or answered abnormally."""


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    bindings: Mapping[str, object]
    temperature: float = 1.0
    frequency_penalty: float = 0.2
    model_tag: str = ""

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class LLMBackend(Protocol):
    def send(self, request: ChatRequest) -> str:
        ...


@lru_cache(maxsize=None)
def template_body(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplate(template_id)
    return (
        resources.files(__package__)
        .joinpath("prompts", f"{template_id}.txt")
        .read_text(encoding="utf-8")
    )


def _existing_section(items: Sequence[str]) -> str:
    if not items:
        return ""
    lines = "".join(f"* {item}\n" for item in items)
    return "These batteries have been discovered before:\n" + lines


def _invalid_section(items: Sequence) -> str:
    if not items:
        return ""
    lines = []
    for item in items:
        formula, hint = item[0], item[1]
        if hint:
            lines.append(f"* {formula} (a retrieved similar and correct battery is {hint})\n")
        else:
            lines.append(f"* {formula}\n")
    return "These invalid batteries are:\n" + "".join(lines)


def render_prompt(template_id: str, bindings: Mapping[str, object], body: str | None = None) -> str:
    """Render a template to its final prompt text.

    The ``subsequent_round`` template takes two list bindings (``existing`` and
    ``invalid``) rendered as ``* `` bullet lines; a list section is omitted
    entirely when its list is empty. Every other placeholder is a plain string
    substitution. Raises :class:`MissingBinding` if any placeholder is left
    unbound.

    ``body`` substitutes an operator-edited template body; it is rendered with
    the same bindings the stock template would receive.
    """
    if body is None:
        body = template_body(template_id)
    elif template_id not in TEMPLATE_IDS:
        raise UnknownTemplate(template_id)
    values = dict(bindings)
    if template_id == "subsequent_round":
        for key in ("existing", "invalid"):
            if key not in values:
                raise MissingBinding(key)
        values["existing_section"] = _existing_section(values.pop("existing"))
        values["invalid_section"] = _invalid_section(values.pop("invalid"))

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise MissingBinding(name)
        return str(values[name])

    rendered = _PLACEHOLDER.sub(substitute, body)
    leftover = _PLACEHOLDER.search(rendered)
    if leftover:
        raise MissingBinding(leftover.group(1))
    return rendered


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BulletCandidate:
    formula: Formula
    line: str


def _formulas_in(text: str) -> Iterable[Formula]:
    for token in _TOKEN.findall(text):
        token = token.rstrip(".")  # tolerate sentence punctuation
        if not token:
            continue
        try:
            yield parse_formula(token)
        except FormulaError:
            continue


def extract_bullet_candidates(text: str) -> tuple[list[BulletCandidate], list[str]]:
    """All '*'-bulleted candidates in order, plus bullet lines with no formula."""
    found: list[BulletCandidate] = []
    skipped: list[str] = []
    for line in text.splitlines():
        if not line.lstrip().startswith("*"):
            continue
        payload = line.lstrip()[1:]
        formula = next(iter(_formulas_in(payload)), None)
        if formula is None:
            skipped.append(line)
        else:
            found.append(BulletCandidate(formula=formula, line=line.strip()))
    return found, skipped


def parse_candidate_bullets(text: str) -> list[Formula]:
    """Formulas from every '*'-bulleted line, in response order.

    Bullet lines with no parseable formula are skipped; zero parseable bullets
    raises :class:`NoCandidatesFound` so the caller can retry the round.
    """
    found, _ = extract_bullet_candidates(text)
    if not found:
        raise NoCandidatesFound("no bullet line contained a parseable formula")
    return [c.formula for c in found]


def parse_comparison_winner(text: str, a: Formula, b: Formula) -> Formula:
    """Winner named on the last '*'-marked line (scanning upward).

    The deciding line must name exactly one of ``a`` and ``b`` by canonical
    formula match; naming both or neither raises :class:`AmbiguousWinner`.
    """
    marked = [line for line in text.splitlines() if line.lstrip().startswith("*")]
    if not marked:
        raise NoMarkedLine("response has no '*'-marked line")
    for line in reversed(marked):
        named = {
            "a" if f == a else "b"
            for f in _formulas_in(line.lstrip()[1:])
            if f == a or f == b
        }
        if len(named) == 1:
            return a if named == {"a"} else b
        if len(named) == 2:
            raise AmbiguousWinner(f"marked line names both candidates: {line.strip()!r}")
    raise AmbiguousWinner("no marked line names either candidate")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

def _normalize(value: object) -> object:
    return json.loads(json.dumps(value))


@dataclass(frozen=True)
class Exchange:
    """One scripted request/response pair.

    ``template_id`` and ``bindings`` are matcher predicates: when present they
    are verified against the incoming request, so replay fails loudly on any
    drift instead of silently answering the wrong question.
    """

    response: str
    template_id: str | None = None
    bindings: Mapping[str, object] | None = None


class ScriptedBackend:
    """Deterministic transcript player; exchanges are consumed strictly in order."""

    def __init__(self, exchanges: Sequence[Exchange]):
        self._exchanges = list(exchanges)
        self._cursor = 0
        self._lock = threading.Lock()
        self.calls = 0

    @property
    def remaining(self) -> int:
        return len(self._exchanges) - self._cursor

    def skip(self, count: int) -> None:
        """Advance past exchanges already consumed (used on session recovery)."""
        with self._lock:
            self._cursor = min(len(self._exchanges), self._cursor + count)

    def send(self, request: ChatRequest) -> str:
        with self._lock:
            if self._cursor >= len(self._exchanges):
                raise TranscriptExhausted(
                    f"transcript exhausted after {len(self._exchanges)} exchanges"
                )
            exchange = self._exchanges[self._cursor]
            if exchange.template_id is not None and exchange.template_id != request.template_id:
                raise TranscriptMismatch(
                    f"exchange {self._cursor}: expected template "
                    f"{exchange.template_id!r}, got {request.template_id!r}"
                )
            if exchange.bindings:
                actual = _normalize(dict(request.bindings))
                for key, expected in exchange.bindings.items():
                    if key not in actual or actual[key] != _normalize(expected):
                        raise TranscriptMismatch(
                            f"exchange {self._cursor}: binding {key!r} mismatch: "
                            f"expected {expected!r}, got {actual.get(key)!r}"
                        )
            self._cursor += 1
            self.calls += 1
            return exchange.response


class LiveBackend:
    """Plain HTTP chat-completion adapter. The model tag passes through opaquely."""

    def __init__(self, base_url: str, api_key_env: str = "LLM_API_KEY", timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> str:
        import requests

        prompt = render_prompt(request.template_id, request.bindings)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": request.model_tag,
            "temperature": request.temperature,
            "frequency_penalty": request.frequency_penalty,
            "messages": [{"role": "user", "content": prompt}],
        }
        with self._lock:
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - any transport failure surfaces the same way
                raise BackendUnavailable(f"chat completion failed: {exc}") from exc


def load_transcript(path: str) -> list[Exchange]:
    """Read a JSON-lines transcript (one exchange per line)."""
    exchanges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid transcript line: {exc}") from exc
            exchanges.append(
                Exchange(
                    response=obj["response"],
                    template_id=obj.get("template_id"),
                    bindings=obj.get("bindings"),
                )
            )
    return exchanges


def save_transcript(path: str, exchanges: Sequence[Exchange]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for exchange in exchanges:
            obj: dict[str, object] = {"response": exchange.response}
            if exchange.template_id is not None:
                obj["template_id"] = exchange.template_id
            if exchange.bindings is not None:
                obj["bindings"] = _normalize(dict(exchange.bindings))
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def generation_response(formulas: Sequence[Formula | str], note: str = "composition tuned for higher capacity") -> str:
    """Bullet-list response text for scripting generation rounds."""
    lines = []
    for f in formulas:
        rendered = f if isinstance(f, str) else render_formula(f)
        lines.append(f"* {rendered} - {note}")
    return "\n".join(lines)


def comparison_response(winner: Formula | str, note: str = "higher nickel content favors voltage") -> str:
    """Two-line response text for scripting voltage comparisons."""
    rendered = winner if isinstance(winner, str) else render_formula(winner)
    return f"{note}\n* {rendered}"


# ---------------------------------------------------------------------------
# Cached pairwise voltage comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompareOutcome:
    winner: Formula
    response: str
    cached: bool


class ComparatorCache:
    """Winner + raw response per unordered formula pair.

    The key is orientation-normalized, so compare(a, b) and compare(b, a) hit
    the same entry. Reads and writes are lock-protected for use from
    concurrent merge workers.
    """

    def __init__(self):
        self._entries: dict[frozenset, tuple[Formula, str]] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(a: Formula, b: Formula) -> frozenset:
        return frozenset((a.key, b.key))

    def get(self, a: Formula, b: Formula) -> tuple[Formula, str] | None:
        with self._lock:
            return self._entries.get(self._key(a, b))

    def put(self, a: Formula, b: Formula, winner: Formula, response: str) -> None:
        if winner != a and winner != b:
            raise ValueError("winner must be one of the compared pair")
        with self._lock:
            self._entries[self._key(a, b)] = (winner, response)

    def __len__(self) -> int:
        return len(self._entries)


def compare_voltage(
    a: Formula,
    b: Formula,
    backend: LLMBackend,
    cache: ComparatorCache,
    *,
    model_tag: str = "",
    temperature: float = 1.0,
    frequency_penalty: float = 0.2,
) -> CompareOutcome:
    """Which of two distinct materials the backend judges to have higher voltage.

    Cache hits answer without a backend call. On a malformed response the
    request is retried once, after which :class:`ComparatorFailure` escalates
    the pair to the operator.
    """
    if a == b:
        raise ValueError("cannot compare a formula against itself")
    hit = cache.get(a, b)
    if hit is not None:
        return CompareOutcome(winner=hit[0], response=hit[1], cached=True)
    request = ChatRequest(
        template_id="voltage_compare",
        bindings={"material_a": render_formula(a), "material_b": render_formula(b)},
        temperature=temperature,
        frequency_penalty=frequency_penalty,
        model_tag=model_tag,
    )
    last_response = ""
    for _ in range(2):
        last_response = backend.send(request)
        try:
            winner = parse_comparison_winner(last_response, a, b)
        except (AmbiguousWinner, NoMarkedLine):
            continue
        cache.put(a, b, winner, last_response)
        return CompareOutcome(winner=winner, response=last_response, cached=False)
    raise ComparatorFailure(a, b, last_response)
