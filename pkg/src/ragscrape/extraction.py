"""Per-field extraction: context assembly, prompting, backends, reply parsing.

Every backend — remote chat API or offline mock — receives a rendered
prompt and returns free text. The reply's last JSON object is parsed for
a "value" key; anything unparseable becomes an invalid candidate rather
than an error, so one misbehaving model never aborts the pipeline.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Sequence
from urllib.parse import urlsplit

import requests

from .errors import InvalidConfig, LlmUnavailable, TemplateError
from .vector_store import SearchHit

CONTEXT_SEPARATOR = "\n---\n"
DEFAULT_K = 5
TRANSPORT_RETRIES = 2
LLM_API_KEY_ENV_PREFIX = "RAGSCRAPE_LLM_API_KEY_"

# Appended after every rendered template so replies parse uniformly.
PROMPT_FOOTER = (
    "Respond with exactly one JSON object of the form "
    '{"value": <string or null>} and nothing else. '
    'Use null when the answer is not present in the context.'
)

VALUE_KINDS = ("text", "number", "url")

_FIELD_NAME = re.compile(r"[a-z][a-z0-9_]*")
_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class FieldSpec:
    """One extraction target: what to retrieve and how to ask for it."""

    name: str
    retrieval_query: str
    prompt_template: str
    k: int = DEFAULT_K
    value_kind: str = "text"

    def __post_init__(self):
        if not _FIELD_NAME.fullmatch(self.name):
            raise InvalidConfig(f"field name {self.name!r} must match [a-z][a-z0-9_]*")
        if self.k <= 0:
            raise InvalidConfig(f"field {self.name!r}: k must be positive")
        if self.value_kind not in VALUE_KINDS:
            raise InvalidConfig(f"field {self.name!r}: unknown value_kind {self.value_kind!r}")
        if self.prompt_template.count("{context}") != 1:
            raise InvalidConfig(
                f"field {self.name!r}: prompt_template must contain {{context}} exactly once"
            )
        if "{field_name}" not in self.prompt_template:
            raise InvalidConfig(
                f"field {self.name!r}: prompt_template must contain {{field_name}}"
            )


@dataclass(frozen=True)
class LlmBackend:
    """One model behind the extraction interface.

    `mock_scripted` replies with a fixed string per field; `mock_regex`
    answers by running a per-field pattern over the retrieved context.
    Both exist so the whole pipeline runs offline and deterministically.
    """

    model_id: str
    kind: str = "remote_chat"  # remote_chat | mock_scripted | mock_regex
    endpoint: str | None = None
    temperature: float = 0.0
    max_output: int = 256
    script: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("remote_chat", "mock_scripted", "mock_regex"):
            raise InvalidConfig(f"unknown backend kind: {self.kind!r}")
        if self.kind == "remote_chat" and not self.endpoint:
            raise InvalidConfig(f"backend {self.model_id!r}: remote_chat requires endpoint")
        if self.temperature < 0:
            raise InvalidConfig(f"backend {self.model_id!r}: temperature must be >= 0")
        if self.max_output <= 0:
            raise InvalidConfig(f"backend {self.model_id!r}: max_output must be positive")


@dataclass(frozen=True)
class CandidateExtraction:
    field: str
    model_id: str
    value: str | None
    raw_response: str
    context_chunk_ids: tuple[int, ...]
    valid: bool


def assemble_context(hits: Sequence[SearchHit], budget: int) -> tuple[str, list[int]]:
    """Join chunk texts in rank order until the next chunk would exceed `budget`.

    The top hit is always included, even when it alone exceeds the budget.
    """
    if budget <= 0:
        raise InvalidConfig("context budget must be positive")
    parts: list[str] = []
    used: list[int] = []
    length = 0
    for hit in hits:
        added = len(hit.chunk.text) if not parts else len(CONTEXT_SEPARATOR) + len(hit.chunk.text)
        if parts and length + added > budget:
            break
        parts.append(hit.chunk.text)
        used.append(hit.id)
        length += added
    return CONTEXT_SEPARATOR.join(parts), used


def render_prompt(spec: FieldSpec, context: str) -> str:
    """Substitute {field_name} and {context}, then append the reply-format footer."""
    values = {"field_name": spec.name, "context": context}

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise TemplateError(f"unknown placeholder {{{name}}} in template for {spec.name!r}")
        return values[name]

    rendered = _PLACEHOLDER.sub(_sub, spec.prompt_template)
    return f"{rendered}\n\n{PROMPT_FOOTER}"


def _backend_api_key(backend: LlmBackend) -> str | None:
    env_name = LLM_API_KEY_ENV_PREFIX + re.sub(r"[^A-Z0-9]", "_", backend.model_id.upper())
    return os.environ.get(env_name)


def _complete_remote(backend: LlmBackend, prompt: str) -> str:
    headers = {"Content-Type": "application/json"}
    api_key = _backend_api_key(backend)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {
        "model": backend.model_id,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": backend.temperature,
        "max_tokens": backend.max_output,
    }
    last_exc: Exception | None = None
    for attempt in range(TRANSPORT_RETRIES + 1):
        if attempt:
            time.sleep(min(0.05 * 2 ** (attempt - 1), 2.0))
        try:
            resp = requests.post(backend.endpoint, json=payload, headers=headers, timeout=120)
        except requests.RequestException as exc:
            last_exc = exc
            continue
        if resp.status_code >= 500:
            last_exc = LlmUnavailable(f"{backend.model_id}: server returned {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise LlmUnavailable(f"{backend.model_id}: request rejected ({resp.status_code})")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise LlmUnavailable(f"{backend.model_id}: malformed chat response: {exc}") from exc
    raise LlmUnavailable(
        f"{backend.model_id}: transport failed after {TRANSPORT_RETRIES + 1} attempts: {last_exc}"
    )


def complete(backend: LlmBackend, prompt: str, field_name: str, context: str) -> str:
    """Produce the backend's raw reply text for one rendered prompt."""
    if backend.kind == "mock_scripted":
        return backend.script.get(field_name, json.dumps({"value": None}))
    if backend.kind == "mock_regex":
        pattern = backend.script.get(field_name)
        if pattern is None:
            return json.dumps({"value": None})
        match = re.search(pattern, context, re.DOTALL)
        if match is None:
            return json.dumps({"value": None})
        value = match.group(1) if match.groups() else match.group(0)
        return json.dumps({"value": value})
    return _complete_remote(backend, prompt)


def parse_last_json_object(text: str) -> dict | None:
    """Return the last top-level JSON object in `text`, or None."""
    decoder = json.JSONDecoder()
    result = None
    pos = 0
    while True:
        start = text.find("{", pos)
        if start == -1:
            return result
        try:
            obj, end = decoder.raw_decode(text, start)
        except ValueError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            result = obj
        pos = end if end > start else start + 1


def conforms(value: str, kind: str) -> bool:
    """Check a candidate value against its field's output constraint."""
    if kind == "text":
        return value.strip() != ""
    if kind == "number":
        try:
            return Decimal(value.strip()).is_finite()
        except InvalidOperation:
            return False
    if kind == "url":
        parts = urlsplit(value.strip())
        return bool(parts.scheme) and bool(parts.netloc)
    return False


def extract_field(
    backend: LlmBackend,
    spec: FieldSpec,
    context: str,
    used_ids: Sequence[int],
) -> CandidateExtraction:
    """Ask one backend for one field; reply parsing never raises.

    Transport failures after retries raise LlmUnavailable; everything the
    model actually says maps to a candidate, valid or not.
    """
    prompt = render_prompt(spec, context)
    raw = complete(backend, prompt, spec.name, context)
    obj = parse_last_json_object(raw)
    value: str | None = None
    if obj is not None:
        got = obj.get("value")
        if isinstance(got, str):
            value = got
        elif isinstance(got, (int, float)) and not isinstance(got, bool):
            value = str(got)
    valid = value is not None and conforms(value, spec.value_kind)
    return CandidateExtraction(
        field=spec.name,
        model_id=backend.model_id,
        value=value,
        raw_response=raw,
        context_chunk_ids=tuple(used_ids),
        valid=valid,
    )
