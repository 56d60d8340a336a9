"""Pipeline configuration: one JSON file drives every subcommand.

Relative paths inside the file resolve against the file's own directory,
so a config travels with its fixtures. Defaults for every knob are
documented in docs/config.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .chunker import SplitConfig, default_split_config
from .embedder import EmbedderSpec
from .ensemble import DEFAULT_WEIGHTS
from .errors import InvalidConfig
from .extraction import FieldSpec, LlmBackend
from .ingest import MODE_EXTRACTED, MODE_RAW, FetchPolicy

DEFAULT_CONTEXT_BUDGET = 8000


@dataclass(frozen=True)
class PipelineConfig:
    urls: tuple[str, ...]
    fetch: FetchPolicy
    split: SplitConfig
    embedder: EmbedderSpec
    backends: tuple[LlmBackend, ...]
    fields: tuple[FieldSpec, ...]
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    index_path: str = "index.rgsx"
    output_path: str = "output.jsonl"
    text_mode: str = MODE_EXTRACTED
    vote_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    scoped_retrieval: bool = True  # False: fields may retrieve across all pages

    def __post_init__(self):
        if not self.backends:
            raise InvalidConfig("at least one backend is required")
        model_ids = [b.model_id for b in self.backends]
        if len(set(model_ids)) != len(model_ids):
            raise InvalidConfig("backend model_ids must be unique (they define priority)")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise InvalidConfig("field names must be unique")
        if self.context_budget <= 0:
            raise InvalidConfig("context_budget must be positive")
        if self.text_mode not in (MODE_EXTRACTED, MODE_RAW):
            raise InvalidConfig(f"unknown text_mode: {self.text_mode!r}")
        for key in ("frequency", "quality", "accuracy"):
            if key not in self.vote_weights:
                raise InvalidConfig(f"vote_weights is missing {key!r}")

    @property
    def priority(self) -> list[str]:
        """Model priority for tie-breaking: the configured backend order."""
        return [b.model_id for b in self.backends]

    def require_offline(self) -> None:
        """Reject any configuration that would touch the network."""
        for url in self.urls:
            if url.startswith(("http://", "https://")):
                raise InvalidConfig(f"--offline forbids remote URL {url!r}")
        if self.embedder.kind != "local_ngram":
            raise InvalidConfig("--offline requires the local_ngram embedder")
        for backend in self.backends:
            if backend.kind == "remote_chat":
                raise InvalidConfig(f"--offline forbids remote backend {backend.model_id!r}")


def _take(obj: dict, allowed: dict[str, object], where: str) -> dict:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise InvalidConfig(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    merged = dict(allowed)
    merged.update(obj)
    return merged


def _resolve(base: Path, path_str: str | None) -> str | None:
    if path_str is None:
        return None
    if path_str.startswith(("http://", "https://")):
        return path_str
    path = Path(path_str)
    return str(path if path.is_absolute() else base / path)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InvalidConfig(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidConfig("config root must be a JSON object")
    base = path.parent

    top = _take(
        raw,
        {
            "urls": [],
            "fetch": {},
            "split": {},
            "embedder": {},
            "backends": None,
            "fields": [],
            "context_budget": DEFAULT_CONTEXT_BUDGET,
            "index_path": "index.rgsx",
            "output_path": "output.jsonl",
            "text_mode": MODE_EXTRACTED,
            "vote_weights": dict(DEFAULT_WEIGHTS),
            "scoped_retrieval": True,
        },
        "config",
    )
    if top["backends"] is None:
        raise InvalidConfig("config must list backends")
    for key in ("urls", "backends", "fields"):
        if not isinstance(top[key], list):
            raise InvalidConfig(f"config {key!r} must be a list")
    if not all(isinstance(u, str) for u in top["urls"]):
        raise InvalidConfig("config urls must be strings")

    try:
        fetch_raw = _take(
            top["fetch"],
            {
                "respect_robots": True,
                "timeout": 30.0,
                "max_retries": 2,
                "user_agent": "ragscrape/0.1",
                "cache_dir": None,
            },
            "fetch",
        )
        fetch_raw["cache_dir"] = _resolve(base, fetch_raw["cache_dir"])
        fetch = FetchPolicy(**fetch_raw)

        split_defaults = default_split_config()
        split_raw = _take(
            top["split"],
            {
                "delimiters": list(split_defaults.delimiters),
                "max_chunk_size": split_defaults.max_chunk_size,
            },
            "split",
        )
        split = SplitConfig(
            delimiters=tuple(split_raw["delimiters"]),
            max_chunk_size=split_raw["max_chunk_size"],
        )

        embedder_raw = _take(
            top["embedder"],
            {
                "kind": "local_ngram",
                "dims": 256,
                "model_id": None,
                "endpoint": None,
                "batch_size": 16,
                "max_retries": 2,
                "max_in_flight": 4,
            },
            "embedder",
        )
        embedder = EmbedderSpec(**embedder_raw)

        backends = []
        for i, entry in enumerate(top["backends"]):
            backend_raw = _take(
                entry,
                {
                    "model_id": None,
                    "kind": "remote_chat",
                    "endpoint": None,
                    "temperature": 0.0,
                    "max_output": 256,
                    "script": {},
                },
                f"backends[{i}]",
            )
            if not backend_raw["model_id"]:
                raise InvalidConfig(f"backends[{i}] is missing model_id")
            backends.append(LlmBackend(**backend_raw))

        fields = []
        for i, entry in enumerate(top["fields"]):
            field_raw = _take(
                entry,
                {
                    "name": None,
                    "retrieval_query": None,
                    "prompt_template": None,
                    "k": 5,
                    "value_kind": "text",
                },
                f"fields[{i}]",
            )
            for required in ("name", "retrieval_query", "prompt_template"):
                if field_raw[required] is None:
                    raise InvalidConfig(f"fields[{i}] is missing {required}")
            fields.append(FieldSpec(**field_raw))
    except TypeError as exc:
        raise InvalidConfig(f"malformed config value: {exc}") from exc

    return PipelineConfig(
        urls=tuple(_resolve(base, u) for u in top["urls"]),
        fetch=fetch,
        split=split,
        embedder=embedder,
        backends=tuple(backends),
        fields=tuple(fields),
        context_budget=top["context_budget"],
        index_path=_resolve(base, top["index_path"]),
        output_path=_resolve(base, top["output_path"]),
        text_mode=top["text_mode"],
        vote_weights=dict(top["vote_weights"]),
        scoped_retrieval=bool(top["scoped_retrieval"]),
    )
