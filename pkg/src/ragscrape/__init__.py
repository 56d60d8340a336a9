"""Retrieval-augmented structured field extraction from web pages."""

from .chunker import Chunk, SplitConfig, default_split_config, split_recursive
from .embedder import EmbedderSpec, embed_batch, embed_text, fnv1a_64
from .ensemble import (
    ExtractionResult,
    NormalizedValue,
    VoteRecord,
    judge_vote,
    normalize_value,
    score_candidates,
    tally_votes,
)
from .errors import (
    CorruptIndex,
    DimensionMismatch,
    EmbedFailed,
    FetchFailed,
    InvalidConfig,
    LlmUnavailable,
    NotFound,
    RagscrapeError,
    RobotsDisallowed,
    TemplateError,
    Timeout,
)
from .extraction import (
    CandidateExtraction,
    FieldSpec,
    LlmBackend,
    assemble_context,
    extract_field,
    render_prompt,
)
from .ingest import FetchPolicy, Fetcher, NormalizedText, RawPage, fetch_page, html_to_text
from .vector_store import DocumentRecord, SearchHit, VectorStore, cosine

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "SplitConfig",
    "default_split_config",
    "split_recursive",
    "EmbedderSpec",
    "embed_batch",
    "embed_text",
    "fnv1a_64",
    "ExtractionResult",
    "NormalizedValue",
    "VoteRecord",
    "judge_vote",
    "normalize_value",
    "score_candidates",
    "tally_votes",
    "CorruptIndex",
    "DimensionMismatch",
    "EmbedFailed",
    "FetchFailed",
    "InvalidConfig",
    "LlmUnavailable",
    "NotFound",
    "RagscrapeError",
    "RobotsDisallowed",
    "TemplateError",
    "Timeout",
    "CandidateExtraction",
    "FieldSpec",
    "LlmBackend",
    "assemble_context",
    "extract_field",
    "render_prompt",
    "FetchPolicy",
    "Fetcher",
    "NormalizedText",
    "RawPage",
    "fetch_page",
    "html_to_text",
    "DocumentRecord",
    "SearchHit",
    "VectorStore",
    "cosine",
]
