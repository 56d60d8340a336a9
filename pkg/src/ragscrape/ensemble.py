"""Ensemble voting over candidate extractions.

Each backend judges all candidates and casts one vote; the candidate whose
model takes a strict majority wins, ties fall to the configured priority
order. Judges score three factors: frequency (how often a normalized value
recurs across candidates), quality (binary conformance), and, in
evaluation mode only, accuracy against ground truth.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import LlmUnavailable
from .extraction import CandidateExtraction, LlmBackend, _complete_remote, parse_last_json_object

DEFAULT_WEIGHTS = {"frequency": 0.5, "quality": 0.3, "accuracy": 0.2}

JUDGE_PROMPT_HEADER = (
    "You are ranking candidate values extracted for one field by several models.\n"
    "Pick the best candidate, considering accuracy, how often the value recurs\n"
    "across models, and overall data quality.\n\n"
)
JUDGE_PROMPT_FOOTER = (
    '\nRespond with exactly one JSON object of the form {"choice": "<model_id>"} '
    "and nothing else."
)

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class NormalizedValue:
    raw: str
    norm: str


@dataclass(frozen=True)
class VoteRecord:
    judge_model: str
    chosen_model: str
    factor_scores: dict[str, float]


@dataclass(frozen=True)
class ExtractionResult:
    field: str
    final_value: str | None
    candidates: tuple[CandidateExtraction, ...]
    votes: tuple[VoteRecord, ...]
    decided_by: str  # majority | tiebreak_priority | all_invalid


def normalize_value(raw: str) -> NormalizedValue:
    """Trim, casefold, and collapse whitespace runs, for frequency counting."""
    return NormalizedValue(raw=raw, norm=_WS_RUN.sub(" ", raw.strip()).casefold())


def score_candidates(
    candidates: Sequence[CandidateExtraction],
    ground_truth: str | None = None,
) -> list[dict[str, float]]:
    """Per-candidate factor scores, aligned with the input order.

    Frequency counts candidates sharing a normalized value over the number
    of valid candidates; quality is binary conformance; accuracy appears
    only when ground truth is supplied. Invalid candidates score 0 on all
    factors.
    """
    valid = [c for c in candidates if c.valid]
    norm_counts: dict[str, int] = {}
    for c in valid:
        key = normalize_value(c.value).norm
        norm_counts[key] = norm_counts.get(key, 0) + 1
    truth_norm = normalize_value(ground_truth).norm if ground_truth is not None else None

    scores = []
    for c in candidates:
        if not c.valid:
            entry = {"frequency": 0.0, "quality": 0.0}
            if truth_norm is not None:
                entry["accuracy"] = 0.0
        else:
            norm = normalize_value(c.value).norm
            entry = {
                "frequency": norm_counts[norm] / len(valid),
                "quality": 1.0,
            }
            if truth_norm is not None:
                entry["accuracy"] = 1.0 if norm == truth_norm else 0.0
        scores.append(entry)
    return scores


def _weighted(entry: dict[str, float], weights: dict[str, float]) -> float:
    if "accuracy" in entry:
        return (
            weights["frequency"] * entry["frequency"]
            + weights["quality"] * entry["quality"]
            + weights["accuracy"] * entry["accuracy"]
        )
    # Accuracy unavailable: renormalize the remaining weights.
    total = weights["frequency"] + weights["quality"]
    return (
        weights["frequency"] / total * entry["frequency"]
        + weights["quality"] / total * entry["quality"]
    )


def _priority_rank(model_id: str, priority: Sequence[str]) -> int:
    for rank, known in enumerate(priority):
        if known == model_id:
            return rank
    return len(priority)


def deterministic_choice(
    candidates: Sequence[CandidateExtraction],
    factor_scores: Sequence[dict[str, float]],
    priority: Sequence[str],
    weights: dict[str, float] | None = None,
) -> int:
    """Index of the valid candidate with the highest weighted factor score.

    Ties fall to the candidate whose model comes first in `priority`.
    """
    weights = weights or DEFAULT_WEIGHTS
    best = None
    best_key = None
    for i, (cand, entry) in enumerate(zip(candidates, factor_scores)):
        if not cand.valid:
            continue
        key = (-_weighted(entry, weights), _priority_rank(cand.model_id, priority))
        if best_key is None or key < best_key:
            best, best_key = i, key
    if best is None:
        raise ValueError("deterministic_choice requires at least one valid candidate")
    return best


def _judge_prompt(
    candidates: Sequence[CandidateExtraction],
    factor_scores: Sequence[dict[str, float]],
) -> str:
    lines = [JUDGE_PROMPT_HEADER, f"Field: {candidates[0].field}\n\nCandidates:\n"]
    for cand, entry in zip(candidates, factor_scores):
        factors = ", ".join(f"{k}={v:.3f}" for k, v in sorted(entry.items()))
        shown = json.dumps(cand.value) if cand.valid else "invalid"
        lines.append(f"- {cand.model_id}: {shown} ({factors})\n")
    lines.append(JUDGE_PROMPT_FOOTER)
    return "".join(lines)


def judge_vote(
    judge: LlmBackend,
    candidates: Sequence[CandidateExtraction],
    factor_scores: Sequence[dict[str, float]],
    priority: Sequence[str],
    weights: dict[str, float] | None = None,
) -> VoteRecord:
    """One judge's vote over the candidate list.

    A remote judge replies {"choice": <model_id>}; an unparseable reply, an
    unknown choice, or a transport failure falls back to the deterministic
    weighted rule and flags the vote. Mock backends use the deterministic
    rule directly.
    """
    if not any(c.valid for c in candidates):
        raise ValueError("judge_vote requires at least one valid candidate")

    chosen: str | None = None
    fallback = False
    if judge.kind == "remote_chat":
        try:
            reply = _complete_remote(judge, _judge_prompt(candidates, factor_scores))
            obj = parse_last_json_object(reply)
            choice = obj.get("choice") if obj else None
            if isinstance(choice, str) and any(c.model_id == choice for c in candidates):
                chosen = choice
            else:
                fallback = True
        except LlmUnavailable:
            fallback = True

    if chosen is None:
        idx = deterministic_choice(candidates, factor_scores, priority, weights)
        chosen = candidates[idx].model_id
    else:
        idx = next(i for i, c in enumerate(candidates) if c.model_id == chosen)

    factors = dict(factor_scores[idx])
    if fallback:
        factors["fallback"] = 1.0
    return VoteRecord(judge_model=judge.model_id, chosen_model=chosen, factor_scores=factors)


def tally_votes(
    votes: Sequence[VoteRecord],
    candidates: Sequence[CandidateExtraction],
    priority: Sequence[str],
) -> ExtractionResult:
    """Resolve votes into a final value.

    A strict majority for one valid candidate's model decides directly; any
    tie (including 1-1-1) falls to the highest-priority model among the
    valid candidates with the most votes. A candidate with valid=false can
    never win while a valid one exists.
    """
    field_name = candidates[0].field if candidates else ""
    valid = [c for c in candidates if c.valid]
    if not valid:
        return ExtractionResult(
            field=field_name,
            final_value=None,
            candidates=tuple(candidates),
            votes=tuple(votes),
            decided_by="all_invalid",
        )
    counts: dict[str, int] = {}
    for vote in votes:
        counts[vote.chosen_model] = counts.get(vote.chosen_model, 0) + 1
    ranked = sorted(
        valid,
        key=lambda c: (-counts.get(c.model_id, 0), _priority_rank(c.model_id, priority)),
    )
    winner = ranked[0]
    decided_by = (
        "majority" if counts.get(winner.model_id, 0) * 2 > len(votes) else "tiebreak_priority"
    )
    return ExtractionResult(
        field=field_name,
        final_value=winner.value,
        candidates=tuple(candidates),
        votes=tuple(votes),
        decided_by=decided_by,
    )
