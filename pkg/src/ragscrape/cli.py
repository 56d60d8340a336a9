"""Pipeline orchestration behind the `ragscrape` subcommands.

index    fetch -> normalize -> chunk -> embed -> store, saved to disk
query    embed a query and print the top-k hits
extract  per (url, field): retrieve, prompt every backend, vote, emit JSONL
eval     extract with ground truth and report precision/coverage

Output JSONL lines are sorted by (url, field) and contain no volatile
data; stage timings go to a `.timings.json` sidecar so two runs with mock
backends produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .chunker import split_recursive
from .config import PipelineConfig, load_config
from .embedder import EmbedderSpec, embed_batch, embed_text
from .ensemble import (
    ExtractionResult,
    judge_vote,
    normalize_value,
    score_candidates,
    tally_votes,
)
from .errors import InvalidConfig, LlmUnavailable, RagscrapeError
from .extraction import CandidateExtraction, assemble_context, extract_field
from .ingest import Fetcher, html_to_text
from .timing import StageTimer
from .vector_store import VectorStore

log = logging.getLogger("ragscrape")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_PAGES = 3
EXIT_ALL_INVALID = 4


@dataclass(frozen=True)
class OutputRecord:
    url: str
    field: str
    value: str | None
    decided_by: str
    candidate_values: dict[str, str | None]
    chunk_ids: tuple[int, ...]
    timings: dict[str, float]

    def to_output_json(self) -> str:
        # Timings are volatile; they are written to the sidecar instead so
        # the output file is deterministic under mock backends.
        return json.dumps(
            {
                "url": self.url,
                "field": self.field,
                "value": self.value,
                "decided_by": self.decided_by,
                "candidate_values": self.candidate_values,
                "chunk_ids": list(self.chunk_ids),
            },
            ensure_ascii=False,
        )


def _index_meta_path(index_path: str) -> Path:
    return Path(index_path + ".meta.json")


def _write_index_meta(index_path: str, spec: EmbedderSpec) -> None:
    meta = {"embedder": asdict(spec)}
    _index_meta_path(index_path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def _read_index_embedder(config: PipelineConfig) -> EmbedderSpec:
    meta_path = _index_meta_path(config.index_path)
    if meta_path.is_file():
        try:
            raw = json.loads(meta_path.read_text(encoding="utf-8"))
            return EmbedderSpec(**raw["embedder"])
        except (ValueError, KeyError, TypeError):
            log.warning("unreadable index meta %s; using config embedder", meta_path)
    return config.embedder


def cmd_index(
    config: PipelineConfig,
    *,
    jobs: int = 1,
    fetcher: Fetcher | None = None,
) -> tuple[int, dict]:
    """Build and save the vector index; returns (exit_code, summary)."""
    if not config.urls:
        raise InvalidConfig("config.urls must not be empty for indexing")
    fetcher = fetcher or Fetcher()
    timer = StageTimer()
    store = VectorStore(dims=config.embedder.dims)

    def _page_chunks(url: str):
        with timer.stage("fetch"):
            page = fetcher.fetch(url, config.fetch)
        with timer.stage("normalize"):
            normalized = html_to_text(page, config.text_mode)
        with timer.stage("split"):
            return split_recursive(normalized.text, config.split, source_url=url)

    pages_ok = 0
    all_chunks = []
    def _safe(url: str):
        try:
            return _page_chunks(url)
        except RagscrapeError as exc:
            log.warning("skipping %s: %s", url, exc)
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe, config.urls))
    else:
        results = [_safe(url) for url in config.urls]
    for chunks in results:
        if chunks is None:
            continue
        pages_ok += 1
        all_chunks.extend(chunks)

    if pages_ok == 0:
        log.error("no page could be fetched")
        return EXIT_NO_PAGES, {"pages": 0, "chunks": 0, "dims": config.embedder.dims}

    if all_chunks:
        with timer.stage("embed"):
            vectors = embed_batch([c.text for c in all_chunks], config.embedder)
        with timer.stage("add"):
            for chunk, vec in zip(all_chunks, vectors):
                store.add(chunk, vec)
    with timer.stage("save"):
        Path(config.index_path).parent.mkdir(parents=True, exist_ok=True)
        store.save(config.index_path)
        _write_index_meta(config.index_path, config.embedder)

    summary = {
        "pages": pages_ok,
        "chunks": len(all_chunks),
        "dims": store.dims if store.dims is not None else config.embedder.dims,
        "timings_ms": timer.rounded(),
    }
    return EXIT_OK, summary


def cmd_query(config: PipelineConfig, query: str, k: int) -> tuple[int, list[dict]]:
    """Search the saved index; returns (exit_code, hits as JSON-ready dicts)."""
    if not Path(config.index_path).is_file():
        log.error("index not found: %s", config.index_path)
        return EXIT_CONFIG, []
    store = VectorStore.load(config.index_path)
    spec = _read_index_embedder(config)
    hits = store.search(embed_text(query, spec), k) if len(store) else []
    payload = [
        {
            "id": h.id,
            "score": h.score,
            "chunk": {
                "source_url": h.chunk.source_url,
                "ordinal": h.chunk.ordinal,
                "start": h.chunk.start,
                "end": h.chunk.end,
                "text": h.chunk.text,
            },
        }
        for h in hits
    ]
    return EXIT_OK, payload


def _candidates_for(
    config: PipelineConfig,
    spec,
    context: str,
    used_ids: list[int],
) -> list[CandidateExtraction]:
    candidates = []
    for backend in config.backends:
        try:
            candidates.append(extract_field(backend, spec, context, used_ids))
        except LlmUnavailable as exc:
            log.warning("backend %s unavailable for %s: %s", backend.model_id, spec.name, exc)
            candidates.append(
                CandidateExtraction(
                    field=spec.name,
                    model_id=backend.model_id,
                    value=None,
                    raw_response=f"<transport failure: {exc}>",
                    context_chunk_ids=tuple(used_ids),
                    valid=False,
                )
            )
    return candidates


def _extract_one(
    config: PipelineConfig,
    store: VectorStore,
    url: str,
    spec,
    query_vec: np.ndarray,
    ground_truth: str | None,
) -> tuple[OutputRecord, ExtractionResult]:
    timer = StageTimer()
    with timer.stage("retrieve"):
        scope = url if config.scoped_retrieval else None
        hits = store.search(query_vec, spec.k, source_url=scope)
    with timer.stage("context"):
        context, used_ids = assemble_context(hits, config.context_budget)
    with timer.stage("extract"):
        candidates = _candidates_for(config, spec, context, used_ids)
    with timer.stage("vote"):
        factor_scores = score_candidates(candidates, ground_truth)
        if any(c.valid for c in candidates):
            votes = [
                judge_vote(judge, candidates, factor_scores, config.priority, config.vote_weights)
                for judge in config.backends
            ]
        else:
            votes = []
        result = tally_votes(votes, candidates, config.priority)
    record = OutputRecord(
        url=url,
        field=spec.name,
        value=result.final_value,
        decided_by=result.decided_by,
        candidate_values={c.model_id: c.value for c in candidates},
        chunk_ids=tuple(used_ids),
        timings=timer.rounded(),
    )
    return record, result


def run_extraction(
    config: PipelineConfig,
    *,
    jobs: int = 1,
    ground_truth: dict[str, dict[str, str]] | None = None,
) -> list[tuple[OutputRecord, ExtractionResult]]:
    """Retrieval + ensemble extraction for every (url, field) pair, sorted."""
    if not config.urls:
        raise InvalidConfig("config.urls must not be empty for extraction")
    if not config.fields:
        raise InvalidConfig("config.fields must not be empty for extraction")
    store = VectorStore.load(config.index_path)
    embedder = _read_index_embedder(config)
    query_vecs = {f.name: embed_text(f.retrieval_query, embedder) for f in config.fields}

    tasks = [(url, spec) for url in config.urls for spec in config.fields]

    def _run(task):
        url, spec = task
        expected = (ground_truth or {}).get(url, {}).get(spec.name)
        return _extract_one(config, store, url, spec, query_vecs[spec.name], expected)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run, tasks))
    else:
        results = [_run(task) for task in tasks]
    results.sort(key=lambda pair: (pair[0].url, pair[0].field))
    return results


def _write_outputs(config: PipelineConfig, results: list[tuple[OutputRecord, ExtractionResult]]):
    out_path = Path(config.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for record, _ in results:
            fh.write(record.to_output_json())
            fh.write("\n")
    totals: dict[str, float] = {}
    detail = []
    for record, _ in results:
        for stage, ms in record.timings.items():
            totals[stage] = round(totals.get(stage, 0.0) + ms, 3)
        detail.append({"url": record.url, "field": record.field, "timings_ms": record.timings})
    sidecar = {"totals_ms": totals, "records": detail}
    Path(str(out_path) + ".timings.json").write_text(
        json.dumps(sidecar, indent=2), encoding="utf-8"
    )


def cmd_extract(
    config: PipelineConfig,
    *,
    jobs: int = 1,
    reindex: bool = False,
    fetcher: Fetcher | None = None,
    ground_truth: dict[str, dict[str, str]] | None = None,
) -> tuple[int, list[tuple[OutputRecord, ExtractionResult]]]:
    """Full extraction run; writes the output JSONL and its timing sidecar."""
    if reindex or not Path(config.index_path).is_file():
        if not reindex:
            log.error("index not found: %s (run `ragscrape index` or pass --reindex)", config.index_path)
            return EXIT_CONFIG, []
        code, _ = cmd_index(config, jobs=jobs, fetcher=fetcher)
        if code != EXIT_OK:
            return code, []
    results = run_extraction(config, jobs=jobs, ground_truth=ground_truth)
    _write_outputs(config, results)
    if results and all(r.decided_by == "all_invalid" for _, r in results):
        return EXIT_ALL_INVALID, results
    return EXIT_OK, results


def load_ground_truth(path: str | Path) -> dict[str, dict[str, str]]:
    """Parse {url: {field: expected}} ground truth, resolving relative URLs."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InvalidConfig(f"cannot parse ground truth {path}: {exc}") from exc
    if not isinstance(raw, dict) or not raw:
        raise InvalidConfig("ground truth must be a non-empty JSON object")
    resolved: dict[str, dict[str, str]] = {}
    for url, fields in raw.items():
        if not isinstance(fields, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in fields.items()
        ):
            raise InvalidConfig(f"ground truth for {url!r} must map field names to strings")
        if not url.startswith(("http://", "https://")) and not Path(url).is_absolute():
            url = str(path.parent / url)
        resolved[url] = dict(fields)
    return resolved


def cmd_eval(
    config: PipelineConfig,
    ground_truth: dict[str, dict[str, str]],
    *,
    jobs: int = 1,
    reindex: bool = False,
    fetcher: Fetcher | None = None,
) -> tuple[int, dict]:
    """Extraction in evaluation mode plus exact-match precision/coverage."""
    code, results = cmd_extract(
        config, jobs=jobs, reindex=reindex, fetcher=fetcher, ground_truth=ground_truth
    )
    if code == EXIT_CONFIG:
        return code, {}

    def _metrics(pairs):
        total = len(pairs)
        attempted = [(rec, exp) for rec, exp in pairs if rec.value is not None]
        correct = sum(
            1
            for rec, exp in attempted
            if normalize_value(rec.value).norm == normalize_value(exp).norm
        )
        return {
            "total": total,
            "attempted": len(attempted),
            "correct": correct,
            "precision": round(correct / len(attempted), 6) if attempted else None,
            "coverage": round(len(attempted) / total, 6) if total else None,
        }

    scored = [
        (record, ground_truth[record.url][record.field])
        for record, _ in results
        if record.url in ground_truth and record.field in ground_truth[record.url]
    ]
    per_field: dict[str, list] = {}
    for record, expected in scored:
        per_field.setdefault(record.field, []).append((record, expected))
    report = {
        "overall": _metrics(scored),
        "per_field": {name: _metrics(pairs) for name, pairs in sorted(per_field.items())},
    }
    return EXIT_OK, report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragscrape")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--offline", action="store_true", help="forbid all network I/O")

    p_index = sub.add_parser("index", help="fetch, chunk, embed, and save the index")
    _common(p_index)

    p_query = sub.add_parser("query", help="search the index with a text query")
    _common(p_query)
    p_query.add_argument("query", help="query text")
    p_query.add_argument("--k", type=int, default=5, help="number of hits")

    p_extract = sub.add_parser("extract", help="run field extraction over all URLs")
    _common(p_extract)
    p_extract.add_argument("--reindex", action="store_true", help="rebuild the index first")

    p_eval = sub.add_parser("eval", help="extract and score against ground truth")
    _common(p_eval)
    p_eval.add_argument("--reindex", action="store_true", help="rebuild the index first")
    p_eval.add_argument("--ground-truth", required=True, help="ground truth JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.offline:
            config.require_offline()
        if args.command == "index":
            code, summary = cmd_index(config, jobs=args.jobs)
            if code == EXIT_OK:
                print(json.dumps(summary))
            return code
        if args.command == "query":
            code, hits = cmd_query(config, args.query, args.k)
            for hit in hits:
                print(json.dumps(hit, ensure_ascii=False))
            return code
        if args.command == "extract":
            code, _ = cmd_extract(config, jobs=args.jobs, reindex=args.reindex)
            return code
        if args.command == "eval":
            truth = load_ground_truth(args.ground_truth)
            code, report = cmd_eval(config, truth, jobs=args.jobs, reindex=args.reindex)
            if code == EXIT_OK:
                print(json.dumps(report, indent=2))
            return code
    except InvalidConfig as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except RagscrapeError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
