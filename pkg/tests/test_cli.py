import json

import pytest

import conftest as fx
from ragscrape.chunker import default_split_config, split_recursive
from ragscrape.cli import (
    EXIT_ALL_INVALID,
    EXIT_CONFIG,
    EXIT_NO_PAGES,
    EXIT_OK,
    cmd_eval,
    cmd_extract,
    cmd_index,
    cmd_query,
    load_ground_truth,
    main,
)
from ragscrape.config import load_config
from ragscrape.ingest import FetchPolicy, fetch_page, html_to_text
from ragscrape.vector_store import VectorStore


def build_index(tmp_path, **overrides):
    config = load_config(fx.write_config(tmp_path, **overrides))
    code, summary = cmd_index(config)
    assert code == EXIT_OK
    return config, summary


# --- index -------------------------------------------------------------------


def test_index_counts_match_independent_chunker(tmp_path):
    config, summary = build_index(tmp_path)
    expected_chunks = 0
    for url in fx.SITE_URLS:
        page = fetch_page(url, FetchPolicy())
        text = html_to_text(page).text
        expected_chunks += len(split_recursive(text, default_split_config(), source_url=url))
    assert summary["pages"] == 6
    assert summary["chunks"] == expected_chunks
    assert summary["dims"] == 256
    store = VectorStore.load(config.index_path)
    assert len(store) == expected_chunks


def test_index_writes_embedder_meta(tmp_path):
    config, _ = build_index(tmp_path)
    meta = json.loads((tmp_path / "index.rgsx.meta.json").read_text())
    assert meta["embedder"]["kind"] == "local_ngram"
    assert meta["embedder"]["dims"] == 256


def test_index_skips_unreachable_url(tmp_path):
    urls = fx.SITE_URLS[:2] + [str(tmp_path / "missing.html")]
    config, summary = build_index(tmp_path, urls=urls)
    assert summary["pages"] == 2


def test_index_empty_page_yields_zero_chunks(tmp_path):
    empty = tmp_path / "empty.html"
    empty.write_text("", encoding="utf-8")
    config, summary = build_index(tmp_path, urls=[str(empty)])
    assert summary["pages"] == 1
    assert summary["chunks"] == 0


def test_index_parallel_jobs_same_store(tmp_path):
    config = load_config(fx.write_config(tmp_path))
    code, summary = cmd_index(config, jobs=4)
    assert code == EXIT_OK
    serial_config, serial_summary = build_index(
        tmp_path, index_path=str(tmp_path / "serial.rgsx")
    )
    assert summary["pages"] == serial_summary["pages"]
    assert summary["chunks"] == serial_summary["chunks"]
    parallel = {
        (r.chunk.source_url, r.chunk.ordinal): r.chunk.text
        for r in VectorStore.load(config.index_path).records
    }
    serial = {
        (r.chunk.source_url, r.chunk.ordinal): r.chunk.text
        for r in VectorStore.load(serial_config.index_path).records
    }
    assert parallel == serial


def test_index_all_urls_failing_exits_3(tmp_path):
    config = load_config(fx.write_config(tmp_path, urls=[str(tmp_path / "nope.html")]))
    code, _ = cmd_index(config)
    assert code == EXIT_NO_PAGES


def test_index_empty_urls_is_config_error(tmp_path):
    path = fx.write_config(tmp_path, urls=[])
    assert main(["index", "--config", str(path)]) == EXIT_CONFIG


# --- query -------------------------------------------------------------------


def test_query_self_retrieval(tmp_path):
    config, _ = build_index(tmp_path)
    store = VectorStore.load(config.index_path)
    target = store.records[5].chunk
    code, hits = cmd_query(config, target.text, 3)
    assert code == EXIT_OK
    assert hits[0]["chunk"]["text"] == target.text
    assert hits[0]["score"] == pytest.approx(1.0, abs=1e-9)


def test_query_k_larger_than_index(tmp_path):
    config, summary = build_index(tmp_path, urls=fx.SITE_URLS[:1])
    code, hits = cmd_query(config, "anything at all", 10_000)
    assert code == EXIT_OK
    assert len(hits) == summary["chunks"]


def test_query_missing_index_exits_2(tmp_path):
    config = load_config(fx.write_config(tmp_path))
    code, hits = cmd_query(config, "x", 5)
    assert code == EXIT_CONFIG
    assert hits == []


def test_query_ranks_gram_overlap_above_none(tmp_path):
    config, _ = build_index(tmp_path, urls=fx.SITE_URLS[:1])
    code, hits = cmd_query(config, "warranty months", 100)
    assert code == EXIT_OK
    texts = [h["chunk"]["text"] for h in hits]
    target = next(i for i, t in enumerate(texts) if "Warranty 24 months" in t)
    unrelated = next(i for i, t in enumerate(texts) if "moulded channel" in t)
    assert target < unrelated
    assert hits[target]["score"] > hits[unrelated]["score"]


# --- extract -----------------------------------------------------------------


def test_extract_end_to_end_matches_ground_truth(tmp_path):
    config, _ = build_index(tmp_path)
    code, results = cmd_extract(config)
    assert code == EXIT_OK
    truth = fx.site_ground_truth()
    by_key = {(r.url, r.field): r for r, _ in results}
    assert len(by_key) == len(fx.SITE_URLS) * len(fx.FIELD_PATTERNS)
    for url, fields in truth.items():
        for fname, expected in fields.items():
            record = by_key[(url, fname)]
            assert record.value == expected, (url, fname)
            assert record.decided_by == "majority"
            assert set(record.candidate_values) == {"alpha", "beta", "gamma"}


def test_extract_without_index_exits_2(tmp_path):
    config = load_config(fx.write_config(tmp_path))
    code, _ = cmd_extract(config)
    assert code == EXIT_CONFIG


def test_extract_reindex_builds_first(tmp_path):
    config = load_config(fx.write_config(tmp_path, urls=fx.SITE_URLS[:1]))
    code, results = cmd_extract(config, reindex=True)
    assert code == EXIT_OK
    assert (tmp_path / "index.rgsx").is_file()
    assert results


def test_extract_output_sorted_and_deterministic(tmp_path):
    config, _ = build_index(tmp_path)
    assert cmd_extract(config)[0] == EXIT_OK
    first = (tmp_path / "output.jsonl").read_bytes()
    lines = [json.loads(l) for l in first.decode().splitlines()]
    keys = [(l["url"], l["field"]) for l in lines]
    assert keys == sorted(keys)
    assert cmd_extract(config)[0] == EXIT_OK
    assert (tmp_path / "output.jsonl").read_bytes() == first


def test_extract_parallel_jobs_identical_output(tmp_path):
    config, _ = build_index(tmp_path)
    assert cmd_extract(config)[0] == EXIT_OK
    serial = (tmp_path / "output.jsonl").read_bytes()
    assert cmd_extract(config, jobs=4)[0] == EXIT_OK
    assert (tmp_path / "output.jsonl").read_bytes() == serial


def test_extract_writes_timing_sidecar(tmp_path):
    config, _ = build_index(tmp_path, urls=fx.SITE_URLS[:1])
    cmd_extract(config)
    sidecar = json.loads((tmp_path / "output.jsonl.timings.json").read_text())
    assert {"retrieve", "context", "extract", "vote"} <= set(sidecar["totals_ms"])
    assert len(sidecar["records"]) == len(fx.FIELD_PATTERNS)


def test_extract_scoped_retrieval_never_crosses_pages(tmp_path):
    config, _ = build_index(tmp_path)
    _, results = cmd_extract(config)
    store = VectorStore.load(config.index_path)
    chunk_src = {r.id: r.chunk.source_url for r in store.records}
    for record, _ in results:
        assert all(chunk_src[cid] == record.url for cid in record.chunk_ids)


def test_extract_unscoped_mode_can_cross_pages(tmp_path):
    config, _ = build_index(tmp_path, scoped_retrieval=False)
    _, results = cmd_extract(config)
    store = VectorStore.load(config.index_path)
    chunk_src = {r.id: r.chunk.source_url for r in store.records}
    crossed = any(
        chunk_src[cid] != record.url
        for record, _ in results
        for cid in record.chunk_ids
    )
    assert crossed  # identical support paragraphs on every page guarantee it


def test_extract_retrieval_composes_with_query(tmp_path):
    config, _ = build_index(tmp_path, urls=fx.SITE_URLS[:1])
    _, results = cmd_extract(config)
    for record, _ in results:
        _, hits = cmd_query(config, fx.FIELD_QUERIES[record.field], 5)
        assert list(record.chunk_ids) == [h["id"] for h in hits]


def test_extract_majority_two_to_one(tmp_path):
    backends = [
        {"model_id": "m1", "kind": "mock_scripted", "script": {"winner": '{"value": "A"}'}},
        {"model_id": "m2", "kind": "mock_scripted", "script": {"winner": '{"value": "A"}'}},
        {"model_id": "m3", "kind": "mock_scripted", "script": {"winner": '{"value": "B"}'}},
    ]
    fields = [
        {
            "name": "winner",
            "retrieval_query": "anything",
            "prompt_template": "{field_name}: {context}",
        }
    ]
    config, _ = build_index(
        tmp_path, urls=fx.SITE_URLS[:1], backends=backends, fields=fields
    )
    code, results = cmd_extract(config)
    assert code == EXIT_OK
    record, result = results[0]
    assert record.value == "A"
    assert record.decided_by == "majority"
    assert record.candidate_values == {"m1": "A", "m2": "A", "m3": "B"}


def test_extract_all_invalid_exits_4(tmp_path):
    backends = [
        {"model_id": "m1", "kind": "mock_scripted", "script": {"ghost": "no json at all"}},
        {"model_id": "m2", "kind": "mock_scripted", "script": {}},
    ]
    fields = [
        {"name": "ghost", "retrieval_query": "anything", "prompt_template": "{field_name} {context}"}
    ]
    config, _ = build_index(tmp_path, urls=fx.SITE_URLS[:1], backends=backends, fields=fields)
    code, results = cmd_extract(config)
    assert code == EXIT_ALL_INVALID
    record, result = results[0]
    assert record.value is None
    assert record.decided_by == "all_invalid"


# --- eval --------------------------------------------------------------------


def test_eval_perfect_precision(tmp_path):
    config, _ = build_index(tmp_path)
    code, report = cmd_eval(config, fx.site_ground_truth())
    assert code == EXIT_OK
    assert report["overall"]["precision"] == 1.0
    assert report["overall"]["coverage"] == 1.0
    assert report["overall"]["total"] == 66
    assert set(report["per_field"]) == set(fx.FIELD_PATTERNS)


def test_eval_two_of_three_precision(tmp_path):
    backends = [
        {
            "model_id": "m1",
            "kind": "mock_scripted",
            "script": {
                "f_one": '{"value": "right"}',
                "f_two": '{"value": "right"}',
                "f_three": '{"value": "wrong"}',
            },
        }
    ]
    fields = [
        {"name": name, "retrieval_query": "x", "prompt_template": "{field_name} {context}"}
        for name in ("f_one", "f_two", "f_three")
    ]
    config, _ = build_index(tmp_path, urls=fx.SITE_URLS[:1], backends=backends, fields=fields)
    truth = {fx.SITE_URLS[0]: {"f_one": "right", "f_two": "right", "f_three": "right"}}
    code, report = cmd_eval(config, truth)
    assert code == EXIT_OK
    assert report["overall"]["precision"] == pytest.approx(0.667, abs=1e-3)


def test_eval_all_invalid_counts_in_coverage_only(tmp_path):
    backends = [
        {"model_id": "m1", "kind": "mock_scripted", "script": {"found": '{"value": "yes"}'}}
    ]
    fields = [
        {"name": "found", "retrieval_query": "x", "prompt_template": "{field_name} {context}"},
        {"name": "absent", "retrieval_query": "x", "prompt_template": "{field_name} {context}"},
    ]
    config, _ = build_index(tmp_path, urls=fx.SITE_URLS[:1], backends=backends, fields=fields)
    truth = {fx.SITE_URLS[0]: {"found": "yes", "absent": "never"}}
    code, report = cmd_eval(config, truth)
    assert code == EXIT_OK
    assert report["overall"]["total"] == 2
    assert report["overall"]["attempted"] == 1
    assert report["overall"]["precision"] == 1.0
    assert report["overall"]["coverage"] == 0.5


def test_eval_malformed_ground_truth_rejected(tmp_path):
    bad = tmp_path / "gt.json"
    bad.write_text('{"url": ["not", "a", "map"]}', encoding="utf-8")
    with pytest.raises(Exception):
        load_ground_truth(bad)
    path = fx.write_config(tmp_path)
    assert main(["eval", "--config", str(path), "--ground-truth", str(bad)]) == EXIT_CONFIG


# --- main entry point --------------------------------------------------------


def test_main_full_offline_pipeline(tmp_path, capsys):
    path = fx.write_config(tmp_path)
    assert main(["index", "--config", str(path), "--offline"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["pages"] == 6

    assert main(["query", "--config", str(path), "--offline", "price", "--k", "3"]) == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 3
    assert all("score" in json.loads(line) for line in out)

    assert main(["extract", "--config", str(path), "--offline"]) == EXIT_OK
    assert (tmp_path / "output.jsonl").is_file()


def test_main_offline_rejects_remote_backend(tmp_path):
    backends = fx.regex_backends() + [
        {"model_id": "real", "kind": "remote_chat", "endpoint": "http://api.example.com/v1"}
    ]
    path = fx.write_config(tmp_path, backends=backends)
    assert main(["extract", "--config", str(path), "--offline"]) == EXIT_CONFIG


def test_main_offline_rejects_http_urls(tmp_path):
    path = fx.write_config(tmp_path, urls=["http://example.com/p"])
    assert main(["index", "--config", str(path), "--offline"]) == EXIT_CONFIG


def test_main_missing_config_exits_2(tmp_path):
    assert main(["index", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_main_unknown_config_key_exits_2(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"backends": [], "bogus_key": 1}', encoding="utf-8")
    assert main(["index", "--config", str(path)]) == EXIT_CONFIG
