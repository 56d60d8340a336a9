"""Shared fixtures: local stub HTTP servers and fixture-site helpers."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


class StubHandler(BaseHTTPRequestHandler):
    """Serves canned routes; records every request for assertions."""

    def _respond(self):
        self.server.requests.append((self.command, self.path))
        route = self.server.routes.get(self.path)
        if route is None:
            self.send_response(404)
            self.end_headers()
            return
        if callable(route):
            body_len = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(body_len) if body_len else b""
            route = route(self, body)
            if route is None:
                return
        status, content_type, payload = route
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    do_GET = _respond
    do_POST = _respond

    def log_message(self, *args):
        pass


SITE_URLS = [str(FIXTURES / "site" / f"p{i}.html") for i in range(1, 7)]

# Per-field regex patterns the mock backends run over the retrieved context.
FIELD_PATTERNS = {
    "title": r"Product name ([^\n]+?)\s*\n",
    "price": r"Price \$([0-9]+\.[0-9]{2})",
    "brand": r"Brand ([^\n]+?)\s*\n",
    "sku": r"SKU ([A-Z]{2}-[A-Z]{2}-[0-9]{3})",
    "availability": r"Availability ([^\n]+?)\s*\n",
    "rating": r"Rating ([0-9.]+) out of 5",
    "weight_kg": r"Weight ([0-9.]+) kg",
    "category": r"Category ([^\n]+?)\s*\n",
    "warranty_months": r"Warranty ([0-9]+) months",
    "product_url": r"Product page: (https://[^\s]+)",
    "support_url": r"help center at (https://[^\s]+)",
}

FIELD_QUERIES = {
    "title": "product name",
    "price": "price",
    "brand": "brand",
    "sku": "sku",
    "availability": "availability stock",
    "rating": "rating",
    "weight_kg": "weight kg",
    "category": "category",
    "warranty_months": "warranty months",
    "product_url": "product page",
    "support_url": "help center",
}

FIELD_KINDS = {
    "title": "text",
    "price": "number",
    "brand": "text",
    "sku": "text",
    "availability": "text",
    "rating": "number",
    "weight_kg": "number",
    "category": "text",
    "warranty_months": "number",
    "product_url": "url",
    "support_url": "url",
}

PROMPT_TEMPLATE = "Extract the value of {field_name} from these excerpts:\n\n{context}"


def site_fields():
    return [
        {
            "name": name,
            "retrieval_query": FIELD_QUERIES[name],
            "prompt_template": PROMPT_TEMPLATE,
            "k": 5,
            "value_kind": FIELD_KINDS[name],
        }
        for name in FIELD_PATTERNS
    ]


def regex_backends(model_ids=("alpha", "beta", "gamma")):
    return [
        {"model_id": mid, "kind": "mock_regex", "script": dict(FIELD_PATTERNS)}
        for mid in model_ids
    ]


def site_ground_truth():
    raw = json.loads((FIXTURES / "ground_truth.json").read_text(encoding="utf-8"))
    return {str(FIXTURES / rel): fields for rel, fields in raw.items()}


def write_config(tmp_path, **overrides):
    """Write a ready-to-run offline config into tmp_path; returns its path."""
    config = {
        "urls": SITE_URLS,
        "fetch": {"respect_robots": True, "timeout": 10.0, "max_retries": 0},
        "split": {"delimiters": ["\n\n", "\n", " "], "max_chunk_size": 1000},
        "embedder": {"kind": "local_ngram", "dims": 256},
        "backends": regex_backends(),
        "fields": site_fields(),
        "context_budget": 8000,
        "index_path": str(tmp_path / "index.rgsx"),
        "output_path": str(tmp_path / "output.jsonl"),
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def stub_server():
    """Factory for a throwaway local HTTP server with canned routes."""
    servers = []

    def _start(routes):
        server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
        server.routes = routes
        server.requests = []
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        server.base_url = f"http://127.0.0.1:{server.server_address[1]}"
        return server

    yield _start
    for server in servers:
        server.shutdown()
        server.server_close()


def json_response(obj, status=200):
    return (status, "application/json", json.dumps(obj))
