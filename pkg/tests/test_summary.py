import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from chainfraud.exceptions import DataError, RedactionError, RemoteBackendError
from chainfraud.ingest import ingest_transactions, RawTransaction
from chainfraud.summary import (AccountDossier, BackendResult, DirectoryStore,
                                MemoryStore, MockSummarizer, PartnerRow,
                                RemoteConfig, RemoteSummarizer, audit_redaction,
                                build_dossier, build_forensic_prompt,
                                dossier_cache_key, split_sentences,
                                summarize_account, summarize_node)


def tx(src, dst, amount, ts=0, fee=0):
    return RawTransaction("generic", f"t{src}{dst}{ts}", src, dst, amount, ts,
                          fee=fee)


def small_graph():
    records = [tx("0x" + "a" * 40, "0x" + "b" * 40, 10 * 10**8, ts=100, fee=10**5),
               tx("0x" + "c" * 40, "0x" + "a" * 40, 2 * 10**8, ts=200)]
    graph, _ = ingest_transactions(records, "generic")
    return graph


class CountingBackend:
    tag = "mock"

    def __init__(self, inner=None):
        self.calls = 0
        self.inner = inner or MockSummarizer()

    def complete(self, prompt):
        self.calls += 1
        return self.inner.complete(prompt)


def test_dossier_is_pseudonymized():
    graph = small_graph()
    dossier = build_dossier(graph, "0x" + "a" * 40)
    assert dossier.center_pseudonym == "the subject account"
    names = {r.pseudonym for r in dossier.rows}
    assert names <= {"P01", "P02"}
    assert dossier.totals["partners"] == 2.0
    assert dossier.totals["total_out"] == pytest.approx(10.0)
    assert dossier.totals["total_in"] == pytest.approx(2.0)
    assert dossier.totals["fees"] == pytest.approx(0.001)


def test_prompt_contains_four_dimensions():
    graph = small_graph()
    dossier = build_dossier(graph, "0x" + "a" * 40)
    prompt = build_forensic_prompt(dossier)
    for heading in ("Value flow", "Counterparties", "Transaction timing",
                    "Fee expenditure"):
        assert heading in prompt
    assert "do not look up" in prompt


def test_prompt_rejects_identifier_leak():
    dossier = AccountDossier(
        center_pseudonym="0x" + "d" * 40, rows=[], totals={"total_in": 0.0},
        decimals=8)
    with pytest.raises(RedactionError):
        build_forensic_prompt(dossier)


def test_prompt_truncates_partner_rows():
    rows = [PartnerRow(f"P{i:03d}", "in", float(1000 - i), 1, 0, 10)
            for i in range(500)]
    dossier = AccountDossier("the subject account", rows,
                             {"total_in": 1.0}, 8)
    prompt = build_forensic_prompt(dossier, row_budget=100)
    kept = [line for line in prompt.splitlines() if line.startswith("  P")]
    assert len(kept) == 100
    assert "truncated to the 100 largest" in prompt
    # the kept rows are the 100 largest amounts
    assert "P000 " in prompt and "P099 " in prompt and "P100 " not in prompt


def test_cache_hit_skips_backend():
    graph = small_graph()
    backend = CountingBackend()
    store = MemoryStore()
    s1 = summarize_node(graph, "0x" + "a" * 40, backend, store)
    s2 = summarize_node(graph, "0x" + "a" * 40, backend, store)
    assert backend.calls == 1
    assert s1.text == s2.text
    assert s2.backend_tag == "mock"


def test_mock_outflow_dominance_rule():
    records = [tx("0x" + "a" * 40, f"0x{i:040x}", 30 * 10**8, ts=i) for i in range(3)]
    records += [tx("0x" + "f" * 40, "0x" + "a" * 40, 10**8, ts=50)]
    graph, _ = ingest_transactions(records, "generic")
    store = MemoryStore()
    summary = summarize_node(graph, "0x" + "a" * 40, MockSummarizer(), store)
    assert any("net outflow dominance" in s for s in summary.sentences)


def test_empty_backend_output_not_cached():
    class EmptyBackend:
        tag = "mock"

        def complete(self, prompt):
            return BackendResult(text="")

    graph = small_graph()
    store = MemoryStore()
    with pytest.raises(DataError):
        summarize_node(graph, "0x" + "a" * 40, EmptyBackend(), store)
    assert not list(store.iter_records())


def test_sentence_segmentation():
    text = "First sentence. Second one!  Third?Not split here. Fourth."
    parts = split_sentences(text)
    assert parts == ["First sentence.", "Second one!", "Third?Not split here.",
                     "Fourth."]


def test_store_first_write_wins(tmp_path):
    for store in (MemoryStore(), DirectoryStore(str(tmp_path / "ev"))):
        rec = {"cache_key": "k1", "account": "a", "text": "T.",
               "sentences": ["T."], "backend_tag": "mock", "created_at": "x"}
        store.put(rec)
        store.put(dict(rec, created_at="y"))  # identical text: ok
        with pytest.raises(DataError):
            store.put(dict(rec, text="other."))
        assert store.get("k1")["text"] == "T."
        assert len(list(store.iter_records())) == 1


def test_cache_key_sensitive_to_template():
    graph = small_graph()
    dossier = build_dossier(graph, "0x" + "a" * 40)
    assert dossier_cache_key(dossier, "v1") != dossier_cache_key(dossier, "v2")


def test_audit_redaction():
    store = MemoryStore()
    store.put({"cache_key": "k", "account": "0x" + "a" * 40,
               "text": "Clean sentence.", "sentences": ["Clean sentence."],
               "backend_tag": "mock", "created_at": "t"})
    assert audit_redaction(store) == []
    store.put({"cache_key": "k2", "account": "b",
               "text": f"Sent to 0x{'9' * 40} yesterday.",
               "sentences": [f"Sent to 0x{'9' * 40} yesterday."],
               "backend_tag": "mock", "created_at": "t"})
    leaks = audit_redaction(store)
    assert leaks and leaks[0].startswith("0x999")


# -- remote backend over a real socket ---------------------------------------

class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        self.server.requests.append(
            {"body": body, "auth": self.headers.get("Authorization")})
        status, payload = self.server.script.pop(0)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.requests = []
    server.script = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


def remote(server, **overrides):
    cfg = RemoteConfig(url=f"http://127.0.0.1:{server.server_address[1]}/v1",
                       backoff_base=0.01, **overrides)
    return RemoteSummarizer(cfg)


def test_remote_success_and_wire_format(stub_server, monkeypatch):
    monkeypatch.setenv("CHAINFRAUD_API_TOKEN", "sekret")
    stub_server.script = [(200, {"text": "A fine day. Nothing odd.",
                                 "token_logprobs": [-0.5, -0.25]})]
    result = remote(stub_server).complete("analyze this")
    assert result.text.startswith("A fine day")
    assert result.token_logprobs == [-0.5, -0.25]
    sent = stub_server.requests[0]
    assert set(sent["body"]) == {"model", "prompt", "max_tokens",
                                 "temperature", "logprobs"}
    assert sent["auth"] == "Bearer sekret"


def test_remote_retries_then_succeeds(stub_server):
    stub_server.script = [(500, {}), (503, {}), (200, {"text": "ok."})]
    result = remote(stub_server).complete("p")
    assert result.text == "ok."
    assert len(stub_server.requests) == 3


def test_remote_failure_carries_attempts(stub_server):
    stub_server.script = [(500, {})] * 4
    with pytest.raises(RemoteBackendError) as err:
        remote(stub_server, max_retries=3).complete("p")
    assert err.value.attempts == 4


def test_remote_client_error_no_retry(stub_server):
    stub_server.script = [(401, {"error": "bad token"})]
    with pytest.raises(RemoteBackendError) as err:
        remote(stub_server).complete("p")
    assert err.value.attempts == 1
    assert len(stub_server.requests) == 1
