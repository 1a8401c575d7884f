import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from archevo.gateway import (
    ChatExchange,
    GatewayTimeout,
    HttpGateway,
    ScriptedGateway,
    ScriptExhausted,
    StatusError,
    TagParseError,
    TranscriptWriter,
    TransportError,
    load_script,
    parse_tag_response,
)


# --- scripted replay ---


def test_scripted_replay_keys_by_stream_and_seq():
    gw = ScriptedGateway({("a", 0): "first", ("a", 1): "second", ("b", 0): "other"})
    assert gw.complete("a", None, "x") == "first"
    assert gw.complete("b", "sys", "y") == "other"
    assert gw.complete("a", None, "z") == "second"


def test_scripted_exhaustion_raises():
    gw = ScriptedGateway({("a", 0): "only"})
    gw.complete("a", None, "x")
    with pytest.raises(ScriptExhausted):
        gw.complete("a", None, "x")
    with pytest.raises(ScriptExhausted):
        gw.complete("never-recorded", None, "x")


def test_transcript_round_trips_as_script(tmp_path):
    path = tmp_path / "transcript.jsonl"
    writer = TranscriptWriter(path)
    gw = ScriptedGateway({("s", 0): "r0", ("s", 1): "r1"}, transcript=writer)
    gw.complete("s", "sys", "u0")
    gw.complete("s", None, "u1")
    replay = ScriptedGateway(load_script(path))
    assert replay.complete("s", "sys", "u0") == "r0"
    assert replay.complete("s", None, "u1") == "r1"


def test_load_script_rejects_bad_lines(tmp_path):
    p = tmp_path / "script.jsonl"
    p.write_text('{"stream": "a"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match="script.jsonl:1"):
        load_script(p)


# --- response tag parsing ---


def test_parse_tag_response_cases():
    assert parse_tag_response("analysis...##response##no") == "no"
    assert parse_tag_response("thoughts...**response**yes") == "yes"
    # the LAST marker wins even when one appears mid-text
    text = "##response##maybe\nmore prose\n##response## yes, clearly"
    assert parse_tag_response(text) == "yes, clearly"


def test_parse_tag_response_requires_marker():
    with pytest.raises(TagParseError):
        parse_tag_response("no marker anywhere")


# --- HTTP gateway against a loopback stub ---


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        self.server.last_request = {
            "path": self.path,
            "body": body,
            "auth": self.headers.get("Authorization"),
        }
        mode = self.server.mode
        if mode == "slow":
            time.sleep(0.6)
            mode = "ok"
        if mode == "ok":
            payload = json.dumps(
                {"choices": [{"message": {"content": "stub says hi"}}]}
            ).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        elif mode == "429":
            payload = b"slow down"
            self.send_response(429)
            self.send_header("Retry-After", "1.5")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        elif mode == "badjson":
            payload = b"not json at all"
            self.send_response(200)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.mode = "ok"
    server.last_request = None
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


def _gateway(server, **kwargs):
    host, port = server.server_address
    return HttpGateway(f"http://{host}:{port}", "test-model", **kwargs)


def test_http_gateway_success_and_payload_shape(stub_server, monkeypatch):
    monkeypatch.setenv("ARCHEVO_API_KEY", "sk-test")
    gw = _gateway(stub_server)
    assert gw.complete("s", "be helpful", "hello") == "stub says hi"
    req = stub_server.last_request
    assert req["path"] == "/chat/completions"
    assert req["auth"] == "Bearer sk-test"
    assert req["body"]["model"] == "test-model"
    assert req["body"]["messages"] == [
        {"role": "system", "content": "be helpful"},
        {"role": "user", "content": "hello"},
    ]


def test_http_gateway_no_system_message(stub_server, monkeypatch):
    monkeypatch.delenv("ARCHEVO_API_KEY", raising=False)
    gw = _gateway(stub_server)
    gw.complete("s", None, "hello")
    req = stub_server.last_request
    assert req["auth"] is None
    assert [m["role"] for m in req["body"]["messages"]] == ["user"]


def test_http_gateway_status_error_with_retry_after(stub_server):
    stub_server.mode = "429"
    gw = _gateway(stub_server)
    with pytest.raises(StatusError) as exc_info:
        gw.complete("s", None, "hello")
    assert exc_info.value.status == 429
    assert exc_info.value.retry_after == 1.5
    assert "slow down" in exc_info.value.body


def test_http_gateway_timeout(stub_server):
    stub_server.mode = "slow"
    gw = _gateway(stub_server, timeout_s=0.15)
    with pytest.raises(GatewayTimeout):
        gw.complete("s", None, "hello")


def test_http_gateway_malformed_payload(stub_server):
    stub_server.mode = "badjson"
    gw = _gateway(stub_server)
    with pytest.raises(TransportError):
        gw.complete("s", None, "hello")


def test_http_gateway_connection_refused():
    gw = HttpGateway("http://127.0.0.1:9", "m", timeout_s=0.5)
    with pytest.raises(TransportError):
        gw.complete("s", None, "u")


def test_http_gateway_writes_transcript(stub_server, tmp_path):
    path = tmp_path / "t.jsonl"
    gw = _gateway(stub_server, transcript=TranscriptWriter(path))
    gw.complete("s", None, "hello")
    rec = json.loads(path.read_text().strip())
    assert rec["stream"] == "s"
    assert rec["seq"] == 0
    assert rec["response"] == "stub says hi"
    assert rec["latency_ms"] >= 0


def test_chat_exchange_is_frozen():
    ex = ChatExchange("s", 0, None, "u", "r", 1.0)
    with pytest.raises(AttributeError):
        ex.response = "changed"
