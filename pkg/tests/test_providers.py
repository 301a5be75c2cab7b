import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from reqsmith.pipeline.providers import (
    CompletionRequest,
    HttpProvider,
    PlaybookEntry,
    ProviderError,
    ScriptedProvider,
    ScriptExhausted,
    TemplateSet,
    Transcript,
    default_templates,
    parse_template,
)

EXPECTED_TEMPLATES = {
    "cegr_answer", "cegr_full", "cegr_parse", "cegr_requirements", "cegr_self", "clarify",
    "formalize", "formalize_repair", "informalize", "roundtrip_repair", "screen", "screen_repair",
}


def test_bundled_templates_load_and_have_both_sections():
    t = default_templates()
    for tid in EXPECTED_TEMPLATES:
        tpl = t[tid]
        assert tpl.user.strip(), tid
        assert len(tpl.digest) == 16
    with pytest.raises(KeyError):
        t["nope"]


def test_template_parsing_and_rendering(tmp_path):
    tpl = parse_template("greet", "[system]\nYou are ⟨role⟩.\n[user]\nHello ⟨name⟩!\n")
    assert tpl.render({"role": "terse", "name": "pump"}) == ("You are terse.", "Hello pump!")
    with pytest.raises(KeyError):
        tpl.render({"role": "terse"})
    with pytest.raises(ValueError):
        parse_template("bad", "stray text\n[user]\nhi")
    (tmp_path / "greet.txt").write_text("[system]\ns\n[user]\nu ⟨x⟩\n", encoding="utf-8")
    ts = TemplateSet.load(tmp_path)
    assert ts.render_suffix("greet", {"x": "1"}) == "u 1"


@pytest.fixture
def tiny():
    return TemplateSet({"echo": parse_template("echo", "[system]\nsys\n[user]\n⟨body⟩\n")})


def req(key="", body="hi", **kw):
    return CompletionRequest("echo", {"body": body}, key=key, **kw)


def test_first_matching_entry_wins_and_attempts_count_per_key(tiny):
    p = ScriptedProvider(
        [
            PlaybookEntry("echo", "first-a", attempt=0, key="a"),
            PlaybookEntry("echo", "catch-all-a", key="a"),
            PlaybookEntry("echo", "any"),
        ],
        tiny,
    )
    assert p.complete(req("a")).text == "first-a"
    assert p.complete(req("a")).text == "catch-all-a"
    c = p.complete(req("b"))
    assert c.text == "any" and c.attempt == 0
    assert p.complete(req("a")).attempt == 2


def test_sub_key_and_prompt_contains_matching(tiny):
    p = ScriptedProvider(
        [
            PlaybookEntry("echo", "fixed", key="q1", prompt_contains="Counterexample:"),
            PlaybookEntry("echo", "wrong", key="q1"),
        ],
        tiny,
    )
    assert p.complete(req("q1/full_cegr")).text == "wrong"
    assert p.complete(req("q1/full_cegr", suffix="Counterexample: x=1")).text == "fixed"
    assert p.complete(req("q1")).text == "wrong"
    with pytest.raises(ScriptExhausted) as info:
        p.complete(req("q10"))
    assert info.value.key == "q10" and info.value.attempt == 0


def test_suffix_is_appended_to_user_prompt(tiny):
    p = ScriptedProvider([PlaybookEntry("echo", "ok")], tiny)
    c = p.complete(req(body="question", suffix="feedback"))
    assert c.user == "question\n\nfeedback" and c.system == "sys"


def test_playbook_json_loading(tmp_path, tiny):
    path = tmp_path / "pb.json"
    path.write_text(json.dumps([{"template_id": "echo", "response_text": "cut", "truncated": True}]))
    c = ScriptedProvider.load(path, tiny).complete(req())
    assert c.text == "cut" and c.truncated


def test_transcript_replay_reproduces_responses(tiny):
    live = ScriptedProvider(
        [PlaybookEntry("echo", "one", attempt=0), PlaybookEntry("echo", "two", attempt=1), PlaybookEntry("echo", "x")],
        tiny,
    )
    t = Transcript()
    for key in ("k", "k", "j"):
        t.call(live, req(key))
    restored = Transcript.from_json(json.loads(json.dumps(t.to_json())))
    assert [r.response for r in restored.records] == ["one", "two", "one"]
    replay = ScriptedProvider.from_transcript(restored, tiny)
    t2 = Transcript()
    for key in ("k", "k", "j"):
        t2.call(replay, req(key))
    assert t2.to_json() == t.to_json()
    assert [r.attempt for r in t.for_key("echo", "k")] == [0, 1]


class _Handler(BaseHTTPRequestHandler):
    seen: list = []
    reply: dict = {"text": "pong", "usage": {"output_tokens": 1}}
    status = 200

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        payload = json.dumps(type(self).reply).encode()
        self.send_response(type(self).status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.seen = []
    _Handler.reply = {"text": "pong", "usage": {"output_tokens": 1}}
    _Handler.status = 200
    httpd = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}/complete", _Handler
    httpd.shutdown()
    httpd.server_close()


def test_http_provider_round_trip(server, tiny):
    url, handler = server
    p = HttpProvider(url, "test-model", api_key="secret", templates=tiny)
    c = p.complete(req(body="ping", temperature=0.7))
    assert c.text == "pong" and not c.truncated and c.usage == {"output_tokens": 1}
    body, auth = handler.seen[0]
    assert body == {"model": "test-model", "system": "sys", "user": "ping", "temperature": 0.7, "max_tokens": 16384}
    assert auth == "Bearer secret"


def test_http_provider_flags_truncation_and_errors(server, tiny):
    url, handler = server
    p = HttpProvider(url, "m", templates=tiny)
    handler.reply = {"text": "partial", "stop_reason": "max_tokens"}
    assert p.complete(req()).truncated
    handler.reply = {"nothing": True}
    with pytest.raises(ProviderError):
        p.complete(req())
    handler.status = 500
    with pytest.raises(ProviderError):
        p.complete(req())


def test_http_provider_from_env(monkeypatch):
    monkeypatch.delenv("REQSMITH_LLM_ENDPOINT", raising=False)
    monkeypatch.delenv("REQSMITH_LLM_MODEL", raising=False)
    with pytest.raises(ProviderError):
        HttpProvider.from_env()
    monkeypatch.setenv("REQSMITH_LLM_ENDPOINT", "http://127.0.0.1:9/x")
    monkeypatch.setenv("REQSMITH_LLM_MODEL", "m1")
    p = HttpProvider.from_env()
    assert p.tag == "http:m1" and p.api_key is None
