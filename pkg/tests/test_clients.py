import json

import httpx
import pytest

from asrcurate.clients import (
    DuplicateRecordWarning,
    ServiceClient,
    ServiceConfig,
    load_detections,
    load_hypotheses,
)
from asrcurate.errors import SchemaError
from asrcurate.manifest import SliceSpec
from asrcurate.metrics import PRIMARY, SECONDARY


def lines(*recs):
    return [json.dumps(r) + "\n" for r in recs]


def test_empty_hypothesis_file(tmp_path):
    p = tmp_path / "h.jsonl"
    p.write_text("")
    assert len(load_hypotheses(p)) == 0


def test_hypothesis_lookup_round_trip():
    store = load_hypotheses(lines(
        {"chunk_id": "a", "source": PRIMARY, "text": "hej", "model_id": "whisper-large-v3"},
        {"chunk_id": "a", "source": SECONDARY, "text": "hej hej", "model_id": "voxrex"},
        {"chunk_id": "b", "source": PRIMARY, "text": "då"},
    ))
    assert store.get("a", PRIMARY).text == "hej"
    assert store.get("a", SECONDARY).text == "hej hej"
    assert store.get("b", PRIMARY).text == "då"
    assert store.get("b", SECONDARY) is None
    assert store.texts_for("a") == {PRIMARY: "hej", SECONDARY: "hej hej"}


def test_duplicate_hypothesis_last_wins():
    with pytest.warns(DuplicateRecordWarning):
        store = load_hypotheses(lines(
            {"chunk_id": "a", "source": PRIMARY, "text": "first"},
            {"chunk_id": "a", "source": PRIMARY, "text": "second"},
        ))
    assert len(store) == 1 and store.get("a", PRIMARY).text == "second"


def test_malformed_hypothesis_lines_are_per_line():
    store = load_hypotheses(["{bad\n", json.dumps({"chunk_id": "a", "source": "other", "text": ""}) + "\n",
                             json.dumps({"chunk_id": "a", "source": PRIMARY, "text": "ok"}) + "\n"])
    assert len(store) == 1
    assert [":1:" in str(e) or ":2:" in str(e) for e in store.errors] == [True, True]


def test_detections():
    store = load_detections(lines({"chunk_id": "a", "language": "sv", "confidence": 0.93},
                                  {"chunk_id": "b", "language": "nospeech"},
                                  {"chunk_id": "c", "language": "sv", "confidence": 2}))
    assert store.get("a").language == "sv" and store.get("b").confidence == 1.0
    assert store.get("c") is None and len(store.errors) == 1


# --- service mode ----------------------------------------------------------

SLICES = [("c1", SliceSpec("m1.wav", 0.0, 10.0)), ("c2", SliceSpec("m1.wav", 10.0, 20.0))]


def client(handler, **kw):
    cfg = ServiceConfig("http://asr.test", **kw)
    return ServiceClient(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None)


def test_empty_batch_makes_no_call():
    def handler(request):
        raise AssertionError("no request expected")

    with client(handler) as c:
        assert c.request_transcription([]).records == []
        assert c.request_language([]).records == []


def test_request_body_and_partial_failure():
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append((request.url.path, body))
        return httpx.Response(200, json=[
            {"chunk_id": "c1", "text": "hej", "confidence": 0.9},
            {"chunk_id": "c2", "error": "decode failed", "retryable": False},
        ])

    with client(handler) as c:
        out = c.request_transcription(SLICES, SECONDARY)
    assert seen == [("/transcribe", [
        {"chunk_id": "c1", "media_ref": "m1.wav", "start": 0.0, "end": 10.0},
        {"chunk_id": "c2", "media_ref": "m1.wav", "start": 10.0, "end": 20.0},
    ])]
    assert [(h.chunk_id, h.source, h.text) for h in out.records] == [("c1", SECONDARY, "hej")]
    assert [(f.chunk_id, f.error) for f in out.failures] == [("c2", "decode failed")]


def test_transient_503_then_success():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            return httpx.Response(503, json={"error": "busy", "retryable": True})
        return httpx.Response(200, json=[{"chunk_id": cid, "text": "ok"} for cid, _ in SLICES])

    with client(handler) as c:
        out = c.request_transcription(SLICES)
    assert len(calls) == 2 and len(out.records) == 2 and not out.failures


def test_persistent_failure_becomes_item_failures():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500, json={"error": "down", "retryable": True})

    with client(handler, attempts=3) as c:
        out = c.request_transcription(SLICES)
    assert len(calls) == 3
    assert out.records == [] and [f.chunk_id for f in out.failures] == ["c1", "c2"]
    assert all(f.retryable for f in out.failures)


def test_non_retryable_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, json={"error": "bad media_ref", "retryable": False})

    with client(handler) as c:
        out = c.request_transcription(SLICES)
    assert len(calls) == 1 and len(out.failures) == 2


def test_schema_mismatch_is_hard_error():
    with client(lambda r: httpx.Response(200, json={"not": "a list"})) as c:
        with pytest.raises(SchemaError):
            c.request_transcription(SLICES)
    with client(lambda r: httpx.Response(200, json=[{"text": "no id"}])) as c:
        with pytest.raises(SchemaError):
            c.request_transcription(SLICES)


def test_missing_items_reported():
    with client(lambda r: httpx.Response(200, json=[{"chunk_id": "c1", "text": "x"}])) as c:
        out = c.request_transcription(SLICES)
    assert [f.chunk_id for f in out.failures] == ["c2"]


FIXTURE_LANGS = {"m1.wav": "sv", "silence.wav": "nospeech"}


def detect_handler(request):
    assert request.url.path == "/detect_language"
    return httpx.Response(200, json=[
        {"chunk_id": item["chunk_id"], "language": FIXTURE_LANGS[item["media_ref"]], "confidence": 0.99}
        for item in json.loads(request.content)
    ])


def test_language_detection_fixtures():
    slices = [("speech", SliceSpec("m1.wav", 0, 5)), ("quiet", SliceSpec("silence.wav", 0, 5))]
    with client(detect_handler) as c:
        out = c.request_language(slices)
    assert {d.chunk_id: d.language for d in out.records} == {"speech": "sv", "quiet": "nospeech"}


def test_batching_and_auth_header():
    sizes = []

    def handler(request):
        assert request.headers["X-Api-Key"] == "secret"
        body = json.loads(request.content)
        sizes.append(len(body))
        return httpx.Response(200, json=[{"chunk_id": i["chunk_id"], "language": "sv"} for i in body])

    slices = [(f"c{i}", SliceSpec("m.wav", i, i + 1)) for i in range(7)]
    with client(handler, batch_size=3, auth_header="X-Api-Key", auth_token="secret") as c:
        out = c.request_language(slices)
    assert sorted(sizes) == [1, 3, 3]
    assert [d.chunk_id for d in out.records] == [c for c, _ in slices]
