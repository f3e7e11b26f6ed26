from __future__ import annotations

import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from oracles import overlap_similarity, power_iteration_oracle
from restaware.llm import (
    BackendUnavailable,
    HttpBackend,
    HttpStatus,
    MalformedResponse,
    TemplateBackend,
    Timeout,
    generate_text,
    make_backend,
)
from restaware.simulator import PostureLabel
from restaware.summarizer import (
    EmptySession,
    SleepAggregate,
    SummaryConfig,
    aggregate_session,
    construct_prompt,
    content_words,
    extract_summary,
    split_sentences,
    summarize,
    textrank_scores,
    write_summary,
)

SUPINE = int(PostureLabel.SUPINE)


def zero_aggregate(**overrides):
    base = dict(participant_id="P7", duration_s=0.0, posture_counts={p: 0 for p in PostureLabel},
                transition_count=0, deep_sleep_events=0, low_breathing_count=0, no_move_count=0,
                avg_movement_intensity=0.0)
    base.update(overrides)
    return SleepAggregate(**base)


def run_lengths(categories, ts, wanted, min_s):
    """Hand-rolled scan: maximal runs of ``wanted`` whose first-to-last span is >= min_s."""
    count, i, n = 0, 0, len(categories)
    while i < n:
        if categories[i] in wanted:
            j = i
            while j + 1 < n and categories[j + 1] in wanted:
                j += 1
            if (ts[j] - ts[i]) / 1000 >= min_s:
                count += 1
            i = j + 1
        else:
            i += 1
    return count


class TestAggregate:
    def test_all_supine_still(self):
        ts = list(range(0, 600_001, 1640))
        agg = aggregate_session([(t, SUPINE) for t in ts], [(t, 1.0) for t in ts])
        assert (agg.no_move_count, agg.deep_sleep_events, agg.transition_count) == (1, 1, 0)
        assert agg.low_breathing_count == 0
        assert agg.avg_movement_intensity == pytest.approx(1.0)
        assert sum(agg.posture_counts.values()) == len(ts)

    def test_transition_count(self):
        labels = [(i, p) for i, p in enumerate([0, 0, 1, 1, 0])]
        assert aggregate_session(labels, []).transition_count == 2

    def test_empty(self):
        with pytest.raises(EmptySession):
            aggregate_session([], [])

    def test_scripted_stillness_and_bursts(self):
        # (seconds at 1 sample/s, amplitude): still 40, burst, still 20, burst, low 50, burst,
        # still 130, then low 70 + still 70 with a posture change half way through
        script = [(40, 1.0), (10, 30.0), (20, 1.0), (10, 30.0), (50, 3.0), (10, 30.0),
                  (130, 1.0), (5, 30.0), (70, 3.0), (70, 1.0)]
        amps = [a for n, a in script for _ in range(n)]
        ts = [i * 1000 for i in range(len(amps))]
        change_at = ts[-70 - 35]
        labels = [(t, SUPINE if t < change_at else int(PostureLabel.PRONE)) for t in ts]
        agg = aggregate_session(labels, list(zip(ts, amps)))

        cats = ["still" if a < 2 else "low" if a < 4 else "move" for a in amps]
        # hand-walked: still runs of 39 s, 129 s and 69 s qualify; low runs of 49 s and 69 s
        assert agg.no_move_count == run_lengths(cats, ts, {"still"}, 30) == 3
        assert agg.low_breathing_count == run_lengths(cats, ts, {"low"}, 30) == 2
        # quiet runs: 129 s qualifies; the last 139 s run is cut by the posture change into 104 s + 34 s
        assert agg.deep_sleep_events == 1
        assert agg.transition_count == 1


class TestPrompt:
    def test_event_vocabulary(self):
        prompt = construct_prompt(zero_aggregate(low_breathing_count=54, no_move_count=62))
        assert '54 instances of "Low Breathing"' in prompt
        assert '62 instances of "No Move"' in prompt

    def test_zeroed_aggregate(self):
        prompt = construct_prompt(zero_aggregate())
        assert "roll-over: 0" in prompt and "side sleep: 0" in prompt
        assert "Posture transitions: 0." in prompt
        assert "Average movement intensity: 0.0." in prompt

    def test_deterministic(self):
        agg = zero_aggregate(duration_s=600.0, avg_movement_intensity=7.25)
        assert construct_prompt(agg) == construct_prompt(agg)


class TestTemplateBackend:
    def test_rich_and_deterministic(self):
        prompt = construct_prompt(zero_aggregate(deep_sleep_events=2, transition_count=9,
                                                 posture_counts={p: int(p) for p in PostureLabel}))
        a = generate_text(TemplateBackend(), prompt)
        assert a == generate_text(TemplateBackend(), prompt)
        assert len(split_sentences(a)) >= 8
        for theme in ("deep sleep", "posture", "movement", "disrupt"):
            assert theme in a.lower()

    def test_foreign_prompt(self):
        with pytest.raises(MalformedResponse):
            TemplateBackend().generate("tell me a story")

    def test_make_backend(self):
        assert isinstance(make_backend("template"), TemplateBackend)
        with pytest.raises(BackendUnavailable):
            make_backend("http")
        with pytest.raises(ValueError):
            make_backend("carrier-pigeon")


class _Stub:
    def __init__(self, status=200, body=None, delay=0.0):
        self.status, self.delay, self.requests = status, delay, []
        self.body = body if body is not None else json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": "Canned reply. Slept well."}}]})
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                stub.requests.append((self.path, dict(self.headers), json.loads(self.rfile.read(length))))
                time.sleep(stub.delay)
                data = stub.body.encode()
                self.send_response(stub.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub(request):
    s = _Stub(**getattr(request, "param", {}))
    yield s
    s.close()


class TestHttpBackend:
    def test_canned_completion(self, stub):
        backend = HttpBackend(stub.url, "m1", token="tok", retries=0)
        assert generate_text(backend, "hello", max_tokens=64) == "Canned reply. Slept well."
        path, headers, body = stub.requests[0]
        assert path == "/v1/chat/completions"
        assert headers["Authorization"] == "Bearer tok"
        assert body == {"model": "m1", "messages": [{"role": "user", "content": "hello"}], "max_tokens": 64}

    def test_token_from_environment(self, stub, monkeypatch):
        monkeypatch.setenv("RESTAWARE_LLM_TOKEN", "envtok")
        HttpBackend(stub.url, "m", retries=0).generate("x")
        assert stub.requests[0][1]["Authorization"] == "Bearer envtok"

    @pytest.mark.parametrize("stub", [{"status": 500, "body": "{}"}], indirect=True)
    def test_server_error(self, stub):
        with pytest.raises(HttpStatus) as info:
            HttpBackend(stub.url, "m", retries=1, backoff=0.0).generate("x")
        assert info.value.code == 500
        assert len(stub.requests) == 2

    @pytest.mark.parametrize("stub", [{"status": 404, "body": "{}"}], indirect=True)
    def test_client_error_not_retried(self, stub):
        with pytest.raises(HttpStatus):
            HttpBackend(stub.url, "m", retries=3, backoff=0.0).generate("x")
        assert len(stub.requests) == 1

    @pytest.mark.parametrize("stub", [{"body": '{"choices": []}'}], indirect=True)
    def test_malformed(self, stub):
        with pytest.raises(MalformedResponse):
            HttpBackend(stub.url, "m", retries=0).generate("x")

    @pytest.mark.parametrize("stub", [{"delay": 1.0}], indirect=True)
    def test_timeout(self, stub):
        with pytest.raises(Timeout):
            HttpBackend(stub.url, "m", timeout=0.2, retries=0).generate("x")

    def test_unreachable(self):
        with pytest.raises(BackendUnavailable):
            HttpBackend("http://127.0.0.1:9", "m", retries=0, timeout=2).generate("x")


class TestSplit:
    def test_two_sentences(self):
        assert [s.text for s in split_sentences("A good night. Very restful sleep overall.")] == \
            ["A good night.", "Very restful sleep overall."]

    def test_empty(self):
        assert split_sentences("") == [] and split_sentences("   ") == []

    def test_short_fragment(self):
        out = split_sentences("Dr. Smith slept.")
        assert len(out) == 1 and out[0].index == 0

    def test_indices_and_marks(self):
        out = split_sentences("Did you sleep well? Yes I did! It was very calm")
        assert [s.index for s in out] == [0, 1, 2]
        assert out[1].text == "Yes I did!"

    def test_trailing_short_fragment_dropped(self):
        assert [s.text for s in split_sentences("The night was calm. Ok.")] == ["The night was calm."]


HUB_TEXT = ("Sleep posture and movement stayed calm overnight. "
            "Posture shifted twice before dawn. "
            "Movement peaked near midnight briefly. "
            "Calm breathing lasted until morning.")


def oracle_scores(sentences):
    words = [content_words(s) for s in sentences]
    W = [[0.0 if i == j else overlap_similarity(words[i], words[j]) for j in range(len(words))]
         for i in range(len(words))]
    return power_iteration_oracle(W)


VOCAB = [f"w{i}" for i in range(25)]


def random_sentences(rng, n):
    return [" ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 9))) + "." for _ in range(n)]


class TestTextRank:
    def test_single(self):
        assert textrank_scores(["Only one sentence here."]) == [1.0]

    def test_disjoint_pair(self):
        assert textrank_scores(["Cats chase mice daily.", "Rivers flood valleys often."]) == \
            pytest.approx([0.5, 0.5])

    def test_hub_matches_oracle(self):
        sentences = [s.text for s in split_sentences(HUB_TEXT)]
        got = textrank_scores(sentences)
        want = oracle_scores(sentences)
        np.testing.assert_allclose(got, want, atol=1e-6)
        assert int(np.argmax(got)) == 0

    def test_random_graphs(self):
        rng = random.Random(0)
        for _ in range(20):
            sentences = random_sentences(rng, rng.randint(1, 12))
            got = textrank_scores(sentences)
            np.testing.assert_allclose(got, oracle_scores(sentences), atol=1e-6)
            assert sum(got) == pytest.approx(1.0, abs=1e-6)

    def test_permutation_invariance(self):
        rng = random.Random(1)
        sentences = random_sentences(rng, 10)
        perm = list(range(10))
        rng.shuffle(perm)
        base = textrank_scores(sentences)
        shuffled = textrank_scores([sentences[i] for i in perm])
        np.testing.assert_allclose(shuffled, [base[i] for i in perm], atol=1e-9)


class TestExtract:
    def test_n_at_least_count(self):
        s = extract_summary(HUB_TEXT, SummaryConfig(n_sentences=10))
        assert [x.text for x in s.sentences] == [x.text for x in split_sentences(HUB_TEXT)]

    def test_n_one(self):
        s = extract_summary(HUB_TEXT, SummaryConfig(n_sentences=1))
        assert [x.index for x in s.sentences] == [0]

    def test_hub_plus_runner_up(self):
        want = oracle_scores([x.text for x in split_sentences(HUB_TEXT)])
        ranked = sorted(range(4), key=lambda i: (-want[i], i))
        s = extract_summary(HUB_TEXT, SummaryConfig(n_sentences=2))
        assert [x.index for x in s.sentences] == sorted(ranked[:2])

    def test_empty(self):
        s = extract_summary("")
        assert s.sentences == [] and s.text == ""

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SummaryConfig(n_sentences=0)
        with pytest.raises(ValueError):
            SummaryConfig(damping=1.0)


class TestSummarize:
    def test_end_to_end_deterministic(self, tmp_path):
        agg = zero_aggregate(duration_s=600, low_breathing_count=3, no_move_count=2, deep_sleep_events=1,
                             posture_counts={p: 10 for p in PostureLabel}, transition_count=7,
                             avg_movement_intensity=9.5)
        a = summarize(agg, TemplateBackend(), SummaryConfig(n_sentences=4))
        b = summarize(agg, TemplateBackend(), SummaryConfig(n_sentences=4))
        assert a.to_dict() == b.to_dict()
        assert len(a.summary.sentences) == min(4, len(a.all_sentences))
        idx = [s.index for s in a.summary.sentences]
        assert idx == sorted(idx)
        assert all(a.all_sentences[i].text == s.text for i, s in zip(idx, a.summary.sentences))
        sidecar = write_summary(a, tmp_path / "summary.txt")
        doc = json.loads(sidecar.read_text())
        assert set(doc) >= {"sentences", "scores", "aggregate"}
        assert (tmp_path / "summary.txt").read_text().strip() == a.summary.text

    def test_sidecar_never_overwrites_text(self, tmp_path):
        result = summarize(zero_aggregate(), TemplateBackend())
        sidecar = write_summary(result, tmp_path / "out.json")
        assert sidecar != tmp_path / "out.json"
        assert (tmp_path / "out.json").read_text().strip() == result.summary.text
        json.loads(sidecar.read_text())
