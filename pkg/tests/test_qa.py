from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from erl.envs import EnvInstance, MAX_STEP_FEEDBACK, QaEnv, SearchIndex
from erl.envs.qa import (ANSWER_FEEDBACK, FEEDBACK, INVALID_FEEDBACK, SEARCH_FEEDBACK,
                         TOOL_ERROR_FEEDBACK, CorpusDoc, SearchRequest, ToolError,
                         extract_boxed, format_tool_call, generate_qa, local_search, normalize,
                         parse_tool_call, qa_reward, token_f1)

TOY = [CorpusDoc("d1", "Paris", "Paris is the capital of France."),
       CorpusDoc("d2", "Berlin", "Berlin is the capital of Germany."),
       CorpusDoc("d3", "Rome", "Rome is in Italy.")]


def test_toy_corpus_hand_scored():
    hits = local_search(SearchIndex(TOY), SearchRequest("berlin"))
    # "berlin" occurs twice in d2 (title + text), in 1 of 3 docs
    assert hits[0].doc_id == "d2"
    assert hits[0].score == pytest.approx(2 * (math.log(4 / 2) + 1))
    assert [h.score for h in hits[1:]] == [0.0, 0.0]
    assert [h.doc_id for h in hits[1:]] == ["d1", "d3"]  # ties by doc_id


def test_common_terms_rank_by_frequency():
    hits = SearchIndex(TOY).search(SearchRequest("capital is", top_k=3))
    # idf(is) = log(4/4) + 1 = 1, idf(capital) = log(4/3) + 1
    # each doc holds "is" once; d1 and d2 hold "capital" once
    expected = {"d1": 1 + math.log(4 / 3) + 1, "d2": 1 + math.log(4 / 3) + 1, "d3": 1.0}
    assert {h.doc_id: h.score for h in hits} == pytest.approx(expected)
    assert [h.doc_id for h in hits] == ["d1", "d2", "d3"]


def test_top_k_default_and_bounds():
    docs = [CorpusDoc(f"x{i}", f"t{i}", "alpha beta") for i in range(8)]
    index = SearchIndex(docs)
    assert len(local_search(index, SearchRequest("alpha"))) == 5
    assert len(local_search(index, SearchRequest("alpha", 50))) == 8
    for bad in (0, 51, 2.5, True):
        with pytest.raises(ToolError):
            SearchRequest("alpha", bad)
    with pytest.raises(ToolError):
        SearchRequest("   ")


def test_duplicate_doc_ids_rejected():
    with pytest.raises(ValueError):
        SearchIndex([TOY[0], TOY[0]])


@pytest.mark.parametrize("text,expected", [
    ("\\boxed{Paris}", "Paris"),
    ("\\boxed{a} then \\boxed{b}", "b"),
    ("no box", None),
    ("\\boxed{f(x{1})} ok", "f(x{1})"),
    ("\\boxed{a} \\boxed{unclosed", "a"),
])
def test_extract_boxed(text, expected):
    assert extract_boxed(text) == expected


@pytest.mark.parametrize("raw,norm", [
    ("  Barack   OBAMA ", "barack obama"),
    ("barack obama", "barack obama"),
    ("", ""),
    ("New\tYork\nCity", "new york city"),
])
def test_normalize(raw, norm):
    assert normalize(raw) == norm


def test_token_f1_examples():
    assert token_f1("obama", "barack obama") == pytest.approx(2 / 3)
    assert token_f1("a b", "a b") == 1.0
    assert token_f1("a", "b") == 0.0
    assert token_f1("", "a") == 0.0


@given(st.text(alphabet="ab c", max_size=12))
def test_normalize_idempotent(text):
    assert normalize(normalize(text)) == normalize(text)


@given(st.lists(st.sampled_from("abcd"), max_size=6), st.lists(st.sampled_from("abcd"),
                                                              max_size=6))
def test_f1_symmetric_and_reward_support(a, b):
    a, b = " ".join(a), " ".join(b)
    assert token_f1(a, b) == pytest.approx(token_f1(b, a))
    r = qa_reward(a, b) if b else 0.0
    assert r == 0.0 or 0.3 <= r <= 1.0


def test_tool_call_roundtrip():
    text = format_tool_call("local_search", {"query": "x", "top_k": 3})
    assert parse_tool_call("thinking " + text) == {"name": "local_search",
                                                   "arguments": {"query": "x", "top_k": 3}}
    assert "error" in parse_tool_call("<tool_call>{oops</tool_call>")
    assert parse_tool_call("nothing") is None


def _env():
    return QaEnv(SearchIndex(TOY))


def _inst(gold="Germany"):
    return EnvInstance("q", 0, {"question": "Where is Berlin?", "gold_answer": gold}, "train")


def test_episode_search_then_answer():
    env = _env()
    s = env.reset(_inst())
    s, out, action = env.step(s, format_tool_call("local_search", {"query": "berlin"}))
    assert action == "local_search" and out.feedback == SEARCH_FEEDBACK
    assert "Doc 1 (Berlin)" in out.observation and not out.terminal
    s, out, action = env.step(s, "It is \\boxed{germany}")
    assert (out.reward, out.terminal, out.feedback) == (1.0, True, ANSWER_FEEDBACK)


def test_bad_tool_call_is_feedback_not_crash():
    env = _env()
    s = env.reset(_inst())
    s, out, _ = env.step(s, format_tool_call("local_search", {"query": "x", "top_k": 51}))
    assert out.feedback == TOOL_ERROR_FEEDBACK and "top_k" in out.observation
    s, out, _ = env.step(s, format_tool_call("web_search", {"query": "x"}))
    assert out.feedback == TOOL_ERROR_FEEDBACK


def test_turn_cap_and_invalid_turns():
    env = _env()
    s = env.reset(_inst())
    for i in range(4):
        s, out, action = env.step(s, "hmm")
        assert action is None and out.feedback == INVALID_FEEDBACK
    s, out, _ = env.step(s, "hmm")
    assert out.terminal and out.feedback == MAX_STEP_FEEDBACK and s.turns == 5
    assert FEEDBACK >= {out.feedback}


def test_empty_gold_refused():
    with pytest.raises(ValueError):
        _env().reset(_inst("   "))


def test_synthetic_qa_is_answerable():
    rows, docs = generate_qa(0, 20)
    index = SearchIndex(docs)
    assert len(rows) == 20
    for row in rows[:5]:
        person = row["question"][len("In which country was "):-len(" born?")]
        top = index.search(SearchRequest(person, 1))[0]
        city = top.snippet.split("born in ")[1].rstrip(".")
        top = index.search(SearchRequest(city, 1))[0]
        assert row["gold_answer"] in top.snippet
