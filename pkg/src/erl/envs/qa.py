"""Tool-augmented multi-hop question answering.

The agent may call ``local_search`` (a lexical tf-idf retriever over a local
corpus) and must put its final answer inside ``\\boxed{}``. Answers are
scored by token-level F1 after lowercasing and whitespace canonicalization.
"""

from __future__ import annotations

import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .core import MAX_STEP_FEEDBACK, EnvInstance, StepOutcome, TerminalStateError

SEARCH_FEEDBACK = "The search tool returned results."
TOOL_ERROR_FEEDBACK = "The tool call was rejected."
ANSWER_FEEDBACK = "The final answer was submitted."
INVALID_FEEDBACK = "No valid actions were recorded."
FEEDBACK = frozenset({SEARCH_FEEDBACK, TOOL_ERROR_FEEDBACK, ANSWER_FEEDBACK, INVALID_FEEDBACK,
                      MAX_STEP_FEEDBACK})

TURN_BUDGET = 5
DEFAULT_TOP_K = 5
MAX_TOP_K = 50
F1_FLOOR = 0.3
SNIPPET_CHARS = 240

TOOL_SCHEMA = [{
    "type": "function",
    "function": {
        "name": "local_search",
        "description": "Search for information using a dense retrieval server with Wikipedia corpus",
        "parameters": {
            "type": "object",
            "properties": {
                "query": {"type": "string",
                          "description": "Search query to retrieve relevant documents"},
                "top_k": {"type": "integer",
                          "description": "Number of results to return (default: 5)",
                          "minimum": 1, "maximum": 50},
            },
            "required": ["query"],
        },
    },
}]

_WORD_RE = re.compile(r"\w+")
_TOOL_CALL_RE = re.compile(r"<tool_call>(.*?)</tool_call>", re.DOTALL)


class ToolError(ValueError):
    """A tool request the agent must be told about rather than a crash."""


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def token_f1(pred: str, gold: str) -> float:
    pred_tokens = pred.split()
    gold_tokens = gold.split()
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def qa_reward(pred: Optional[str], gold: str) -> float:
    if pred is None:
        return 0.0
    pred, gold = normalize(pred), normalize(gold)
    if pred == gold:
        return 1.0
    f1 = token_f1(pred, gold)
    return f1 if f1 >= F1_FLOOR else 0.0


def extract_boxed(text: str) -> Optional[str]:
    """Content of the last complete ``\\boxed{...}`` span, braces balanced."""
    found = None
    start = text.find("\\boxed{")
    while start != -1:
        i = start + len("\\boxed{")
        depth = 1
        j = i
        while j < len(text) and depth:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
            j += 1
        if depth == 0:
            found = text[i:j - 1]
        start = text.find("\\boxed{", start + 1)
    return found


@dataclass(frozen=True)
class CorpusDoc:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class SearchRequest:
    query: str
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self):
        if not isinstance(self.query, str) or not self.query.strip():
            raise ToolError("query must be a non-empty string")
        if isinstance(self.top_k, bool) or not isinstance(self.top_k, int):
            raise ToolError("top_k must be an integer")
        if not 1 <= self.top_k <= MAX_TOP_K:
            raise ToolError(f"top_k must be between 1 and {MAX_TOP_K}, got {self.top_k}")


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    snippet: str
    score: float


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


class SearchIndex:
    """Inverted index scored by sum over query terms of tf * idf.

    idf uses the smoothed form log((N + 1) / (df + 1)) + 1 so that terms
    present in every document still count a little.
    """

    def __init__(self, docs: Iterable[CorpusDoc]):
        self.docs: dict[str, CorpusDoc] = {}
        self.postings: dict[str, dict[str, int]] = {}
        for doc in docs:
            if doc.doc_id in self.docs:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            self.docs[doc.doc_id] = doc
            for term, tf in Counter(tokenize(f"{doc.title} {doc.text}")).items():
                self.postings.setdefault(term, {})[doc.doc_id] = tf
        n = len(self.docs)
        self.idf = {t: math.log((n + 1) / (len(p) + 1)) + 1 for t, p in self.postings.items()}

    def __len__(self) -> int:
        return len(self.docs)

    def search(self, request: SearchRequest) -> list[SearchHit]:
        scores = dict.fromkeys(self.docs, 0.0)
        for term in tokenize(request.query):
            for doc_id, tf in self.postings.get(term, {}).items():
                scores[doc_id] += tf * self.idf[term]
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:request.top_k]
        return [SearchHit(d, self._snippet(self.docs[d]), s) for d, s in ranked]

    @staticmethod
    def _snippet(doc: CorpusDoc) -> str:
        text = doc.text if len(doc.text) <= SNIPPET_CHARS else doc.text[:SNIPPET_CHARS] + "..."
        return f"({doc.title}) {text}"

    @classmethod
    def from_jsonl(cls, path) -> SearchIndex:
        from .core import read_jsonl

        return cls(CorpusDoc(str(r["doc_id"]), r["title"], r["text"]) for r in read_jsonl(path))


def local_search(index: SearchIndex, request: SearchRequest) -> list[SearchHit]:
    return index.search(request)


def parse_tool_call(text: str) -> Optional[dict]:
    """Last ``<tool_call>{...}</tool_call>`` block as a dict, or None."""
    blocks = _TOOL_CALL_RE.findall(text)
    if not blocks:
        return None
    try:
        call = json.loads(blocks[-1])
    except json.JSONDecodeError as exc:
        return {"error": f"tool call is not valid JSON: {exc.msg}"}
    if not isinstance(call, dict):
        return {"error": "tool call must be a JSON object"}
    return call


def format_tool_call(name: str, arguments: dict) -> str:
    return "<tool_call>" + json.dumps({"name": name, "arguments": arguments}) + "</tool_call>"


def run_tool(index: SearchIndex, call: dict) -> str:
    """Execute a parsed tool call and return the text the agent sees.

    Raises :class:`ToolError` for anything the schema rejects.
    """
    if "error" in call:
        raise ToolError(call["error"])
    if call.get("name") != "local_search":
        raise ToolError(f"unknown tool {call.get('name')!r}")
    args = call.get("arguments", {})
    if isinstance(args, str):
        try:
            args = json.loads(args)
        except json.JSONDecodeError:
            raise ToolError("arguments are not valid JSON") from None
    if not isinstance(args, dict) or "query" not in args:
        raise ToolError("missing required parameter 'query'")
    request = SearchRequest(args["query"], args.get("top_k", DEFAULT_TOP_K))
    hits = index.search(request)
    return "\n".join(f"Doc {i + 1} {h.snippet}" for i, h in enumerate(hits))


@dataclass(frozen=True)
class QaState:
    instance: EnvInstance
    turns: int = 0
    tool_output: str = ""
    done: bool = False
    budget: int = TURN_BUDGET

    @property
    def question(self) -> str:
        return self.instance.payload["question"]

    @property
    def gold(self) -> str:
        return self.instance.payload["gold_answer"]


class QaEnv:
    name = "qa"
    action_space = ("answer", "local_search")
    budget = TURN_BUDGET
    feedback_set = FEEDBACK

    def __init__(self, index: SearchIndex):
        from ..prompts import load_prompt

        self.index = index
        self.system_prompt = load_prompt("qa_system")
        self._task = load_prompt("qa_task")

    def reset(self, instance: EnvInstance, budget: Optional[int] = None) -> QaState:
        if not normalize(instance.payload["gold_answer"]):
            raise ValueError(f"{instance.id}: gold answer is empty after normalization")
        return QaState(instance, budget=self.budget if budget is None else budget)

    def observe(self, state: QaState) -> str:
        text = self._task.format(question=state.question)
        if state.tool_output:
            text += "\n\nTool output:\n" + state.tool_output
        return text

    def step(self, state: QaState, output: str):
        if state.done:
            raise TerminalStateError("episode already ended")
        turns = state.turns + 1
        answer = extract_boxed(output)
        call = parse_tool_call(output)
        tool_output = ""
        reward, terminal = 0.0, False
        if answer is not None:
            action = "answer"
            reward, terminal = qa_reward(answer, state.gold), True
            feedback = ANSWER_FEEDBACK
        elif call is not None:
            action = "local_search"
            try:
                tool_output = run_tool(self.index, call)
                feedback = SEARCH_FEEDBACK
            except ToolError as exc:
                tool_output = f"Tool error: {exc}"
                feedback = TOOL_ERROR_FEEDBACK
        else:
            action = None
            feedback = INVALID_FEEDBACK
        if not terminal and turns >= state.budget:
            feedback, terminal = MAX_STEP_FEEDBACK, True
        new = replace(state, turns=turns, tool_output=tool_output, done=terminal)
        return new, StepOutcome(self.observe(new), feedback, reward, terminal), action


# Synthetic two-hop corpus so the environment runs without external data.
_SYLLABLES = ["ka", "lo", "mi", "ra", "ten", "vo", "shi", "dar", "el", "gu", "pen", "zu",
              "ba", "tor", "ni", "quel", "sa", "fi", "mor", "an"]


def _name(rng: random.Random, parts: int) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(parts)).capitalize()


def generate_qa(seed: int, count: int) -> tuple[list[dict], list[CorpusDoc]]:
    """Two-hop birthplace questions over an invented world.

    Returns (question rows, corpus). Each question needs the person's page to
    find a city and the city's page to find its country.
    """
    rng = random.Random(seed)
    countries = sorted({_name(rng, 3) + "ia" for _ in range(max(4, count // 8))})
    cities = {}
    while len(cities) < max(6, count // 3):
        cities[_name(rng, 2) + "burg"] = rng.choice(countries)
    city_names = sorted(cities)
    people = {}
    while len(people) < count:
        people[f"{_name(rng, 2)} {_name(rng, 3)}"] = rng.choice(city_names)
    docs = []
    for i, (person, city) in enumerate(sorted(people.items())):
        docs.append(CorpusDoc(f"p{i:05d}", person,
                              f"{person} is a composer who was born in {city}."))
    for i, city in enumerate(city_names):
        docs.append(CorpusDoc(f"c{i:05d}", city,
                              f"{city} is a city in {cities[city]}, known for its rivers."))
    rows = []
    for person, city in sorted(people.items()):
        rows.append({"question": f"In which country was {person} born?",
                     "gold_answer": cities[city]})
    rng.shuffle(rows)
    return rows, docs
