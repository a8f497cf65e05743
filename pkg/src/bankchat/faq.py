"""FAQ action agent.

Retrieval-augmented answering over a small curated knowledge base:
history-aware query reformulation, a deterministic hashed-ngram
embedder, exact cosine retrieval, a weighted rerank, and grounded
generation with a support-center fallback when confidence is low.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, replace
from hashlib import blake2b
from typing import Sequence

import numpy as np

from .backend import (
    AdapterSpec,
    Backend,
    RETRY_LIMIT,
    complete_structured,
    register_schema,
    render_prompt,
)
from .envelope import ChatTurn, ModelCallRecord, user_turn
from .errors import BankChatError, SchemaViolation
from .serialization import register_output_type

EMBEDDING_DIM = 256
NGRAM_SIZE = 3
RERANK_ALPHA = 0.7
RETRIEVE_K = 8
GENERATION_DOCS = 3
CONFIDENCE_THRESHOLD = 0.15

FALLBACK_MESSAGE = (
    "I'm not sure about that one. Please reach out to the Help & Support "
    "Center for further assistance."
)
OUT_OF_DOMAIN_MESSAGE = (
    "That's outside my area, sorry. I can help with questions about your "
    "banking, accounts, and transfers."
)

CONTEXT_HEADER = "FAQ Knowledge Context:"
CONTEXT_OPEN = "<<<"
CONTEXT_CLOSE = ">>>"


class EmptyText(BankChatError):
    pass


class EmptyStore(BankChatError):
    pass


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    title: str
    body: str
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("docId must be non-empty")
        if not self.body.strip():
            raise ValueError(f"doc {self.doc_id}: body must be non-empty")

    def text(self) -> str:
        return f"{self.title} {self.body} {' '.join(self.tags)}"


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: str
    similarity: float
    rerank_score: float


@dataclass(frozen=True)
class FaqAnswer:
    message: str

    def __post_init__(self) -> None:
        if not self.message:
            raise ValueError("message must be non-empty")


def _answer_to_jsonable(answer: FaqAnswer) -> dict:
    return {"message": answer.message}


def _answer_from_jsonable(raw: object) -> FaqAnswer:
    if not isinstance(raw, dict) or set(raw) != {"message"}:
        raise SchemaViolation("FAQ answer must be an object with exactly 'message'")
    message = raw["message"]
    if not isinstance(message, str) or not message:
        raise SchemaViolation("message must be a non-empty string")
    return FaqAnswer(message=message)


register_output_type("faq_answer", FaqAnswer, _answer_to_jsonable, _answer_from_jsonable)
register_schema("faq_answer", _answer_from_jsonable)


# -- embedding --------------------------------------------------------------

def embed(text: str, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Hashed character-trigram bag, signed, projected to ``dim`` and
    normalized to unit length. Deterministic across processes."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    normalized = " ".join(text.casefold().split())
    if len(normalized) < NGRAM_SIZE:
        grams = [normalized]
    else:
        grams = [normalized[i : i + NGRAM_SIZE] for i in range(len(normalized) - NGRAM_SIZE + 1)]
    vec = np.zeros(dim, dtype=np.float64)
    for gram in grams:
        value = int.from_bytes(blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")
        sign = 1.0 if value & (1 << 63) == 0 else -1.0
        vec[value % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


# -- store ------------------------------------------------------------------

class VectorStore:
    """Exact in-memory index; immutable once built."""

    def __init__(self, docs: Sequence[KnowledgeDoc], dim: int = EMBEDDING_DIM):
        ids = [d.doc_id for d in docs]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate docIds: {dupes}")
        self.dim = dim
        self._docs = tuple(docs)
        self._by_id = {d.doc_id: d for d in docs}
        if docs:
            self._matrix = np.stack([embed(d.text(), dim) for d in docs])
        else:
            self._matrix = np.zeros((0, dim), dtype=np.float64)

    @classmethod
    def ingest_jsonl(cls, path: str, dim: int = EMBEDDING_DIM) -> "VectorStore":
        docs = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                    docs.append(
                        KnowledgeDoc(
                            doc_id=raw["docId"],
                            title=raw["title"],
                            body=raw["body"],
                            tags=tuple(raw.get("tags", ())),
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad knowledge doc: {exc}") from exc
        return cls(docs, dim)

    def __len__(self) -> int:
        return len(self._docs)

    @property
    def docs(self) -> tuple[KnowledgeDoc, ...]:
        return self._docs

    def doc(self, doc_id: str) -> KnowledgeDoc:
        return self._by_id[doc_id]

    def retrieve(self, query: np.ndarray, k: int) -> list[RetrievalHit]:
        """Exact cosine top-k; ties broken by docId ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._docs:
            raise EmptyStore("retrieve on empty store")
        sims = self._matrix @ query
        order = sorted(range(len(self._docs)), key=lambda i: (-sims[i], self._docs[i].doc_id))
        return [
            RetrievalHit(self._docs[i].doc_id, float(sims[i]), float(sims[i]))
            for i in order[:k]
        ]


# -- rerank -----------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z\d]+")


def lexical_overlap(query: str, doc_text: str) -> float:
    """|query tokens ∩ doc tokens| / max(1, |query tokens|)."""
    q = set(_WORD_RE.findall(query.casefold()))
    d = set(_WORD_RE.findall(doc_text.casefold()))
    return len(q & d) / max(1, len(q))


def rerank(
    query_text: str,
    hits: Sequence[RetrievalHit],
    store: VectorStore,
    alpha: float = RERANK_ALPHA,
) -> list[RetrievalHit]:
    """Blend semantic similarity with lexical overlap; stable tie order."""
    rescored = [
        replace(
            hit,
            rerank_score=alpha * hit.similarity
            + (1.0 - alpha) * lexical_overlap(query_text, store.doc(hit.doc_id).text()),
        )
        for hit in hits
    ]
    return sorted(rescored, key=lambda h: (-h.rerank_score, h.doc_id))


# -- reformulation ----------------------------------------------------------

# Longest phrases first so the most specific topic wins.
TOPIC_PHRASES: tuple[str, ...] = (
    "favorite transferees",
    "favorite transferee",
    "daily transfer limit",
    "overseas transfers",
    "overseas transfer",
    "transaction history",
    "account statements",
    "account statement",
    "transfer limits",
    "transfer limit",
    "interest rates",
    "interest rate",
    "fixed deposits",
    "fixed deposit",
    "savings account",
    "service charges",
    "service charge",
    "service fees",
    "service fee",
    "two-factor authentication",
    "debit card",
    "credit card",
    "duitnow",
)

_VAGUE_PRONOUN_RE = re.compile(r"\b(it|that|this|them|those|they)\b", re.IGNORECASE)
_MISSING_OBJECT_RE = re.compile(r"^(how (?:many|much)\s+)(can i\b.*)$", re.IGNORECASE)

# Stem list deciding whether a (reformulated) query is banking-domain.
_DOMAIN_STEMS = (
    "account", "app", "atm", "authenticat", "balance", "bank", "beneficiar",
    "branch", "card", "charge", "currenc", "deposit", "duitnow", "exchange",
    "fee", "interest", "limit", "loan", "otp", "pay", "pin", "rate", "remit",
    "ringgit", "rm", "saving", "statement", "transact", "transfer", "2fa",
)


def _topic_in(text: str) -> str | None:
    folded = text.casefold()
    for phrase in TOPIC_PHRASES:
        if phrase in folded:
            return phrase
    return None


def reformulate_query(text: str, history: Sequence[ChatTurn]) -> str:
    """Make follow-up questions self-contained using the latest topic the
    conversation mentioned. Already-specific questions pass through."""
    query = " ".join(text.split())
    if not history or _topic_in(query):
        return query
    topic = None
    for turn in reversed(history):
        topic = _topic_in(turn.text)
        if topic:
            break
    if topic is None:
        return query
    shaped = _MISSING_OBJECT_RE.match(query)
    if shaped:
        return f"{shaped.group(1)}{topic} {shaped.group(2)}"
    if _VAGUE_PRONOUN_RE.search(query):
        return _VAGUE_PRONOUN_RE.sub(topic, query, count=1)
    return query


def is_out_of_domain(query: str) -> bool:
    tokens = _WORD_RE.findall(query.casefold())
    return not any(t.startswith(stem) for t in tokens for stem in _DOMAIN_STEMS)


# -- generation -------------------------------------------------------------

def context_block(docs: Sequence[KnowledgeDoc]) -> str:
    lines = [CONTEXT_HEADER, CONTEXT_OPEN]
    for doc in docs:
        body = " ".join(doc.body.split())
        lines.append(f"[{doc.doc_id}] {doc.title}: {body}")
    lines.append(CONTEXT_CLOSE)
    return "\n".join(lines)


@dataclass
class FaqOutcome:
    answer: FaqAnswer
    reformulated_query: str
    hits: tuple[RetrievalHit, ...] = ()
    grounding_doc_ids: tuple[str, ...] = ()
    record: ModelCallRecord | None = None


class FaqAgent:
    """Runs the reformulate -> retrieve -> rerank -> answer chain.

    The store swap on re-ingest is a single reference assignment behind a
    lock, so concurrent readers always see a complete snapshot.
    """

    def __init__(
        self,
        spec: AdapterSpec,
        backend: Backend,
        store: VectorStore,
        alpha: float = RERANK_ALPHA,
        k: int = RETRIEVE_K,
        generation_docs: int = GENERATION_DOCS,
        confidence_threshold: float = CONFIDENCE_THRESHOLD,
        retry_limit: int = RETRY_LIMIT,
    ):
        self.spec = spec
        self.backend = backend
        self._store = store
        self.alpha = alpha
        self.k = k
        self.generation_docs = generation_docs
        self.confidence_threshold = confidence_threshold
        self.retry_limit = retry_limit
        self._swap_lock = threading.Lock()

    @property
    def store(self) -> VectorStore:
        return self._store

    def set_store(self, store: VectorStore) -> None:
        with self._swap_lock:
            self._store = store

    def answer(
        self,
        query_text: str,
        top_docs: Sequence[KnowledgeDoc],
        history: Sequence[ChatTurn],
    ) -> tuple[FaqAnswer, ModelCallRecord | None]:
        """Grounded generation over the supplied docs only."""
        augmented = f"{query_text}\n\n{context_block(top_docs)}"
        convo = list(history) + [user_turn(augmented)]
        try:
            value, record = complete_structured(
                self.spec,
                render_prompt(self.spec, {}),
                convo,
                self.backend,
                self.retry_limit,
            )
            return value, record
        except SchemaViolation:
            return FaqAnswer(message=FALLBACK_MESSAGE), None

    def process(self, turn: ChatTurn, history: Sequence[ChatTurn]) -> FaqOutcome:
        query = reformulate_query(turn.text, history)
        if is_out_of_domain(query):
            return FaqOutcome(
                answer=FaqAnswer(message=OUT_OF_DOMAIN_MESSAGE), reformulated_query=query
            )
        store = self._store
        try:
            hits = store.retrieve(embed(query, store.dim), self.k)
        except (EmptyStore, EmptyText):
            return FaqOutcome(
                answer=FaqAnswer(message=FALLBACK_MESSAGE), reformulated_query=query
            )
        ranked = rerank(query, hits, store, self.alpha)
        if ranked[0].rerank_score < self.confidence_threshold:
            return FaqOutcome(
                answer=FaqAnswer(message=FALLBACK_MESSAGE),
                reformulated_query=query,
                hits=tuple(ranked),
            )
        top = ranked[: self.generation_docs]
        docs = [store.doc(h.doc_id) for h in top]
        result, record = self.answer(query, docs, history)
        return FaqOutcome(
            answer=result,
            reformulated_query=query,
            hits=tuple(ranked),
            grounding_doc_ids=tuple(d.doc_id for d in docs),
            record=record,
        )
