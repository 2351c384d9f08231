"""LETOR / SVMlight-style ranking files.

One document per line::

    <relevance> qid:<query> <index>:<value> ... # optional comment

Feature indices start at 1.  Tokens may be separated by any run of spaces.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Context, ReplayEnvironment
from .exceptions import LetorParseError

__all__ = ["LetorRecord", "parse_letor_line", "serialize_letor", "read_letor", "build_replay_env"]

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"\S+")


@dataclass
class LetorRecord:
    relevance: int
    query_id: str
    features: dict = field(default_factory=dict)
    comment: Optional[str] = None


def parse_letor_line(line: str) -> LetorRecord:
    """Parse one line; errors carry the 1-based column of the bad token."""
    line = line.rstrip("\r\n")
    body, sep, comment = line.partition("#")
    tokens = [(m.start() + 1, m.group()) for m in _TOKEN.finditer(body)]
    if not tokens:
        raise LetorParseError("empty line", 1, line)

    col, tok = tokens[0]
    if not tok.isdigit():
        raise LetorParseError(f"relevance must be a nonnegative integer, got {tok!r}", col, line)
    relevance = int(tok)

    if len(tokens) < 2 or not tokens[1][1].startswith("qid:"):
        col = tokens[1][0] if len(tokens) > 1 else len(body) + 1
        raise LetorParseError("missing qid", col, line)
    col, tok = tokens[1]
    qid = tok[4:]
    if not qid:
        raise LetorParseError("empty qid", col, line)

    features = {}
    for col, tok in tokens[2:]:
        idx, colon, value = tok.partition(":")
        if not colon or not idx.isdigit() or int(idx) < 1:
            raise LetorParseError(f"malformed feature {tok!r}", col, line)
        try:
            features[int(idx)] = float(value)
        except ValueError:
            raise LetorParseError(f"malformed feature value {tok!r}", col, line) from None
    return LetorRecord(relevance, qid, features, comment.strip() if sep else None)


def serialize_letor(record: LetorRecord) -> str:
    parts = [str(record.relevance), f"qid:{record.query_id}"]
    parts += [f"{i}:{record.features[i]!r}" for i in sorted(record.features)]
    line = " ".join(parts)
    if record.comment is not None:
        line += f" # {record.comment}"
    return line


def read_letor(path) -> list:
    """Parse every nonblank line of a file."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_letor_line(line))
            except LetorParseError as err:
                err.lineno = lineno
                raise
    return records


def build_replay_env(records, K: int, L: int, weights=None, max_relevance: int = 4,
                     noise_halfwidth: float = 0.0, shuffle: bool = False):
    """Turn parsed records into a replay environment over queries.

    Queries keep their first-appearance order and their first ``K`` documents
    in file order; queries with fewer than ``K`` documents are dropped.
    Feedback is ``relevance / max_relevance`` clipped to [0, 1].  Returns
    ``(env, n_dropped)``.
    """
    by_query: dict = {}
    for rec in records:
        by_query.setdefault(rec.query_id, []).append(rec)
    d = max((max(r.features, default=0) for r in records), default=0)
    d = max(d, 1)
    contexts, ys, dropped = [], [], 0
    for docs in by_query.values():
        if len(docs) < K:
            dropped += 1
            continue
        docs = docs[:K]
        feats = np.zeros((K, d))
        for row, doc in enumerate(docs):
            for i, v in doc.features.items():
                feats[row, i - 1] = v
        y = np.clip(np.array([doc.relevance for doc in docs], float) / max_relevance, 0.0, 1.0)
        contexts.append(Context(len(contexts), feats))
        ys.append(y)
    if dropped:
        log.info("dropped %d queries with fewer than %d documents", dropped, K)
    env = ReplayEnvironment(contexts, ys, L, weights, noise_halfwidth, shuffle)
    return env, dropped
