"""Per-node feature extraction: vocabularies, embeddings, BiLSTM encoding.

Each node's tag is one-hot encoded and repeated at every time step; token and
PoS embeddings complete the step input.  Forward and backward sequence LSTMs
run over the steps and their final hidden states concatenate into the node
feature vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dom import DomNode, walk_preorder
from .errors import EmptyCorpus, IndexOutOfRange, IoFailure, VocabularyFrozen

UNK = "<unk>"
EMPTY = "<empty>"


@dataclass
class Vocabularies:
    """Dense symbol-to-index maps for tags, tokens and PoS tags."""

    tags: list[str]
    tokens: list[str]
    pos: list[str]
    min_count: int = 1
    frozen: bool = True
    _tag_idx: dict[str, int] = field(init=False, repr=False)
    _token_idx: dict[str, int] = field(init=False, repr=False)
    _pos_idx: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.tags[0] != UNK:
            raise ValueError("tag vocabulary must start with the UNK symbol")
        if self.tokens[:2] != [UNK, EMPTY] or self.pos[:2] != [UNK, EMPTY]:
            raise ValueError("token/pos vocabularies must start with UNK, EMPTY")
        self._tag_idx = {s: i for i, s in enumerate(self.tags)}
        self._token_idx = {s: i for i, s in enumerate(self.tokens)}
        self._pos_idx = {s: i for i, s in enumerate(self.pos)}

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_pos(self) -> int:
        return len(self.pos)

    def tag_id(self, tag: str) -> int:
        return self._tag_idx.get(tag, 0)

    def token_id(self, token: str) -> int:
        return self._token_idx.get(token, 0)

    def pos_id(self, pos: str) -> int:
        return self._pos_idx.get(pos, 0)

    def add_tag(self, tag: str) -> int:
        return self._add(self.tags, self._tag_idx, tag)

    def add_token(self, token: str) -> int:
        return self._add(self.tokens, self._token_idx, token)

    def add_pos(self, pos: str) -> int:
        return self._add(self.pos, self._pos_idx, pos)

    def _add(self, symbols: list[str], index: dict[str, int], symbol: str) -> int:
        if symbol in index:
            return index[symbol]
        if self.frozen:
            raise VocabularyFrozen(f"cannot add {symbol!r} to a frozen vocabulary")
        index[symbol] = len(symbols)
        symbols.append(symbol)
        return index[symbol]


def build_vocabularies(trees: Iterable[DomNode], min_count: int = 1) -> Vocabularies:
    """Index every tag/token/PoS symbol seen in the trees; rare tokens drop to UNK."""
    tag_set: set[str] = set()
    pos_set: set[str] = set()
    token_counts: dict[str, int] = {}
    seen_any = False
    for tree in trees:
        seen_any = True
        for node in walk_preorder(tree):
            tag_set.add(node.tag)
            for tok in node.tokens:
                token_counts[tok] = token_counts.get(tok, 0) + 1
            pos_set.update(node.pos_tags)
    if not seen_any:
        raise EmptyCorpus("cannot build vocabularies from an empty corpus")
    kept_tokens = sorted(t for t, c in token_counts.items() if c >= min_count)
    return Vocabularies(
        tags=[UNK] + sorted(tag_set),
        tokens=[UNK, EMPTY] + kept_tokens,
        pos=[UNK, EMPTY] + sorted(pos_set),
        min_count=min_count,
        frozen=True,
    )


def save_vocabularies(vocabs: Vocabularies, path: str) -> None:
    payload = {
        "tags": vocabs.tags,
        "tokens": vocabs.tokens,
        "pos": vocabs.pos,
        "min_count": vocabs.min_count,
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_vocabularies(path: str) -> Vocabularies:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return Vocabularies(
        tags=payload["tags"],
        tokens=payload["tokens"],
        pos=payload["pos"],
        min_count=payload.get("min_count", 1),
        frozen=True,
    )


def embed_step(
    tag_idx: int,
    token_idx: int,
    pos_idx: int,
    wrapped: dict[str, Tensor],
    n_tags: int,
) -> Tensor:
    """[onehot(tag) || token embedding || PoS embedding] for one time step."""
    e_content = wrapped["emb.content"]
    e_pos = wrapped["emb.pos"]
    if not 0 <= tag_idx < n_tags:
        raise IndexOutOfRange(f"tag index {tag_idx} outside vocabulary of {n_tags}")
    if not 0 <= token_idx < e_content.data.shape[0]:
        raise IndexOutOfRange(f"token index {token_idx} outside embedding table")
    if not 0 <= pos_idx < e_pos.data.shape[0]:
        raise IndexOutOfRange(f"pos index {pos_idx} outside embedding table")
    onehot = np.zeros(n_tags)
    onehot[tag_idx] = 1.0
    return ad.concat(
        [ad.constant(onehot), ad.row(e_content, token_idx), ad.row(e_pos, pos_idx)]
    )


def node_step_ids(
    node: DomNode, vocabs: Vocabularies, max_tokens: int
) -> tuple[int, tuple[int, ...], tuple[int, ...]]:
    """Vocabulary indices for one node; empty text becomes a single EMPTY step."""
    tag_idx = vocabs.tag_id(node.tag)
    if node.tokens:
        toks = node.tokens[:max_tokens]
        poss = node.pos_tags[:max_tokens]
        token_ids = tuple(vocabs.token_id(t) for t in toks)
        pos_ids = tuple(vocabs.pos_id(p) for p in poss)
    else:
        token_ids = (1,)  # EMPTY
        pos_ids = (1,)
    return tag_idx, token_ids, pos_ids


def encode_steps(
    tag_idx: int,
    token_ids: tuple[int, ...],
    pos_ids: tuple[int, ...],
    wrapped: dict[str, Tensor],
    vocabs: Vocabularies,
    d_enc: int,
) -> Tensor:
    """Run both sequence LSTMs over the embedded steps and join final states."""
    steps = [
        embed_step(tag_idx, t, p, wrapped, vocabs.n_tags)
        for t, p in zip(token_ids, pos_ids)
    ]
    fwd_w = (wrapped["enc.fwd.W"], wrapped["enc.fwd.U"], wrapped["enc.fwd.b"])
    bwd_w = (wrapped["enc.bwd.W"], wrapped["enc.bwd.U"], wrapped["enc.bwd.b"])
    zero = ad.constant(np.zeros(d_enc))
    h_f, c_f = zero, zero
    for e in steps:
        h_f, c_f = ad.lstm_cell(e, h_f, c_f, fwd_w)
    h_b, c_b = zero, zero
    for e in reversed(steps):
        h_b, c_b = ad.lstm_cell(e, h_b, c_b, bwd_w)
    return ad.concat([h_f, h_b])


def encode_node(
    node: DomNode,
    wrapped: dict[str, Tensor],
    vocabs: Vocabularies,
    d_enc: int,
    max_tokens: int = 64,
) -> Tensor:
    """Fixed-length feature vector (2 * d_enc) for one node."""
    tag_idx, token_ids, pos_ids = node_step_ids(node, vocabs, max_tokens)
    return encode_steps(tag_idx, token_ids, pos_ids, wrapped, vocabs, d_enc)
