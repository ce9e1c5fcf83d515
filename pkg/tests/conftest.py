"""Shared builders for random trees and tiny corpora."""

from __future__ import annotations

import numpy as np
import pytest

from tabfuse.dom import DomNode

TAG_POOL = ("table", "tr", "td", "th", "div", "span", "p", "b")
WORD_POOL = ("alpha", "beta", "gamma", "delta", "ksite", "note", "12", "404", ":")


def random_dom_tree(
    rng: np.random.Generator,
    n_nodes: int,
    label_pool: tuple[str, ...] = (),
    text_prob: float = 0.6,
) -> DomNode:
    """Random ordered tree: each new node attaches under a random existing one."""
    from tabfuse.dom import tokenize_and_tag

    nodes = [DomNode(node_id=0, tag="table")]
    for nid in range(1, n_nodes):
        node = DomNode(node_id=nid, tag=str(rng.choice(TAG_POOL[1:])))
        if rng.random() < text_prob:
            words = rng.choice(WORD_POOL, size=rng.integers(1, 4))
            node.text = " ".join(words)
            node.tokens, node.pos_tags = tokenize_and_tag(node.text)
        if label_pool.__len__() and rng.random() < 0.4:
            node.gold_label = str(rng.choice(label_pool))
        parent = nodes[int(rng.integers(0, len(nodes)))]
        parent.children.append(node)
        nodes.append(node)
    return nodes[0]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
