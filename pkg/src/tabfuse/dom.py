"""HTML ingestion: parse pages into ordered trees and prepare them for the model.

Covers tolerant parsing, table-subtree extraction, tokenization with
pluggable taggers, attribute-name unification, post-order clipping, the
left-child/right-sibling binarization, and row/column augmentation, plus the
corpus and synonym-dictionary file formats.
"""

from __future__ import annotations

import copy
import html as html_lib
import json
import logging
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import IoFailure, UnknownTagger, UnparsableHtml

log = logging.getLogger(__name__)

OTHER_LABEL = "Other"

TAG_WORD = "WORD"
TAG_NUM = "NUM"
TAG_PUNCT = "PUNCT"

# Elements that never take content and never appear on the open stack.
_VOID_TAGS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)

# Opening <key> implicitly closes any of the mapped tags on top of the stack.
_AUTOCLOSE = {
    "tr": frozenset({"tr", "td", "th"}),
    "td": frozenset({"td", "th"}),
    "th": frozenset({"td", "th"}),
    "li": frozenset({"li"}),
    "p": frozenset({"p"}),
    "option": frozenset({"option"}),
    "thead": frozenset({"tr", "td", "th"}),
    "tbody": frozenset({"tr", "td", "th", "thead"}),
    "tfoot": frozenset({"tr", "td", "th", "tbody"}),
}

_DROPPED_CONTENT = frozenset({"script", "style"})


@dataclass
class DomNode:
    """One element of an ordered HTML parse tree.

    ``text`` keeps the raw (whitespace-normalized) character data so
    extraction and dictionary matching see the original surface form;
    ``tokens`` and ``pos_tags`` are its equal-length tokenized view.
    """

    node_id: int
    tag: str
    text: str = ""
    tokens: list[str] = field(default_factory=list)
    pos_tags: list[str] = field(default_factory=list)
    children: list["DomNode"] = field(default_factory=list)
    gold_label: str | None = None


# A tree is addressed by its root node.
DomTree = DomNode


@dataclass
class BinaryNode:
    """Binarized view of a DomNode: left = first child, right = next sibling."""

    payload: DomNode
    left: "BinaryNode | None" = None
    right: "BinaryNode | None" = None


# --------------------------------------------------------------------------
# Tokenization

TaggerPlugin = Callable[[str], tuple[list[str], list[str]]]

_TOKEN_RE = re.compile(r"\d+|\w+|[^\w\s]", re.UNICODE)


def rule_tagger(text: str) -> tuple[list[str], list[str]]:
    """Whitespace/punctuation splitter with NUM/PUNCT/WORD rule tags."""
    tokens = _TOKEN_RE.findall(text)
    tags = []
    for tok in tokens:
        if tok.isdigit():
            tags.append(TAG_NUM)
        elif all(not ch.isalnum() for ch in tok):
            tags.append(TAG_PUNCT)
        else:
            tags.append(TAG_WORD)
    return tokens, tags


_TAGGERS: dict[str, TaggerPlugin] = {"rule": rule_tagger}


def register_tagger(name: str, fn: TaggerPlugin) -> None:
    _TAGGERS[name] = fn


def get_tagger(tagger: str | TaggerPlugin) -> TaggerPlugin:
    if callable(tagger):
        return tagger
    try:
        return _TAGGERS[tagger]
    except KeyError:
        raise UnknownTagger(f"no tagger registered under {tagger!r}") from None


def tokenize_and_tag(
    text: str, tagger: str | TaggerPlugin = "rule"
) -> tuple[list[str], list[str]]:
    """Equal-length token and PoS sequences for one text span."""
    return get_tagger(tagger)(text)


# --------------------------------------------------------------------------
# Parsing


class _TreeBuilder(HTMLParser):
    def __init__(self, tagger: TaggerPlugin) -> None:
        super().__init__(convert_charrefs=True)
        self.tagger = tagger
        self.roots: list[DomNode] = []
        self.stack: list[DomNode] = []
        self.chunks: dict[int, list[str]] = {}
        self.next_id = 0
        self.skip_depth = 0

    def _new_node(self, tag: str) -> DomNode:
        node = DomNode(node_id=self.next_id, tag=tag)
        self.next_id += 1
        return node

    def handle_starttag(self, tag: str, attrs) -> None:
        if self.skip_depth:
            if tag in _DROPPED_CONTENT:
                self.skip_depth += 1
            return
        if tag in _DROPPED_CONTENT:
            self.skip_depth = 1
            return
        closers = _AUTOCLOSE.get(tag)
        if closers:
            while self.stack and self.stack[-1].tag in closers:
                self._close_top()
        node = self._new_node(tag)
        if self.stack:
            self.stack[-1].children.append(node)
        else:
            self.roots.append(node)
        if tag not in _VOID_TAGS:
            self.stack.append(node)

    def handle_startendtag(self, tag: str, attrs) -> None:
        if self.skip_depth or tag in _DROPPED_CONTENT:
            return
        node = self._new_node(tag)
        if self.stack:
            self.stack[-1].children.append(node)
        else:
            self.roots.append(node)

    def handle_endtag(self, tag: str) -> None:
        if self.skip_depth:
            if tag in _DROPPED_CONTENT:
                self.skip_depth -= 1
            return
        if tag in _VOID_TAGS:
            return
        if not any(n.tag == tag for n in self.stack):
            return  # stray close tag
        while self.stack:
            top = self._close_top()
            if top.tag == tag:
                break

    def handle_data(self, data: str) -> None:
        if self.skip_depth or not self.stack:
            return
        piece = " ".join(data.split())
        if piece:
            self.chunks.setdefault(self.stack[-1].node_id, []).append(piece)

    def _close_top(self) -> DomNode:
        node = self.stack.pop()
        pieces = self.chunks.pop(node.node_id, None)
        if pieces:
            node.text = " ".join(pieces)
            node.tokens, node.pos_tags = self.tagger(node.text)
        return node

    def finish(self) -> DomNode:
        while self.stack:
            self._close_top()
        if not self.roots:
            raise UnparsableHtml("no element structure found")
        if len(self.roots) == 1:
            return self.roots[0]
        wrapper = DomNode(node_id=self.next_id, tag="#document", children=self.roots)
        return wrapper


def parse_html(html_text: str, tagger: str | TaggerPlugin = "rule") -> DomTree:
    """Tolerantly parse HTML into a DomTree.

    Tags are lowercased, character data attaches to the owning element, and
    script/style/comment content is dropped.  Raises UnparsableHtml only when
    no element at all can be recovered.
    """
    if not html_text:
        raise UnparsableHtml("empty input")
    builder = _TreeBuilder(get_tagger(tagger))
    builder.feed(html_text)
    builder.close()
    return builder.finish()


# --------------------------------------------------------------------------
# Traversals and tree utilities


def walk_preorder(root: DomNode) -> Iterator[DomNode]:
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def walk_postorder(root: DomNode) -> Iterator[DomNode]:
    stack: list[tuple[DomNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            yield node
        else:
            stack.append((node, True))
            for child in reversed(node.children):
                stack.append((child, False))


def tree_size(root: DomNode) -> int:
    return sum(1 for _ in walk_preorder(root))


def tree_depth(root: DomNode) -> int:
    """Number of nodes on the longest root-to-leaf path."""
    depth = 0
    stack = [(root, 1)]
    while stack:
        node, d = stack.pop()
        depth = max(depth, d)
        for child in node.children:
            stack.append((child, d + 1))
    return depth


def trees_identical(a: DomNode, b: DomNode) -> bool:
    """Node-for-node equality including child order."""
    if (
        a.node_id != b.node_id
        or a.tag != b.tag
        or a.text != b.text
        or a.tokens != b.tokens
        or a.pos_tags != b.pos_tags
        or a.gold_label != b.gold_label
        or len(a.children) != len(b.children)
    ):
        return False
    return all(trees_identical(x, y) for x, y in zip(a.children, b.children))


def extract_table_subtrees(tree: DomTree) -> list[DomTree]:
    """Maximal table-rooted subtrees in document order; nested tables stay inside."""
    found: list[DomNode] = []

    def visit(node: DomNode) -> None:
        if node.tag == "table":
            found.append(node)
            return
        for child in node.children:
            visit(child)

    visit(tree)
    return found


# --------------------------------------------------------------------------
# Synonym dictionary


@dataclass
class SynonymDictionary:
    """surface attribute name -> canonical attribute name."""

    mapping: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        # Canonical names must be fixed points so lookups cannot chain.
        for canonical in self.mapping.values():
            if self.mapping.get(canonical, canonical) != canonical:
                raise ValueError(f"canonical name {canonical!r} is itself remapped")

    def lookup(self, surface: str) -> str | None:
        return self.mapping.get(surface.strip())


def load_synonyms(path: str) -> SynonymDictionary:
    """One "surface<TAB>canonical" pair per line, UTF-8."""
    mapping: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                surface, _, canonical = line.partition("\t")
                mapping[surface.strip()] = canonical.strip()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return SynonymDictionary(mapping)


def normalize_attribute_names(
    tree: DomTree,
    synonyms: SynonymDictionary,
    tagger: str | TaggerPlugin = "rule",
) -> DomTree:
    """Replace any node whose full text exactly matches a dictionary key."""
    tag_fn = get_tagger(tagger)
    out = copy.deepcopy(tree)
    for node in walk_preorder(out):
        canonical = synonyms.lookup(node.text) if node.text else None
        if canonical is not None and canonical != node.text:
            node.text = canonical
            node.tokens, node.pos_tags = tag_fn(canonical)
    return out


# --------------------------------------------------------------------------
# Clipping and binarization


def clip_postorder(tree: DomTree, limit: int) -> DomTree:
    """Keep nodes with 1-based post-order index <= limit plus their ancestors."""
    if limit < 1:
        raise ValueError("clip limit must be >= 1")
    order = {node.node_id: i + 1 for i, node in enumerate(walk_postorder(tree))}
    keep: set[int] = {nid for nid, idx in order.items() if idx <= limit}

    def rebuild(node: DomNode) -> DomNode | None:
        wanted = node.node_id in keep
        kept_children = [rebuild(c) for c in node.children]
        kept_children = [c for c in kept_children if c is not None]
        if not wanted and not kept_children:
            return None
        clone = DomNode(
            node_id=node.node_id,
            tag=node.tag,
            text=node.text,
            tokens=list(node.tokens),
            pos_tags=list(node.pos_tags),
            children=kept_children,
            gold_label=node.gold_label,
        )
        return clone

    rebuilt = rebuild(tree)
    assert rebuilt is not None  # the root always survives via its first leaf
    return rebuilt


def binarize(tree: DomTree) -> BinaryNode:
    """Left-child/right-sibling transform of an ordered tree."""

    def convert(node: DomNode) -> BinaryNode:
        bnode = BinaryNode(payload=node)
        prev: BinaryNode | None = None
        for child in node.children:
            bchild = convert(child)
            if prev is None:
                bnode.left = bchild
            else:
                prev.right = bchild
            prev = bchild
        return bnode

    return convert(tree)


def unbinarize(broot: BinaryNode) -> DomTree:
    """Exact inverse of binarize; rebuilds fresh DomNodes."""

    def convert(bnode: BinaryNode) -> DomNode:
        src = bnode.payload
        node = DomNode(
            node_id=src.node_id,
            tag=src.tag,
            text=src.text,
            tokens=list(src.tokens),
            pos_tags=list(src.pos_tags),
            gold_label=src.gold_label,
        )
        child = bnode.left
        while child is not None:
            node.children.append(convert(child))
            child = child.right
        return node

    return convert(broot)


def binary_nodes_postorder(broot: BinaryNode) -> Iterator[BinaryNode]:
    stack: list[tuple[BinaryNode, bool]] = [(broot, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            yield node
        else:
            stack.append((node, True))
            if node.right is not None:
                stack.append((node.right, False))
            if node.left is not None:
                stack.append((node.left, False))


# --------------------------------------------------------------------------
# Row/column augmentation


def _collect_rows(table: DomNode) -> list[tuple[DomNode, int]]:
    """(parent, child-index) slots of this table's tr nodes, document order."""
    slots: list[tuple[DomNode, int]] = []

    def visit(node: DomNode) -> None:
        for i, child in enumerate(node.children):
            if child.tag == "table":
                continue  # nested table owns its own rows
            if child.tag == "tr":
                slots.append((node, i))
            else:
                visit(child)

    visit(table)
    return slots


def _cell_positions(row: DomNode) -> list[int]:
    return [i for i, c in enumerate(row.children) if c.tag in ("td", "th")]


def augment_table(tree: DomTree, seed: int, p: float) -> DomTree:
    """Swap each unordered pair of rows, then of columns, with probability p.

    Pairs are visited once in lexicographic slot order; a non-rectangular
    cell grid skips the column phase.  Gold labels travel with their nodes.
    """
    if tree.tag != "table":
        raise ValueError(f"augment_table expects a table root, got {tree.tag!r}")
    out = copy.deepcopy(tree)
    if p <= 0.0:
        return out
    rng = np.random.default_rng(seed)

    slots = _collect_rows(out)
    n_rows = len(slots)
    for i in range(n_rows):
        for j in range(i + 1, n_rows):
            if rng.random() < p:
                (pa, ia), (pb, ib) = slots[i], slots[j]
                pa.children[ia], pb.children[ib] = pb.children[ib], pa.children[ia]

    rows = [parent.children[idx] for parent, idx in slots]
    grids = [_cell_positions(r) for r in rows]
    widths = {len(g) for g in grids}
    if len(widths) != 1 or widths == {0}:
        log.debug("column phase skipped: non-rectangular table (%s)", sorted(widths))
        return out
    n_cols = widths.pop()
    for i in range(n_cols):
        for j in range(i + 1, n_cols):
            if rng.random() < p:
                for r, positions in zip(rows, grids):
                    a, b = positions[i], positions[j]
                    r.children[a], r.children[b] = r.children[b], r.children[a]
    return out


# --------------------------------------------------------------------------
# Debug dump / canonical serialization


def dump_tree(tree: DomTree) -> str:
    """Indented text form: one `postorder_idx tag "tokens" [label]` per line."""
    order = {node.node_id: i + 1 for i, node in enumerate(walk_postorder(tree))}
    lines: list[str] = []

    def visit(node: DomNode, depth: int) -> None:
        joined = " ".join(node.tokens)
        line = f'{"  " * depth}{order[node.node_id]} {node.tag} "{joined}"'
        if node.gold_label is not None:
            line += f" [{node.gold_label}]"
        lines.append(line)
        for child in node.children:
            visit(child, depth + 1)

    visit(tree, 0)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Corpus files


@dataclass
class TableRecord:
    """One labeled table ready for training or evaluation."""

    table_id: str
    source: str
    tree: DomTree


def node_path(root: DomNode, target_id: int) -> list[int] | None:
    """Child indices from the root to the node with ``target_id``."""

    def search(node: DomNode, path: list[int]) -> list[int] | None:
        if node.node_id == target_id:
            return list(path)
        for i, child in enumerate(node.children):
            path.append(i)
            hit = search(child, path)
            path.pop()
            if hit is not None:
                return hit
        return None

    return search(root, [])


def resolve_path(root: DomNode, path: Sequence[int]) -> DomNode:
    node = root
    for idx in path:
        node = node.children[idx]
    return node


def save_corpus(records: list[dict], path: str) -> None:
    """Write raw corpus records (id/html/labels/source) as JSON-Lines."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_corpus(
    path: str,
    tagger: str | TaggerPlugin = "rule",
    fill_other: bool = True,
    synonyms: SynonymDictionary | None = None,
) -> list[TableRecord]:
    """Parse a JSON-Lines corpus into labeled trees.

    Unlabeled nodes become ``Other`` when ``fill_other`` is set, so every
    node carries a gold class.
    """
    records: list[TableRecord] = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    for line in lines:
        raw = json.loads(line)
        tree = parse_html(raw["html"], tagger=tagger)
        if synonyms is not None:
            tree = normalize_attribute_names(tree, synonyms, tagger=tagger)
        for entry in raw.get("labels", []):
            resolve_path(tree, entry["node_path"]).gold_label = entry["class"]
        if fill_other:
            for node in walk_preorder(tree):
                if node.gold_label is None:
                    node.gold_label = OTHER_LABEL
        records.append(
            TableRecord(table_id=raw["id"], source=raw.get("source", ""), tree=tree)
        )
    return records


def escape_text(text: str) -> str:
    return html_lib.escape(text, quote=False)
