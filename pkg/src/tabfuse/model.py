"""The bidirectional tree LSTM node classifier.

Information flows leaf-to-root through a binary tree cell with per-child
forget gates, then root-to-leaf through a mirrored cell that emits separate
states toward each child.  Every node's upward state and its two downward
emissions concatenate into the feature the softmax head classifies.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dom import BinaryNode, DomTree, binarize, binary_nodes_postorder, clip_postorder
from .encoder import Vocabularies, encode_steps, node_step_ids
from .errors import IoFailure, ShapeMismatch

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_token: int = 128
    d_pos: int = 5
    d_enc: int = 64
    d_hidden: int = 64
    d_cls: int = 64
    max_tokens: int = 64
    dropout_p: float = 0.5
    seed_mode: str = "upward-root"  # or "zero"
    downward_cell: str = "perchild"  # or "summed"
    use_downward: bool = True

    def __post_init__(self) -> None:
        if self.seed_mode not in ("upward-root", "zero"):
            raise ValueError(f"unknown seed_mode {self.seed_mode!r}")
        if self.downward_cell not in ("perchild", "summed"):
            raise ValueError(f"unknown downward_cell {self.downward_cell!r}")

    @property
    def d_feature(self) -> int:
        return 2 * self.d_enc


@dataclass
class ModelParams:
    """All learnable tensors plus everything needed to reuse them."""

    config: ModelConfig
    vocabs: Vocabularies
    classes: list[str]
    tensors: dict[str, np.ndarray]

    def wrap(self, tape: Tape | None) -> dict[str, Tensor]:
        return ad.wrap_params(self.tensors, tape)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    r = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-r, r, size=shape)


def init_params(
    vocabs: Vocabularies,
    classes: list[str],
    config: ModelConfig,
    seed: int = 0,
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in)) initialization; forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)
    h = config.d_hidden
    d_enc = config.d_enc
    d_x = config.d_feature
    d_e = vocabs.n_tags + config.d_token + config.d_pos
    n_classes = len(classes)
    t: dict[str, np.ndarray] = {}

    t["emb.content"] = _uniform(rng, (vocabs.n_tokens, config.d_token), config.d_token)
    t["emb.pos"] = _uniform(rng, (vocabs.n_pos, config.d_pos), config.d_pos)

    for direction in ("fwd", "bwd"):
        t[f"enc.{direction}.W"] = _uniform(rng, (4 * d_enc, d_e), d_e)
        t[f"enc.{direction}.U"] = _uniform(rng, (4 * d_enc, d_enc), d_enc)
        bias = np.zeros(4 * d_enc)
        bias[d_enc : 2 * d_enc] = 1.0  # forget-gate block
        t[f"enc.{direction}.b"] = bias

    for gate in ("i", "f", "o", "u"):
        t[f"up.W{gate}"] = _uniform(rng, (h, d_x), d_x)
    for side in ("L", "R"):
        for gate in ("i", "o", "u"):
            t[f"up.U{gate}_{side}"] = _uniform(rng, (h, h), h)
    for m in ("L", "R"):
        for k in ("L", "R"):
            t[f"up.Uf_{m}{k}"] = _uniform(rng, (h, h), h)
    t["up.bi"] = np.zeros(h)
    t["up.bf"] = np.ones(h)
    t["up.bo"] = np.zeros(h)
    t["up.bu"] = np.zeros(h)

    for gate in ("i", "f", "o", "u"):
        t[f"down.W{gate}"] = _uniform(rng, (h, d_x), d_x)
    t["down.Ui"] = _uniform(rng, (h, h), h)
    t["down.Uu"] = _uniform(rng, (h, h), h)
    for side in ("L", "R"):
        t[f"down.Uf_{side}"] = _uniform(rng, (h, h), h)
        t[f"down.Uo_{side}"] = _uniform(rng, (h, h), h)
    t["down.bi"] = np.zeros(h)
    t["down.bf"] = np.ones(h)
    t["down.bo"] = np.zeros(h)
    t["down.bu"] = np.zeros(h)

    t["cls.W1"] = _uniform(rng, (3 * h, config.d_cls), 3 * h)
    t["cls.b1"] = np.zeros(config.d_cls)
    t["cls.W2"] = _uniform(rng, (config.d_cls, n_classes), config.d_cls)
    t["cls.b2"] = np.zeros(n_classes)

    return ModelParams(config=config, vocabs=vocabs, classes=list(classes), tensors=t)


def _fused_upward(wrapped: dict[str, Tensor]) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Stack the upward gate blocks [i, fL, fR, o, u] for single-matmul nodes."""
    w = ad.concat(
        [wrapped["up.Wi"], wrapped["up.Wf"], wrapped["up.Wf"], wrapped["up.Wo"], wrapped["up.Wu"]]
    )
    u_left = ad.concat(
        [
            wrapped["up.Ui_L"],
            wrapped["up.Uf_LL"],
            wrapped["up.Uf_RL"],
            wrapped["up.Uo_L"],
            wrapped["up.Uu_L"],
        ]
    )
    u_right = ad.concat(
        [
            wrapped["up.Ui_R"],
            wrapped["up.Uf_LR"],
            wrapped["up.Uf_RR"],
            wrapped["up.Uo_R"],
            wrapped["up.Uu_R"],
        ]
    )
    b = ad.concat(
        [wrapped["up.bi"], wrapped["up.bf"], wrapped["up.bf"], wrapped["up.bo"], wrapped["up.bu"]]
    )
    return w, u_left, u_right, b


def upward_pass(
    broot: BinaryNode,
    features: dict[int, Tensor],
    wrapped: dict[str, Tensor],
    config: ModelConfig,
) -> dict[int, tuple[Tensor, Tensor]]:
    """Post-order leaf-to-root sweep; absent children contribute zero states."""
    h = config.d_hidden
    w, u_left, u_right, b = _fused_upward(wrapped)
    zero = ad.constant(np.zeros(h))
    states: dict[int, tuple[Tensor, Tensor]] = {}
    for bnode in binary_nodes_postorder(broot):
        nid = bnode.payload.node_id
        h_l, c_l = states[bnode.left.payload.node_id] if bnode.left else (zero, zero)
        h_r, c_r = states[bnode.right.payload.node_id] if bnode.right else (zero, zero)
        pre = ad.add(
            ad.add(ad.matmul(w, features[nid]), ad.matmul(u_left, h_l)),
            ad.add(ad.matmul(u_right, h_r), b),
        )
        gate_i = ad.sigmoid(ad.narrow(pre, 0, h))
        gate_fl = ad.sigmoid(ad.narrow(pre, h, 2 * h))
        gate_fr = ad.sigmoid(ad.narrow(pre, 2 * h, 3 * h))
        gate_o = ad.sigmoid(ad.narrow(pre, 3 * h, 4 * h))
        gate_u = ad.tanh(ad.narrow(pre, 4 * h, 5 * h))
        cell = ad.mul(gate_i, gate_u)
        if bnode.left:
            cell = ad.add(cell, ad.mul(gate_fl, c_l))
        if bnode.right:
            cell = ad.add(cell, ad.mul(gate_fr, c_r))
        states[nid] = (ad.mul(gate_o, ad.tanh(cell)), cell)
    return states


def _fused_downward(wrapped: dict[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """Stack the downward gate blocks [i, fL, fR, oL, oR, u]."""
    w = ad.concat(
        [
            wrapped["down.Wi"],
            wrapped["down.Wf"],
            wrapped["down.Wf"],
            wrapped["down.Wo"],
            wrapped["down.Wo"],
            wrapped["down.Wu"],
        ]
    )
    u = ad.concat(
        [
            wrapped["down.Ui"],
            wrapped["down.Uf_L"],
            wrapped["down.Uf_R"],
            wrapped["down.Uo_L"],
            wrapped["down.Uo_R"],
            wrapped["down.Uu"],
        ]
    )
    b = ad.concat(
        [
            wrapped["down.bi"],
            wrapped["down.bf"],
            wrapped["down.bf"],
            wrapped["down.bo"],
            wrapped["down.bo"],
            wrapped["down.bu"],
        ]
    )
    return w, u, b


def downward_pass(
    broot: BinaryNode,
    features: dict[int, Tensor],
    wrapped: dict[str, Tensor],
    config: ModelConfig,
    upward_states: dict[int, tuple[Tensor, Tensor]] | None = None,
) -> dict[int, tuple[Tensor, Tensor, Tensor, Tensor]]:
    """Pre-order root-to-leaf sweep emitting (h_L, c_L, h_R, c_R) per node.

    The root's incoming state is its upward state under seed_mode
    "upward-root", zeros under "zero".  Each child receives the emission on
    its own side.  The "summed" cell variant feeds both forget gates into a
    single shared cell value instead of one per side.
    """
    h = config.d_hidden
    w, u, b = _fused_downward(wrapped)
    zero = ad.constant(np.zeros(h))
    if config.seed_mode == "upward-root":
        if upward_states is None:
            raise ValueError("seed_mode=upward-root needs the upward states")
        seed_h, seed_c = upward_states[broot.payload.node_id]
    else:
        seed_h, seed_c = zero, zero

    emissions: dict[int, tuple[Tensor, Tensor, Tensor, Tensor]] = {}
    stack: list[tuple[BinaryNode, Tensor, Tensor]] = [(broot, seed_h, seed_c)]
    while stack:
        bnode, h_in, c_in = stack.pop()
        nid = bnode.payload.node_id
        pre = ad.add(ad.add(ad.matmul(w, features[nid]), ad.matmul(u, h_in)), b)
        gate_i = ad.sigmoid(ad.narrow(pre, 0, h))
        gate_fl = ad.sigmoid(ad.narrow(pre, h, 2 * h))
        gate_fr = ad.sigmoid(ad.narrow(pre, 2 * h, 3 * h))
        gate_ol = ad.sigmoid(ad.narrow(pre, 3 * h, 4 * h))
        gate_or = ad.sigmoid(ad.narrow(pre, 4 * h, 5 * h))
        gate_u = ad.tanh(ad.narrow(pre, 5 * h, 6 * h))
        iu = ad.mul(gate_i, gate_u)
        if config.downward_cell == "perchild":
            c_left = ad.add(iu, ad.mul(gate_fl, c_in))
            c_right = ad.add(iu, ad.mul(gate_fr, c_in))
        else:
            shared = ad.add(iu, ad.mul(ad.add(gate_fl, gate_fr), c_in))
            c_left = shared
            c_right = shared
        h_left = ad.mul(gate_ol, ad.tanh(c_left))
        h_right = ad.mul(gate_or, ad.tanh(c_right))
        emissions[nid] = (h_left, c_left, h_right, c_right)
        if bnode.left:
            stack.append((bnode.left, h_left, c_left))
        if bnode.right:
            stack.append((bnode.right, h_right, c_right))
    return emissions


def combine_features(h_up: Tensor, h_left_down: Tensor, h_right_down: Tensor) -> Tensor:
    """[upward || left-downward || right-downward], in that order."""
    if not (h_up.data.shape == h_left_down.data.shape == h_right_down.data.shape):
        raise ShapeMismatch(
            f"combine of {h_up.data.shape}/{h_left_down.data.shape}/{h_right_down.data.shape}"
        )
    return ad.concat([h_up, h_left_down, h_right_down])


def classify_nodes(
    combined: list[Tensor],
    wrapped: dict[str, Tensor],
    training: bool = False,
    dropout_p: float = 0.5,
    dropout_seed: int | None = None,
) -> Tensor:
    """Softmax class distributions, one row per node.

    Dropout touches only the hidden tanh activation and only in training.
    """
    x = ad.stack_rows(combined)
    hidden = ad.tanh(ad.add(ad.matmul(x, wrapped["cls.W1"]), wrapped["cls.b1"]))
    hidden = ad.dropout(hidden, dropout_p, seed=dropout_seed, training=training)
    logits = ad.add(ad.matmul(hidden, wrapped["cls.W2"]), wrapped["cls.b2"])
    return ad.softmax(logits)


@dataclass
class NodePrediction:
    """Class distribution for one node plus its argmax summary."""

    node_id: int
    text: str
    probs: np.ndarray
    predicted: str
    score: float


@dataclass
class TreePrediction:
    """Per-node predictions for one tree, aligned with ``nodes`` order."""

    nodes: list  # DomNode, document order of the processed tree
    probs: Tensor  # (n_nodes, n_classes)
    classes: list[str]
    wrapped: dict[str, Tensor] = field(default_factory=dict)

    def predictions(self) -> list[NodePrediction]:
        out = []
        for node, row_probs in zip(self.nodes, self.probs.data):
            idx = int(np.argmax(row_probs))  # argmax takes the lowest index on ties
            out.append(
                NodePrediction(
                    node_id=node.node_id,
                    text=node.text,
                    probs=np.array(row_probs),
                    predicted=self.classes[idx],
                    score=float(row_probs[idx]),
                )
            )
        return out


def forward(
    tree: DomTree,
    params: ModelParams,
    training: bool = False,
    dropout_seed: int | None = None,
    tape: Tape | None = None,
    clip_limit: int | None = None,
) -> TreePrediction:
    """Encode, run both tree sweeps, and classify every node of one tree."""
    cfg = params.config
    if clip_limit is not None:
        tree = clip_postorder(tree, clip_limit)
    broot = binarize(tree)
    wrapped = params.wrap(tape)

    nodes = [b.payload for b in binary_nodes_postorder(broot)]
    # Nodes sharing (tag, tokens, pos) reuse one encoding; the tape
    # accumulates gradients through the shared subexpression.
    features: dict[int, Tensor] = {}
    cache: dict[tuple, Tensor] = {}
    for node in nodes:
        key = node_step_ids(node, params.vocabs, cfg.max_tokens)
        feat = cache.get(key)
        if feat is None:
            feat = encode_steps(*key, wrapped, params.vocabs, cfg.d_enc)
            cache[key] = feat
        features[node.node_id] = feat

    up = upward_pass(broot, features, wrapped, cfg)
    zero = ad.constant(np.zeros(cfg.d_hidden))
    doc_nodes = _document_order(broot)
    combined: list[Tensor] = []
    if cfg.use_downward:
        down = downward_pass(broot, features, wrapped, cfg, upward_states=up)
        for node in doc_nodes:
            h_l, _, h_r, _ = down[node.node_id]
            combined.append(combine_features(up[node.node_id][0], h_l, h_r))
    else:
        for node in doc_nodes:
            combined.append(combine_features(up[node.node_id][0], zero, zero))

    probs = classify_nodes(
        combined,
        wrapped,
        training=training,
        dropout_p=cfg.dropout_p,
        dropout_seed=dropout_seed,
    )
    return TreePrediction(
        nodes=doc_nodes, probs=probs, classes=params.classes, wrapped=wrapped
    )


def _document_order(broot: BinaryNode) -> list:
    # Right pointers are siblings, so document order walks left chains.
    order = []

    def walk(b: BinaryNode) -> None:
        order.append(b.payload)
        child = b.left
        while child is not None:
            walk(child)
            child = child.right

    walk(broot)
    return order


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Versioned npz container; float64 tensors round-trip bit-identically."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "classes": params.classes,
        "vocabs": {
            "tags": params.vocabs.tags,
            "tokens": params.vocabs.tokens,
            "pos": params.vocabs.pos,
            "min_count": params.vocabs.min_count,
        },
        "tensor_shapes": {k: list(v.shape) for k, v in params.tensors.items()},
    }
    arrays = {f"tensor/{k}": v for k, v in params.tensors.items()}
    try:
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path: str) -> ModelParams:
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta["format_version"] != CHECKPOINT_VERSION:
                raise IoFailure(
                    f"checkpoint format {meta['format_version']} unsupported"
                )
            tensors = {
                k[len("tensor/") :]: np.array(data[k])
                for k in data.files
                if k.startswith("tensor/")
            }
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    vocabs = Vocabularies(
        tags=meta["vocabs"]["tags"],
        tokens=meta["vocabs"]["tokens"],
        pos=meta["vocabs"]["pos"],
        min_count=meta["vocabs"]["min_count"],
        frozen=True,
    )
    config = ModelConfig(**meta["config"])
    for name, shape in meta["tensor_shapes"].items():
        if list(tensors[name].shape) != shape:
            raise IoFailure(f"tensor {name} shape mismatch in checkpoint")
    return ModelParams(
        config=config, vocabs=vocabs, classes=list(meta["classes"]), tensors=tensors
    )
