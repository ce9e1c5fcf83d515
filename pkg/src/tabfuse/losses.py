"""Class-weighted focal loss, differentiable soft-F1 loss, and their sum.

Both terms are defined over one batch of node class distributions: the focal
term averages per-node losses, the soft-F1 term pools probabilistic
true/false positive counts over every node in the batch jointly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyBatch, InvalidDistribution, ZeroCount

PROB_FLOOR = 1e-12
SUM_TOLERANCE = 1e-6


@dataclass
class LossConfig:
    gamma: float = 2.0
    alpha: np.ndarray = field(default_factory=lambda: np.ones(1))
    epsilon: float = 1e-8
    f1_class_indices: list[int] | None = None  # None = average every class

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha entries must be positive")


def compute_alpha(counts: np.ndarray | list[int]) -> np.ndarray:
    """Inverse-frequency class weights scaled so they sum to the class count."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ZeroCount(f"all class counts must be positive, got {counts}")
    inv = 1.0 / counts
    return inv * (len(counts) / inv.sum())


def make_loss_config(
    class_counts: np.ndarray | list[int],
    gamma: float = 2.0,
    epsilon: float = 1e-8,
    include_other: bool = True,
    other_index: int | None = None,
) -> LossConfig:
    indices = None
    if not include_other and other_index is not None:
        indices = [i for i in range(len(class_counts)) if i != other_index]
    return LossConfig(
        gamma=gamma,
        alpha=compute_alpha(class_counts),
        epsilon=epsilon,
        f1_class_indices=indices,
    )


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else ad.constant(np.asarray(x, dtype=np.float64))


def _check_distribution(values: np.ndarray) -> None:
    sums = values.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SUM_TOLERANCE):
        raise InvalidDistribution(f"probabilities sum to {sums}, expected 1")


def focal_loss(probs, target_class: int, cfg: LossConfig) -> Tensor:
    """-alpha_y * (1 - p_y)^gamma * log(p_y) for the one-hot true class y."""
    p = _as_tensor(probs)
    _check_distribution(p.data)
    if not 0 <= target_class < p.data.shape[-1]:
        raise ValueError(f"target class {target_class} out of range")
    p_y = ad.take(p, [target_class])
    modulator = ad.power(ad.rsub_scalar(1.0, p_y), cfg.gamma)
    log_p = ad.log(ad.clip_min(p_y, PROB_FLOOR))
    weighted = ad.scale(ad.mul(modulator, log_p), -float(cfg.alpha[target_class]))
    return ad.ssum(weighted)


def focal_loss_mean(probs, targets, cfg: LossConfig) -> Tensor:
    """Mean focal loss over a batch; probs is (n, N), targets a class-index array."""
    p = _as_tensor(probs)
    targets = np.asarray(targets, dtype=np.intp)
    if p.data.ndim != 2 or p.data.shape[0] == 0:
        raise EmptyBatch("focal loss needs at least one node")
    _check_distribution(p.data)
    p_y = ad.rows_pick(p, targets)
    modulator = ad.power(ad.rsub_scalar(1.0, p_y), cfg.gamma)
    log_p = ad.log(ad.clip_min(p_y, PROB_FLOOR))
    alpha = ad.constant(cfg.alpha[targets])
    per_node = ad.mul(alpha, ad.mul(modulator, log_p))
    return ad.scale(ad.ssum(per_node), -1.0 / p.data.shape[0])


def soft_f1_loss(probs, targets, cfg: LossConfig) -> Tensor:
    """1 minus the mean per-class soft F1 over all nodes of the batch.

    Per class: sTP pools the probability mass on true members, sFP the mass
    on non-members, sFN the mass missing from true members.
    """
    p = _as_tensor(probs)
    targets = np.asarray(targets, dtype=np.intp)
    if p.data.ndim != 2 or p.data.shape[0] == 0:
        raise EmptyBatch("soft F1 needs at least one node")
    n_nodes, n_classes = p.data.shape
    onehot = np.zeros((n_nodes, n_classes))
    onehot[np.arange(n_nodes), targets] = 1.0
    t_const = ad.constant(onehot)

    stp = ad.sum_axis0(ad.mul(p, t_const))
    col_p = ad.sum_axis0(p)
    sfp = ad.sub(col_p, stp)
    col_t = ad.constant(onehot.sum(axis=0))
    sfn = ad.sub(col_t, stp)

    numer = ad.scale(stp, 2.0)
    denom = ad.add_scalar(ad.add(numer, ad.add(sfp, sfn)), cfg.epsilon)
    f1 = ad.div(numer, denom)
    if cfg.f1_class_indices is not None:
        f1 = ad.take(f1, cfg.f1_class_indices)
    return ad.rsub_scalar(1.0, ad.mean(f1))


def total_loss(probs, targets, cfg: LossConfig) -> Tensor:
    """Mean focal loss plus the joint soft-F1 loss over the same batch."""
    return ad.add(
        focal_loss_mean(probs, targets, cfg), soft_f1_loss(probs, targets, cfg)
    )
