"""Contrastive objectives over pairs of samples.

The intra-modal loss for one modality sums, over labelled pairs,

    1/2 ||e - e'||^2                     for positive pairs,
    1/2 max(0, margin - ||e - e'||)^2    for negative pairs,

where e = net(x). The cross-modal loss is the same expression applied to
embeddings from the two different networks, and it is what couples them.
The combined objective is cross + alpha_x * intra_x + alpha_y * intra_y.

Losses are sums, not means, so the alpha weights interact with pair-set
sizes; keep |P| and |N| comparable across sets when balancing terms.

Gradients are the exact derivatives of the expressions above. The hinge
branch differentiates max(0, margin - ||d||)^2 as -(margin - ||d||) d/||d||
composed with the network Jacobians; at the non-differentiable point
||d|| = 0 the subgradient 0 is used. Pairs whose hinge is inactive
(distance >= margin) contribute exactly zero to both loss and gradient.

All reductions run in a fixed order, so results are bit-reproducible for
identical inputs regardless of any deterministic-mode flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidValue
from .model import (
    CoupledModel,
    EmbeddingNet,
    ParameterGradient,
    backward_batch,
    forward_batch,
)
from .numkernel import as_matrix

__all__ = [
    "LossConfig",
    "PairBatch",
    "PairSets",
    "intra_loss",
    "cross_loss",
    "total_loss",
    "total_gradient",
]


@dataclass(frozen=True)
class LossConfig:
    """Margins and modality weights of the combined objective."""

    margin_x: float = 1.0
    margin_y: float = 1.0
    margin_xy: float = 3.0
    alpha_x: float = 0.1
    alpha_y: float = 0.3

    def __post_init__(self):
        for name in ("margin_x", "margin_y", "margin_xy", "alpha_x", "alpha_y"):
            v = float(getattr(self, name))
            if math.isnan(v) or v < 0:
                raise InvalidValue(f"{name} must be non-negative, got {v}")
            object.__setattr__(self, name, v)

    def check_margins_for(self, m: int) -> None:
        """Embeddings live in (-1,1)^m, so no distance exceeds 2*sqrt(m);
        a margin beyond that makes every negative pair permanently active."""
        bound = 2.0 * math.sqrt(m)
        for name in ("margin_x", "margin_y", "margin_xy"):
            v = getattr(self, name)
            if v > bound:
                raise InvalidValue(
                    f"{name}={v} exceeds the maximum achievable distance "
                    f"{bound:.6g} for m={m}"
                )


@dataclass(eq=False)
class PairBatch:
    """Indexed sample pairs with a polarity and an optional weight each."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    positive: np.ndarray
    weight: np.ndarray = None

    def __post_init__(self):
        self.idx_a = np.asarray(self.idx_a, dtype=np.int64)
        self.idx_b = np.asarray(self.idx_b, dtype=np.int64)
        self.positive = np.asarray(self.positive, dtype=bool)
        if self.weight is None:
            self.weight = np.ones(self.idx_a.shape[0])
        self.weight = np.asarray(self.weight, dtype=np.float64)
        n = self.idx_a.shape[0]
        if not (self.idx_b.shape[0] == self.positive.shape[0] == self.weight.shape[0] == n):
            raise DimensionMismatch("pair arrays have inconsistent lengths")
        if np.any(self.weight < 0) or not np.all(np.isfinite(self.weight)):
            raise InvalidValue("pair weights must be finite and non-negative")

    def __len__(self) -> int:
        return self.idx_a.shape[0]

    @property
    def n_pos(self) -> int:
        return int(self.positive.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    @classmethod
    def empty(cls) -> "PairBatch":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, bool))

    @classmethod
    def from_pairs(cls, pairs) -> "PairBatch":
        """Build from an iterable of (idx_a, idx_b, positive[, weight])."""
        rows = list(pairs)
        if not rows:
            return cls.empty()
        idx_a = [r[0] for r in rows]
        idx_b = [r[1] for r in rows]
        positive = [bool(r[2]) for r in rows]
        weight = [r[3] if len(r) > 3 else 1.0 for r in rows]
        return cls(idx_a, idx_b, positive, weight)

    @classmethod
    def merged(cls, *batches) -> "PairBatch":
        parts = [b for b in batches if len(b)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([b.idx_a for b in parts]),
            np.concatenate([b.idx_b for b in parts]),
            np.concatenate([b.positive for b in parts]),
            np.concatenate([b.weight for b in parts]),
        )

    def select(self, mask_or_index) -> "PairBatch":
        return PairBatch(
            self.idx_a[mask_or_index],
            self.idx_b[mask_or_index],
            self.positive[mask_or_index],
            self.weight[mask_or_index],
        )

    def head(self, k: int) -> "PairBatch":
        """First k pairs. Pairs are emitted in i.i.d. sampling order, so a
        prefix is itself a uniform subsample."""
        return self.select(slice(0, int(k)))

    def check_bounds(self, n_a: int, n_b: int) -> None:
        if len(self) == 0:
            return
        if self.idx_a.min() < 0 or self.idx_a.max() >= n_a:
            raise InvalidValue(f"pair index out of range for a dataset of {n_a} samples")
        if self.idx_b.min() < 0 or self.idx_b.max() >= n_b:
            raise InvalidValue(f"pair index out of range for a dataset of {n_b} samples")


@dataclass(eq=False)
class PairSets:
    """The six supervision sets: positive/negative pairs within each
    modality and across them."""

    pos_x: PairBatch = field(default_factory=PairBatch.empty)
    neg_x: PairBatch = field(default_factory=PairBatch.empty)
    pos_y: PairBatch = field(default_factory=PairBatch.empty)
    neg_y: PairBatch = field(default_factory=PairBatch.empty)
    pos_xy: PairBatch = field(default_factory=PairBatch.empty)
    neg_xy: PairBatch = field(default_factory=PairBatch.empty)

    def intra_x(self) -> PairBatch:
        return PairBatch.merged(self.pos_x, self.neg_x)

    def intra_y(self) -> PairBatch:
        return PairBatch.merged(self.pos_y, self.neg_y)

    def cross(self) -> PairBatch:
        return PairBatch.merged(self.pos_xy, self.neg_xy)

    def total_pairs(self) -> int:
        return (
            len(self.pos_x) + len(self.neg_x) + len(self.pos_y)
            + len(self.neg_y) + len(self.pos_xy) + len(self.neg_xy)
        )

    def check_bounds(self, n_x: int, n_y: int) -> None:
        self.pos_x.check_bounds(n_x, n_x)
        self.neg_x.check_bounds(n_x, n_x)
        self.pos_y.check_bounds(n_y, n_y)
        self.neg_y.check_bounds(n_y, n_y)
        self.pos_xy.check_bounds(n_x, n_y)
        self.neg_xy.check_bounds(n_x, n_y)

    def with_cross_fraction(self, fraction: float) -> "PairSets":
        """Keep only a leading fraction of the cross-modal pairs, leaving the
        intra-modal sets untouched (reduced-supervision experiments)."""
        if not 0 < fraction <= 1:
            raise InvalidValue(f"fraction must be in (0, 1], got {fraction}")
        return PairSets(
            pos_x=self.pos_x,
            neg_x=self.neg_x,
            pos_y=self.pos_y,
            neg_y=self.neg_y,
            pos_xy=self.pos_xy.head(max(1, round(len(self.pos_xy) * fraction))),
            neg_xy=self.neg_xy.head(max(1, round(len(self.neg_xy) * fraction))),
        )


def _values(data) -> np.ndarray:
    """Accept either a FeatureMatrix-like object or a raw 2-d array."""
    return as_matrix(getattr(data, "values", data), "feature matrix")


def _pair_loss(emb_a: np.ndarray, emb_b: np.ndarray, batch: PairBatch, margin: float) -> float:
    if len(batch) == 0:
        return 0.0
    d = emb_a[batch.idx_a] - emb_b[batch.idx_b]
    sq = np.einsum("ij,ij->i", d, d)
    pos = batch.positive
    total = 0.5 * float(np.dot(batch.weight[pos], sq[pos]))
    if batch.n_neg:
        dist = np.sqrt(sq[~pos])
        viol = np.maximum(0.0, margin - dist)
        total += 0.5 * float(np.dot(batch.weight[~pos], viol * viol))
    return total


def _pair_upstream(
    grad_a: np.ndarray,
    grad_b: np.ndarray,
    emb_a: np.ndarray,
    emb_b: np.ndarray,
    batch: PairBatch,
    margin: float,
    scale: float,
) -> None:
    """Accumulate d(loss)/d(embedding) into grad_a/grad_b, scaled.

    grad_a and grad_b may alias (intra-modal case); np.add.at handles the
    repeated indices either way.
    """
    if len(batch) == 0 or scale == 0.0:
        return
    d = emb_a[batch.idx_a] - emb_b[batch.idx_b]
    sq = np.einsum("ij,ij->i", d, d)
    coef = np.zeros(len(batch))
    pos = batch.positive
    coef[pos] = batch.weight[pos]
    if batch.n_neg:
        neg = ~pos
        dist = np.sqrt(sq[neg])
        viol = margin - dist
        active = (viol > 0) & (dist > 0)  # subgradient 0 at dist == 0
        cneg = np.zeros(dist.shape[0])
        cneg[active] = -batch.weight[neg][active] * viol[active] / dist[active]
        coef[neg] = cneg
    contrib = (scale * coef)[:, None] * d
    np.add.at(grad_a, batch.idx_a, contrib)
    np.add.at(grad_b, batch.idx_b, -contrib)


def intra_loss(net: EmbeddingNet, data, batch: PairBatch, margin: float) -> float:
    """Contrastive loss over same-modality pairs."""
    if margin < 0:
        raise InvalidValue(f"margin must be non-negative, got {margin}")
    values = _values(data)
    batch.check_bounds(values.shape[0], values.shape[0])
    emb, _ = forward_batch(net, values)
    return _pair_loss(emb, emb, batch, margin)


def cross_loss(
    net_x: EmbeddingNet,
    net_y: EmbeddingNet,
    data_x,
    data_y,
    batch: PairBatch,
    margin: float,
) -> float:
    """Contrastive loss over cross-modality pairs; this is the coupling term."""
    if margin < 0:
        raise InvalidValue(f"margin must be non-negative, got {margin}")
    vx = _values(data_x)
    vy = _values(data_y)
    batch.check_bounds(vx.shape[0], vy.shape[0])
    emb_x, _ = forward_batch(net_x, vx)
    emb_y, _ = forward_batch(net_y, vy)
    return _pair_loss(emb_x, emb_y, batch, margin)


def objective(
    model: CoupledModel,
    data_x,
    data_y,
    sets: PairSets,
    cfg: LossConfig,
    with_gradient: bool = False,
):
    """Combined loss, optionally with its exact parameter gradients.

    Returns loss when with_gradient is false, else (loss, grad_x, grad_y).
    This is the single evaluation path shared by total_loss, total_gradient
    and the trainer, so all of them agree bit for bit.
    """
    vx = _values(data_x)
    vy = _values(data_y)
    sets.check_bounds(vx.shape[0], vy.shape[0])
    emb_x, caches_x = forward_batch(model.net_x, vx)
    emb_y, caches_y = forward_batch(model.net_y, vy)

    cross_batch = sets.cross()
    intra_x_batch = sets.intra_x()
    intra_y_batch = sets.intra_y()

    l_xy = _pair_loss(emb_x, emb_y, cross_batch, cfg.margin_xy)
    l_x = _pair_loss(emb_x, emb_x, intra_x_batch, cfg.margin_x)
    l_y = _pair_loss(emb_y, emb_y, intra_y_batch, cfg.margin_y)
    total = l_xy + cfg.alpha_x * l_x + cfg.alpha_y * l_y
    if not with_gradient:
        return total

    up_x = np.zeros_like(emb_x)
    up_y = np.zeros_like(emb_y)
    _pair_upstream(up_x, up_y, emb_x, emb_y, cross_batch, cfg.margin_xy, 1.0)
    _pair_upstream(up_x, up_x, emb_x, emb_x, intra_x_batch, cfg.margin_x, cfg.alpha_x)
    _pair_upstream(up_y, up_y, emb_y, emb_y, intra_y_batch, cfg.margin_y, cfg.alpha_y)
    grad_x = backward_batch(model.net_x, caches_x, up_x)
    grad_y = backward_batch(model.net_y, caches_y, up_y)
    return total, grad_x, grad_y


def total_loss(model: CoupledModel, data_x, data_y, sets: PairSets, cfg: LossConfig) -> float:
    """cross + alpha_x * intra_x + alpha_y * intra_y over the six pair sets."""
    return objective(model, data_x, data_y, sets, cfg, with_gradient=False)


def total_gradient(
    model: CoupledModel, data_x, data_y, sets: PairSets, cfg: LossConfig
):
    """Exact gradients of total_loss for both networks.

    Returns (grad_x, grad_y) as ParameterGradient objects shaped like the
    corresponding networks.
    """
    _, grad_x, grad_y = objective(model, data_x, data_y, sets, cfg, with_gradient=True)
    return grad_x, grad_y
