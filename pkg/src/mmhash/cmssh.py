"""Boosted linear cross-modal hashing baseline.

Each bit is a pair of linear projections with thresholds,
bit_x(x) = sign(p.x + a) and bit_y(y) = sign(q.y + b), fitted from weighted
cross-modal pairs in two stages:

1. Projections: minimize the linearized weighted correlation objective

       J(p, q) = sum_N w (p.x)(q.y) - sum_P w (p.x)(q.y)
               = p @ C @ q,   C = sum_N w x y^T - sum_P w x y^T

   over unit vectors, which drives positive pairs toward equal projection
   signs and negative pairs toward opposite signs. The minimizer is the top
   singular-vector pair of C with the relative sign chosen to make J
   negative; both sign pairings are evaluated and the smaller kept.

2. Thresholds: a and b maximize the weighted pair-classification accuracy
   of the bit-agreement classifier (a pair is called positive when the two
   bits agree), searched over midpoints of consecutive sorted projected
   values on a coarse two-dimensional grid that is refined once around the
   winning cell.

Bits are fitted sequentially with AdaBoost reweighting: after each bit the
pairs it misclassifies are upweighted by exp(alpha) with
alpha = ln((1 - eps) / eps) / 2 and the weights renormalized to sum to one.
The fit is deterministic: no randomness enters beyond the input pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidValue
from .hashing import CodeMatrix, HashCode, binarize, binarize_batch
from .loss import PairBatch
from .model import CoupledModel, EmbeddingNet, Layer
from .numkernel import as_matrix, as_vector, svd_small

__all__ = ["CmsshModel", "fit", "fit_bit", "hash_vector", "hash_batch", "projection_objective"]

_COARSE_GRID = 48  # candidate thresholds per modality before refinement
_EPS_FLOOR = 1e-12


@dataclass(eq=False)
class CmsshModel:
    """Per-bit linear projections and thresholds for both modalities."""

    proj_x: np.ndarray  # (m, dim_x), unit rows
    bias_x: np.ndarray  # (m,)
    proj_y: np.ndarray  # (m, dim_y), unit rows
    bias_y: np.ndarray  # (m,)

    def __post_init__(self):
        self.proj_x = as_matrix(self.proj_x, "proj_x")
        self.bias_x = as_vector(self.bias_x, "bias_x")
        self.proj_y = as_matrix(self.proj_y, "proj_y")
        self.bias_y = as_vector(self.bias_y, "bias_y")
        if not (
            self.proj_x.shape[0]
            == self.bias_x.shape[0]
            == self.proj_y.shape[0]
            == self.bias_y.shape[0]
        ):
            raise DimensionMismatch("projection and bias row counts disagree")
        for name, proj in (("proj_x", self.proj_x), ("proj_y", self.proj_y)):
            norms = np.linalg.norm(proj, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-8):
                raise InvalidValue(f"{name} rows must have unit norm")

    @property
    def m(self) -> int:
        return self.proj_x.shape[0]

    def to_coupled_model(self) -> CoupledModel:
        """Repackage as single-layer networks with the hard-sign sentinel
        beta = inf, for storage in the shared model file format."""
        return CoupledModel(
            net_x=EmbeddingNet(
                layers=(Layer(self.proj_x.copy(), self.bias_x.copy(), beta=math.inf),)
            ),
            net_y=EmbeddingNet(
                layers=(Layer(self.proj_y.copy(), self.bias_y.copy(), beta=math.inf),)
            ),
        )

    @classmethod
    def from_coupled_model(cls, model: CoupledModel) -> "CmsshModel":
        if len(model.net_x.layers) != 1 or len(model.net_y.layers) != 1:
            raise InvalidValue("baseline models are single-layer")
        lx, ly = model.net_x.layers[0], model.net_y.layers[0]
        return cls(lx.weights.copy(), lx.bias.copy(), ly.weights.copy(), ly.bias.copy())


def projection_objective(p, q, data_x, data_y, pairs: PairBatch, weights) -> float:
    """Weighted correlation difference J(p, q); lower means the bit orders
    positives before negatives more strongly."""
    p = as_vector(p, "p")
    q = as_vector(q, "q")
    px = data_x[pairs.idx_a] @ p
    qy = data_y[pairs.idx_b] @ q
    corr = weights * px * qy
    return float(corr[~pairs.positive].sum() - corr[pairs.positive].sum())


def _check_pairs(data_x, data_y, pairs, weights):
    vx = as_matrix(getattr(data_x, "values", data_x), "data_x")
    vy = as_matrix(getattr(data_y, "values", data_y), "data_y")
    if len(pairs) == 0:
        raise InvalidValue("pair set is empty")
    pairs.check_bounds(vx.shape[0], vy.shape[0])
    w = as_vector(weights, "weights")
    if w.shape[0] != len(pairs):
        raise DimensionMismatch(f"{w.shape[0]} weights for {len(pairs)} pairs")
    if np.any(w < 0):
        raise InvalidValue("weights must be non-negative")
    if abs(float(w.sum()) - 1.0) > 1e-12:
        raise InvalidValue(f"weights must sum to 1, got {float(w.sum()):.17g}")
    return vx, vy, w


def fit_bit(data_x, data_y, pairs: PairBatch, weights):
    """Fit one bit; returns (p, q, a, b)."""
    vx, vy, w = _check_pairs(data_x, data_y, pairs, weights)
    pos = pairs.positive
    xa = vx[pairs.idx_a]
    yb = vy[pairs.idx_b]
    signed_w = np.where(pos, -w, w)
    c = (xa * signed_w[:, None]).T @ yb

    u, _, v = svd_small(c)
    p = u[:, 0]
    q = v[:, 0]
    j_keep = projection_objective(p, q, vx, vy, pairs, w)
    j_flip = projection_objective(p, -q, vx, vy, pairs, w)
    if j_flip < j_keep:
        q = -q

    a, b = _search_thresholds(vx, vy, pairs, w, p, q)
    return p, q, a, b


def _midpoints(values: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive sorted distinct projected values."""
    distinct = np.unique(values)
    if distinct.shape[0] < 2:
        # Degenerate: one distinct projection; threshold just below it makes
        # the bit constant +1.
        return np.array([distinct[0] - 1.0]) if distinct.shape[0] else np.array([0.0])
    return 0.5 * (distinct[:-1] + distinct[1:])


def _coarse_subset(candidates: np.ndarray, budget: int) -> np.ndarray:
    if candidates.shape[0] <= budget:
        return candidates
    picks = np.linspace(0, candidates.shape[0] - 1, budget).round().astype(int)
    return candidates[np.unique(picks)]


def _accuracy_grid(px, qy, w, pos, thr_x, thr_y):
    """Weighted pair-classification accuracy for every threshold pair.

    With t = +-1 the x-bit and u = +-1 the y-bit, a pair is classified
    positive when t*u = +1, so accuracy(a, b) = sum w * (1 +- t u)/2, which
    collapses to one matrix product.
    """
    tx = np.where(px[None, :] >= thr_x[:, None], 1.0, -1.0)
    uy = np.where(qy[None, :] >= thr_y[:, None], 1.0, -1.0)
    signed = w * np.where(pos, 1.0, -1.0)
    return 0.5 * float(w.sum()) + 0.5 * (tx * signed) @ uy.T


def _search_thresholds(vx, vy, pairs, w, p, q):
    px = vx[pairs.idx_a] @ p
    qy = vy[pairs.idx_b] @ q
    pos = pairs.positive

    cand_x = _midpoints(vx @ p)
    cand_y = _midpoints(vy @ q)
    coarse_x = _coarse_subset(cand_x, _COARSE_GRID)
    coarse_y = _coarse_subset(cand_y, _COARSE_GRID)

    acc = _accuracy_grid(px, qy, w, pos, coarse_x, coarse_y)
    ix, iy = np.unravel_index(np.argmax(acc), acc.shape)

    # Refine once: all midpoints between the coarse neighbors of the winner.
    fine_x = _between(cand_x, coarse_x, ix)
    fine_y = _between(cand_y, coarse_y, iy)
    acc = _accuracy_grid(px, qy, w, pos, fine_x, fine_y)
    jx, jy = np.unravel_index(np.argmax(acc), acc.shape)
    # Bias convention: bit is sign(p.x + a), so a = -threshold.
    return -float(fine_x[jx]), -float(fine_y[jy])


def _between(cand: np.ndarray, coarse: np.ndarray, i: int) -> np.ndarray:
    lo = coarse[i - 1] if i > 0 else -np.inf
    hi = coarse[i + 1] if i + 1 < coarse.shape[0] else np.inf
    picked = cand[(cand >= lo) & (cand <= hi)]
    return picked if picked.shape[0] else coarse[i : i + 1]


def fit(data_x, data_y, pairs: PairBatch, m: int) -> CmsshModel:
    """Fit m bits with boosting over the cross-modal pairs.

    Initial weights are uniform over the pooled positive and negative pairs;
    incoming per-pair weights on the batch are ignored (boosting owns the
    weighting). Bits are accumulated in fit order.
    """
    if m < 1:
        raise InvalidValue(f"need at least one bit, got {m}")
    vx = as_matrix(getattr(data_x, "values", data_x), "data_x")
    vy = as_matrix(getattr(data_y, "values", data_y), "data_y")
    if len(pairs) == 0:
        raise InvalidValue("pair set is empty")
    pairs.check_bounds(vx.shape[0], vy.shape[0])

    n = len(pairs)
    w = np.full(n, 1.0 / n)
    rows_p, rows_q, biases_a, biases_b = [], [], [], []
    for _ in range(m):
        p, q, a, b = fit_bit(vx, vy, pairs, w)
        rows_p.append(p)
        rows_q.append(q)
        biases_a.append(a)
        biases_b.append(b)

        bits_x = (vx[pairs.idx_a] @ p + a) >= 0
        bits_y = (vy[pairs.idx_b] @ q + b) >= 0
        predicted_positive = bits_x == bits_y
        correct = predicted_positive == pairs.positive
        eps = float(w[~correct].sum())
        eps = min(max(eps, _EPS_FLOOR), 0.5)  # alpha >= 0: never downweight mistakes
        alpha = 0.5 * math.log((1.0 - eps) / eps)
        w = w * np.exp(np.where(correct, -alpha, alpha))
        w = w / w.sum()

    return CmsshModel(
        proj_x=np.vstack(rows_p),
        bias_x=np.array(biases_a),
        proj_y=np.vstack(rows_q),
        bias_y=np.array(biases_b),
    )


def hash_vector(model: CmsshModel, v, modality: str) -> HashCode:
    """Hash a single feature vector from modality "x" or "y"."""
    vec = as_vector(v, "input")
    proj, bias = _modality(model, modality)
    if vec.shape[0] != proj.shape[1]:
        raise DimensionMismatch(
            f"modality {modality!r} expects dimension {proj.shape[1]}, got {vec.shape[0]}"
        )
    return binarize(proj @ vec + bias)


def hash_batch(model: CmsshModel, values, modality: str) -> CodeMatrix:
    vals = as_matrix(getattr(values, "values", values), "features")
    proj, bias = _modality(model, modality)
    if vals.shape[1] != proj.shape[1]:
        raise DimensionMismatch(
            f"modality {modality!r} expects dimension {proj.shape[1]}, got {vals.shape[1]}"
        )
    return binarize_batch(vals @ proj.T + bias)


def _modality(model: CmsshModel, modality: str):
    if modality == "x":
        return model.proj_x, model.bias_x
    if modality == "y":
        return model.proj_y, model.bias_y
    raise InvalidValue(f"modality must be 'x' or 'y', got {modality!r}")
