"""Optimization of the combined contrastive objective over both networks.

Two optimizers are provided. The default is full-batch nonlinear conjugate
gradient (Polak-Ribiere, restarting to steepest descent whenever the PR
coefficient turns negative or the direction stops being a descent
direction) with a backtracking line search enforcing the sufficient
decrease condition with constant 1e-4, so the recorded loss trace is
non-increasing. The alternative is minibatch SGD with momentum over a
seeded permutation of the pooled pair sets.

Training stops when the relative loss decrease stays below `tolerance` for
5 consecutive epochs, or after `max_epochs`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .errors import InvalidValue, SamplingError, TrainingError
from .loss import LossConfig, PairBatch, PairSets, objective, _values
from .model import CoupledModel, model_from_vector, params_to_vector

__all__ = [
    "TrainConfig",
    "TrainReport",
    "train",
    "sample_pairs",
    "gradient_check",
    "write_trace_csv",
]

OPTIMIZERS = ("conjugate_gradient", "sgd")
_STALL_EPOCHS = 5  # consecutive small-decrease epochs before declaring convergence
_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "conjugate_gradient"
    max_epochs: int = 500
    learning_rate: float = 0.05  # SGD only
    momentum: float = 0.9  # SGD only
    batch_size: int = 128  # SGD only
    tolerance: float = 1e-6
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise InvalidValue(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.max_epochs < 1:
            raise InvalidValue("max_epochs must be at least 1")
        if self.tolerance <= 0:
            raise InvalidValue("tolerance must be positive")
        if self.optimizer == "sgd":
            if self.learning_rate <= 0:
                raise InvalidValue("learning_rate must be positive")
            if not 0 <= self.momentum < 1:
                raise InvalidValue("momentum must be in [0, 1)")
            if self.batch_size < 1:
                raise InvalidValue("batch_size must be at least 1")


@dataclass
class TrainReport:
    loss_trace: list = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False


def train(
    model: CoupledModel,
    data_x,
    data_y,
    sets: PairSets,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
):
    """Minimize the combined objective; returns (trained model, report).

    The returned model's loss never exceeds the initial model's. Raises
    TrainingError if every pair set is empty or the loss turns non-finite.
    """
    if sets.total_pairs() == 0:
        raise TrainingError("all six pair sets are empty; nothing to train on")
    loss_cfg.check_margins_for(model.m)
    vx = _values(data_x)
    vy = _values(data_y)
    sets.check_bounds(vx.shape[0], vy.shape[0])

    if train_cfg.optimizer == "conjugate_gradient":
        return _train_cg(model, vx, vy, sets, loss_cfg, train_cfg)
    return _train_sgd(model, vx, vy, sets, loss_cfg, train_cfg)


def _objective_parts(model, vx, vy, sets, cfg):
    value, gx, gy = objective(model, vx, vy, sets, cfg, with_gradient=True)
    grad = np.concatenate([gx.as_vector(), gy.as_vector()])
    return value, grad


def _train_cg(model, vx, vy, sets, loss_cfg, cfg):
    theta = params_to_vector(model)
    template = model

    def loss_at(vec):
        return objective(model_from_vector(vec, template), vx, vy, sets, loss_cfg)

    def loss_grad_at(vec):
        return _objective_parts(model_from_vector(vec, template), vx, vy, sets, loss_cfg)

    f, g = loss_grad_at(theta)
    if not math.isfinite(f):
        raise TrainingError("initial loss is not finite", epoch=1)

    report = TrainReport()
    direction = -g
    prev_step = None
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        gnorm = float(np.linalg.norm(g))
        if f == 0.0 or gnorm < 1e-15:
            report.loss_trace.append(f)
            report.epochs_run = epoch
            report.converged = True
            break

        slope = float(g @ direction)
        if slope >= 0:  # not a descent direction; restart
            direction = -g
            slope = -gnorm * gnorm
        step, f_new = _backtrack(loss_at, theta, direction, f, slope, prev_step)
        if step is None and direction is not None and not np.array_equal(direction, -g):
            direction = -g
            slope = -gnorm * gnorm
            step, f_new = _backtrack(loss_at, theta, direction, f, slope, prev_step)
        if step is None:
            # No decrease achievable along steepest descent: numerically done.
            report.loss_trace.append(f)
            report.epochs_run = epoch
            report.converged = True
            break

        theta = theta + step * direction
        prev_step = step
        f_prev, g_prev = f, g
        f, g = loss_grad_at(theta)
        if math.isnan(f) or math.isinf(f):
            raise TrainingError("loss is not finite", epoch=epoch)
        report.loss_trace.append(f)
        report.epochs_run = epoch

        # Polak-Ribiere with restart on a negative coefficient.
        denom = float(g_prev @ g_prev)
        beta = float(g @ (g - g_prev)) / denom if denom > 0 else 0.0
        if not math.isfinite(beta) or beta < 0:
            beta = 0.0
        direction = -g + beta * direction

        rel = (f_prev - f) / max(abs(f_prev), 1e-300)
        stall = stall + 1 if rel < cfg.tolerance else 0
        if stall >= _STALL_EPOCHS:
            report.converged = True
            break

    return model_from_vector(theta, template), report


def _backtrack(loss_at, theta, direction, f0, slope, prev_step):
    """Largest tried step satisfying f(theta + t d) <= f0 + c t slope."""
    if prev_step is not None:
        t = min(prev_step * 2.0, 1e6)
    else:
        dnorm = float(np.linalg.norm(direction))
        t = 1.0 / (1.0 + dnorm)
    for _ in range(_MAX_BACKTRACKS):
        f_try = loss_at(theta + t * direction)
        if math.isfinite(f_try) and f_try <= f0 + _ARMIJO_C * t * slope:
            return t, f_try
        t *= 0.5
    return None, None


def _pooled_sets(sets: PairSets):
    """Flatten the six sets into (tag, batch) entries with per-set loss scale
    applied later; tags select margin and which networks receive gradient."""
    return [
        ("x", sets.intra_x()),
        ("y", sets.intra_y()),
        ("xy", sets.cross()),
    ]


def _train_sgd(model, vx, vy, sets, loss_cfg, cfg):
    rng = substream(cfg.seed, "sgd-shuffle")
    theta = params_to_vector(model)
    template = model
    velocity = np.zeros_like(theta)

    groups = _pooled_sets(sets)
    tags = np.concatenate(
        [np.full(len(batch), gi, dtype=np.int64) for gi, (_, batch) in enumerate(groups)]
    )
    rows = np.concatenate(
        [np.arange(len(batch), dtype=np.int64) for _, batch in groups]
    )
    n_total = tags.shape[0]

    def batch_sets(sel_tags, sel_rows):
        picked = {}
        for gi, (tag, batch) in enumerate(groups):
            sel = sel_rows[sel_tags == gi]
            picked[tag] = batch.select(sel) if sel.size else PairBatch.empty()
        return PairSets(
            pos_x=picked["x"], neg_x=PairBatch.empty(),
            pos_y=picked["y"], neg_y=PairBatch.empty(),
            pos_xy=picked["xy"], neg_xy=PairBatch.empty(),
        )

    report = TrainReport()
    stall = 0
    f_prev = objective(model_from_vector(theta, template), vx, vy, sets, loss_cfg)
    if not math.isfinite(f_prev):
        raise TrainingError("initial loss is not finite", epoch=1)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_total)
        for start in range(0, n_total, cfg.batch_size):
            pick = order[start : start + cfg.batch_size]
            mini = batch_sets(tags[pick], rows[pick])
            _, grad = _objective_parts(
                model_from_vector(theta, template), vx, vy, mini, loss_cfg
            )
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            theta = theta + velocity
        f = objective(model_from_vector(theta, template), vx, vy, sets, loss_cfg)
        if math.isnan(f) or math.isinf(f):
            raise TrainingError("loss is not finite", epoch=epoch)
        report.loss_trace.append(f)
        report.epochs_run = epoch
        rel = (f_prev - f) / max(abs(f_prev), 1e-300)
        stall = stall + 1 if rel < cfg.tolerance else 0
        f_prev = f
        if stall >= _STALL_EPOCHS:
            report.converged = True
            break
    return model_from_vector(theta, template), report


def _label_words(label_sets, vocab):
    """Bitmask rows (one uint64 word group per sample) for fast intersection."""
    n_words = max(1, (len(vocab) + 63) // 64)
    out = np.zeros((len(label_sets), n_words), dtype=np.uint64)
    for i, labels in enumerate(label_sets):
        for lab in labels:
            bit = vocab[lab]
            out[i, bit // 64] |= np.uint64(1) << np.uint64(bit % 64)
    return out


def _intersects(words_a, words_b):
    return np.bitwise_and(words_a, words_b).any(axis=-1)


def _polarity_exists(words_a, words_b, want_positive, forbid_same_index):
    n_a = words_a.shape[0]
    for i in range(n_a):
        hits = _intersects(words_a[i], words_b)
        if not want_positive:
            hits = ~hits
        if forbid_same_index and i < hits.shape[0]:
            hits[i] = False
        if hits.any():
            return True
    return False


def sample_pairs(
    labels_a,
    labels_b,
    n_pos: int,
    n_neg: int,
    seed: int = 0,
    forbid_same_index: bool = False,
) -> PairBatch:
    """Draw exactly n_pos positive and n_neg negative index pairs.

    A pair is positive when its label sets intersect, negative when they are
    disjoint. Pairs are drawn uniformly with replacement and routed by
    polarity until both quotas fill; the draw sequence is deterministic for
    a given seed. Raises SamplingError when a requested polarity does not
    exist at all (e.g. negatives when every sample shares a class).
    """
    if n_pos < 0 or n_neg < 0:
        raise InvalidValue("pair counts must be non-negative")
    labels_a = [frozenset(s) for s in labels_a]
    labels_b = [frozenset(s) for s in labels_b]
    if not labels_a or not labels_b:
        raise SamplingError("label lists must be non-empty")
    vocab = {lab: i for i, lab in enumerate(sorted(set().union(*labels_a, *labels_b)))}
    words_a = _label_words(labels_a, vocab)
    words_b = _label_words(labels_b, vocab)

    for want_pos, count, name in ((True, n_pos, "positive"), (False, n_neg, "negative")):
        if count > 0 and not _polarity_exists(words_a, words_b, want_pos, forbid_same_index):
            raise SamplingError(f"no {name} pair exists for these labels")

    rng = substream(seed, "pair-sampling")
    n_a, n_b = len(labels_a), len(labels_b)
    pos_a, pos_b, neg_a, neg_b = [], [], [], []
    got_pos = got_neg = 0
    draws = 0
    max_draws = max(1_000_000, 2_000 * (n_pos + n_neg))
    chunk = max(1024, 4 * (n_pos + n_neg))
    while got_pos < n_pos or got_neg < n_neg:
        if draws >= max_draws:
            raise SamplingError(
                f"could not draw the requested pairs within {max_draws} attempts "
                f"(accepted {got_pos} positives, {got_neg} negatives)"
            )
        ia = rng.integers(0, n_a, size=chunk)
        ib = rng.integers(0, n_b, size=chunk)
        draws += chunk
        ok = np.ones(chunk, dtype=bool)
        if forbid_same_index:
            ok &= ia != ib
        positive = _intersects(words_a[ia], words_b[ib])
        take_pos = ok & positive
        take_neg = ok & ~positive
        if got_pos < n_pos:
            sel = np.flatnonzero(take_pos)[: n_pos - got_pos]
            pos_a.append(ia[sel])
            pos_b.append(ib[sel])
            got_pos += sel.size
        if got_neg < n_neg:
            sel = np.flatnonzero(take_neg)[: n_neg - got_neg]
            neg_a.append(ia[sel])
            neg_b.append(ib[sel])
            got_neg += sel.size

    idx_a = np.concatenate(pos_a + neg_a) if (n_pos + n_neg) else np.zeros(0, np.int64)
    idx_b = np.concatenate(pos_b + neg_b) if (n_pos + n_neg) else np.zeros(0, np.int64)
    positive = np.zeros(n_pos + n_neg, dtype=bool)
    positive[:n_pos] = True
    return PairBatch(idx_a, idx_b, positive)


def gradient_check(
    model: CoupledModel,
    data_x,
    data_y,
    sets: PairSets,
    loss_cfg: LossConfig,
    step: float = 1e-6,
    boundary_tol: float = 1e-4,
) -> float:
    """Max relative disagreement between analytic and central-difference
    gradients, over every parameter of both networks.

    Negative pairs sitting within `boundary_tol` of their hinge boundary are
    dropped first (the loss is not differentiable there), as are negative
    pairs with near-zero embedding distance, where the square root makes
    central differences unreliable.
    """
    if step <= 0:
        raise InvalidValue("step must be positive")
    vx = _values(data_x)
    vy = _values(data_y)
    sets = _drop_boundary_pairs(model, vx, vy, sets, loss_cfg, boundary_tol)

    theta = params_to_vector(model)
    template = model
    _, analytic = _objective_parts(model, vx, vy, sets, loss_cfg)

    def loss_at(vec):
        return objective(model_from_vector(vec, template), vx, vy, sets, loss_cfg)

    worst = 0.0
    for i in range(theta.shape[0]):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        f_plus = loss_at(bumped)
        bumped[i] = theta[i] - step
        f_minus = loss_at(bumped)
        fd = (f_plus - f_minus) / (2.0 * step)
        err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def _drop_boundary_pairs(model, vx, vy, sets, cfg, tol):
    from .model import forward_batch  # local import to keep module top light

    emb_x, _ = forward_batch(model.net_x, vx)
    emb_y, _ = forward_batch(model.net_y, vy)
    near_zero = max(tol, 1e-3)

    def keep(batch, emb_a, emb_b, margin):
        if len(batch) == 0:
            return batch
        d = emb_a[batch.idx_a] - emb_b[batch.idx_b]
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        bad = (~batch.positive) & (
            (np.abs(dist - margin) <= tol) | (dist <= near_zero)
        )
        return batch.select(~bad)

    return PairSets(
        pos_x=keep(sets.pos_x, emb_x, emb_x, cfg.margin_x),
        neg_x=keep(sets.neg_x, emb_x, emb_x, cfg.margin_x),
        pos_y=keep(sets.pos_y, emb_y, emb_y, cfg.margin_y),
        neg_y=keep(sets.neg_y, emb_y, emb_y, cfg.margin_y),
        pos_xy=keep(sets.pos_xy, emb_x, emb_y, cfg.margin_xy),
        neg_xy=keep(sets.neg_xy, emb_x, emb_y, cfg.margin_xy),
    )


def write_trace_csv(path, trace) -> None:
    """Per-epoch loss trace as `epoch,loss` rows."""
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, value in enumerate(trace, start=1):
            fh.write("%d,%.17g\n" % (i, value))
