"""Feature matrices, label I/O, pair-set construction, and the synthetic
two-modality benchmarks used in place of real feature pipelines.

On-disk formats (all text, versioned by a magic token):

  features  MMHF1 <n_samples> <dim>    one sample per line, space-separated
  labels    MMHL1 <n_samples>          one line per sample with its label
                                       set as comma-separated non-negative
                                       integers (may be empty: no labels)

Floats are written with 17 significant digits, so save/load round-trips
are bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import substream, substream_seed
from .errors import FormatError, InvalidValue
from .loss import PairSets
from .trainer import sample_pairs

__all__ = [
    "FeatureMatrix",
    "SyntheticSpec",
    "ShellSpec",
    "load",
    "save",
    "load_features",
    "save_features",
    "load_labels",
    "save_labels",
    "synthesize",
    "synthesize_shells",
    "build_pairsets",
]

FEATURES_MAGIC = "MMHF1"
LABELS_MAGIC = "MMHL1"
_FLOAT_FMT = "%.17g"


@dataclass(eq=False)
class FeatureMatrix:
    """Samples-by-dimensions matrix for one modality, with optional
    per-sample label sets."""

    values: np.ndarray
    labels: list | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidValue(f"feature matrix must be 2-d, got shape {v.shape}")
        if v.size and not np.all(np.isfinite(v)):
            raise InvalidValue("feature matrix contains non-finite entries")
        self.values = v
        if self.labels is not None:
            self.labels = [frozenset(int(x) for x in s) for s in self.labels]
            if len(self.labels) != v.shape[0]:
                raise InvalidValue(
                    f"{len(self.labels)} label sets for {v.shape[0]} samples"
                )

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-cluster benchmark: one cluster per class in each modality.

    Class centers are standard normal scaled by 5 * cluster_spread, samples
    are center + cluster_spread * noise, so inter-class separation dominates
    the intra-class spread at any spread. With probability
    1 - cross_modal_consistency a sample's second-modality class is
    resampled uniformly, simulating noisy cross-modal correspondence.
    """

    n_classes: int
    samples_per_class: int
    dim_x: int
    dim_y: int
    cluster_spread: float = 0.2
    cross_modal_consistency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidValue("need at least 2 classes")
        if self.samples_per_class < 1:
            raise InvalidValue("need at least 1 sample per class")
        if self.dim_x < 2 or self.dim_y < 2:
            raise InvalidValue("feature dimensions must be at least 2")
        if self.cluster_spread < 0 or not math.isfinite(self.cluster_spread):
            raise InvalidValue("cluster_spread must be non-negative")
        if not 0.0 <= self.cross_modal_consistency <= 1.0:
            raise InvalidValue("cross_modal_consistency must be in [0, 1]")


@dataclass(frozen=True)
class ShellSpec:
    """Concentric-shell benchmark: class c sits on a sphere of radius
    (c + 1) * radius_step, plus shell_width noise. The classes are not
    linearly separable in either modality."""

    n_classes: int
    samples_per_class: int
    dim_x: int
    dim_y: int
    radius_step: float = 1.0
    shell_width: float = 0.1
    cross_modal_consistency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidValue("need at least 2 classes")
        if self.samples_per_class < 1:
            raise InvalidValue("need at least 1 sample per class")
        if self.dim_x < 2 or self.dim_y < 2:
            raise InvalidValue("feature dimensions must be at least 2")
        if self.radius_step <= 0 or self.shell_width < 0:
            raise InvalidValue("radius_step must be positive, shell_width non-negative")
        if not 0.0 <= self.cross_modal_consistency <= 1.0:
            raise InvalidValue("cross_modal_consistency must be in [0, 1]")


def _class_assignments(n_classes, samples_per_class, consistency, seed):
    """Index-aligned class ids for both modalities; the second modality's id
    is resampled uniformly with probability 1 - consistency."""
    n = n_classes * samples_per_class
    cls_x = np.repeat(np.arange(n_classes), samples_per_class)
    rng = substream(seed, "synth-assign")
    cls_y = cls_x.copy()
    resample = rng.random(n) >= consistency if consistency < 1.0 else np.zeros(n, bool)
    cls_y[resample] = rng.integers(0, n_classes, size=int(resample.sum()))
    return cls_x, cls_y


def synthesize(spec: SyntheticSpec):
    """Generate the Gaussian-cluster benchmark; returns (features_x,
    features_y) with singleton label sets attached. Deterministic per seed."""
    rng_centers = substream(spec.seed, "synth-centers")
    rng_noise = substream(spec.seed, "synth-noise")
    cls_x, cls_y = _class_assignments(
        spec.n_classes, spec.samples_per_class, spec.cross_modal_consistency, spec.seed
    )
    n = cls_x.shape[0]
    scale = 5.0 * spec.cluster_spread
    centers_x = scale * rng_centers.standard_normal((spec.n_classes, spec.dim_x))
    centers_y = scale * rng_centers.standard_normal((spec.n_classes, spec.dim_y))
    x = centers_x[cls_x] + spec.cluster_spread * rng_noise.standard_normal((n, spec.dim_x))
    y = centers_y[cls_y] + spec.cluster_spread * rng_noise.standard_normal((n, spec.dim_y))
    return (
        FeatureMatrix(x, labels=[{c} for c in cls_x]),
        FeatureMatrix(y, labels=[{c} for c in cls_y]),
    )


def synthesize_shells(spec: ShellSpec):
    """Generate the concentric-shell benchmark; same conventions as
    synthesize()."""
    rng_noise = substream(spec.seed, "shell-noise")
    cls_x, cls_y = _class_assignments(
        spec.n_classes, spec.samples_per_class, spec.cross_modal_consistency, spec.seed
    )
    n = cls_x.shape[0]
    radii = spec.radius_step * (np.arange(spec.n_classes) + 1.0)

    def shell_points(cls, dim):
        dirs = rng_noise.standard_normal((n, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = radii[cls][:, None] * dirs
        return pts + spec.shell_width * rng_noise.standard_normal((n, dim))

    x = shell_points(cls_x, spec.dim_x)
    y = shell_points(cls_y, spec.dim_y)
    return (
        FeatureMatrix(x, labels=[{c} for c in cls_x]),
        FeatureMatrix(y, labels=[{c} for c in cls_y]),
    )


def build_pairsets(labels_x, labels_y, sizes, seed: int = 0) -> PairSets:
    """Sample the six supervision sets.

    `sizes` is (pos_x, neg_x, pos_y, neg_y, pos_xy, neg_xy). Intra-modal
    sampling never pairs a sample with itself; cross-modal sampling may use
    equal indices (those are distinct objects in different spaces).
    Deterministic per seed.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 6:
        raise InvalidValue(f"sizes must have six entries, got {len(sizes)}")
    batch_x = sample_pairs(
        labels_x, labels_x, sizes[0], sizes[1],
        seed=substream_seed(seed, "pairs-x"), forbid_same_index=True,
    )
    batch_y = sample_pairs(
        labels_y, labels_y, sizes[2], sizes[3],
        seed=substream_seed(seed, "pairs-y"), forbid_same_index=True,
    )
    batch_xy = sample_pairs(
        labels_x, labels_y, sizes[4], sizes[5],
        seed=substream_seed(seed, "pairs-xy"),
    )
    return PairSets(
        pos_x=batch_x.select(batch_x.positive),
        neg_x=batch_x.select(~batch_x.positive),
        pos_y=batch_y.select(batch_y.positive),
        neg_y=batch_y.select(~batch_y.positive),
        pos_xy=batch_xy.select(batch_xy.positive),
        neg_xy=batch_xy.select(~batch_xy.positive),
    )


def save_features(path, features: FeatureMatrix) -> None:
    with open(path, "w") as fh:
        fh.write(f"{FEATURES_MAGIC} {features.n_samples} {features.dim}\n")
        for row in features.values:
            fh.write(" ".join(_FLOAT_FMT % v for v in row))
            fh.write("\n")


def load_features(path) -> FeatureMatrix:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty feature file", path=path, line=1)
    header = lines[0].split()
    if len(header) != 3 or header[0] != FEATURES_MAGIC:
        raise FormatError(
            f"expected '{FEATURES_MAGIC} <n_samples> <dim>' header", path=path, line=1
        )
    try:
        n, dim = int(header[1]), int(header[2])
    except ValueError:
        raise FormatError("non-integer sample count or dimension", path=path, line=1)
    if n < 0 or dim < 1:
        raise FormatError(f"invalid shape {n}x{dim}", path=path, line=1)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise FormatError(
            f"header declares {n} samples but file has {len(body)} rows",
            path=path,
            line=min(len(lines), n + 1),
        )
    values = np.empty((n, dim))
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != dim:
            raise FormatError(
                f"expected {dim} values, found {len(parts)}", path=path, line=i + 2
            )
        try:
            row = np.array([float(t) for t in parts])
        except ValueError:
            raise FormatError("non-numeric feature value", path=path, line=i + 2)
        if not np.all(np.isfinite(row)):
            raise FormatError("non-finite feature value", path=path, line=i + 2)
        values[i] = row
    return FeatureMatrix(values)


def save_labels(path, labels) -> None:
    labels = [sorted(int(x) for x in s) for s in labels]
    with open(path, "w") as fh:
        fh.write(f"{LABELS_MAGIC} {len(labels)}\n")
        for s in labels:
            fh.write(",".join(str(x) for x in s))
            fh.write("\n")


def load_labels(path) -> list:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty label file", path=path, line=1)
    header = lines[0].split()
    if len(header) != 2 or header[0] != LABELS_MAGIC:
        raise FormatError(f"expected '{LABELS_MAGIC} <n_samples>' header", path=path, line=1)
    try:
        n = int(header[1])
    except ValueError:
        raise FormatError("non-integer sample count", path=path, line=1)
    body = lines[1:]
    if len(body) < n:
        raise FormatError(
            f"header declares {n} samples but file has {len(body)} label lines",
            path=path,
            line=len(lines),
        )
    out = []
    for i in range(n):
        text = body[i].strip()
        if not text:
            out.append(frozenset())
            continue
        try:
            values = [int(t) for t in text.split(",")]
        except ValueError:
            raise FormatError("non-integer label", path=path, line=i + 2)
        if any(v < 0 for v in values):
            raise FormatError("labels must be non-negative", path=path, line=i + 2)
        out.append(frozenset(values))
    return out


def load(path, labels_path=None) -> FeatureMatrix:
    """Load features, optionally attaching labels from a sidecar file."""
    features = load_features(path)
    if labels_path is not None:
        labels = load_labels(labels_path)
        if len(labels) != features.n_samples:
            raise FormatError(
                f"label file has {len(labels)} entries for {features.n_samples} samples",
                path=labels_path,
            )
        features.labels = labels
    return features


def save(path, features: FeatureMatrix, labels_path=None) -> None:
    """Save features, and labels too when a sidecar path is given."""
    save_features(path, features)
    if labels_path is not None:
        if features.labels is None:
            raise InvalidValue("feature matrix has no labels to save")
        save_labels(labels_path, features.labels)
