"""Embedding networks, one per modality, mapping feature vectors into a
shared m-dimensional space whose binarization yields the hash codes.

A network is a stack of affine layers with a tanh(beta * z) activation, the
smooth stand-in for the sign function; sharper beta pushes outputs toward
the +-1 corners. beta = inf is accepted as a sentinel meaning a hard sign
activation (used when linear baseline models are stored in the same file
format); such layers cannot be differentiated.

Networks are treated as immutable value objects: the trainer produces new
networks rather than mutating existing ones, so forward/backward are safe
to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import substream_seed
from .errors import DimensionMismatch, FormatError, InvalidValue
from .numkernel import as_matrix, as_vector

__all__ = [
    "Layer",
    "EmbeddingNet",
    "CoupledModel",
    "ParameterGradient",
    "forward",
    "forward_batch",
    "backward",
    "backward_batch",
    "init_random",
    "init_coupled",
    "save_model",
    "load_model",
    "params_to_vector",
    "model_from_vector",
]

MODEL_MAGIC = "MMHM1"
DEFAULT_HIDDEN = 128  # hidden width used when a two-layer net is requested
_FLOAT_FMT = "%.17g"


@dataclass(eq=False)
class Layer:
    """Affine map plus tanh(beta * z) activation."""

    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    beta: float = 1.0

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "layer weights")
        self.bias = as_vector(self.bias, "layer bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionMismatch(
                f"layer has {self.weights.shape[0]} output rows "
                f"but bias of length {self.bias.shape[0]}"
            )
        self.beta = float(self.beta)
        if math.isnan(self.beta) or self.beta <= 0:
            raise InvalidValue(f"layer beta must be positive, got {self.beta}")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def activate(self, z: np.ndarray) -> np.ndarray:
        if math.isinf(self.beta):
            return np.sign(z)
        return np.tanh(self.beta * z)


@dataclass(eq=False)
class EmbeddingNet:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidValue("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise DimensionMismatch(
                    f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)


@dataclass(eq=False)
class CoupledModel:
    """Two embedding networks sharing the output width m."""

    net_x: EmbeddingNet
    net_y: EmbeddingNet

    def __post_init__(self):
        if self.net_x.output_dim != self.net_y.output_dim:
            raise DimensionMismatch(
                f"networks disagree on hash length: "
                f"{self.net_x.output_dim} vs {self.net_y.output_dim}"
            )

    @property
    def m(self) -> int:
        return self.net_x.output_dim


@dataclass(eq=False)
class ParameterGradient:
    """Per-layer weight/bias gradients, shaped exactly like the network."""

    weights: list
    biases: list

    def as_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def zeros_like(cls, net: EmbeddingNet) -> "ParameterGradient":
        return cls(
            weights=[np.zeros_like(l.weights) for l in net.layers],
            biases=[np.zeros_like(l.bias) for l in net.layers],
        )

    def add_scaled(self, other: "ParameterGradient", scale: float) -> None:
        for w, ow in zip(self.weights, other.weights):
            w += scale * ow
        for b, ob in zip(self.biases, other.biases):
            b += scale * ob


def forward(net: EmbeddingNet, x) -> np.ndarray:
    """Embed a single feature vector; every output entry lies in (-1, 1)
    for finite beta."""
    v = as_vector(x, "input")
    out, _ = forward_batch(net, v[None, :])
    return out[0]


def forward_batch(net: EmbeddingNet, xs: np.ndarray):
    """Embed a batch of row vectors.

    Returns (outputs, caches) where caches holds the input and every
    post-activation layer output, as needed by backward_batch.
    """
    h = np.asarray(xs, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionMismatch(f"batch input must be 2-d, got shape {h.shape}")
    if h.shape[1] != net.input_dim:
        raise DimensionMismatch(
            f"network expects input width {net.input_dim}, got {h.shape[1]}"
        )
    caches = [h]
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        h = layer.activate(z)
        caches.append(h)
    return h, caches


def backward(net: EmbeddingNet, x, upstream) -> ParameterGradient:
    """Gradient of upstream . forward(net, x) with respect to all parameters."""
    v = as_vector(x, "input")
    u = as_vector(upstream, "upstream")
    if u.shape[0] != net.output_dim:
        raise DimensionMismatch(
            f"upstream has length {u.shape[0]}, network outputs {net.output_dim}"
        )
    _, caches = forward_batch(net, v[None, :])
    return backward_batch(net, caches, u[None, :])


def backward_batch(net: EmbeddingNet, caches, upstream: np.ndarray) -> ParameterGradient:
    """Backpropagate a batch of upstream signals through cached activations.

    The result accumulates over the batch: entry (i, j) of each weight
    gradient is sum_n upstream[n] . d out[n] / d w_ij.
    """
    u = np.asarray(upstream, dtype=np.float64)
    n_layers = len(net.layers)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        layer = net.layers[k]
        if math.isinf(layer.beta):
            raise InvalidValue("hard-sign layers (beta=inf) are not differentiable")
        h_out = caches[k + 1]
        h_in = caches[k]
        # d tanh(beta z)/dz = beta (1 - tanh^2)
        dz = u * (layer.beta * (1.0 - h_out * h_out))
        grads_w[k] = dz.T @ h_in
        grads_b[k] = dz.sum(axis=0)
        if k > 0:
            u = dz @ layer.weights
    return ParameterGradient(weights=grads_w, biases=grads_b)


def init_random(dims, beta: float = 1.0, seed: int = 0) -> EmbeddingNet:
    """Network with weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    and zero biases; deterministic for a given seed."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise InvalidValue("dims must list at least input and output widths")
    if any(d <= 0 for d in dims):
        raise InvalidValue(f"layer widths must be positive, got {dims}")
    rng = np.random.default_rng(substream_seed(seed, "net-init"))
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(weights=w, bias=np.zeros(fan_out), beta=beta))
    return EmbeddingNet(layers=tuple(layers))


def init_coupled(
    dim_x: int,
    dim_y: int,
    m: int,
    n_layers: int = 1,
    hidden: int = DEFAULT_HIDDEN,
    beta: float = 1.0,
    seed: int = 0,
) -> CoupledModel:
    """Random coupled model; two-layer nets get `hidden` units in between."""
    if n_layers not in (1, 2):
        raise InvalidValue(f"supported depths are 1 and 2, got {n_layers}")
    dims_x = [dim_x, m] if n_layers == 1 else [dim_x, hidden, m]
    dims_y = [dim_y, m] if n_layers == 1 else [dim_y, hidden, m]
    return CoupledModel(
        net_x=init_random(dims_x, beta=beta, seed=substream_seed(seed, "init-x")),
        net_y=init_random(dims_y, beta=beta, seed=substream_seed(seed, "init-y")),
    )


def params_to_vector(model: CoupledModel) -> np.ndarray:
    parts = []
    for net in (model.net_x, model.net_y):
        for layer in net.layers:
            parts.append(layer.weights.ravel())
            parts.append(layer.bias)
    return np.concatenate(parts)


def model_from_vector(vec: np.ndarray, like: CoupledModel) -> CoupledModel:
    """Rebuild a model with `like`'s architecture from a flat parameter vector."""
    vec = np.asarray(vec, dtype=np.float64)
    nets = []
    offset = 0
    for net in (like.net_x, like.net_y):
        layers = []
        for layer in net.layers:
            n_w = layer.weights.size
            w = vec[offset : offset + n_w].reshape(layer.weights.shape).copy()
            offset += n_w
            n_b = layer.bias.size
            b = vec[offset : offset + n_b].copy()
            offset += n_b
            layers.append(Layer(weights=w, bias=b, beta=layer.beta))
        nets.append(EmbeddingNet(layers=tuple(layers)))
    if offset != vec.size:
        raise DimensionMismatch(
            f"parameter vector has {vec.size} entries, model needs {offset}"
        )
    return CoupledModel(net_x=nets[0], net_y=nets[1])


def _format_floats(values) -> str:
    return " ".join(_FLOAT_FMT % v for v in values)


def save_model(path, model: CoupledModel) -> None:
    """Write the MMHM1 text format; floats carry 17 significant digits so a
    round-trip reproduces the model bit for bit."""
    lines = [
        f"{MODEL_MAGIC} {len(model.net_x.layers)} {len(model.net_y.layers)} {model.m}"
    ]
    for net in (model.net_x, model.net_y):
        for layer in net.layers:
            lines.append(
                f"LAYER {layer.out_dim} {layer.in_dim} {_FLOAT_FMT % layer.beta}"
            )
            for row in layer.weights:
                lines.append(_format_floats(row))
            lines.append(_format_floats(layer.bias))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> CoupledModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty model file", path=path, line=1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != MODEL_MAGIC:
        raise FormatError(f"expected '{MODEL_MAGIC} <nx> <ny> <m>' header", path=path, line=1)
    try:
        n_x, n_y, m = (int(t) for t in header[1:])
    except ValueError:
        raise FormatError("non-integer layer counts in header", path=path, line=1)

    pos = 1

    def read_layer():
        nonlocal pos
        if pos >= len(lines):
            raise FormatError("unexpected end of file", path=path, line=len(lines))
        head = lines[pos].split()
        if len(head) != 4 or head[0] != "LAYER":
            raise FormatError("expected 'LAYER <out> <in> <beta>'", path=path, line=pos + 1)
        try:
            out_dim, in_dim = int(head[1]), int(head[2])
            beta = float(head[3])
        except ValueError:
            raise FormatError("malformed LAYER header", path=path, line=pos + 1)
        pos += 1
        rows = []
        for r in range(out_dim):
            if pos >= len(lines):
                raise FormatError("missing weight rows", path=path, line=len(lines))
            vals = lines[pos].split()
            if len(vals) != in_dim:
                raise FormatError(
                    f"expected {in_dim} weights, found {len(vals)}", path=path, line=pos + 1
                )
            try:
                rows.append([float(t) for t in vals])
            except ValueError:
                raise FormatError("non-numeric weight", path=path, line=pos + 1)
            pos += 1
        if pos >= len(lines):
            raise FormatError("missing bias line", path=path, line=len(lines))
        vals = lines[pos].split()
        if len(vals) != out_dim:
            raise FormatError(
                f"expected {out_dim} biases, found {len(vals)}", path=path, line=pos + 1
            )
        try:
            bias = [float(t) for t in vals]
        except ValueError:
            raise FormatError("non-numeric bias", path=path, line=pos + 1)
        pos += 1
        return Layer(weights=np.array(rows), bias=np.array(bias), beta=beta)

    net_x = EmbeddingNet(layers=tuple(read_layer() for _ in range(n_x)))
    net_y = EmbeddingNet(layers=tuple(read_layer() for _ in range(n_y)))
    model = CoupledModel(net_x=net_x, net_y=net_y)
    if model.m != m:
        raise FormatError(
            f"header declares m={m} but networks output {model.m}", path=path, line=1
        )
    return model
