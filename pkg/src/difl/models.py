"""The three networks: feature generator, label classifier, and domain
discriminator.

A network is described by a NetworkSpec, a small declarative chain of layer
tokens, so the backbone can be swapped from config without touching code:

    conv:8x3s1   2-d convolution, 8 output channels, 3x3 kernel, stride 1
    maxpool2     2x2 max pooling, stride 2
    relu         elementwise rectifier
    flatten      collapse (C, H, W) features to a vector
    dense:64     affine layer with 64 outputs
    sigmoid      elementwise logistic

The generator maps an image to a fixed-width feature vector; the classifier
and the discriminator each map that vector to a single probability. Weights
are initialized from U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases at zero,
deterministically per seed.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

GENERATOR = "generator"
CLASSIFIER = "classifier"
DISCRIMINATOR = "discriminator"
ROLES = (GENERATOR, CLASSIFIER, DISCRIMINATOR)

CHECKPOINT_VERSION = 1

_CONV = re.compile(r"^conv:(\d+)x(\d+)s(\d+)$")
_DENSE = re.compile(r"^dense:(\d+)$")
_SIMPLE = ("relu", "sigmoid", "maxpool2", "flatten", "l2norm")


def _layer_out_shape(token, shape, where):
    m = _CONV.match(token)
    if m:
        cout, ksz, stride = (int(v) for v in m.groups())
        if cout < 1 or ksz < 1 or stride < 1:
            raise ShapeError(f"{where}: non-positive extent in {token!r}")
        if len(shape) != 3:
            raise ShapeError(f"{where}: conv needs (C, H, W) input, got {shape}")
        c, h, w = shape
        if ksz > h or ksz > w:
            raise ShapeError(f"{where}: kernel {ksz} exceeds input {h}x{w}")
        return (cout, (h - ksz) // stride + 1, (w - ksz) // stride + 1)
    m = _DENSE.match(token)
    if m:
        width = int(m.group(1))
        if width < 1:
            raise ShapeError(f"{where}: non-positive width in {token!r}")
        if len(shape) != 1:
            raise ShapeError(f"{where}: dense needs a vector input, got {shape}"
                             " (missing flatten?)")
        return (width,)
    if token == "maxpool2":
        if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
            raise ShapeError(f"{where}: maxpool2 needs (C, H>=2, W>=2), got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if token == "flatten":
        if len(shape) < 2:
            raise ShapeError(f"{where}: flatten needs a multi-axis input, got {shape}")
        n = 1
        for e in shape:
            n *= e
        return (n,)
    if token == "l2norm":
        if len(shape) != 1:
            raise ShapeError(f"{where}: l2norm needs a vector input, got {shape}")
        return shape
    if token in ("relu", "sigmoid"):
        return shape
    raise ConfigError(f"{where}: unrecognized layer token {token!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer chain for one network role.

    in_shape is (channels, height, width) for image input or (features,)
    for the vector-input heads. Construction validates the whole chain and
    raises ShapeError naming the offending layer.
    """

    role: str
    layers: tuple[str, ...]
    in_shape: tuple[int, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown network role {self.role!r}")
        object.__setattr__(self, "layers", tuple(str(t) for t in self.layers))
        object.__setattr__(self, "in_shape", tuple(int(e) for e in self.in_shape))
        if not self.layers:
            raise ConfigError(f"{self.role}: empty layer chain")
        if any(e < 1 for e in self.in_shape):
            raise ShapeError(f"{self.role}: bad input shape {self.in_shape}")
        out = self.out_shape()
        if self.role == GENERATOR:
            if len(out) != 1:
                raise ShapeError(
                    f"generator must end in a feature vector, got shape {out}")
        else:
            if out != (1,) or self.layers[-1] != "sigmoid":
                raise ShapeError(
                    f"{self.role} must end in a single sigmoid unit, got "
                    f"{self.layers[-1]!r} with shape {out}")

    def out_shape(self):
        shape = self.in_shape
        for i, token in enumerate(self.layers):
            shape = _layer_out_shape(token, shape, f"{self.role} layer {i}")
        return shape

    @property
    def feature_width(self):
        out = self.out_shape()
        n = 1
        for e in out:
            n *= e
        return n


@dataclass(frozen=True)
class ModelSpec:
    """Specs for the full generator / classifier / discriminator triple."""

    generator: NetworkSpec
    classifier: NetworkSpec
    discriminator: NetworkSpec

    def __post_init__(self):
        f = self.generator.feature_width
        for head in (self.classifier, self.discriminator):
            if head.in_shape != (f,):
                raise ShapeError(
                    f"{head.role} input {head.in_shape} does not match "
                    f"generator feature width {f}")


def default_model_spec(extent=64, feature_width=64):
    """The desk-scale backbone used throughout: two conv/pool stages and a
    dense feature layer, with 32-unit heads."""
    gen = NetworkSpec(GENERATOR, (
        "conv:8x3s1", "relu", "maxpool2",
        "conv:16x3s1", "relu", "maxpool2",
        "flatten", f"dense:{feature_width}", "relu", "l2norm",
    ), (1, extent, extent))
    head = ("dense:32", "relu", "dense:1", "sigmoid")
    return ModelSpec(
        gen,
        NetworkSpec(CLASSIFIER, head, (feature_width,)),
        NetworkSpec(DISCRIMINATOR, head, (feature_width,)),
    )


@dataclass
class Parameters:
    """Ordered named weight / bias arrays for one network."""

    spec: NetworkSpec
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self):
        return Parameters(self.spec, {n: v.copy() for n, v in self.values.items()})

    def bitwise_equal(self, other):
        if self.spec != other.spec or list(self.values) != list(other.values):
            return False
        return all(self.values[n].tobytes() == other.values[n].tobytes()
                   for n in self.values)

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.values.values())

    def count(self):
        return sum(v.size for v in self.values.values())


def build(spec, seed):
    """Initialize parameters for ``spec``, deterministically from ``seed``.

    Weights are drawn layer by layer in chain order from
    U(-sqrt(6/fan_in), +sqrt(6/fan_in)); fan_in for a conv layer is
    in_channels * kh * kw. Biases start at zero.
    """
    rng = np.random.default_rng(int(seed))
    values = {}
    shape = spec.in_shape
    for i, token in enumerate(spec.layers):
        m = _CONV.match(token)
        if m:
            cout, ksz, _ = (int(v) for v in m.groups())
            cin = shape[0]
            bound = math.sqrt(6.0 / (cin * ksz * ksz))
            values[f"{i}.w"] = rng.uniform(-bound, bound, (cout, cin, ksz, ksz))
            values[f"{i}.b"] = np.zeros(cout)
        else:
            m = _DENSE.match(token)
            if m:
                width = int(m.group(1))
                fan_in = shape[0]
                bound = math.sqrt(6.0 / fan_in)
                values[f"{i}.w"] = rng.uniform(-bound, bound, (fan_in, width))
                values[f"{i}.b"] = np.zeros(width)
        shape = _layer_out_shape(token, shape, f"{spec.role} layer {i}")
    return Parameters(spec, values)


def as_leaves(params, graph):
    """Register every parameter array as a needs-grad leaf of ``graph``."""
    return {name: graph.leaf(v) for name, v in params.values.items()}


def _const_weights(params):
    # inference path: wrap without copying; forward never mutates
    return {name: ad.Tensor(v) for name, v in params.values.items()}


def apply_network(spec, weights, x):
    """Run the layer chain on tensor ``x`` using ``weights`` (a mapping of
    parameter name to Tensor, as produced by as_leaves)."""
    h = x
    for i, token in enumerate(spec.layers):
        m = _CONV.match(token)
        if m:
            stride = int(m.group(3))
            h = ad.bias_add(ad.conv2d(h, weights[f"{i}.w"], stride), weights[f"{i}.b"])
        elif _DENSE.match(token):
            h = ad.dense(h, weights[f"{i}.w"], weights[f"{i}.b"])
        elif token == "relu":
            h = ad.relu(h)
        elif token == "sigmoid":
            h = ad.sigmoid(h)
        elif token == "maxpool2":
            h = ad.max_pool2(h)
        elif token == "flatten":
            h = ad.flatten(h)
        elif token == "l2norm":
            h = ad.row_l2norm(h)
        else:
            raise ConfigError(f"unrecognized layer token {token!r}")
    return h


def _input_tensor(x, graph):
    if isinstance(x, ad.Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if graph is not None:
        return graph.leaf(arr, needs_grad=False)
    return ad.tensor(arr)


def _check_image_input(x, spec):
    if x.data.ndim != 4 or x.data.shape[1:] != spec.in_shape:
        raise ShapeError(
            f"expected batch of shape (B, {', '.join(map(str, spec.in_shape))}),"
            f" got {x.data.shape}")


def generate_features(gen, x, graph=None):
    """G(x): image batch (B, C, H, W) -> feature batch (B, F)."""
    x = _input_tensor(x, graph)
    _check_image_input(x, gen.spec)
    feats = apply_network(gen.spec, _const_weights(gen), x)
    return ad.reshape(feats, (x.data.shape[0], gen.spec.feature_width))


def apply_head(head, feats):
    """Run a classifier or discriminator on features (B, F) -> scores (B,)."""
    out = apply_network(head.spec, _const_weights(head), feats)
    return ad.reshape(out, (feats.data.shape[0],))


def predict_label(gen, clf, x, graph=None):
    """yhat = C(G(x)): probabilities of the positive class, shape (B,)."""
    return apply_head(clf, generate_features(gen, x, graph))


def predict_domain(gen, disc, x, graph=None):
    """dhat = D(G(x)): probabilities of target-domain membership, shape (B,)."""
    return apply_head(disc, generate_features(gen, x, graph))


def predict_both(gen, clf, disc, x, graph=None):
    """One shared generator pass feeding both heads; returns (yhat, dhat)."""
    feats = generate_features(gen, x, graph)
    return apply_head(clf, feats), apply_head(disc, feats)


def save_checkpoint(path, networks, seed):
    """Write a self-describing checkpoint: specs, named tensors, seed.

    ``networks`` maps role names to Parameters. Arrays round-trip bit-exact.
    """
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "networks": {
            key: {
                "role": p.spec.role,
                "layers": list(p.spec.layers),
                "in_shape": list(p.spec.in_shape),
                "names": list(p.values),
            }
            for key, p in networks.items()
        },
    }
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    for key, p in networks.items():
        for name, v in p.values.items():
            arrays[f"{key}/{name}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (networks dict, seed)."""
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint version {meta.get('format_version')!r}")
        networks = {}
        for key, desc in meta["networks"].items():
            spec = NetworkSpec(desc["role"], tuple(desc["layers"]),
                               tuple(desc["in_shape"]))
            values = {name: npz[f"{key}/{name}"] for name in desc["names"]}
            networks[key] = Parameters(spec, values)
    return networks, meta["seed"]
