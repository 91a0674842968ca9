"""Gradient self-check suite.

Runs central finite differences against the analytic gradients for every
differentiable op kind and for full network composites (classification
loss, discriminator loss, and the generator confusion loss through shared
features), each over several seeds. Networks here are deliberately tiny so
the whole sweep takes seconds: finite differences cost two forward passes
per parameter element.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .models import (CLASSIFIER, DISCRIMINATOR, GENERATOR, ModelSpec,
                     NetworkSpec, apply_network, build)
from .training import (classification_loss, discriminator_loss,
                       generator_domain_loss)

TOLERANCE = 1e-4

_OP_CASES = {
    "dense": (("x2", "w", "b"), lambda lv: ad.dense(lv["x2"], lv["w"], lv["b"])),
    "conv2d": (("x4", "k"), lambda lv: ad.conv2d(lv["x4"], lv["k"], 2)),
    "bias_add": (("x4", "cb"), lambda lv: ad.bias_add(lv["x4"], lv["cb"])),
    "relu": (("x2",), lambda lv: ad.relu(lv["x2"])),
    "sigmoid": (("x2",), lambda lv: ad.sigmoid(lv["x2"])),
    "log": (("x2",), lambda lv: ad.log(ad.clamp(ad.sigmoid(lv["x2"]), 1e-7, 1 - 1e-7))),
    "mean": (("x2",), lambda lv: lv["x2"]),
    "max_pool2": (("x4",), lambda lv: ad.max_pool2(lv["x4"])),
    "reshape": (("x4",), lambda lv: ad.flatten(lv["x4"])),
    "row_l2norm": (("x2",), lambda lv: ad.row_l2norm(lv["x2"])),
    "clamp": (("x2",), lambda lv: ad.clamp(lv["x2"], -0.5, 0.5)),
    "add": (("x2", "y2"), lambda lv: ad.add(lv["x2"], lv["y2"])),
    "mul_const": (("x2",), lambda lv: ad.mul_const(lv["x2"], 1.7)),
    "rsub_const": (("x2",), lambda lv: ad.rsub_const(lv["x2"], 2.0)),
}


def _op_params(names, rng):
    pool = {
        "x2": lambda: rng.normal(size=(3, 4)),
        "y2": lambda: rng.normal(size=(3, 4)),
        "w": lambda: rng.normal(size=(4, 2)),
        "b": lambda: rng.normal(size=2),
        "x4": lambda: rng.normal(size=(2, 2, 5, 6)),
        "k": lambda: rng.normal(size=(2, 2, 3, 3)),
        "cb": lambda: rng.normal(size=2),
    }
    return {n: pool[n]() for n in names}


def tiny_model_spec(extent=10, feature_width=8):
    """A miniature of the real backbone, small enough for exhaustive FD."""
    gen = NetworkSpec(GENERATOR, (
        "conv:2x3s1", "relu", "maxpool2", "flatten",
        f"dense:{feature_width}", "relu", "l2norm",
    ), (1, extent, extent))
    head = ("dense:4", "relu", "dense:1", "sigmoid")
    return ModelSpec(
        gen,
        NetworkSpec(CLASSIFIER, head, (feature_width,)),
        NetworkSpec(DISCRIMINATOR, head, (feature_width,)),
    )


def _flatten_params(prefix, params):
    return {f"{prefix}.{name}": v for name, v in params.values.items()}


def _composite_case(which, seed):
    spec = tiny_model_spec()
    rng = np.random.default_rng(7000 + seed)
    x = rng.normal(size=(3, 1, 10, 10))
    tags = np.array([0.0, 1.0, 1.0])
    head_spec = spec.discriminator if which != "classification" else spec.classifier
    params = {
        **_flatten_params("g", build(spec.generator, 2 * seed)),
        **_flatten_params("h", build(head_spec, 2 * seed + 1)),
    }

    def build_fn(graph, lv):
        gw = {n[2:]: t for n, t in lv.items() if n.startswith("g.")}
        hw = {n[2:]: t for n, t in lv.items() if n.startswith("h.")}
        feats = apply_network(spec.generator, gw, ad.tensor(x))
        score = ad.reshape(apply_network(head_spec, hw, feats), (x.shape[0],))
        if which == "classification":
            return classification_loss(score, tags)
        if which == "discriminator":
            return discriminator_loss(score, tags)
        return generator_domain_loss(score)

    return build_fn, params


COMPOSITES = ("classification", "discriminator", "generator_confusion")


def run(seeds=5):
    """Return an ordered list of (check name, max relative error)."""
    results = []
    for kind in sorted(_OP_CASES):
        names, fn = _OP_CASES[kind]
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(1000 * seed + hash(kind) % 1000)
            params = _op_params(names, rng)
            err = ad.grad_check(lambda g, lv: ad.mean(fn(lv)), params)
            worst = max(worst, err)
        results.append((f"op:{kind}", worst))
    for which in COMPOSITES:
        worst = 0.0
        for seed in range(seeds):
            build_fn, params = _composite_case(which, seed)
            worst = max(worst, ad.grad_check(build_fn, params))
        results.append((f"composite:{which}", worst))
    return results


def report(results, stream=None):
    """Print one line per check; return True when everything is in tolerance."""
    import sys
    stream = stream or sys.stdout
    ok = True
    for name, err in results:
        passed = err <= TOLERANCE
        ok = ok and passed
        print(f"{name:<34s} max rel err {err:.3e}  "
              f"{'ok' if passed else 'FAIL'}", file=stream)
    print(f"gradient check: {'all passed' if ok else 'FAILURES'} "
          f"(tolerance {TOLERANCE:g})", file=stream)
    return ok
