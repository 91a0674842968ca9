"""Training: the classification step, the domain-invariance step, and the
loops that alternate them.

Three losses drive the procedure, all on clamped probabilities:

  l_C  mean binary cross entropy of the classifier on labeled source batches
  l_D  mean binary cross entropy of the discriminator on domain labels
  l_G  -(1/N) sum of (log dhat + log(1 - dhat)) / 2, the generator's
       domain-confusion objective; it is minimized (value log 2) exactly
       when the discriminator outputs 0.5 everywhere

One domain-invariance step runs a single shared forward pass G -> D on a
mixed batch and takes two gradients from it: l_D's gradient updates only D,
l_G's gradient updates only G. The classifier is untouched by that step.
Updates are plain SGD (parameter minus learning rate times gradient).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import assign_domain_labels, batch_iter, mixed_batch_iter
from .errors import ConfigError, ContractError, ShapeError
from .models import (ModelSpec, Parameters, apply_network, as_leaves, build,
                     default_model_spec, generate_features)

LOG2 = math.log(2.0)

CLASSIFICATION = "classification"
DOMAIN_INVARIANCE = "domain_invariance"
DISCRIMINATOR_REFINE = "discriminator_refine"


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one training run.

    alpha_c / alpha_di are the SGD learning rates of the classification and
    domain-invariance steps. Convergence is declared once the trailing
    ``window`` of l_C values has an absolute least-squares slope below
    ``slope_tol`` and (for adversarial runs) the trailing mean of l_G is
    within ``lg_tol`` of log 2; otherwise training stops at ``epochs``.
    ``class_steps_per_di`` interleaves that many classification steps per
    domain-invariance step (1 keeps them strictly alternating).

    ``disc_steps`` is the total number of discriminator updates per
    domain-invariance step. The first disc_steps - 1 are refinements on the
    frozen features of the mixed batch at rate ``alpha_d`` (alpha_di when
    null) and touch only the discriminator; the standard step then runs
    unchanged. A lone shared learning rate leaves the discriminator too far
    behind the generator to exert any alignment pressure, so the refinement
    rate is deliberately separate and hot.
    """

    alpha_c: float = 0.03
    alpha_di: float = 0.003
    batch_size: int = 32
    epochs: int = 60
    window: int = 50
    slope_tol: float = 1e-6
    lg_tol: float = 0.10
    clamp_eps: float = 1e-7
    class_steps_per_di: int = 1
    disc_steps: int = 1
    alpha_d: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.alpha_c <= 0 or self.alpha_di <= 0:
            raise ConfigError("learning rates must be positive, got "
                              f"alpha_c={self.alpha_c}, alpha_di={self.alpha_di}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.slope_tol <= 0 or self.lg_tol <= 0:
            raise ConfigError("convergence tolerances must be positive")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ConfigError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")
        if self.class_steps_per_di < 1:
            raise ConfigError(
                f"class_steps_per_di must be >= 1, got {self.class_steps_per_di}")
        if self.disc_steps < 1:
            raise ConfigError(f"disc_steps must be >= 1, got {self.disc_steps}")
        if self.alpha_d is not None and (
                isinstance(self.alpha_d, bool)
                or not isinstance(self.alpha_d, (int, float))
                or self.alpha_d <= 0):
            raise ConfigError(f"alpha_d must be positive or null, got {self.alpha_d}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


# ------------------------------------------------------------------- losses

def _check_pred_target(pred, target, what):
    if pred.data.ndim != 1:
        raise ShapeError(f"{what}: predictions must be 1-d, got {pred.data.shape}")
    if target is not None:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != pred.data.shape:
            raise ShapeError(f"{what}: {pred.data.shape} predictions vs "
                             f"{target.shape} targets")
        if not np.all((target == 0.0) | (target == 1.0)):
            raise ContractError(f"{what}: targets must be 0 or 1")
    return target


def _bce(pred, target, eps):
    p = ad.clamp(pred, eps, 1.0 - eps)
    hit = ad.mul_const(ad.log(p), target)
    miss = ad.mul_const(ad.log(ad.rsub_const(p, 1.0)), 1.0 - target)
    return ad.neg(ad.mean(ad.add(hit, miss)))


def classification_loss(yhat, y, eps=1e-7):
    """Mean binary cross entropy of label probabilities against labels."""
    y = _check_pred_target(yhat, y, "classification_loss")
    return _bce(yhat, y, eps)


def discriminator_loss(dhat, d, eps=1e-7):
    """Mean binary cross entropy of domain probabilities against domain tags."""
    d = _check_pred_target(dhat, d, "discriminator_loss")
    return _bce(dhat, d, eps)


def generator_domain_loss(dhat, eps=1e-7):
    """Domain-confusion objective for the generator.

    -(1/N) sum over the batch of (log dhat + log(1 - dhat)) / 2. Its global
    minimum over (0, 1) is log 2 at dhat = 0.5: the generator is rewarded
    for features on which the discriminator cannot commit either way.
    """
    _check_pred_target(dhat, None, "generator_domain_loss")
    p = ad.clamp(dhat, eps, 1.0 - eps)
    both = ad.add(ad.log(p), ad.log(ad.rsub_const(p, 1.0)))
    return ad.neg(ad.mean(ad.mul_const(both, 0.5)))


# -------------------------------------------------------------------- steps

def _sgd(params, leaves, grads, alpha):
    for name, leaf in leaves.items():
        g = grads.get(leaf.node)
        if g is not None:
            params.values[name] = params.values[name] - alpha * g


def classification_step(gen, clf, batch, alpha_c, eps=1e-7):
    """One labeled step: forward G -> C, backprop l_C, update G and C.

    The batch must carry labels, and if it carries domain tags they must all
    be source (0): target labels are never allowed to reach this step.
    Returns the l_C value before the update.
    """
    if alpha_c < 0:
        raise ContractError(f"alpha_c must be >= 0, got {alpha_c}")
    if batch.y is None:
        raise ContractError("classification_step needs a labeled batch")
    if batch.d is not None and np.any(batch.d != 0):
        raise ContractError(
            "classification_step received target-domain examples")
    graph = ad.Graph()
    gl = as_leaves(gen, graph)
    cl = as_leaves(clf, graph)
    x = graph.leaf(batch.x, needs_grad=False)
    feats = ad.reshape(apply_network(gen.spec, gl, x),
                       (len(batch), gen.spec.feature_width))
    yhat = ad.reshape(apply_network(clf.spec, cl, feats), (len(batch),))
    loss = classification_loss(yhat, batch.y, eps)
    grads = ad.backward(loss)
    _sgd(gen, gl, grads, alpha_c)
    _sgd(clf, cl, grads, alpha_c)
    return float(loss.data)


def discriminator_refine_step(disc, feats, d, alpha_d, eps=1e-7):
    """One discriminator-only update on a frozen feature batch.

    The features enter as plain arrays (no generator leaves exist in the
    graph), so the generator and classifier are structurally untouchable
    here. Returns the l_D value before the update.
    """
    if alpha_d < 0:
        raise ContractError(f"alpha_d must be >= 0, got {alpha_d}")
    feats = np.asarray(feats, dtype=np.float64)
    graph = ad.Graph()
    dl = as_leaves(disc, graph)
    f = graph.leaf(feats, needs_grad=False)
    dhat = ad.reshape(apply_network(disc.spec, dl, f), (feats.shape[0],))
    l_d = discriminator_loss(dhat, d, eps)
    _sgd(disc, dl, ad.backward(l_d), alpha_d)
    return float(l_d.data)


def domain_invariance_step(gen, disc, batch, alpha_di, eps=1e-7):
    """One adversarial step on a mixed batch, from a single shared forward
    pass G -> D: l_D's gradient updates only the discriminator, l_G's
    gradient updates only the generator. Returns (l_G, l_D) values before
    the updates.
    """
    if alpha_di < 0:
        raise ContractError(f"alpha_di must be >= 0, got {alpha_di}")
    if batch.d is None:
        raise ContractError("domain_invariance_step needs domain tags")
    if not (np.any(batch.d == 0) and np.any(batch.d == 1)):
        raise ContractError(
            "domain_invariance_step needs both domains in the batch")
    graph = ad.Graph()
    gl = as_leaves(gen, graph)
    dl = as_leaves(disc, graph)
    x = graph.leaf(batch.x, needs_grad=False)
    feats = ad.reshape(apply_network(gen.spec, gl, x),
                       (len(batch), gen.spec.feature_width))
    dhat = ad.reshape(apply_network(disc.spec, dl, feats), (len(batch),))
    l_d = discriminator_loss(dhat, batch.d, eps)
    l_g = generator_domain_loss(dhat, eps)
    grads_d = ad.backward(l_d)
    grads_g = ad.backward(l_g)
    _sgd(disc, dl, grads_d, alpha_di)
    _sgd(gen, gl, grads_g, alpha_di)
    return float(l_g.data), float(l_d.data)


# -------------------------------------------------------------- full loops

@dataclass
class TrainedModel:
    """Trained parameters plus the per-step loss history.

    ``history`` rows are (iteration, step_kind, loss_name, value) with a
    global step counter; the two losses of one domain-invariance step share
    an iteration number.
    """

    generator: Parameters
    classifier: Parameters
    discriminator: Parameters | None
    config: TrainingConfig
    history: list = field(default_factory=list)
    converged: bool = False

    def loss_values(self, name):
        return [v for (_, _, n, v) in self.history if n == name]

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "step_kind", "loss_name", "value"])
            for it, kind, name, value in self.history:
                writer.writerow([it, kind, name, repr(value)])


def _trend_slope(values):
    """Least-squares slope of values against their index."""
    n = len(values)
    x = np.arange(n, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def _lc_flat(lc, cfg):
    return (len(lc) >= cfg.window
            and abs(_trend_slope(lc[-cfg.window:])) < cfg.slope_tol)


def _lg_settled(lg, cfg):
    return (len(lg) >= cfg.window
            and abs(float(np.mean(lg[-cfg.window:])) - LOG2) < cfg.lg_tol)


def _network_seed(seed, role_index):
    # distinct, well-separated init streams per network role
    return int(np.random.SeedSequence([int(seed), role_index]).generate_state(1)[0])


def train_baseline(train, cfg, spec=None):
    """Classification-only training of G and C on one labeled dataset.

    The discriminator is never built or updated. Stops early once the
    trailing l_C window is flat, else at the epoch budget.
    """
    if len(train) == 0:
        raise ConfigError("training set is empty")
    if train.labels() is None:
        raise ContractError("baseline training needs a fully labeled dataset")
    if spec is None:
        spec = default_model_spec(extent=train.extent)
    gen = build(spec.generator, _network_seed(cfg.seed, 0))
    clf = build(spec.classifier, _network_seed(cfg.seed, 1))
    model = TrainedModel(gen, clf, None, cfg)
    lc_hist = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in batch_iter(train, cfg.batch_size, cfg.seed, epoch):
            lc = classification_step(gen, clf, batch, cfg.alpha_c, cfg.clamp_eps)
            model.history.append((step, CLASSIFICATION, "l_C", lc))
            lc_hist.append(lc)
            step += 1
            if _lc_flat(lc_hist, cfg):
                model.converged = True
                return model
    return model


def train_difl(source, target, cfg, spec=None):
    """Adversarial training on a labeled source and an unlabeled target.

    Per iteration: ``class_steps_per_di`` classification steps on source
    batches, then ``disc_steps - 1`` discriminator refinements on the mixed
    batch's frozen features, then one domain-invariance step on that batch.
    Target class labels are structurally out of reach (the target view
    hides them), so relabeling the target cannot change the result. Stops
    early once l_C is flat and the trailing mean of l_G sits within lg_tol
    of log 2.
    """
    if len(source) == 0 or len(target) == 0:
        raise ConfigError("both training sets must be non-empty")
    if source.labels() is None:
        raise ContractError("source dataset must be fully labeled")
    if getattr(source, "extent", None) != getattr(target, "extent", None):
        raise ConfigError("source and target must share the same extent")
    if spec is None:
        spec = default_model_spec(extent=source.extent)
    pair = assign_domain_labels(source, target)
    gen = build(spec.generator, _network_seed(cfg.seed, 0))
    clf = build(spec.classifier, _network_seed(cfg.seed, 1))
    disc = build(spec.discriminator, _network_seed(cfg.seed, 2))
    model = TrainedModel(gen, clf, disc, cfg)
    lc_hist, lg_hist = [], []
    step = 0
    for epoch in range(cfg.epochs):
        src_batches = list(batch_iter(pair.source, cfg.batch_size, cfg.seed, epoch))
        mix_batches = list(mixed_batch_iter(pair, cfg.batch_size, cfg.seed, epoch))
        si = 0
        for mb in mix_batches:
            if si >= len(src_batches):
                break
            for _ in range(cfg.class_steps_per_di):
                if si >= len(src_batches):
                    break
                lc = classification_step(gen, clf, src_batches[si],
                                         cfg.alpha_c, cfg.clamp_eps)
                model.history.append((step, CLASSIFICATION, "l_C", lc))
                lc_hist.append(lc)
                step += 1
                si += 1
            if cfg.disc_steps > 1:
                feats = generate_features(gen, mb.x).data
                alpha_d = cfg.alpha_di if cfg.alpha_d is None else cfg.alpha_d
                for _ in range(cfg.disc_steps - 1):
                    ld = discriminator_refine_step(disc, feats, mb.d,
                                                   alpha_d, cfg.clamp_eps)
                    model.history.append((step, DISCRIMINATOR_REFINE, "l_D", ld))
                    step += 1
            lg, ld = domain_invariance_step(gen, disc, mb,
                                            cfg.alpha_di, cfg.clamp_eps)
            model.history.append((step, DOMAIN_INVARIANCE, "l_G", lg))
            model.history.append((step, DOMAIN_INVARIANCE, "l_D", ld))
            lg_hist.append(lg)
            step += 1
            if _lc_flat(lc_hist, cfg) and _lg_settled(lg_hist, cfg):
                model.converged = True
                return model
    return model
