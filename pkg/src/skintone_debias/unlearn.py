"""Bias unlearning on small MLPs with hand-written backpropagation.

The network has a shared feature extractor ``f`` (ReLU MLP) feeding two heads:
``g`` predicts the primary class and ``h`` predicts the bias class. Four
training procedures are provided:

* ``baseline``: ``f`` and ``g`` trained on the primary loss only.
* ``lntl``: ``h`` learns to predict the bias while ``f`` receives the
  negated (gradient-reversed) bias loss gradient and an entropy regulariser
  on the bias posterior.
* ``tabe``: alternating steps; ``h`` first fits the bias, then ``f`` and ``g``
  minimise the primary loss plus a confusion loss pushing the bias
  posterior towards uniform.
* ``clgr``: ``tabe`` with gradient reversal of the bias loss into ``f``.

Parameters live in a flat dict keyed ``"<part>.W<i>"`` / ``"<part>.b<i>"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

METHODS = ("baseline", "lntl", "tabe", "clgr")
PARTS = ("f", "g", "h")


class TrainingDiverged(RuntimeError):
    """A loss term or parameter became NaN or infinite."""


@dataclass
class TrainConfig:
    method: str = "baseline"
    lr: float = 0.005
    momentum: float = 0.9
    gr_lambda: float = 1.0
    reg_mu: float = 0.01
    conf_weight: float = 1.0
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    hidden_dim: int = 32
    feature_dim: int = 16
    head_depth: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.gr_lambda < 0 or self.reg_mu < 0 or self.conf_weight < 0:
            raise ValueError("gr_lambda, reg_mu and conf_weight must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.head_depth not in (1, 2):
            raise ValueError("head_depth must be 1 or 2")
        if self.hidden_dim < 1 or self.feature_dim < 1:
            raise ValueError("hidden_dim and feature_dim must be >= 1")


@dataclass
class Model:
    """Weights plus layer widths for ``f``, ``g`` and ``h``."""

    params: dict[str, np.ndarray]
    dims: dict[str, list[int]]

    @property
    def input_dim(self) -> int:
        return self.dims["f"][0]

    @property
    def feature_dim(self) -> int:
        return self.dims["f"][-1]

    def n_layers(self, part: str) -> int:
        return len(self.dims[part]) - 1

    def copy(self) -> "Model":
        return Model({k: v.copy() for k, v in self.params.items()},
                     {k: list(v) for k, v in self.dims.items()})

    def names(self, *parts: str) -> list[str]:
        return [k for k in self.params if k.split(".")[0] in parts]

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        return cls({k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()},
                   {k: list(v) for k, v in d["dims"].items()})


def init_model(
    input_dim: int,
    n_classes: int,
    n_bias: int,
    hidden_dims: tuple[int, ...] | list[int] = (32,),
    feature_dim: int = 16,
    head_depth: int = 1,
    rng: np.random.Generator | int = 0,
) -> Model:
    """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(rng)
    head_hidden = [feature_dim] * (head_depth - 1)
    dims = {
        "f": [input_dim, *hidden_dims, feature_dim],
        "g": [feature_dim, *head_hidden, n_classes],
        "h": [feature_dim, *head_hidden, n_bias],
    }
    params = {}
    for part in PARTS:
        widths = dims[part]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = math.sqrt(6.0 / fan_in)
            params[f"{part}.W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"{part}.b{i}"] = np.zeros(fan_out)
    return Model(params, dims)


def model_for(config: TrainConfig, input_dim: int, n_classes: int = 2, n_bias: int = 2) -> Model:
    return init_model(input_dim, n_classes, n_bias, (config.hidden_dim,), config.feature_dim,
                      config.head_depth, np.random.default_rng(config.seed))


# -- forward -----------------------------------------------------------------

@dataclass
class Forward:
    features: np.ndarray
    primary_logits: np.ndarray
    bias_logits: np.ndarray
    cache: dict[str, list[tuple[np.ndarray, np.ndarray]]] = field(repr=False)


def _mlp(model: Model, part: str, x: np.ndarray, relu_last: bool):
    cache = []
    n = model.n_layers(part)
    for i in range(n):
        z = x @ model.params[f"{part}.W{i}"] + model.params[f"{part}.b{i}"]
        cache.append((x, z))
        x = np.maximum(z, 0.0) if (i < n - 1 or relu_last) else z
    return x, cache


def forward(model: Model, x: np.ndarray) -> Forward:
    """Run ``f``, then ``g`` and ``h`` on its features. ``x`` may be 1-D or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match model input {model.input_dim}")
    feats, cf = _mlp(model, "f", x, relu_last=True)
    plog, cg = _mlp(model, "g", feats, relu_last=False)
    blog, ch = _mlp(model, "h", feats, relu_last=False)
    return Forward(feats, plog, blog, {"f": cf, "g": cg, "h": ch})


# -- losses ------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits, label) -> float:
    """``-log softmax(logits)[label]``; for a batch, the mean over rows."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    label = np.atleast_1d(np.asarray(label))
    if np.any(label >= logits.shape[-1]) or np.any(label < 0):
        raise ValueError("label out of range for logit width")
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(label)), label].mean())


def confusion_loss(bias_logits) -> float:
    """Cross entropy between the uniform distribution and the bias posterior.

    Bounded below by ``log(n_bias)``, reached only at a uniform posterior.
    """
    lp = log_softmax(np.atleast_2d(np.asarray(bias_logits, dtype=np.float64)))
    return float(-lp.mean(axis=-1).mean())


def neg_entropy(bias_logits) -> float:
    """``sum_b p_b log p_b`` of the bias posterior, in ``[-log n_bias, 0)``."""
    lp = log_softmax(np.atleast_2d(np.asarray(bias_logits, dtype=np.float64)))
    return float((np.exp(lp) * lp).sum(axis=-1).mean())


def grad_reverse(upstream_grad, lam: float) -> np.ndarray:
    """Backward pass of a gradient reversal layer (its forward is the identity)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return -lam * np.asarray(upstream_grad, dtype=np.float64)


@dataclass
class LossBreakdown:
    primary_ce: float
    bias_ce: float
    confusion: float
    neg_entropy: float
    phases: list[str] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        return {
            "primary_ce": self.primary_ce,
            "bias_ce": self.bias_ce,
            "confusion": self.confusion,
            "neg_entropy": self.neg_entropy,
        }


def loss_breakdown(fwd: Forward, y: np.ndarray, b: np.ndarray) -> LossBreakdown:
    return LossBreakdown(
        primary_ce=cross_entropy(fwd.primary_logits, y),
        bias_ce=cross_entropy(fwd.bias_logits, b),
        confusion=confusion_loss(fwd.bias_logits),
        neg_entropy=neg_entropy(fwd.bias_logits),
    )


@dataclass(frozen=True)
class LossSpec:
    """Weighted sum of loss terms to differentiate.

    If ``gr_lambda`` is set, the bias cross-entropy reaches ``f`` through a
    gradient reversal layer of that scale; the other terms reach ``f`` as is.
    """

    primary: float = 0.0
    bias: float = 0.0
    confusion: float = 0.0
    neg_entropy: float = 0.0
    gr_lambda: float | None = None

    @property
    def bias_to_features(self) -> float:
        return 1.0 if self.gr_lambda is None else -self.gr_lambda


# -- backward ----------------------------------------------------------------

def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def _dconfusion(logits: np.ndarray) -> np.ndarray:
    return (softmax(logits) - 1.0 / logits.shape[-1]) / len(logits)


def _dneg_entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    p = np.exp(lp)
    return p * (lp - (p * lp).sum(axis=-1, keepdims=True)) / len(logits)


def _mlp_backward(model: Model, part: str, cache, dout: np.ndarray, relu_last: bool):
    grads = {}
    n = len(cache)
    for i in reversed(range(n)):
        x_in, z = cache[i]
        if i < n - 1 or relu_last:
            dout = dout * (z > 0)
        grads[f"{part}.W{i}"] = x_in.T @ dout
        grads[f"{part}.b{i}"] = dout.sum(axis=0)
        dout = dout @ model.params[f"{part}.W{i}"].T
    return grads, dout


def backward(model: Model, fwd: Forward, y, b, spec: LossSpec) -> dict[str, np.ndarray]:
    """Analytic gradients of the loss described by ``spec`` for every parameter."""
    y = np.atleast_1d(np.asarray(y))
    b = np.atleast_1d(np.asarray(b))
    plog = np.atleast_2d(fwd.primary_logits)
    blog = np.atleast_2d(fwd.bias_logits)
    if len(y) != len(plog) or len(b) != len(blog):
        raise ValueError("label count does not match batch size")
    cache = {k: [(np.atleast_2d(a), np.atleast_2d(z)) for a, z in v] for k, v in fwd.cache.items()}

    dg = spec.primary * cross_entropy_grad(plog, y)
    d_bias_ce = cross_entropy_grad(blog, b)
    d_rest = np.zeros_like(blog)
    if spec.confusion:
        d_rest += spec.confusion * _dconfusion(blog)
    if spec.neg_entropy:
        d_rest += spec.neg_entropy * _dneg_entropy(blog)

    grads, dfeat = _mlp_backward(model, "g", cache["g"], dg, relu_last=False)
    gh, _ = _mlp_backward(model, "h", cache["h"], spec.bias * d_bias_ce + d_rest, relu_last=False)
    grads.update(gh)
    # the head is linear in its upstream gradient, so the reversed bias path
    # can be pushed through it separately from the parameter gradients
    d_into_f = spec.bias * d_bias_ce
    if spec.gr_lambda is not None:
        d_into_f = grad_reverse(d_into_f, spec.gr_lambda)
    _, dfeat_h = _mlp_backward(model, "h", cache["h"], d_into_f + d_rest, relu_last=False)
    gf, _ = _mlp_backward(model, "f", cache["f"], dfeat + dfeat_h, relu_last=True)
    grads.update(gf)
    return {k: grads[k] for k in model.params}


def surrogate_loss(model: Model, x, y, b, spec: LossSpec, part: str) -> float:
    """Scalar whose gradient w.r.t. ``part``'s parameters is what ``backward`` returns.

    Computed from the forward pass only, for finite-difference checking.
    """
    fwd = forward(model, x)
    terms = loss_breakdown(fwd, np.atleast_1d(y), np.atleast_1d(b))
    bias_w = spec.bias * (spec.bias_to_features if part == "f" else 1.0)
    return (spec.primary * terms.primary_ce + bias_w * terms.bias_ce
            + spec.confusion * terms.confusion + spec.neg_entropy * terms.neg_entropy)


# -- optimisation steps --------------------------------------------------------

class Momentum:
    """SGD with heavy-ball momentum: ``v = m*v + grad; p -= lr*v``."""

    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def apply(self, model: Model, grads: dict[str, np.ndarray], names: list[str]) -> None:
        for k in names:
            v = self.velocity.get(k)
            v = grads[k].copy() if v is None else self.momentum * v + grads[k]
            self.velocity[k] = v
            model.params[k] -= self.lr * v


def method_specs(method: str, config: TrainConfig) -> list[tuple[str, LossSpec, tuple[str, ...]]]:
    """The ordered update phases of a method: (name, loss, parts updated)."""
    lam, mu, conf = config.gr_lambda, config.reg_mu, config.conf_weight
    if method == "baseline":
        return [("primary", LossSpec(primary=1.0), ("f", "g"))]
    if method == "lntl":
        # simultaneous minimax update: one forward, two gradient routings
        return [
            ("bias_head", LossSpec(bias=1.0), ("h",)),
            ("extractor", LossSpec(primary=1.0, bias=1.0, neg_entropy=mu, gr_lambda=lam), ("f", "g")),
        ]
    if method == "tabe":
        return [
            ("bias_head", LossSpec(bias=1.0), ("h",)),
            ("primary_confusion", LossSpec(primary=1.0, confusion=conf), ("f", "g")),
        ]
    if method == "clgr":
        return [
            ("bias_head", LossSpec(bias=1.0), ("h",)),
            ("primary_confusion", LossSpec(primary=1.0, confusion=conf, bias=1.0, gr_lambda=lam), ("f", "g")),
        ]
    raise ValueError(f"unknown method {method!r}")


def _check_finite(breakdown: LossBreakdown, where: str) -> None:
    for name, v in breakdown.scalars().items():
        if not math.isfinite(v):
            raise TrainingDiverged(f"non-finite {name} ({v}) at {where}")


def _step(method: str, model: Model, opt: Momentum, x, y, b, config: TrainConfig, where: str = "step"):
    if method != "baseline" and b is None:
        raise ValueError(f"{method} needs bias labels")
    if b is None:
        b = np.zeros(len(np.atleast_2d(x)), dtype=int)
    fwd = forward(model, x)
    breakdown = loss_breakdown(fwd, y, b)
    _check_finite(breakdown, where)
    # lntl is one simultaneous minimax update; tabe/clgr phases run in sequence
    simultaneous = method == "lntl"
    pending = []
    for i, (name, spec, parts) in enumerate(method_specs(method, config)):
        if i > 0 and not simultaneous:
            fwd = forward(model, x)
        grads = backward(model, fwd, y, b, spec)
        names = model.names(*parts)
        for k in names:
            if not np.all(np.isfinite(grads[k])):
                raise TrainingDiverged(f"non-finite gradient for {k} in phase {name} at {where}")
        if simultaneous:
            pending.append((grads, names))
        else:
            opt.apply(model, grads, names)
        breakdown.phases.append(name)
    for grads, names in pending:
        opt.apply(model, grads, names)
    return breakdown


def baseline_step(model, opt, x, y, b, config, where="step") -> LossBreakdown:
    """One momentum-SGD update of ``f`` and ``g`` on the primary loss; ``b`` may be None."""
    return _step("baseline", model, opt, x, y, b, config, where)


def lntl_step(model, opt, x, y, b, config, where="step") -> LossBreakdown:
    return _step("lntl", model, opt, x, y, b, config, where)


def tabe_step(model, opt, x, y, b, config, where="step") -> LossBreakdown:
    """Bias head update on the bias loss, then ``f``/``g`` on primary + confusion."""
    return _step("tabe", model, opt, x, y, b, config, where)


def clgr_step(model, opt, x, y, b, config, where="step") -> LossBreakdown:
    return _step("clgr", model, opt, x, y, b, config, where)


STEPS = {"baseline": baseline_step, "lntl": lntl_step, "tabe": tabe_step, "clgr": clgr_step}


# -- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    history: list[dict[str, float]]
    config: TrainConfig

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "model": self.model.to_dict(), "history": self.history}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((np.argmax(logits, axis=-1) == labels).mean())


def train(x, y, b, config: TrainConfig, n_classes: int | None = None, n_bias: int | None = None) -> TrainResult:
    """Train ``config.method`` with minibatch momentum SGD.

    Deterministic given ``config.seed``: the same generator draws the initial
    weights and then each epoch's shuffle.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    b = np.zeros(len(y), dtype=int) if b is None else np.asarray(b, dtype=int)
    if len(x) == 0:
        raise ValueError("empty training set")
    n_classes = n_classes or int(y.max()) + 1
    n_bias = n_bias or max(int(b.max()) + 1, 2)
    rng = np.random.default_rng(config.seed)
    model = init_model(x.shape[1], n_classes, n_bias, (config.hidden_dim,), config.feature_dim,
                       config.head_depth, rng)
    opt = Momentum(config.lr, config.momentum)
    step = STEPS[config.method]
    history = []
    # overflow is caught by the finiteness checks and reported as TrainingDiverged
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(len(x))
            sums = dict.fromkeys(("primary_ce", "bias_ce", "confusion", "neg_entropy"), 0.0)
            n_steps = 0
            for s, start in enumerate(range(0, len(x), config.batch_size)):
                idx = order[start:start + config.batch_size]
                where = f"epoch {epoch} step {s}"
                bd = step(model, opt, x[idx], y[idx], b[idx], config, where=where)
                for k, v in bd.scalars().items():
                    sums[k] += v
                n_steps += 1
            for k, v in model.params.items():
                if not np.all(np.isfinite(v)):
                    raise TrainingDiverged(f"non-finite parameter {k} after epoch {epoch}")
            fwd = forward(model, x)
            record = {"epoch": epoch, **{k: v / n_steps for k, v in sums.items()}}
            record["train_accuracy"] = accuracy(fwd.primary_logits, y)
            record["bias_head_accuracy"] = accuracy(fwd.bias_logits, b)
            history.append(record)
    return TrainResult(model, history, config)


def config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
    return TrainConfig(**d)


def load_result(text: str) -> TrainResult:
    d = json.loads(text)
    return TrainResult(Model.from_dict(d["model"]), d.get("history", []), config_from_dict(d["config"]))


# -- gradient checking -----------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def finite_difference(model: Model, x, y, b, spec: LossSpec, part: str, step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of :func:`surrogate_loss` for every parameter of ``part``."""
    out = {}
    for name in model.names(part):
        p = model.params[name]
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + step
            up = surrogate_loss(model, x, y, b, spec, part)
            p[i] = orig - step
            down = surrogate_loss(model, x, y, b, spec, part)
            p[i] = orig
            g[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def gradcheck(method: str, config: TrainConfig | None = None, seed: int = 0, batch: int = 8,
              input_dim: int = 2, hidden: int = 4, feature_dim: int = 4, step: float = 1e-5) -> float:
    """Max relative error between ``backward`` and finite differences.

    Covers every (loss, parameter group) pair the method's update uses, on a
    seeded ``input_dim-hidden-feature_dim`` model with two primary and two
    bias classes.
    """
    config = config or TrainConfig(method=method)
    rng = np.random.default_rng(seed)
    model = init_model(input_dim, 2, 2, (hidden,), feature_dim, config.head_depth, rng)
    # move biases off zero so ReLU kinks are not sampled exactly
    for k in model.params:
        if ".b" in k:
            model.params[k] = rng.normal(0.0, 0.1, model.params[k].shape)
    x = rng.normal(size=(batch, input_dim))
    y = rng.integers(0, 2, batch)
    b = rng.integers(0, 2, batch)
    worst = 0.0
    for _, spec, parts in method_specs(method, config):
        fwd = forward(model, x)
        grads = backward(model, fwd, y, b, spec)
        for part in parts:
            num = finite_difference(model, x, y, b, spec, part, step)
            for k, v in num.items():
                worst = max(worst, float(relative_error(grads[k], v).max()))
    return worst
