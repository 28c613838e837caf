"""Synthetic confounded data, AUC metrics and bias probing of learned features."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .unlearn import Model, Momentum, cross_entropy_grad, forward, softmax


@dataclass
class SyntheticBiasSpec:
    """Two-class data where a bias attribute shifts inputs along its own axis.

    In the training split the bias label agrees with the class label with
    probability ``train_correlation``; in the test split with
    ``test_correlation`` (0.5 makes them independent).
    """

    n_train: int = 2000
    n_test: int = 2000
    input_dim: int = 10
    class_separation: float = 2.0
    bias_shift: float = 3.0
    train_correlation: float = 0.95
    test_correlation: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_correlation", "test_correlation"):
            v = getattr(self, name)
            if not 0.5 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0.5, 1], got {v}")
        if self.n_train < 4 or self.n_test < 4:
            raise ValueError("n_train and n_test must be >= 4")
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2 (class axis and bias axis)")


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray
    b: np.ndarray
    group: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def _make_split(n: int, corr: float, spec: SyntheticBiasSpec, rng: np.random.Generator) -> Split:
    y = rng.integers(0, 2, n)
    agree = rng.random(n) < corr
    b = np.where(agree, y, 1 - y)
    x = rng.normal(size=(n, spec.input_dim))
    x[:, 0] += (y - 0.5) * spec.class_separation
    x[:, 1] += spec.bias_shift * b
    if min(np.bincount(y, minlength=2)) < 2:
        raise ValueError("generated split has fewer than 2 examples of a class; increase n")
    return Split(x, y, b, b.copy())


def gen_synthetic_biased(spec: SyntheticBiasSpec) -> tuple[Split, Split]:
    """Draw (train, test). Class axis is coordinate 0, bias axis coordinate 1."""
    rng = np.random.default_rng(spec.seed)
    train = _make_split(spec.n_train, spec.train_correlation, spec, rng)
    test = _make_split(spec.n_test, spec.test_correlation, spec, rng)
    return train, test


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    _, inverse, counts = np.unique(values[order], return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    ranks = np.empty(len(values))
    ranks[order] = (starts + (counts + 1) / 2.0)[inverse]
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    u = midranks(scores)[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class GroupAuc:
    per_group: dict
    gap: float
    absent: dict = field(default_factory=dict)


def group_auc(scores, labels, groups) -> GroupAuc:
    """AUC within each group; gap is max minus min over groups with both classes."""
    scores, labels, groups = map(np.asarray, (scores, labels, groups))
    per_group, absent = {}, {}
    for g in np.unique(groups):
        sel = groups == g
        key = g.item()
        if len(np.unique(labels[sel])) < 2:
            absent[key] = "group lacks one of the classes"
            continue
        per_group[key] = auc(scores[sel], labels[sel])
    vals = list(per_group.values())
    gap = max(vals) - min(vals) if vals else 0.0
    return GroupAuc(per_group, gap, absent)


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, false positive rate, true positive rate), thresholds descending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = int((labels == 1).sum()), int((labels != 1).sum())
    pts = [(float("inf"), 0.0, 0.0)]
    for t in np.unique(scores)[::-1]:
        pred = scores >= t
        tpr = (pred & (labels == 1)).sum() / n_pos
        fpr = (pred & (labels != 1)).sum() / n_neg
        pts.append((float(t), float(fpr), float(tpr)))
    return pts


@dataclass
class ProbeConfig:
    epochs: int = 30
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 32
    holdout: float = 0.5
    seed: int = 0


def bias_probe(features, bias_labels, config: ProbeConfig | None = None) -> float:
    """Held-out accuracy of a fresh linear classifier predicting bias from features.

    Features are standardised with training-split statistics. High accuracy
    means the representation still carries the bias.
    """
    config = config or ProbeConfig()
    feats = np.asarray(features, dtype=np.float64)
    b = np.asarray(bias_labels, dtype=int)
    n_bias = int(b.max()) + 1 if len(b) else 0
    if len(np.unique(b)) < 2:
        raise ValueError("bias probe needs at least two bias classes")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(b))
    n_test = max(1, int(round(config.holdout * len(b))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if len(train_idx) == 0:
        raise ValueError("holdout leaves no training examples")
    mu = feats[train_idx].mean(axis=0)
    sd = feats[train_idx].std(axis=0)
    z = (feats - mu) / np.where(sd > 1e-12, sd, 1.0)

    probe = Model({"p.W0": np.zeros((z.shape[1], n_bias)), "p.b0": np.zeros(n_bias)},
                  {"p": [z.shape[1], n_bias]})
    opt = Momentum(config.lr, config.momentum)
    for _ in range(config.epochs):
        shuffled = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(shuffled), config.batch_size):
            idx = shuffled[start:start + config.batch_size]
            logits = z[idx] @ probe.params["p.W0"] + probe.params["p.b0"]
            d = cross_entropy_grad(logits, b[idx])
            grads = {"p.W0": z[idx].T @ d, "p.b0": d.sum(axis=0)}
            opt.apply(probe, grads, ["p.W0", "p.b0"])
    logits = z[test_idx] @ probe.params["p.W0"] + probe.params["p.b0"]
    return float((logits.argmax(axis=1) == b[test_idx]).mean())


@dataclass
class EvalReport:
    overall_auc: float
    auc_per_group: dict
    gap: float
    bias_probe_accuracy: float
    primary_accuracy: float
    absent_groups: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auc_per_group"] = {str(k): v for k, v in self.auc_per_group.items()}
        d["absent_groups"] = {str(k): v for k, v in self.absent_groups.items()}
        return d

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True) + "\n"


def primary_scores(model: Model, x) -> np.ndarray:
    """Probability of primary class 1."""
    return softmax(forward(model, x).primary_logits)[:, 1]


def evaluate(model: Model, split: Split, probe: ProbeConfig | None = None) -> EvalReport:
    """AUC overall and per group on ``split``, plus a bias probe on its features."""
    fwd = forward(model, split.x)
    scores = softmax(fwd.primary_logits)[:, 1]
    ga = group_auc(scores, split.y, split.group)
    return EvalReport(
        overall_auc=auc(scores, split.y),
        auc_per_group=ga.per_group,
        gap=ga.gap,
        bias_probe_accuracy=bias_probe(fwd.features, split.b, probe),
        primary_accuracy=float((fwd.primary_logits.argmax(axis=1) == split.y).mean()),
        absent_groups=ga.absent,
    )
