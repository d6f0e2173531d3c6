"""Exact inference on the point/path chain.

Pairwise factors carry no weights: they are 0/-inf compatibility masks. All
the learned signal is in per-state log-potentials ``features @ theta_block``,
so forward-backward only needs node marginals to produce expected counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import scaled_lattice_features
from .lattice import Lattice, TrainingExample


class InferenceError(RuntimeError):
    pass


class ModelError(ValueError):
    pass


@dataclass
class Potentials:
    node: list[np.ndarray]
    masks: list[np.ndarray]  # masks[k] is (len(node[k]), len(node[k+1])) boolean
    log_masks: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.masks) != len(self.node) - 1:
            raise ValueError("need exactly one mask between consecutive nodes")
        for k, m in enumerate(self.masks):
            if m.shape != (len(self.node[k]), len(self.node[k + 1])):
                raise ValueError(f"mask {k} has shape {m.shape}")
        if self.log_masks is None:
            self.log_masks = [np.where(m, 0.0, -np.inf) for m in self.masks]


@dataclass
class InferenceResult:
    log_Z: float
    node_marginals: list[np.ndarray]
    log_Z_backward: float = float("nan")


@dataclass
class MatchResult:
    states: list[int]
    log_probability: float


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def _lse_all(a: np.ndarray) -> float:
    return float(_lse(np.ravel(a), 0))


def compute_potentials(lattice: Lattice, model) -> Potentials:
    """Per-state log-potentials ``theta . scaled features`` plus the lattice masks."""
    reg = model.registry
    theta = np.asarray(model.theta, dtype=float)
    if theta.shape != (reg.M,):
        raise ModelError(f"theta has length {theta.size}, registry expects {reg.M}")
    feats = scaled_lattice_features(lattice, reg, model.scaler)
    wp, ws = theta[: reg.K], theta[reg.K :]
    node = [f @ (wp if k % 2 == 0 else ws) for k, f in enumerate(feats)]
    return Potentials(node, lattice.masks)


def _forward(pot: Potentials) -> list[np.ndarray]:
    alpha = [np.asarray(pot.node[0], dtype=float)]
    for k, lm in enumerate(pot.log_masks):
        a = _lse(alpha[-1][:, None] + lm, axis=0) + pot.node[k + 1]
        if not np.isfinite(a).any():
            raise InferenceError(f"node {k + 1}: every state is mask-isolated")
        alpha.append(a)
    return alpha


def _backward(pot: Potentials) -> list[np.ndarray]:
    beta = [np.zeros(len(pot.node[-1]))]
    for k in range(len(pot.log_masks) - 1, -1, -1):
        b = _lse(pot.log_masks[k] + (pot.node[k + 1] + beta[0])[None, :], axis=1)
        beta.insert(0, b)
    return beta


def forward_backward(pot: Potentials) -> InferenceResult:
    alpha = _forward(pot)
    beta = _backward(pot)
    log_Z = _lse_all(alpha[-1])
    log_Z_b = _lse_all(pot.node[0] + beta[0])
    marg = [np.exp(a + b - log_Z) for a, b in zip(alpha, beta)]
    return InferenceResult(log_Z, marg, log_Z_b)


def viterbi_decode(pot: Potentials) -> MatchResult:
    """Best compatible sequence; ties go to the lowest state index."""
    delta = np.asarray(pot.node[0], dtype=float)
    back = []
    for k, lm in enumerate(pot.log_masks):
        scores = delta[:, None] + lm
        arg = np.argmax(scores, axis=0)
        delta = scores[arg, np.arange(scores.shape[1])] + pot.node[k + 1]
        back.append(arg)
    if not np.isfinite(delta).any():
        raise InferenceError("no compatible state sequence")
    s = int(np.argmax(delta))
    states = [s]
    for arg in reversed(back):
        s = int(arg[s])
        states.append(s)
    states.reverse()
    return MatchResult(states, sequence_log_probability(pot, states))


def sequence_score(pot: Potentials, labels: Sequence[int]) -> float:
    if len(labels) != len(pot.node):
        raise ValueError("one label per node required")
    for k, m in enumerate(pot.masks):
        if not m[labels[k], labels[k + 1]]:
            raise ValueError(f"labels violate compatibility between nodes {k} and {k + 1}")
    return float(sum(p[i] for p, i in zip(pot.node, labels)))


def sequence_log_probability(pot: Potentials, labels: Sequence[int], log_Z: float | None = None) -> float:
    score = sequence_score(pot, labels)
    if log_Z is None:
        log_Z = _lse_all(_forward(pot)[-1])
    return score - log_Z


# --------------------------------------------------------------- likelihood


@dataclass
class FeaturizedExample:
    """Scaled per-node feature matrices, masks and true state indices.

    Even (0-based) nodes are point nodes and use the first ``K`` weights.
    """

    features: list[np.ndarray]
    masks: list[np.ndarray]
    labels: list[int]
    K: int
    log_masks: list[np.ndarray] = field(init=False, repr=False)
    empirical: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.log_masks = [np.where(m, 0.0, -np.inf) for m in self.masks]
        for k, m in enumerate(self.masks):
            if not m[self.labels[k], self.labels[k + 1]]:
                raise ValueError(f"labels violate compatibility between nodes {k} and {k + 1}")
        K = self.K
        S = self.features[1].shape[1] if len(self.features) > 1 else 0
        emp = np.zeros(K + S)
        for k, (f, y) in enumerate(zip(self.features, self.labels)):
            if k % 2 == 0:
                emp[:K] += f[y]
            else:
                emp[K:] += f[y]
        self.empirical = emp

    @property
    def M(self) -> int:
        return self.empirical.size


def featurize(example: TrainingExample, registry, scaler) -> FeaturizedExample:
    lat = example.lattice
    return FeaturizedExample(
        scaled_lattice_features(lat, registry, scaler), lat.masks, list(example.labels), registry.K
    )


def example_potentials(ex: FeaturizedExample, theta: np.ndarray) -> Potentials:
    wp, ws = theta[: ex.K], theta[ex.K :]
    node = [f @ (wp if k % 2 == 0 else ws) for k, f in enumerate(ex.features)]
    return Potentials(node, ex.masks, ex.log_masks)


def log_likelihood_and_gradient(
    examples: Sequence[FeaturizedExample], theta
) -> tuple[float, np.ndarray]:
    """Sum of sequence log-probabilities and its gradient (empirical - expected counts)."""
    theta = np.asarray(theta, dtype=float)
    value = 0.0
    grad = np.zeros_like(theta)
    for ex in examples:
        if ex.M != theta.size:
            raise ModelError(f"theta has length {theta.size}, example expects {ex.M}")
        pot = example_potentials(ex, theta)
        alpha = _forward(pot)
        beta = _backward(pot)
        log_Z = _lse_all(alpha[-1])
        value += float(ex.empirical @ theta) - log_Z
        grad += ex.empirical
        K = ex.K
        for k, (a, b, f) in enumerate(zip(alpha, beta, ex.features)):
            expected = np.exp(a + b - log_Z) @ f
            if k % 2 == 0:
                grad[:K] -= expected
            else:
                grad[K:] -= expected
    return value, grad


# ------------------------------------------------------------ batched form


def _grouped_lse(values: np.ndarray, runs: "_Runs") -> np.ndarray:
    """Log-sum-exp of ``values`` within each run of ``runs``."""
    v = values[runs.order]
    m = np.maximum.reduceat(v, runs.starts)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        total = np.add.reduceat(np.exp(v - np.repeat(m_safe, runs.lengths)), runs.starts)
        return np.log(total) + m_safe


class _Runs:
    """Edge endpoints grouped by one side, ready for ``_grouped_lse``."""

    def __init__(self, keys: np.ndarray):
        self.order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self.order]
        first = np.ones(sorted_keys.size, dtype=bool)
        first[1:] = sorted_keys[1:] != sorted_keys[:-1]
        self.starts = np.flatnonzero(first)
        self.keys = sorted_keys[self.starts]
        self.lengths = np.diff(np.append(self.starts, keys.size))


class ChainBatch:
    """All examples stacked level by level, so one forward-backward pass
    costs a handful of numpy calls per chain position instead of per example.

    Level ``k`` holds node ``k`` of every example that is long enough. Masks
    become edge lists between consecutive levels.
    """

    def __init__(self, examples: Sequence[FeaturizedExample]):
        if not examples:
            raise ValueError("empty batch")
        self.K = examples[0].K
        self.M = examples[0].M
        for ex in examples:
            if ex.K != self.K or ex.M != self.M:
                raise ModelError("examples disagree on the feature layout")
        self.n_examples = len(examples)
        self.empirical = np.sum([ex.empirical for ex in examples], axis=0)
        depth = max(len(ex.features) for ex in examples)
        self.features, self.owner, self.ends_here = [], [], []
        self.forward_runs, self.backward_runs, self.edges = [], [], []
        offsets_prev = None
        for k in range(depth):
            members = [e for e, ex in enumerate(examples) if len(ex.features) > k]
            sizes = [examples[e].features[k].shape[0] for e in members]
            offsets = dict(zip(members, np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)))
            self.features.append(np.vstack([examples[e].features[k] for e in members]))
            self.owner.append(np.repeat(members, sizes))
            self.ends_here.append(np.repeat([len(examples[e].features) == k + 1 for e in members], sizes))
            if k > 0:
                src, dst = [], []
                for e in members:
                    i, j = np.nonzero(examples[e].masks[k - 1])
                    src.append(i + offsets_prev[e])
                    dst.append(j + offsets[e])
                src, dst = np.concatenate(src), np.concatenate(dst)
                self.edges.append((src, dst))
                self.forward_runs.append(_Runs(dst))
                self.backward_runs.append(_Runs(src))
            offsets_prev = offsets
        last = [np.flatnonzero(e) for e in self.ends_here]
        self.final_owner = np.concatenate([self.owner[k][idx] for k, idx in enumerate(last)])
        self.final_index = last
        self.final_runs = _Runs(self.final_owner)

    def potentials(self, theta: np.ndarray) -> list[np.ndarray]:
        wp, ws = theta[: self.K], theta[self.K :]
        return [f @ (wp if k % 2 == 0 else ws) for k, f in enumerate(self.features)]

    def _forward(self, node: list[np.ndarray]) -> list[np.ndarray]:
        alpha = [node[0]]
        for k, (src, dst) in enumerate(self.edges):
            a = np.full(node[k + 1].size, -np.inf)
            runs = self.forward_runs[k]
            a[runs.keys] = _grouped_lse(alpha[-1][src], runs)
            alpha.append(a + node[k + 1])
        return alpha

    def _backward(self, node: list[np.ndarray]) -> list[np.ndarray]:
        beta = [np.zeros(node[-1].size)]
        for k in range(len(self.edges) - 1, -1, -1):
            src, dst = self.edges[k]
            b = np.where(self.ends_here[k], 0.0, -np.inf)
            runs = self.backward_runs[k]
            b[runs.keys] = _grouped_lse((node[k + 1] + beta[0])[dst], runs)
            beta.insert(0, b)
        return beta

    def log_partition(self, alpha: list[np.ndarray]) -> np.ndarray:
        finals = np.concatenate([alpha[k][idx] for k, idx in enumerate(self.final_index)])
        log_Z = np.empty(self.n_examples)
        log_Z[self.final_runs.keys] = _grouped_lse(finals, self.final_runs)
        return log_Z

    def log_likelihood_and_gradient(self, theta) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.M:
            raise ModelError(f"theta has length {theta.size}, examples expect {self.M}")
        node = self.potentials(theta)
        alpha = self._forward(node)
        beta = self._backward(node)
        log_Z = self.log_partition(alpha)
        if not np.all(np.isfinite(log_Z)):
            raise InferenceError("an example has no compatible state sequence")
        grad = self.empirical.copy()
        for k, (a, b, f) in enumerate(zip(alpha, beta, self.features)):
            expected = np.exp(a + b - log_Z[self.owner[k]]) @ f
            if k % 2 == 0:
                grad[: self.K] -= expected
            else:
                grad[self.K :] -= expected
        return float(self.empirical @ theta) - float(math.fsum(log_Z)), grad
