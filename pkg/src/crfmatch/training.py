"""Regularized maximum-likelihood training.

Both trainers minimize ``-loglik(theta) + penalty`` with the same
limited-memory quasi-Newton loop. For the l1 penalty the loop becomes an
orthant-projected scaled sub-gradient method: search directions come from the
pseudo-gradient, are sign-constrained against it, and every trial point is
projected back onto the current orthant so no weight crosses zero inside a
step. Zero weights only move when the likelihood slope beats the penalty.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath
from typing import Callable, Sequence

import numpy as np

from .crf import ChainBatch, FeaturizedExample, featurize, log_likelihood_and_gradient
from .evaluation import evaluate_matching, match_lattice
from .features import FeatureRegistry, Scaler, fit_scaler_on_lattices
from .lattice import Lattice, LatticeConfig, TrainingExample

MODEL_FORMAT = "crfmatch-model"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, msg: str, trace: list | None = None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass(frozen=True)
class TrainOptions:
    tol: float = 1e-5
    max_iter: int = 500
    history: int = 10
    c1: float = 1e-4
    max_backtracks: int = 60


@dataclass
class OptimizeResult:
    theta: np.ndarray
    objective: float  # regularized objective in maximization form
    grad_norm: float  # inf-norm of the (pseudo-)gradient at theta
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def pseudo_gradient(x: np.ndarray, g: np.ndarray, l1: float) -> np.ndarray:
    """Minimum-norm subgradient of ``f + l1*|x|_1`` given the smooth gradient ``g``."""
    if l1 == 0:
        return g.copy()
    pg = np.where(x > 0, g + l1, np.where(x < 0, g - l1, 0.0))
    at0 = x == 0
    pg = np.where(at0 & (g + l1 < 0), g + l1, pg)
    pg = np.where(at0 & (g - l1 > 0), g - l1, pg)
    return pg


def minimize(
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    l1: float = 0.0,
    opts: TrainOptions = TrainOptions(),
) -> OptimizeResult:
    """Minimize ``f(x) + l1*|x|_1`` where ``fg`` returns the smooth ``f`` and its gradient."""
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    F = f + l1 * np.abs(x).sum()
    if not math.isfinite(F):
        raise TrainingError("objective is not finite at the starting point")
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    trace = []
    it = 0
    pg = pseudo_gradient(x, g, l1)
    while True:
        gnorm = float(np.max(np.abs(pg))) if pg.size else 0.0
        trace.append((it, -F, gnorm))
        if gnorm <= opts.tol:
            return OptimizeResult(x, -F, gnorm, it, True, trace)
        if it >= opts.max_iter:
            return OptimizeResult(x, -F, gnorm, it, False, trace)

        if l1 > 0:
            d = _l1_direction(x, pg, S, Y)
        else:
            d = -_two_loop(pg, S, Y)
        if not float(d @ pg) < 0:
            S.clear(), Y.clear()
            d = -pg
        orthant = np.sign(x)
        if l1 > 0:
            orthant = np.where(x == 0, -np.sign(pg), orthant)

        alpha = 1.0 if S else 1.0 / max(float(np.linalg.norm(pg)), 1.0)
        accepted = False
        for _ in range(opts.max_backtracks):
            xn = x + alpha * d
            if l1 > 0:
                xn[np.sign(xn) != orthant] = 0.0
            fn, gn = fg(xn)
            Fn = fn + l1 * np.abs(xn).sum()
            if math.isfinite(Fn) and Fn <= F + opts.c1 * float(pg @ (xn - x)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if S:
                S.clear(), Y.clear()
                continue
            if not math.isfinite(Fn):
                raise TrainingError(f"non-finite objective in line search at iteration {it}", trace)
            # no representable decrease along steepest descent: precision floor
            return OptimizeResult(x, -F, gnorm, it, False, trace)

        s, y = xn - x, gn - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and float(s @ y) > 0:
            S.append(s)
            Y.append(y)
            if len(S) > opts.history:
                S.pop(0), Y.pop(0)
        x, f, g, F = xn, fn, gn, Fn
        pg = pseudo_gradient(x, g, l1)
        it += 1


def _l1_direction(x: np.ndarray, pg: np.ndarray, S: list, Y: list) -> np.ndarray:
    """Two-metric step: quasi-Newton on the working set, sign rule only at zero.

    The working set holds the nonzero weights plus the zero weights whose
    pseudo-gradient would move them. Curvature pairs are restricted to it;
    a zero weight may only leave zero in the direction of descent.
    """
    free = (x != 0) | (pg != 0)
    d = np.zeros_like(x)
    if not free.any():
        return d
    pairs = [(s[free], y[free]) for s, y in zip(S, Y)]
    pairs = [(s, y) for s, y in pairs if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y))]
    d[free] = -_two_loop(pg[free], [s for s, _ in pairs], [y for _, y in pairs])
    wrong = (x == 0) & (d * pg >= 0)
    d[wrong] = 0.0
    return d


def _two_loop(q: np.ndarray, S: list, Y: list) -> np.ndarray:
    q = q.copy()
    if not S:
        return q
    rho = [1.0 / float(y @ s) for s, y in zip(S, Y)]
    a = []
    for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
        ai = r * float(s @ q)
        q -= ai * y
        a.append(ai)
    gamma = float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    q *= gamma
    for (s, y, r), ai in zip(zip(S, Y, rho), reversed(a)):
        b = r * float(y @ q)
        q += (ai - b) * s
    return q


# ------------------------------------------------------------------ models


@dataclass
class Model:
    theta: np.ndarray
    registry: FeatureRegistry
    scaler: Scaler
    lattice_config: LatticeConfig = LatticeConfig()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.registry.M,):
            raise ValueError(f"theta length {self.theta.size} != registry size {self.registry.M}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.theta))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "registry": self.registry.to_dict(),
            "scaler": self.scaler.to_dict(),
            "theta": self.theta.tolist(),
            "lattice_config": asdict(self.lattice_config),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model file (format={d.get('format')}, version={d.get('version')})")
        return cls(
            np.asarray(d["theta"], dtype=float),
            FeatureRegistry.from_dict(d["registry"]),
            Scaler.from_dict(d["scaler"]),
            LatticeConfig(**d["lattice_config"]),
            d.get("metadata", {}),
        )


def save_model(model: Model, dest) -> None:
    FsPath(dest).write_text(json.dumps(model.to_dict(), indent=1))


def load_model(source) -> Model:
    return Model.from_dict(json.loads(FsPath(source).read_text()))


# ---------------------------------------------------------------- trainers


def fit_scaler_for(examples: Sequence[TrainingExample], registry: FeatureRegistry) -> Scaler:
    return fit_scaler_on_lattices([e.lattice for e in examples], registry)


class Objective:
    """Negated log-likelihood over featurized examples, for the minimizer."""

    def __init__(self, examples: Sequence[FeaturizedExample] | ChainBatch, l2: float = 0.0):
        self.batch = examples if isinstance(examples, ChainBatch) else ChainBatch(list(examples))
        self.l2 = l2

    def __call__(self, theta):
        v, g = self.batch.log_likelihood_and_gradient(theta)
        return -v + self.l2 * float(theta @ theta), -g + 2 * self.l2 * theta


def _prepare(examples, registry, scaler):
    if not examples:
        raise ValueError("no training examples")
    if scaler is None:
        scaler = fit_scaler_for(examples, registry)
    fx = [featurize(e, registry, scaler) for e in examples]
    cfg = examples[0].lattice.config or LatticeConfig()
    return fx, scaler, cfg


def _theta0(theta0, M):
    return np.zeros(M) if theta0 is None else np.asarray(theta0, dtype=float).copy()


def train_l2(
    examples: Sequence[TrainingExample],
    lam: float,
    opts: TrainOptions = TrainOptions(),
    *,
    registry: FeatureRegistry,
    scaler: Scaler | None = None,
    theta0=None,
) -> Model:
    """Maximize ``loglik - lam * |theta|^2`` by L-BFGS from ``theta0`` (zeros by default)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    fx, scaler, cfg = _prepare(examples, registry, scaler)
    res = minimize(Objective(fx, lam), _theta0(theta0, registry.M), 0.0, opts)
    return _as_model(res, registry, scaler, cfg, "l2", lam)


def train_l1(
    examples: Sequence[TrainingExample],
    lam: float,
    opts: TrainOptions = TrainOptions(),
    *,
    registry: FeatureRegistry,
    scaler: Scaler | None = None,
    theta0=None,
) -> Model:
    """Maximize ``loglik - lam * |theta|_1`` with the orthant-projected method."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    fx, scaler, cfg = _prepare(examples, registry, scaler)
    res = minimize(Objective(fx), _theta0(theta0, registry.M), lam, opts)
    return _as_model(res, registry, scaler, cfg, "l1", lam)


def _as_model(res: OptimizeResult, registry, scaler, cfg, reg: str, lam: float) -> Model:
    return Model(
        res.theta,
        registry,
        scaler,
        cfg,
        {
            "regularizer": reg,
            "lambda": lam,
            "iterations": res.iterations,
            "objective": res.objective,
            "grad_norm": res.grad_norm,
            "converged": res.converged,
            "nonzero": int(np.count_nonzero(res.theta)),
        },
    )


def compute_lambda_max(
    examples: Sequence[TrainingExample], *, registry: FeatureRegistry, scaler: Scaler | None = None
) -> float:
    """Largest |d loglik / d theta_m| at theta = 0: the l1 penalty where zero is optimal."""
    fx, _, _ = _prepare(examples, registry, scaler)
    _, g = log_likelihood_and_gradient(fx, np.zeros(registry.M))
    return float(np.max(np.abs(g)))


def regularized_objective(model: Model, examples, theta=None) -> float:
    theta = model.theta if theta is None else np.asarray(theta, dtype=float)
    fx = [featurize(e, model.registry, model.scaler) for e in examples]
    v, _ = log_likelihood_and_gradient(fx, theta)
    lam = model.metadata.get("lambda", 0.0)
    if model.metadata.get("regularizer") == "l1":
        return v - lam * float(np.abs(theta).sum())
    return v - lam * float(theta @ theta)


# ------------------------------------------------------------------- sweep


@dataclass
class HoldoutItem:
    """One holdout trajectory: its lattice (None if construction failed) and labelability."""

    traj_id: str
    truth: object
    lattice: Lattice | None
    labelable: bool


@dataclass
class SweepRecord:
    lam: float
    nonzero: int
    point_error: float
    path_error: float
    objective: float
    converged: bool
    theta: list[float] = field(repr=False, default_factory=list)


@dataclass
class SweepResult:
    regularizer: str
    lambda_max: float
    records: list[SweepRecord]
    selected: int

    @property
    def selected_lambda(self) -> float:
        return self.records[self.selected].lam

    def to_dict(self, with_theta: bool = False) -> dict:
        recs = []
        for r in self.records:
            d = asdict(r)
            if not with_theta:
                d.pop("theta")
            recs.append(d)
        return {
            "regularizer": self.regularizer,
            "lambda_max": self.lambda_max,
            "selected_index": self.selected,
            "selected_lambda": self.selected_lambda,
            "records": recs,
        }


def evaluate_holdout(model: Model, holdout: Sequence[HoldoutItem]):
    matches, truths, bad = {}, {}, []
    for h in holdout:
        truths[h.traj_id] = h.truth
        matches[h.traj_id] = None if h.lattice is None else match_lattice(h.lattice, model)
        if h.lattice is not None and not h.labelable:
            bad.append(h.traj_id)
    return evaluate_matching(matches, truths, bad)


def regularization_sweep(
    train: Sequence[TrainingExample],
    holdout: Sequence[HoldoutItem],
    num_points: int = 20,
    decay: float = 0.6,
    opts: TrainOptions = TrainOptions(),
    *,
    registry: FeatureRegistry,
    scaler: Scaler | None = None,
    regularizer: str = "l1",
) -> SweepResult:
    """Fit along lambda_max * decay**k, warm-starting each fit from the previous weights.

    The selected lambda minimizes holdout point error; ties go to the larger
    lambda (the sparser model).
    """
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    if not 0 < decay < 1:
        raise ValueError("decay must be in (0, 1)")
    if not holdout:
        raise ValueError("holdout set is empty")
    if regularizer not in ("l1", "l2"):
        raise ValueError("regularizer must be 'l1' or 'l2'")
    fx, scaler, cfg = _prepare(train, registry, scaler)
    fx = ChainBatch(fx)
    _, g0 = fx.log_likelihood_and_gradient(np.zeros(registry.M))
    lam_max = float(np.max(np.abs(g0)))

    records = []
    theta = np.zeros(registry.M)
    for k in range(num_points):
        lam = lam_max * decay**k
        if regularizer == "l1":
            res = minimize(Objective(fx), theta, lam, opts)
        else:
            res = minimize(Objective(fx, lam), theta, 0.0, opts)
        theta = res.theta
        model = _as_model(res, registry, scaler, cfg, regularizer, lam)
        rep = evaluate_holdout(model, holdout)
        records.append(
            SweepRecord(lam, model.nonzero, rep.point_error_rate, rep.path_error_rate,
                        res.objective, res.converged, theta.tolist())
        )
    best = min(range(len(records)), key=lambda i: (records[i].point_error, i))
    return SweepResult(regularizer, lam_max, records, best)


def sweep_model(result: SweepResult, registry: FeatureRegistry, scaler: Scaler,
                cfg: LatticeConfig, index: int | None = None) -> Model:
    i = result.selected if index is None else index
    r = result.records[i]
    return Model(
        np.asarray(r.theta),
        registry,
        scaler,
        cfg,
        {"regularizer": result.regularizer, "lambda": r.lam, "objective": r.objective,
         "converged": r.converged, "nonzero": r.nonzero, "selected_by": "holdout point error"},
    )
