"""Dataset-level glue: lattices for many trajectories, splits, and the
degrade / split / sweep / test protocol used by the CLI and benchmarks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from .evaluation import EvalReport, MatchedRoute, evaluate_matching, match_lattice
from .features import FeatureRegistry
from .lattice import Lattice, LatticeConfig, LatticeError, TrainingExample, UnlabelableError, build_lattice, label_lattice
from .road_network import RoadNetwork
from .trajectory import DegenerateTrajectoryError, Trajectory, degrade_sampling, split_dataset
from .training import (
    HoldoutItem,
    Model,
    SweepResult,
    TrainOptions,
    fit_scaler_for,
    regularization_sweep,
    sweep_model,
    train_l1,
    train_l2,
)

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    trajectory: Trajectory
    lattice: Lattice | None = None
    example: TrainingExample | None = None
    error: str | None = None

    @property
    def labelable(self) -> bool:
        return self.example is not None

    def holdout_item(self) -> HoldoutItem:
        return HoldoutItem(self.trajectory.id, self.trajectory.truth, self.lattice, self.labelable)


def prepare(net: RoadNetwork, trajs: Sequence[Trajectory], cfg: LatticeConfig) -> list[Prepared]:
    out = []
    for tr in trajs:
        try:
            lat = build_lattice(net, tr, cfg)
        except LatticeError as e:
            out.append(Prepared(tr, error=f"lattice: {e}"))
            continue
        p = Prepared(tr, lat)
        if tr.truth is not None:
            try:
                p.example = label_lattice(lat)
            except UnlabelableError as e:
                p.error = f"unlabelable: {e}"
        out.append(p)
    return out


def degrade_all(trajs: Sequence[Trajectory], interval: float | None) -> list[Trajectory]:
    if not interval:
        return list(trajs)
    out = []
    for t in trajs:
        try:
            out.append(degrade_sampling(t, interval))
        except DegenerateTrajectoryError:
            log.warning("dropping %s: too short at %s s", t.id, interval)
    return out


def match_all(items: Sequence[Prepared], model: Model) -> dict[str, MatchedRoute | None]:
    return {p.trajectory.id: None if p.lattice is None else match_lattice(p.lattice, model) for p in items}


def evaluate(items: Sequence[Prepared], model: Model) -> EvalReport:
    truths = {p.trajectory.id: p.trajectory.truth for p in items}
    bad = [p.trajectory.id for p in items if p.lattice is not None and not p.labelable]
    return evaluate_matching(match_all(items, model), truths, bad)


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.7
    holdout_fraction: float = 0.2
    seed: int = 0


def three_way_split(ids: Sequence[str], cfg: SplitConfig) -> dict[str, list[str]]:
    """train / holdout / test id lists; holdout is carved from the training share."""
    train, test = split_dataset(sorted(ids), cfg.train_fraction, cfg.seed)
    n_hold = max(1, math.floor(cfg.holdout_fraction * len(train) + 1e-9)) if cfg.holdout_fraction > 0 else 0
    fit = sorted(train[n_hold:])
    hold = sorted(train[:n_hold])
    return {"train": fit, "holdout": hold, "test": sorted(test)}


@dataclass
class ProtocolResult:
    interval: float | None
    registry: FeatureRegistry
    l1_sweep: SweepResult
    l2_sweep: SweepResult
    l1_model: Model
    l2_model: Model
    l1_test: EvalReport
    l2_test: EvalReport
    counts: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "interval": self.interval,
            "M": self.registry.M,
            "counts": self.counts,
            "l1": {"lambda": self.l1_sweep.selected_lambda, "nonzero": self.l1_model.nonzero,
                   "point_error": self.l1_test.point_error_rate, "path_error": self.l1_test.path_error_rate},
            "l2": {"lambda": self.l2_sweep.selected_lambda, "nonzero": self.l2_model.nonzero,
                   "point_error": self.l2_test.point_error_rate, "path_error": self.l2_test.path_error_rate},
        }


def run_protocol(
    net: RoadNetwork,
    trajs: Sequence[Trajectory],
    interval: float | None,
    lattice_cfg: LatticeConfig = LatticeConfig(),
    split: SplitConfig = SplitConfig(),
    num_points: int = 20,
    decay: float = 0.6,
    opts: TrainOptions = TrainOptions(),
    period_width: float = 4,
    cosine_mode: str = "similarity",
) -> ProtocolResult:
    """Degrade, split, sweep both regularizers on the holdout, score the picks on test."""
    data = prepare(net, degrade_all(trajs, interval), lattice_cfg)
    by_id = {p.trajectory.id: p for p in data}
    parts = three_way_split(list(by_id), split)
    train = [by_id[i] for i in parts["train"]]
    hold = [by_id[i] for i in parts["holdout"]]
    test = [by_id[i] for i in parts["test"]]
    examples = [p.example for p in train if p.labelable]
    registry = FeatureRegistry(net.class_vocabulary, period_width, cosine_mode)
    scaler = fit_scaler_for(examples, registry)
    holdout = [p.holdout_item() for p in hold]
    sweeps = {}
    models = {}
    for reg in ("l1", "l2"):
        sweeps[reg] = regularization_sweep(
            examples, holdout, num_points, decay, opts, registry=registry, scaler=scaler, regularizer=reg
        )
        models[reg] = sweep_model(sweeps[reg], registry, scaler, lattice_cfg)
    counts = {
        "train": len(train),
        "train_labelable": len(examples),
        "holdout": len(hold),
        "test": len(test),
        "unlabelable": sum(p.lattice is not None and not p.labelable for p in data),
        "failed": sum(p.lattice is None for p in data),
    }
    return ProtocolResult(
        interval, registry, sweeps["l1"], sweeps["l2"], models["l1"], models["l2"],
        evaluate(test, models["l1"]), evaluate(test, models["l2"]), counts,
    )


def train_fixed(
    net: RoadNetwork,
    trajs: Sequence[Trajectory],
    reg: str,
    lam: float,
    lattice_cfg: LatticeConfig = LatticeConfig(),
    opts: TrainOptions = TrainOptions(),
    period_width: float = 4,
    cosine_mode: str = "similarity",
) -> tuple[Model, list[Prepared]]:
    data = prepare(net, trajs, lattice_cfg)
    examples = [p.example for p in data if p.labelable]
    if not examples:
        raise ValueError("no labelable training trajectories")
    registry = FeatureRegistry(net.class_vocabulary, period_width, cosine_mode)
    trainer = train_l1 if reg == "l1" else train_l2
    return trainer(examples, lam, opts, registry=registry), data
