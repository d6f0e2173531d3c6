"""Desk-scale synthetic benchmark: one world, three sampling intervals,
both regularizers, and the qualitative claims checked on the outcome."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

from .lattice import LatticeConfig
from .pipeline import ProtocolResult, SplitConfig, run_protocol
from .synthgen import BehaviorSpec, NoiseSpec, WorldSpec, generate_dataset, generate_network
from .training import TrainOptions


@dataclass(frozen=True)
class BenchmarkConfig:
    world: WorldSpec = WorldSpec(rows=10, cols=10, spacing=400.0)
    noise: NoiseSpec = NoiseSpec(gps_sigma=15.0, interval=10.0)
    behavior: BehaviorSpec = BehaviorSpec(route_dispersion=0.3, speed_spread=0.25)
    n_trips: int = 100
    min_hops: int = 10
    min_duration: float = 360.0  # long enough for >= 4 fixes at 120 s
    seed: int = 0
    intervals: tuple[float, ...] = (60.0, 90.0, 120.0)
    lattice: LatticeConfig = LatticeConfig()
    split: SplitConfig = SplitConfig()
    num_points: int = 20
    decay: float = 0.6
    train: TrainOptions = TrainOptions()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    results: dict[float, ProtocolResult]
    seconds: float
    checks: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for iv, r in self.results.items():
            for reg, model, test, sweep in (
                ("l1", r.l1_model, r.l1_test, r.l1_sweep),
                ("l2", r.l2_model, r.l2_test, r.l2_sweep),
            ):
                rec = sweep.records[sweep.selected]
                out.append({
                    "interval": iv, "regularizer": reg, "lambda": rec.lam, "features": model.nonzero,
                    "holdout_point": rec.point_error, "test_point": test.point_error_rate,
                    "test_path": test.path_error_rate,
                })
        return out

    def table(self) -> str:
        lines = [f"{'interval':>8} {'reg':>3} {'lambda':>10} {'feat':>4} {'hold pt':>7} "
                 f"{'point':>6} {'path':>6}"]
        for r in self.rows():
            lines.append(
                f"{r['interval']:>8g} {r['regularizer']:>3} {r['lambda']:>10.4g} {r['features']:>4d} "
                f"{r['holdout_point']:>7.3f} {r['test_point']:>6.3f} {r['test_path']:>6.3f}"
            )
        return "\n".join(lines)

    def summary(self) -> dict:
        return {"config": self.config.to_dict(), "seconds": self.seconds, "rows": self.rows(),
                "checks": self.checks}


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkResult:
    t0 = time.perf_counter()
    net = generate_network(cfg.world)
    trajs = generate_dataset(
        net, cfg.n_trips, cfg.behavior, cfg.noise, cfg.seed, cfg.min_hops, cfg.min_duration
    )
    results = {
        iv: run_protocol(net, trajs, iv, cfg.lattice, cfg.split, cfg.num_points, cfg.decay, cfg.train)
        for iv in cfg.intervals
    }
    out = BenchmarkResult(cfg, results, time.perf_counter() - t0)
    out.checks = check_claims(out)
    return out


def check_claims(bench: BenchmarkResult, error_margin: float = 0.02, sparsity: float = 0.5) -> dict:
    """The qualitative claims, one boolean each, with the numbers behind them."""
    res = bench.results
    sparse = {}
    for iv, r in res.items():
        h1 = r.l1_sweep.records[r.l1_sweep.selected].point_error
        h2 = r.l2_sweep.records[r.l2_sweep.selected].point_error
        sparse[iv] = {
            "l1_features": r.l1_model.nonzero, "l2_features": r.l2_model.nonzero,
            "l1_holdout_point": h1, "l2_holdout_point": h2,
            "ok": r.l1_model.nonzero <= sparsity * r.l2_model.nonzero and h1 <= h2 + error_margin,
        }
    lo, hi = min(res), max(res)
    trend = {}
    for reg in ("l1", "l2"):
        a, b = getattr(res[lo], f"{reg}_test"), getattr(res[hi], f"{reg}_test")
        trend[reg] = {
            "point": (a.point_error_rate, b.point_error_rate),
            "path": (a.path_error_rate, b.path_error_rate),
            "ok": b.point_error_rate >= a.point_error_rate and b.path_error_rate >= a.path_error_rate,
        }
    harder = {}
    for iv, r in res.items():
        for reg in ("l1", "l2"):
            t = getattr(r, f"{reg}_test")
            harder[f"{iv:g}/{reg}"] = t.path_error_rate >= t.point_error_rate
    return {
        "sparsity": {"per_interval": sparse, "ok": all(v["ok"] for v in sparse.values())},
        "interval_trend": {"per_regularizer": trend, "ok": all(v["ok"] for v in trend.values())},
        "path_harder": {"per_run": harder, "ok": all(harder.values())},
    }
