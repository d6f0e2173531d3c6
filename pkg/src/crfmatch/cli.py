"""Command-line driver: generate | train | sweep | match | eval | report.

Settings come from an optional JSON config file (``--config``); any flag given
on the command line overrides the matching config field. The effective
configuration is written next to every output (``run_config.json``) and
embedded in every JSON artifact under ``"config"``.

Exit codes: 0 success, 1 validation / training / inference error, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .evaluation import MatchedRoute, evaluate_matching, feature_report, match_lattice, routes_to_geojson
from .lattice import LatticeConfig, LatticeError, UnlabelableError, build_lattice, label_lattice
from .pipeline import SplitConfig, degrade_all, run_protocol, train_fixed
from .road_network import load_network, save_network
from .synthgen import BehaviorSpec, NoiseSpec, WorldSpec, generate_dataset, generate_network
from .trajectory import load_trajectories, save_trajectories
from .training import Model, TrainOptions, load_model, save_model

log = logging.getLogger("crfmatch")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    network: str | None = None
    trajectories: str | None = None
    model: str | None = None
    matches: str | None = None
    out_dir: str = "out"
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    period_width: float = 4.0
    cosine_mode: str = "similarity"
    regularizer: str = "l1"
    lam: float | None = None
    points: int = 20
    decay: float = 0.6
    tol: float = 1e-5
    max_iter: int = 500
    split: SplitConfig = field(default_factory=SplitConfig)
    intervals: tuple[float, ...] = (60.0, 90.0, 120.0)
    interval: float | None = None  # single degradation for generate/train/match
    # synthetic data
    world: WorldSpec = field(default_factory=WorldSpec)
    behavior: BehaviorSpec = field(default_factory=BehaviorSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    trips: int = 100
    min_hops: int = 8
    min_duration: float = 0.0
    seed: int = 0

    def train_options(self) -> TrainOptions:
        return TrainOptions(tol=self.tol, max_iter=self.max_iter)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        nested = {"lattice": LatticeConfig, "split": SplitConfig, "world": WorldSpec,
                  "behavior": BehaviorSpec, "noise": NoiseSpec}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in nested:
                if not isinstance(v, dict):
                    raise ConfigError(f"config section {k!r} must be an object")
                try:
                    kw[k] = _build(nested[k], v)
                except TypeError as e:
                    raise ConfigError(f"config section {k!r}: {e}") from e
            elif k == "intervals":
                kw[k] = tuple(float(x) for x in v)
            else:
                kw[k] = v
        return cls(**kw)

    def validate(self) -> None:
        if self.regularizer not in ("l1", "l2"):
            raise ConfigError("regularizer must be 'l1' or 'l2'")
        if self.cosine_mode not in ("similarity", "distance"):
            raise ConfigError("cosine_mode must be 'similarity' or 'distance'")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if any(not iv > 0 for iv in self.intervals):
            raise ConfigError("intervals must be > 0")
        if self.interval is not None and not self.interval > 0:
            raise ConfigError("interval must be > 0")
        if self.trips < 1:
            raise ConfigError("trips must be >= 1")


def _build(cls, d: dict):
    if cls is WorldSpec and "origin" in d:
        d = {**d, "origin": tuple(d["origin"])}
    return cls(**d)


# ------------------------------------------------------------------ parsing

_LATTICE_FLAGS = ("radius", "max_radius", "max_point_states", "max_paths", "slack")
_SPLIT_FLAGS = {"train_fraction": "train_fraction", "holdout_fraction": "holdout_fraction", "split_seed": "seed"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crfmatch", description="CRF map matching with l1/l2 training.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, *, io=True):
        p.add_argument("--config", help="JSON run config; flags override its fields")
        p.add_argument("--out", dest="out_dir", help="output directory")
        if io:
            p.add_argument("--network", help="road network GeoJSON")
            p.add_argument("--trajectories", help="trajectory CSV")

    def lattice_flags(p):
        p.add_argument("--radius", type=float)
        p.add_argument("--max-radius", dest="max_radius", type=float)
        p.add_argument("--max-point-states", dest="max_point_states", type=int)
        p.add_argument("--max-paths", dest="max_paths", type=int)
        p.add_argument("--slack", type=float)

    def train_flags(p):
        p.add_argument("--period-width", dest="period_width", type=float)
        p.add_argument("--cosine-mode", dest="cosine_mode", choices=["similarity", "distance"])
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)

    g = sub.add_parser("generate", help="synthesize a grid city and noisy trips")
    common(g, io=False)
    g.add_argument("--spec", help="JSON with world / behavior / noise sections")
    g.add_argument("--trips", type=int)
    g.add_argument("--interval", type=float, help="degrade the trips to this sampling interval (s)")
    g.add_argument("--seed", type=int)
    g.add_argument("--min-hops", dest="min_hops", type=int)
    g.add_argument("--min-duration", dest="min_duration", type=float)

    t = sub.add_parser("train", help="fit one model at a fixed lambda")
    common(t)
    lattice_flags(t)
    train_flags(t)
    t.add_argument("--reg", dest="regularizer", choices=["l1", "l2"])
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--interval", type=float)

    s = sub.add_parser("sweep", help="lambda sweeps for both regularizers at each interval")
    common(s)
    lattice_flags(s)
    train_flags(s)
    s.add_argument("--points", type=int)
    s.add_argument("--decay", type=float)
    s.add_argument("--intervals", type=float, nargs="+")
    s.add_argument("--train-fraction", dest="train_fraction", type=float)
    s.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    s.add_argument("--split-seed", dest="split_seed", type=int)

    m = sub.add_parser("match", help="decode trajectories with a saved model")
    common(m)
    m.add_argument("--model")
    m.add_argument("--interval", type=float)

    e = sub.add_parser("eval", help="error rates of a model (or a matches file) against truth")
    common(e)
    e.add_argument("--model")
    e.add_argument("--matches", help="score this matches.json instead of decoding again")
    e.add_argument("--intervals", type=float, nargs="+")
    e.add_argument("--interval", type=float, help="single interval (used with --matches)")

    r = sub.add_parser("report", help="selected features of a saved model")
    common(r, io=False)
    r.add_argument("--model")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = _read_json(args.config, "config")
    if getattr(args, "spec", None):
        spec = _read_json(args.spec, "spec")
        extra = set(spec) - {"world", "behavior", "noise"}
        if extra:
            raise ConfigError(f"unknown spec sections: {sorted(extra)}")
        base.update(spec)
    cfg = RunConfig.from_dict(base)
    flags = vars(args)
    top = {f.name for f in fields(RunConfig)} - {"lattice", "split"}
    over = {k: v for k, v in flags.items() if k in top and v is not None}
    if "intervals" in over:
        over["intervals"] = tuple(over["intervals"])
    cfg = replace(cfg, **over)
    lat = {k: flags[k] for k in _LATTICE_FLAGS if flags.get(k) is not None}
    if lat:
        cfg = replace(cfg, lattice=replace(cfg.lattice, **lat))
    spl = {v: flags[k] for k, v in _SPLIT_FLAGS.items() if flags.get(k) is not None}
    if spl:
        cfg = replace(cfg, split=replace(cfg.split, **spl))
    cfg.validate()
    return cfg


def _read_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} file {path} is not valid JSON: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"{what} file {path} must hold a JSON object")
    return d


def _need(cfg: RunConfig, *names: str) -> None:
    for n in names:
        v = getattr(cfg, n)
        if v is None:
            raise ConfigError(f"--{n} is required")
        if not Path(v).is_file():
            raise ConfigError(f"{n} file not found: {v}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _outdir(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run_config.json", {"command": command, "config": cfg.to_dict()})
    return out


def _load_inputs(cfg: RunConfig):
    _need(cfg, "network", "trajectories")
    net = load_network(cfg.network)
    trajs = load_trajectories(cfg.trajectories, net.projection)
    return net, trajs


def _iv_tag(iv: float | None) -> str:
    return "raw" if not iv else f"{iv:g}s"


# ----------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig) -> str:
    out = _outdir(cfg, "generate")
    net = generate_network(cfg.world)
    trajs = generate_dataset(net, cfg.trips, cfg.behavior, cfg.noise, cfg.seed, cfg.min_hops, cfg.min_duration)
    trajs = degrade_all(trajs, cfg.interval)
    save_network(net, out / "network.geojson")
    save_trajectories(trajs, out / "trajectories.csv", net.projection)
    fixes = sum(len(t) for t in trajs)
    return f"generate: {len(net.segments)} segments, {len(trajs)} trips, {fixes} fixes -> {out}"


def cmd_train(cfg: RunConfig) -> str:
    if cfg.lam is None:
        raise ConfigError("--lambda is required for train")
    net, trajs = _load_inputs(cfg)
    trajs = degrade_all(trajs, cfg.interval)
    if not any(t.truth is not None for t in trajs):
        raise ConfigError("training trajectories carry no truth labels")
    model, data = train_fixed(net, [t for t in trajs if t.truth is not None], cfg.regularizer, cfg.lam,
                              cfg.lattice, cfg.train_options(), cfg.period_width, cfg.cosine_mode)
    model.metadata["config"] = cfg.to_dict()
    model.metadata["skipped"] = sorted(p.trajectory.id for p in data if not p.labelable)
    out = _outdir(cfg, "train")
    save_model(model, out / "model.json")
    return (f"train: {cfg.regularizer} lambda={cfg.lam:g}, {model.nonzero}/{model.registry.M} nonzero, "
            f"converged={model.metadata['converged']} -> {out / 'model.json'}")


def cmd_sweep(cfg: RunConfig) -> str:
    net, trajs = _load_inputs(cfg)
    out = _outdir(cfg, "sweep")
    summary = {"config": cfg.to_dict(), "intervals": []}
    parts = []
    for iv in cfg.intervals:
        res = run_protocol(net, trajs, iv, cfg.lattice, cfg.split, cfg.points, cfg.decay,
                           cfg.train_options(), cfg.period_width, cfg.cosine_mode)
        tag = _iv_tag(iv)
        for reg in ("l1", "l2"):
            model = getattr(res, f"{reg}_model")
            model.metadata["config"] = cfg.to_dict()
            model.metadata["interval"] = iv
            save_model(model, out / f"model_{reg}_{tag}.json")
        _write_json(out / f"sweep_{tag}.json", {
            "config": cfg.to_dict(),
            "interval": iv,
            "counts": res.counts,
            "l1": res.l1_sweep.to_dict(),
            "l2": res.l2_sweep.to_dict(),
            "test": {"l1": res.l1_test.to_dict(), "l2": res.l2_test.to_dict()},
        })
        summary["intervals"].append(res.summary())
        parts.append(f"{iv:g}s l1 {res.l1_model.nonzero}f pt={res.l1_test.point_error_rate:.3f} / "
                     f"l2 {res.l2_model.nonzero}f pt={res.l2_test.point_error_rate:.3f}")
    _write_json(out / "sweep_summary.json", summary)
    return "sweep: " + "; ".join(parts)


def cmd_match(cfg: RunConfig) -> str:
    _need(cfg, "model")
    model = load_model(cfg.model)
    net, trajs = _load_inputs(cfg)
    trajs = degrade_all(trajs, cfg.interval)
    records, routes = [], []
    for tr in trajs:
        try:
            lat = build_lattice(net, tr, model.lattice_config)
        except LatticeError as e:
            records.append({"traj_id": tr.id, "match": None, "error": str(e)})
            continue
        m = match_lattice(lat, model)
        routes.append(m)
        records.append({"traj_id": tr.id, "match": m.to_dict(), "error": None})
    out = _outdir(cfg, "match")
    _write_json(out / "matches.json", {"config": cfg.to_dict(), "model": cfg.model, "matches": records})
    _write_json(out / "routes.geojson", routes_to_geojson(net, routes))
    return f"match: {len(routes)}/{len(trajs)} trajectories decoded -> {out / 'matches.json'}"


def _score(net, trajs, model: Model, matches: dict | None = None):
    """Evaluate; lattices are rebuilt with the model's settings to find unlabelable trajectories."""
    truths, decoded, bad = {}, {}, []
    for tr in trajs:
        if tr.truth is None:
            raise ConfigError(f"trajectory {tr.id} has no truth labels")
        truths[tr.id] = tr.truth
        try:
            lat = build_lattice(net, tr, model.lattice_config)
        except LatticeError:
            decoded[tr.id] = None
            continue
        try:
            label_lattice(lat)
        except UnlabelableError:
            bad.append(tr.id)
        if matches is None:
            decoded[tr.id] = match_lattice(lat, model)
        else:
            if tr.id not in matches:
                raise ConfigError(f"matches file lacks trajectory {tr.id}")
            decoded[tr.id] = matches[tr.id]
    if matches is not None:
        extra = set(matches) - set(truths)
        if extra:
            raise ConfigError(f"matches for unknown trajectories: {sorted(extra)[:5]}")
    return evaluate_matching(decoded, truths, bad)


def cmd_eval(cfg: RunConfig) -> str:
    _need(cfg, "model")
    model = load_model(cfg.model)
    net, trajs = _load_inputs(cfg)
    out = _outdir(cfg, "eval")
    if cfg.matches is not None:
        _need(cfg, "matches")
        doc = _read_json(cfg.matches, "matches")
        found = {r["traj_id"]: None if r["match"] is None else MatchedRoute.from_dict(r["match"])
                 for r in doc.get("matches", [])}
        rep = _score(net, degrade_all(trajs, cfg.interval), model, found)
        _write_json(out / "eval_report.json", {"config": cfg.to_dict(), "report": rep.to_dict()})
        (out / "eval_report.txt").write_text(rep.table() + "\n")
        return f"eval: point={rep.point_error_rate:.4f} path={rep.path_error_rate:.4f}"
    parts, reports = [], {}
    for iv in cfg.intervals:
        rep = _score(net, degrade_all(trajs, iv), model)
        reports[_iv_tag(iv)] = rep.to_dict()
        (out / f"eval_report_{_iv_tag(iv)}.txt").write_text(rep.table() + "\n")
        parts.append(f"{iv:g}s point={rep.point_error_rate:.4f} path={rep.path_error_rate:.4f}")
    _write_json(out / "eval_report.json", {"config": cfg.to_dict(), "reports": reports})
    return "eval: " + "; ".join(parts)


def cmd_report(cfg: RunConfig) -> str:
    _need(cfg, "model")
    model = load_model(cfg.model)
    rep = feature_report(model)
    out = _outdir(cfg, "report")
    _write_json(out / "features.json", {"config": cfg.to_dict(), "model": cfg.model, "report": rep.to_dict()})
    (out / "features.txt").write_text(rep.table() + "\n")
    print(rep.table())
    return f"report: {rep.nonzero}/{model.registry.M} features selected"


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "match": cmd_match,
    "eval": cmd_eval,
    "report": cmd_report,
}


def execute(argv: Sequence[str] | None = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        line = COMMANDS[args.command](cfg)
    except (ValueError, RuntimeError, LookupError, OSError, KeyError) as e:
        print(f"crfmatch {args.command}: error: {e}", file=sys.stderr)
        return 1
    print(line)
    return 0


def main() -> None:
    sys.exit(execute())


if __name__ == "__main__":
    main()
