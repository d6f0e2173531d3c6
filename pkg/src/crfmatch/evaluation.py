"""Point/path error rates, feature-weight reports and route export."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .crf import compute_potentials, viterbi_decode
from .lattice import Lattice
from .road_network import RoadNetwork
from .trajectory import GroundTruth

PATH_METRIC = "exact-sequence"


@dataclass
class MatchedRoute:
    traj_id: str
    point_ids: list[str]
    path_ids: list[tuple[str, ...]]
    log_probability: float

    def to_dict(self) -> dict:
        return {
            "traj_id": self.traj_id,
            "point_ids": list(self.point_ids),
            "path_ids": [list(p) for p in self.path_ids],
            "log_probability": self.log_probability,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchedRoute":
        return cls(d["traj_id"], list(d["point_ids"]), [tuple(p) for p in d["path_ids"]],
                   float(d["log_probability"]))

    def route(self) -> list[str]:
        """Full matched segment sequence (gap paths chained)."""
        out = list(self.path_ids[0]) if self.path_ids else list(self.point_ids[:1])
        for p in self.path_ids[1:]:
            out.extend(p[1:])
        return out


def match_lattice(lattice: Lattice, model) -> MatchedRoute:
    res = viterbi_decode(compute_potentials(lattice, model))
    pts, paths = lattice.decode_states(res.states)
    return MatchedRoute(lattice.trajectory.id, pts, paths, res.log_probability)


@dataclass
class TrajectoryScore:
    traj_id: str
    point_nodes: int
    path_nodes: int
    point_errors: int
    path_errors: int
    status: str  # "ok" | "unlabelable" | "failed"


@dataclass
class EvalReport:
    point_error_rate: float
    path_error_rate: float
    point_nodes: int
    path_nodes: int
    point_errors: int
    path_errors: int
    unlabelable: int
    failed: int
    per_trajectory: list[TrajectoryScore] = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: {"path_metric": PATH_METRIC})

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("point error rate", f"{self.point_error_rate:.4f}"),
            ("path error rate", f"{self.path_error_rate:.4f}"),
            ("point nodes", str(self.point_nodes)),
            ("path nodes", str(self.path_nodes)),
            ("trajectories", str(len(self.per_trajectory))),
            ("unlabelable", str(self.unlabelable)),
            ("failed", str(self.failed)),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v:>10}" for k, v in rows)


def evaluate_matching(
    matches: Mapping[str, MatchedRoute | None],
    truths: Mapping[str, GroundTruth],
    unlabelable: Sequence[str] = (),
) -> EvalReport:
    """Error rates over all point and path nodes.

    A ``None`` match (no lattice could be built) and any trajectory listed in
    ``unlabelable`` count every one of their nodes as wrong.
    """
    if set(matches) != set(truths):
        raise ValueError(
            f"match/truth trajectory ids differ: {sorted(set(matches) ^ set(truths))[:5]}"
        )
    bad = set(unlabelable)
    scores = []
    for tid in sorted(truths):
        g, m = truths[tid], matches[tid]
        n_pt, n_pa = len(g.point_labels), len(g.path_labels)
        if m is None or tid in bad:
            status = "failed" if m is None else "unlabelable"
            scores.append(TrajectoryScore(tid, n_pt, n_pa, n_pt, n_pa, status))
            continue
        if len(m.point_ids) != n_pt or len(m.path_ids) != n_pa:
            raise ValueError(f"trajectory {tid}: decoded length does not match truth")
        pe = sum(a != b for a, b in zip(m.point_ids, g.point_labels))
        qe = sum(tuple(a) != tuple(b) for a, b in zip(m.path_ids, g.path_labels))
        scores.append(TrajectoryScore(tid, n_pt, n_pa, pe, qe, "ok"))
    n_pt = sum(s.point_nodes for s in scores)
    n_pa = sum(s.path_nodes for s in scores)
    e_pt = sum(s.point_errors for s in scores)
    e_pa = sum(s.path_errors for s in scores)
    return EvalReport(
        point_error_rate=e_pt / n_pt if n_pt else 0.0,
        path_error_rate=e_pa / n_pa if n_pa else 0.0,
        point_nodes=n_pt,
        path_nodes=n_pa,
        point_errors=e_pt,
        path_errors=e_pa,
        unlabelable=sum(s.status == "unlabelable" for s in scores),
        failed=sum(s.status == "failed" for s in scores),
        per_trajectory=scores,
    )


@dataclass
class FeatureReport:
    entries: list[tuple[str, float]]
    nonzero: int

    def to_dict(self) -> dict:
        return {
            "nonzero": self.nonzero,
            "entries": [
                {"feature": n, "weight": w, "sign": "+" if w > 0 else "-"} for n, w in self.entries
            ],
        }

    def table(self) -> str:
        if not self.entries:
            return "(no selected features)"
        w = max(len(n) for n, _ in self.entries)
        lines = [f"{'feature':<{w}}  {'weight':>12}"]
        lines += [f"{n:<{w}}  {v:>12.5f}" for n, v in self.entries]
        lines.append(f"{self.nonzero} nonzero")
        return "\n".join(lines)


def feature_report(model) -> FeatureReport:
    theta = np.asarray(model.theta)
    nz = [i for i in range(theta.size) if theta[i] != 0.0]
    nz.sort(key=lambda i: (-abs(theta[i]), i))
    return FeatureReport([(model.registry.names[i], float(theta[i])) for i in nz], len(nz))


def routes_to_geojson(net: RoadNetwork, routes: Sequence[MatchedRoute]) -> dict:
    proj = net.projection
    feats = []
    for r in routes:
        coords = []
        for sid in r.route():
            pl = net.segment(sid).polyline
            pts = pl if not coords else pl[1:]
            coords.extend(list(proj.inverse(x, y)) if proj else [x, y] for x, y in pts)
        feats.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {
                    "traj_id": r.traj_id,
                    "log_probability": r.log_probability,
                    "segments": r.route(),
                },
            }
        )
    return {"type": "FeatureCollection", "features": feats}
