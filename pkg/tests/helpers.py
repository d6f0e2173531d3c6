"""Toy builders and brute-force oracles shared by the test modules.

The oracles enumerate explicitly and never call into the DP code they check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from crfmatch.road_network import RoadNetwork, RoadSegment, project_to_segment

# PASS/FAIL lines collected by the acceptance module, printed in the terminal summary
ACCEPTANCE: list[str] = []


def make_net(nodes, edges, speed=10.0):
    """edges: (id, from, to, class) one-way straight segments; speed in m/s."""
    segs = []
    for e in edges:
        sid, a, b, cls = e[:4]
        v = e[4] if len(e) > 4 else speed
        segs.append(RoadSegment(sid, cls, v, (nodes[a], nodes[b]), a, b, True, sid))
    return RoadNetwork(segs, nodes)


def grid_net(n, spacing=100.0, cls="residential", speed=10.0):
    """n x n two-way grid with zero-padded ids."""
    nodes = {r * n + c: (c * spacing, r * spacing) for r in range(n) for c in range(n)}
    segs = []
    for r in range(n):
        for c in range(n):
            a = r * n + c
            for b, tag in ((a + 1, f"h{r}{c}"), (a + n, f"v{r}{c}")):
                if (tag[0] == "h" and c == n - 1) or (tag[0] == "v" and r == n - 1):
                    continue
                pl = (nodes[a], nodes[b])
                segs.append(RoadSegment(f"{tag}f", cls, speed, pl, a, b, False, tag, False))
                segs.append(RoadSegment(f"{tag}b", cls, speed, pl[::-1], b, a, False, tag, True))
    return RoadNetwork(segs, nodes)


def dfs_paths(net, from_s, to_s, max_length, max_paths):
    """Exhaustive simple-path enumeration, sorted by (length, ids) and truncated."""
    out = []

    if from_s == to_s:
        return [(net.by_id[from_s].length, (from_s,))]

    def rec(ids):
        length = math.fsum(net.by_id[i].length for i in ids)
        if length > max_length:
            return
        if ids[-1] == to_s:
            out.append((length, tuple(ids)))
            return
        for nxt in net.adjacency[net.by_id[ids[-1]].to_node]:
            if nxt not in ids:
                rec(ids + [nxt])

    rec([from_s])
    out.sort()
    return out[:max_paths]


def brute_nearby(net, p, r):
    return sorted(
        ((s.id, project_to_segment(p, s).distance) for s in net.segments
         if project_to_segment(p, s).distance <= r),
        key=lambda t: (t[1], t[0]),
    )


def all_sequences(masks, sizes):
    """Every mask-compatible state sequence."""
    for seq in itertools.product(*[range(n) for n in sizes]):
        if all(masks[k][seq[k], seq[k + 1]] for k in range(len(masks))):
            yield seq


def enumerate_chain(node_pots, masks):
    """Brute-force log Z, node marginals, best sequence (lowest-index tie rule) and per-sequence log-probs."""
    sizes = [len(p) for p in node_pots]
    seqs = list(all_sequences(masks, sizes))
    scores = np.array([math.fsum(float(node_pots[k][s]) for k, s in enumerate(seq)) for seq in seqs])
    m = scores.max()
    log_Z = m + math.log(math.fsum(np.exp(scores - m)))
    probs = np.exp(scores - log_Z)
    marg = [np.zeros(n) for n in sizes]
    for seq, p in zip(seqs, probs):
        for k, s in enumerate(seq):
            marg[k][s] += p
    best_score = scores.max()
    # backtracking from the end with lowest index at each step == smallest reversed tuple
    best = min((seq for seq, sc in zip(seqs, scores) if sc == best_score), key=lambda q: q[::-1])
    logp = {seq: sc - log_Z for seq, sc in zip(seqs, scores)}
    return log_Z, marg, best, logp


def random_chain(rng, n_obs=None, max_states=3, integer=False, min_states=1):
    """Random pruned point/path chain.

    Each path state gets one random start and end point state; states on no
    full compatible sequence are then dropped, as the lattice builder does.
    """
    while True:
        n = n_obs or int(rng.integers(1, 5))
        pts = [int(rng.integers(1, max_states + 1)) for _ in range(n)]
        masks = []
        for t in range(n - 1):
            n_paths = int(rng.integers(1, max_states + 1))
            a = np.zeros((pts[t], n_paths), dtype=bool)
            a[rng.integers(0, pts[t], n_paths), np.arange(n_paths)] = True
            b = np.zeros((n_paths, pts[t + 1]), dtype=bool)
            b[np.arange(n_paths), rng.integers(0, pts[t + 1], n_paths)] = True
            masks += [a, b]
        sizes = [pts[0]] + [m.shape[1] for m in masks]
        seqs = list(all_sequences(masks, sizes))
        if not seqs:
            continue
        used = [sorted({q[k] for q in seqs}) for k in range(len(sizes))]
        masks = [m[np.ix_(used[k], used[k + 1])] for k, m in enumerate(masks)]
        sizes = [len(u) for u in used]
        if min(sizes) < min_states:
            continue
        if integer:
            pots = [rng.integers(-2, 3, k).astype(float) for k in sizes]
        else:
            pots = [rng.normal(0, 1.5, k) for k in sizes]
        return pots, masks, sizes
