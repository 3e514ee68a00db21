"""Brute-force reference implementations used only by the tests.

Nothing here imports the code under test's matching or metric logic. IoUs and
association scores are exact ``Fraction`` values, so scenarios must use
integer box coordinates.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Dict, Iterator, List, Sequence, Tuple

INF = float("inf")

Box = Tuple[int, int, int, int]
Tracks = Dict[str, Dict[int, Box]]


# ------------------------------------------------------------------ geometry


def raster_iou(a: Box, b: Box) -> Fraction:
    """IoU by counting unit pixels covered by each integer box."""
    pa = {(x, y) for x in range(a[0], a[2]) for y in range(a[1], a[3])}
    pb = {(x, y) for x in range(b[0], b[2]) for y in range(b[1], b[3])}
    union = len(pa | pb)
    return Fraction(len(pa & pb), union) if union else Fraction(0)


def frac_iou(a: Box, b: Box) -> Fraction:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return Fraction(inter, union) if union > 0 else Fraction(0)


# ------------------------------------------------------------------ matching


def partial_matchings(n_rows: int, n_cols: int, allowed) -> Iterator[List[Tuple[int, int]]]:
    """Every injective partial matching using only ``allowed(r, c)`` pairs."""

    def rec(r: int, used: frozenset, acc: List[Tuple[int, int]]):
        if r == n_rows:
            yield list(acc)
            return
        yield from rec(r + 1, used, acc)
        for c in range(n_cols):
            if c not in used and allowed(r, c):
                acc.append((r, c))
                yield from rec(r + 1, used | {c}, acc)
                acc.pop()

    yield from rec(0, frozenset(), [])


def lex_key(matching: Sequence[Tuple[int, int]], n_rows: int) -> Tuple:
    cols = dict(matching)
    return tuple(cols.get(r, INF) for r in range(n_rows))


def brute_min_cost_full(cost: Sequence[Sequence[float]]) -> float:
    """Minimum assignment cost over all permutations (every entry admissible)."""
    r = len(cost)
    c = len(cost[0]) if r else 0
    if r == 0 or c == 0:
        return 0.0
    if r <= c:
        return min(math.fsum(cost[i][p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))
    return min(math.fsum(cost[p[j]][j] for j in range(c)) for p in itertools.permutations(range(r), c))


def brute_min_cost(cost, forbidden) -> List[Tuple[int, int]]:
    """Max cardinality, then min cost (exact for Fraction/int costs), then lowest-row-first columns."""
    r = len(cost)
    c = len(cost[0]) if r else 0
    best = None
    for m in partial_matchings(r, c, lambda i, j: not forbidden[i][j]):
        key = (-len(m), sum(cost[i][j] for i, j in m), lex_key(m, r))
        if best is None or key < best[0]:
            best = (key, m)
    return sorted(best[1]) if best else []


# ------------------------------------------------------------------ metrics


def _present(tracks: Tracks, t: int) -> List[str]:
    return [k for k in sorted(tracks) if t in tracks[k]]


def clear_oracle(gt: Tracks, pred: Tracks, T: int, thr: Fraction):
    tp = fp = fn = idsw = 0
    prev: Dict[str, str] = {}
    last: Dict[str, str] = {}
    for t in range(T):
        G, P = _present(gt, t), _present(pred, t)
        ious = {(g, p): frac_iou(gt[g][t], pred[p][t]) for g in G for p in P}
        must = {(g, prev[g]) for g in G if g in prev and prev[g] in P and ious[(g, prev[g])] >= thr}
        best = None
        for m in partial_matchings(len(G), len(P), lambda i, j: ious[(G[i], P[j])] >= thr):
            named = {(G[i], P[j]) for i, j in m}
            if not must <= named:
                continue
            key = (-len(m), -sum(ious[x] for x in named), lex_key(m, len(G)))
            if best is None or key < best[0]:
                best = (key, named)
        named = best[1]
        prev = {}
        for g, p in sorted(named):
            if g in last and last[g] != p:
                idsw += 1
            last[g] = p
            prev[g] = p
        tp += len(named)
        fn += len(G) - len(named)
        fp += len(P) - len(named)
    num_gt = tp + fn
    mota = 1 - Fraction(fn + fp + idsw, num_gt) if num_gt else Fraction(0)
    return {"tp": tp, "fp": fp, "fn": fn, "idsw": idsw, "mota": mota}


def identity_oracle(gt: Tracks, pred: Tracks, T: int, thr: Fraction):
    gids, pids = sorted(gt), sorted(pred)
    n_gt = sum(len(v) for v in gt.values())
    n_pred = sum(len(v) for v in pred.values())
    overlap = {
        (g, p): sum(1 for t in range(T) if t in gt[g] and t in pred[p] and frac_iou(gt[g][t], pred[p][t]) >= thr)
        for g in gids
        for p in pids
    }
    idtp = max(
        (sum(overlap[(gids[i], pids[j])] for i, j in m) for m in partial_matchings(len(gids), len(pids), lambda i, j: True)),
        default=0,
    )
    idfp, idfn = n_pred - idtp, n_gt - idtp
    f1_den = 2 * idtp + idfp + idfn
    return {
        "idtp": idtp,
        "idf1": Fraction(2 * idtp, f1_den) if f1_den else Fraction(0),
        "idp": Fraction(idtp, idtp + idfp) if idtp + idfp else Fraction(0),
        "idr": Fraction(idtp, idtp + idfn) if idtp + idfn else Fraction(0),
    }


def hota_oracle(gt: Tracks, pred: Tracks, T: int, alphas: Sequence[Fraction]):
    """Per alpha: exhaustive per-frame matching maximising
    (cardinality, summed association potential, summed IoU), ties to lowest rows/cols."""
    gids, pids = sorted(gt), sorted(pred)
    n_g = {g: len(gt[g]) for g in gids}
    n_p = {p: len(pred[p]) for p in pids}
    rows = []
    for alpha in alphas:
        co = {
            (g, p): sum(
                1 for t in range(T) if t in gt[g] and t in pred[p] and frac_iou(gt[g][t], pred[p][t]) >= alpha
            )
            for g in gids
            for p in pids
        }
        pot = {k: Fraction(v, n_g[k[0]] + n_p[k[1]] - v) for k, v in co.items()}
        matched = {k: 0 for k in co}
        tp = fn = fp = 0
        loc = Fraction(0)
        for t in range(T):
            G, P = _present(gt, t), _present(pred, t)
            ious = {(g, p): frac_iou(gt[g][t], pred[p][t]) for g in G for p in P}
            best = None
            for m in partial_matchings(len(G), len(P), lambda i, j: ious[(G[i], P[j])] >= alpha):
                named = [(G[i], P[j]) for i, j in m]
                key = (
                    -len(m),
                    -sum(pot[x] for x in named),
                    -sum(ious[x] for x in named),
                    lex_key(m, len(G)),
                )
                if best is None or key < best[0]:
                    best = (key, named)
            named = best[1]
            for x in named:
                matched[x] += 1
                loc += ious[x]
            tp += len(named)
            fn += len(G) - len(named)
            fp += len(P) - len(named)
        ass = sum(
            (Fraction(v * v, n_g[k[0]] + n_p[k[1]] - v) for k, v in matched.items() if v),
            Fraction(0),
        )
        deta = Fraction(tp, tp + fn + fp) if tp + fn + fp else Fraction(0)
        assa = ass / tp if tp else Fraction(0)
        loca = loc / tp if tp else Fraction(0)
        rows.append({"deta": deta, "assa": assa, "loca": loca, "hota": math.sqrt(deta * assa)})
    n = len(rows)
    return {
        "per_alpha": rows,
        "hota": sum(r["hota"] for r in rows) / n,
        "deta": float(sum(r["deta"] for r in rows) / n),
        "assa": float(sum(r["assa"] for r in rows) / n),
        "loca": float(sum(r["loca"] for r in rows) / n),
    }
