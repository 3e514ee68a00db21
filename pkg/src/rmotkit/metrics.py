"""HOTA, CLEAR and identity metrics for referring multi-object tracking.

Every (video, expression) pair is evaluated independently into additive count
tuples; the counts are summed over all pairs before rates are computed
(micro-averaging).

Ground-truth detections of a pair are the present boxes of the objects the
expression refers to. Absent ground truth is not a detection, so predicting
``[]`` there costs nothing while predicting a box there is a false positive.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve_max_score
from .geometry import PredictionSet, Tracklet, VideoAnnotation, natural_key

# slack on IoU >= threshold comparisons
IOU_EPS = 1e-12

DEFAULT_ALPHAS: Tuple[float, ...] = tuple(k / 20 for k in range(1, 20))

GtPair = Tuple[VideoAnnotation, str]


class EvaluationError(ValueError):
    """Misaligned ground truth / predictions; ``problems`` lists one message per pair."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class MetricConfig:
    clear_iou_threshold: float = 0.5
    hota_alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    # HOTA matching score = association potential + IoU / association_weight
    association_weight: float = 1e4

    def __post_init__(self) -> None:
        if not 0.0 < self.clear_iou_threshold < 1.0:
            raise ValueError("clear_iou_threshold must lie in (0, 1)")
        alphas = tuple(float(a) for a in self.hota_alphas)
        if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
            raise ValueError("hota_alphas must be non-empty and lie in (0, 1)")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("hota_alphas must be strictly increasing")
        if self.association_weight <= 0:
            raise ValueError("association_weight must be positive")
        object.__setattr__(self, "hota_alphas", alphas)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n, 4) and (m, 4) xyxy arrays, same arithmetic as ``geometry.iou``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass
class FrameData:
    gt: np.ndarray  # indices into SequenceData.gt_ids
    pred: np.ndarray  # indices into SequenceData.pred_ids
    ious: np.ndarray  # (len(gt), len(pred))


@dataclass
class SequenceData:
    """Per-frame detections of one (video, expression) pair."""

    num_frames: int
    gt_ids: List[str]
    pred_ids: List[str]
    frames: List[FrameData]

    @property
    def gt_counts(self) -> np.ndarray:
        c = np.zeros(len(self.gt_ids), dtype=int)
        for fr in self.frames:
            c[fr.gt] += 1
        return c

    @property
    def pred_counts(self) -> np.ndarray:
        c = np.zeros(len(self.pred_ids), dtype=int)
        for fr in self.frames:
            c[fr.pred] += 1
        return c


def build_sequence(gt_tracks: Sequence[Tracklet], pred_tracks: Sequence[Tracklet], num_frames: int) -> SequenceData:
    """Arrange present boxes per frame; ids are ordered naturally for deterministic matching."""
    gt_sorted = sorted((t for t in gt_tracks if t.has_present()), key=lambda t: natural_key(t.track_id))
    pred_sorted = sorted((t for t in pred_tracks if t.has_present()), key=lambda t: natural_key(t.track_id))
    for t in pred_sorted:
        bad = [f for f in t.frames() if f >= num_frames]
        if bad:
            raise EvaluationError([f"track {t.track_id!r} has frames {bad} outside [0, {num_frames})"])
    gt_present = [t.present() for t in gt_sorted]
    pred_present = [t.present() for t in pred_sorted]
    frames = []
    for f in range(num_frames):
        gi = [i for i, p in enumerate(gt_present) if f in p]
        pj = [j for j, p in enumerate(pred_present) if f in p]
        gboxes = np.array([gt_present[i][f].to_list() for i in gi], dtype=float).reshape(-1, 4)
        pboxes = np.array([pred_present[j][f].to_list() for j in pj], dtype=float).reshape(-1, 4)
        frames.append(FrameData(np.array(gi, dtype=int), np.array(pj, dtype=int), iou_matrix(gboxes, pboxes)))
    return SequenceData(
        num_frames=num_frames,
        gt_ids=[t.track_id for t in gt_sorted],
        pred_ids=[t.track_id for t in pred_sorted],
        frames=frames,
    )


def gt_tracks_for(video: VideoAnnotation, expression_id: str) -> List[Tracklet]:
    expr = video.expression(expression_id)
    wanted = list(dict.fromkeys(expr.object_ids))
    return [video.object(oid).tracklet.restricted(0, video.num_frames) for oid in wanted]


def sequence_for(gt: GtPair, pred: Optional[PredictionSet]) -> SequenceData:
    video, expression_id = gt
    tracks = pred.tracklets if pred is not None else []
    return build_sequence(gt_tracks_for(video, expression_id), tracks, video.num_frames)


# ---------------------------------------------------------------- CLEAR


@dataclass
class ClearCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0

    def __add__(self, other: "ClearCounts") -> "ClearCounts":
        return ClearCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.idsw + other.idsw)

    @property
    def num_gt(self) -> int:
        return self.tp + self.fn

    @property
    def mota(self) -> float:
        if self.num_gt == 0:
            return 0.0
        return 1.0 - (self.fn + self.fp + self.idsw) / self.num_gt


def clear_counts(seq: SequenceData, threshold: float) -> ClearCounts:
    out = ClearCounts()
    prev: Dict[int, int] = {}  # gt id -> pred id matched in the previous frame
    last: Dict[int, int] = {}  # gt id -> pred id of its latest match
    for fr in seq.frames:
        n_g, n_p = len(fr.gt), len(fr.pred)
        matches: List[Tuple[int, int]] = []
        if n_g and n_p:
            eligible = fr.ious >= threshold - IOU_EPS
            col_of = {int(p): j for j, p in enumerate(fr.pred)}
            for i, g in enumerate(fr.gt):
                j = col_of.get(prev.get(int(g), -1))
                if j is not None and eligible[i, j]:
                    matches.append((i, j))
            rows = [i for i in range(n_g) if i not in {m[0] for m in matches}]
            cols = [j for j in range(n_p) if j not in {m[1] for m in matches}]
            if rows and cols:
                sub = fr.ious[np.ix_(rows, cols)]
                for a, b in solve_max_score(sub, eligible[np.ix_(rows, cols)]):
                    matches.append((rows[a], cols[b]))
        prev = {}
        for i, j in matches:
            g, p = int(fr.gt[i]), int(fr.pred[j])
            if g in last and last[g] != p:
                out.idsw += 1
            last[g] = p
            prev[g] = p
        out.tp += len(matches)
        out.fn += n_g - len(matches)
        out.fp += n_p - len(matches)
    return out


def clear_metrics(gt: GtPair, pred: Optional[PredictionSet], cfg: MetricConfig = MetricConfig()) -> ClearCounts:
    """CLEAR counts for one pair; ``.mota`` gives MOTA."""
    return clear_counts(sequence_for(gt, pred), cfg.clear_iou_threshold)


# ---------------------------------------------------------------- Identity


@dataclass
class IdentityCounts:
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0

    def __add__(self, other: "IdentityCounts") -> "IdentityCounts":
        return IdentityCounts(self.idtp + other.idtp, self.idfp + other.idfp, self.idfn + other.idfn)

    @property
    def idf1(self) -> float:
        denom = 2 * self.idtp + self.idfp + self.idfn
        return 2 * self.idtp / denom if denom else 0.0

    @property
    def idp(self) -> float:
        denom = self.idtp + self.idfp
        return self.idtp / denom if denom else 0.0

    @property
    def idr(self) -> float:
        denom = self.idtp + self.idfn
        return self.idtp / denom if denom else 0.0


def identity_counts(seq: SequenceData, threshold: float) -> IdentityCounts:
    n_gt_dets = int(seq.gt_counts.sum())
    n_pred_dets = int(seq.pred_counts.sum())
    overlap = np.zeros((len(seq.gt_ids), len(seq.pred_ids)), dtype=int)
    for fr in seq.frames:
        if len(fr.gt) and len(fr.pred):
            overlap[np.ix_(fr.gt, fr.pred)] += fr.ious >= threshold - IOU_EPS
    idtp = 0
    if overlap.size:
        # every pair admissible: maximising matched overlap minimises IDFP + IDFN
        idtp = int(sum(overlap[r, c] for r, c in solve_max_score(overlap.astype(float))))
    return IdentityCounts(idtp=idtp, idfp=n_pred_dets - idtp, idfn=n_gt_dets - idtp)


def identity_metrics(gt: GtPair, pred: Optional[PredictionSet], cfg: MetricConfig = MetricConfig()) -> IdentityCounts:
    """Identity counts for one pair; ``.idf1``, ``.idp``, ``.idr`` give the rates."""
    return identity_counts(sequence_for(gt, pred), cfg.clear_iou_threshold)


# ---------------------------------------------------------------- HOTA


@dataclass
class HotaCounts:
    """Per-alpha sums: TP/FN/FP, sum of per-TP association scores, sum of TP IoUs."""

    alphas: Tuple[float, ...]
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    ass_sum: np.ndarray
    loc_sum: np.ndarray

    @classmethod
    def zeros(cls, alphas: Sequence[float]) -> "HotaCounts":
        n = len(alphas)
        return cls(tuple(alphas), np.zeros(n, int), np.zeros(n, int), np.zeros(n, int), np.zeros(n), np.zeros(n))

    def __add__(self, other: "HotaCounts") -> "HotaCounts":
        if self.alphas != other.alphas:
            raise ValueError("cannot add HOTA counts computed on different alpha grids")
        return HotaCounts(
            self.alphas,
            self.tp + other.tp,
            self.fn + other.fn,
            self.fp + other.fp,
            self.ass_sum + other.ass_sum,
            self.loc_sum + other.loc_sum,
        )

    def _safe_div(self, num: np.ndarray, den: np.ndarray) -> np.ndarray:
        den = np.asarray(den, dtype=float)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    @property
    def deta_alpha(self) -> np.ndarray:
        return self._safe_div(self.tp, self.tp + self.fn + self.fp)

    @property
    def assa_alpha(self) -> np.ndarray:
        return self._safe_div(self.ass_sum, self.tp)

    @property
    def loca_alpha(self) -> np.ndarray:
        return self._safe_div(self.loc_sum, self.tp)

    @property
    def hota_alpha(self) -> np.ndarray:
        return np.sqrt(self.deta_alpha * self.assa_alpha)

    @property
    def hota(self) -> float:
        return float(np.mean(self.hota_alpha))

    @property
    def deta(self) -> float:
        return float(np.mean(self.deta_alpha))

    @property
    def assa(self) -> float:
        return float(np.mean(self.assa_alpha))

    @property
    def loca(self) -> float:
        return float(np.mean(self.loca_alpha))


def hota_counts(seq: SequenceData, alphas: Sequence[float], association_weight: float) -> HotaCounts:
    out = HotaCounts.zeros(alphas)
    n_g, n_p = len(seq.gt_ids), len(seq.pred_ids)
    gt_counts = seq.gt_counts.astype(float)
    pred_counts = seq.pred_counts.astype(float)
    for a, alpha in enumerate(alphas):
        co = np.zeros((n_g, n_p))
        for fr in seq.frames:
            if len(fr.gt) and len(fr.pred):
                co[np.ix_(fr.gt, fr.pred)] += fr.ious >= alpha - IOU_EPS
        potential = co / np.maximum(gt_counts[:, None] + pred_counts[None, :] - co, 1.0)

        matched = np.zeros((n_g, n_p))
        tp = fn = fp = 0
        loc = 0.0
        for fr in seq.frames:
            k = 0
            if len(fr.gt) and len(fr.pred):
                eligible = fr.ious >= alpha - IOU_EPS
                if eligible.any():
                    score = potential[np.ix_(fr.gt, fr.pred)] + fr.ious / association_weight
                    pairs = solve_max_score(score, eligible)
                    k = len(pairs)
                    for i, j in pairs:
                        matched[fr.gt[i], fr.pred[j]] += 1
                        loc += fr.ious[i, j]
            tp += k
            fn += len(fr.gt) - k
            fp += len(fr.pred) - k
        denom = gt_counts[:, None] + pred_counts[None, :] - matched
        ass = np.where(matched > 0, matched * matched / np.maximum(denom, 1.0), 0.0)
        out.tp[a], out.fn[a], out.fp[a] = tp, fn, fp
        out.ass_sum[a] = float(ass.sum())
        out.loc_sum[a] = loc
    return out


def hota_metrics(gt: GtPair, pred: Optional[PredictionSet], cfg: MetricConfig = MetricConfig()) -> HotaCounts:
    """HOTA counts for one pair; ``.hota``, ``.deta``, ``.assa``, ``.loca`` give the alpha means."""
    return hota_counts(sequence_for(gt, pred), cfg.hota_alphas, cfg.association_weight)


# ---------------------------------------------------------------- report


@dataclass
class PairCounts:
    clear: ClearCounts
    identity: IdentityCounts
    hota: HotaCounts

    def __add__(self, other: "PairCounts") -> "PairCounts":
        return PairCounts(self.clear + other.clear, self.identity + other.identity, self.hota + other.hota)


def evaluate_sequence(seq: SequenceData, cfg: MetricConfig) -> PairCounts:
    return PairCounts(
        clear_counts(seq, cfg.clear_iou_threshold),
        identity_counts(seq, cfg.clear_iou_threshold),
        hota_counts(seq, cfg.hota_alphas, cfg.association_weight),
    )


@dataclass
class AlphaRow:
    alpha: float
    hota: float
    deta: float
    assa: float
    loca: float


@dataclass
class MetricReport:
    hota: float
    deta: float
    assa: float
    loca: float
    idf1: float
    idp: float
    idr: float
    mota: float
    idsw: int
    tp: int
    fp: int
    fn: int
    per_alpha: List[AlphaRow] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @classmethod
    def from_counts(cls, counts: PairCounts) -> "MetricReport":
        h, c, i = counts.hota, counts.clear, counts.identity
        flags = []
        if c.num_gt == 0:
            flags.append("no_gt_detections")
        if c.tp + c.fp == 0:
            flags.append("no_predicted_detections")
        empty = [a for a, tp in zip(h.alphas, h.tp) if tp == 0]
        if empty:
            flags.append("no_true_positives_at_alpha:" + ",".join(f"{a:g}" for a in empty))
        rows = [
            AlphaRow(float(a), float(hv), float(dv), float(av), float(lv))
            for a, hv, dv, av, lv in zip(h.alphas, h.hota_alpha, h.deta_alpha, h.assa_alpha, h.loca_alpha)
        ]
        return cls(
            hota=h.hota,
            deta=h.deta,
            assa=h.assa,
            loca=h.loca,
            idf1=i.idf1,
            idp=i.idp,
            idr=i.idr,
            mota=c.mota,
            idsw=c.idsw,
            tp=c.tp,
            fp=c.fp,
            fn=c.fn,
            per_alpha=rows,
            flags=flags,
        )

    def to_dict(self) -> Dict:
        return asdict(self)

    def format_table(self) -> str:
        """Aligned text table; rates shown x100 with one decimal."""
        cols = [
            ("HOTA", self.hota),
            ("DetA", self.deta),
            ("AssA", self.assa),
            ("LocA", self.loca),
            ("IDF1", self.idf1),
            ("IDP", self.idp),
            ("IDR", self.idr),
            ("MOTA", self.mota),
        ]
        cells = [(name, f"{100.0 * v:.1f}") for name, v in cols] + [("IDsw", str(self.idsw))]
        widths = [max(len(n), len(v)) for n, v in cells]
        head = "  ".join(n.rjust(w) for (n, _), w in zip(cells, widths))
        row = "  ".join(v.rjust(w) for (_, v), w in zip(cells, widths))
        return head + "\n" + row + "\n"


def _align(gt: Sequence[GtPair], preds: Sequence[PredictionSet]) -> List[Tuple[GtPair, Optional[PredictionSet]]]:
    problems = []
    gt_keys: Dict[Tuple[str, str], GtPair] = {}
    for video, eid in gt:
        key = (video.video_id, eid)
        if key in gt_keys:
            problems.append(f"duplicate ground-truth pair {key}")
            continue
        try:
            video.expression(eid)
        except KeyError:
            problems.append(f"video {video.video_id!r} has no expression {eid!r}")
            continue
        gt_keys[key] = (video, eid)
    by_key: Dict[Tuple[str, str], PredictionSet] = {}
    for p in preds:
        if p.key not in gt_keys:
            problems.append(f"prediction for unknown pair (video={p.video_id!r}, expression={p.expression_id!r})")
        elif p.key in by_key:
            problems.append(f"duplicate prediction for pair (video={p.video_id!r}, expression={p.expression_id!r})")
        else:
            by_key[p.key] = p
    for key, p in by_key.items():
        video = gt_keys[key][0]
        for t in p.tracklets:
            bad = [f for f in t.frames() if f >= video.num_frames]
            if bad:
                problems.append(
                    f"prediction {key}: track {t.track_id!r} has frames {bad} beyond num_frames {video.num_frames}"
                )
    if problems:
        raise EvaluationError(problems)
    return [(pair, by_key.get(key)) for key, pair in gt_keys.items()]


def _pair_counts(args: Tuple[GtPair, Optional[PredictionSet], MetricConfig]) -> PairCounts:
    gt, pred, cfg = args
    return evaluate_sequence(sequence_for(gt, pred), cfg)


def evaluate(
    gt: Sequence[GtPair],
    preds: Sequence[PredictionSet],
    cfg: MetricConfig = MetricConfig(),
    jobs: int = 1,
) -> MetricReport:
    """Evaluate predictions against every ground-truth (video, expression) pair.

    Pairs without a prediction count as empty predictions. Raises
    ``EvaluationError`` for predictions of unknown or duplicated pairs.
    """
    work = [(g, p, cfg) for g, p in _align(gt, preds)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_pair_counts, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        parts = [_pair_counts(w) for w in work]
    total = PairCounts(ClearCounts(), IdentityCounts(), HotaCounts.zeros(cfg.hota_alphas))
    for part in parts:
        total = total + part
    return MetricReport.from_counts(total)


def all_pairs(videos: Sequence[VideoAnnotation]) -> List[GtPair]:
    return [(v, e.expression_id) for v in videos for e in v.expressions]

