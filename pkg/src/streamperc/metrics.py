"""KITTI-style difficulty tiers, greedy matching, PR curves and AP-R40.

Evaluation at level L takes ground truth of difficulty <= L as in-scope;
stricter GT, DontCare rows, and GT that never qualifies are ignore-matched
(detections hitting them are neither true nor false positives).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

from .geometry import Box3D, iou_bev, iou_3d
from .kitti_io import LabeledBox

N_RECALL_POSITIONS = 40
DEFAULT_IOU_THRESHOLDS = (0.7, 0.5)
DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")


class Difficulty(IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


# (min bbox height px, max occlusion, max truncation) per level.
DIFFICULTY_THRESHOLDS = {
    Difficulty.EASY: (40.0, 0, 0.15),
    Difficulty.MODERATE: (25.0, 1, 0.30),
    Difficulty.HARD: (25.0, 2, 0.50),
}


def difficulty_of(gt: LabeledBox) -> Difficulty:
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        min_h, max_occ, max_trunc = DIFFICULTY_THRESHOLDS[level]
        if (
            gt.bbox_height >= min_h
            and gt.occlusion <= max_occ
            and gt.truncation <= max_trunc
        ):
            return level
    return Difficulty.IGNORED


@dataclass
class FrameMatchResult:
    # One (score, kind) record per non-ignored detection; kind is "tp"/"fp".
    det_records: List[Tuple[float, str]]
    n_in_scope_gt: int


def _iou(a: Box3D, b: Box3D, kind: str) -> float:
    return iou_bev(a, b) if kind == "bev" else iou_3d(a, b)


def match_frame(
    preds: Sequence[Box3D],
    gts: Sequence[LabeledBox],
    iou_threshold: float,
    level: Difficulty,
    iou_kind: str = "bev",
    class_name: Optional[str] = None,
) -> FrameMatchResult:
    """Greedy score-ordered matching of one frame.

    Each detection claims the best unclaimed in-scope GT with IoU >=
    threshold (TP); failing that an ignorable GT (dropped from scoring);
    otherwise it is an FP.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError("iou_threshold must be in (0, 1]")
    if class_name is not None:
        gts = [g for g in gts if g.class_name in (class_name, "DontCare")]
    in_scope: List[int] = []
    ignorable: List[int] = []
    gt_boxes: List[Optional[Box3D]] = []
    for gi, g in enumerate(gts):
        gt_boxes.append(g.to_box3d())
        if g.class_name == "DontCare":
            ignorable.append(gi)
        elif difficulty_of(g) <= level:
            in_scope.append(gi)
        else:
            ignorable.append(gi)
    claimed = set()
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    records = []
    for pi in order:
        det = preds[pi]
        best_gt, best_iou = None, 0.0
        for gi in in_scope:
            if gi in claimed:
                continue
            v = _iou(det, gt_boxes[gi], iou_kind)
            if v >= iou_threshold and v > best_iou:
                best_gt, best_iou = gi, v
        if best_gt is not None:
            claimed.add(best_gt)
            records.append((det.score, "tp"))
            continue
        ignored = False
        for gi in ignorable:
            if _iou(det, gt_boxes[gi], iou_kind) >= iou_threshold:
                ignored = True
                break
        if not ignored:
            records.append((det.score, "fp"))
    return FrameMatchResult(det_records=records, n_in_scope_gt=len(in_scope))


def pr_curve(
    det_records: Sequence[Tuple[float, str]], n_gt: int
) -> List[Tuple[float, float, float]]:
    """(threshold, precision, recall) at each distinct score threshold.

    Thresholds sweep the distinct detection scores from high to low; a
    record is included when its score >= threshold, so tied scores enter
    together.
    """
    if n_gt <= 0 or not det_records:
        return []
    recs = sorted(det_records, key=lambda r: -r[0])
    points = []
    tp = fp = 0
    n = len(recs)
    for i, (score, kind) in enumerate(recs):
        if kind == "tp":
            tp += 1
        else:
            fp += 1
        if i + 1 < n and recs[i + 1][0] == score:
            continue  # more records at this threshold
        points.append((score, tp / (tp + fp), tp / n_gt))
    return points


def ap_r40(
    det_records: Sequence[Tuple[float, str]], n_gt: int
) -> Optional[float]:
    """AP at 40 recall positions {1/40, ..., 1}; None when no GT in scope."""
    if n_gt <= 0:
        return None
    points = pr_curve(det_records, n_gt)
    total = 0.0
    for i in range(1, N_RECALL_POSITIONS + 1):
        r = i / N_RECALL_POSITIONS
        p = max((prec for _, prec, rec in points if rec >= r - 1e-12), default=0.0)
        total += p
    return total / N_RECALL_POSITIONS


@dataclass
class ApCell:
    class_name: str
    iou_kind: str
    iou_threshold: float
    level: str
    ap: Optional[float]


def evaluate_pairs(
    pairs: Sequence[Tuple[Sequence[Box3D], Sequence[LabeledBox]]],
    classes: Sequence[str] = DEFAULT_CLASSES,
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    iou_kinds: Sequence[str] = ("bev", "3d"),
    class_ids: Optional[Dict[str, int]] = None,
) -> List[ApCell]:
    """AP table over (prediction, GT) pairs: one cell per
    (class, kind, threshold, level).

    The pairing is the caller's concern: frame-aligned pairs give offline
    AP, stream pairs give sAP.
    """
    ids = class_ids or {name: i for i, name in enumerate(classes)}
    cells = []
    for cls_name in classes:
        cid = ids[cls_name]
        for kind in iou_kinds:
            for thr in iou_thresholds:
                for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
                    records: List[Tuple[float, str]] = []
                    n_gt = 0
                    for preds, gts in pairs:
                        cls_preds = [p for p in preds if p.class_id == cid]
                        res = match_frame(
                            cls_preds, gts, thr, level, kind, class_name=cls_name
                        )
                        records.extend(res.det_records)
                        n_gt += res.n_in_scope_gt
                    cells.append(
                        ApCell(
                            class_name=cls_name,
                            iou_kind=kind,
                            iou_threshold=thr,
                            level=level.name.lower(),
                            ap=ap_r40(records, n_gt),
                        )
                    )
    return cells


def sap_report(
    pairs,
    classes: Sequence[str] = DEFAULT_CLASSES,
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    iou_kinds: Sequence[str] = ("bev", "3d"),
    class_ids: Optional[Dict[str, int]] = None,
) -> List[ApCell]:
    """sAP table: identical machinery to offline AP, stream pairing."""
    if not pairs:
        raise ValueError("stream pairs must be nonempty")
    return evaluate_pairs(pairs, classes, iou_thresholds, iou_kinds, class_ids)
