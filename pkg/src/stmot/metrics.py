"""Tracking evaluation: CLEAR counts plus the recall-integrated family.

CLEAR matching runs the Hungarian method per frame on volumetric IoU with an
eligibility threshold; an id switch is counted whenever a ground-truth track
is matched to a different prediction id than at its previous matched frame.

The integrated metrics sweep L recall levels. For each target recall the
confidence threshold is the score of the true positive at which the
sequence first reaches that recall (taken from the full, unthresholded run);
the tracker is then re-evaluated with predictions at or above the threshold.
With G total ground-truth boxes and per-threshold counts FP_k, FN_k, IDSW_k,
TP_k and achieved recall rho_k = TP_k / G:

    MOTA_k   = max(0, 1 - (FP_k + FN_k + IDSW_k) / G)
    sMOTA_k  = clamp(1 - (FP_k + IDSW_k + FN_k - (1 - rho_k) * G) / (rho_k * G), 0, 1)
    MOTP_k   = mean matched IoU at that threshold

Unreachable recall levels contribute zero. The averages over the L levels
give AMOTA, sAMOTA and AMOTP; since FN_k = G - TP_k for every run, the
sMOTA_k numerator reduces to FP_k + IDSW_k, which is what makes the scaled
score span [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Box3D, iou_3d

_INELIGIBLE_COST = 2.0


class MetricsUndefinedError(ValueError):
    """Raised when a report is requested for data with no ground truth."""


@dataclass
class FrameEval:
    """Matching counts for one frame (or an accumulation of frames)."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    iou_sum: float = 0.0

    def add(self, other: "FrameEval") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.idsw += other.idsw
        self.iou_sum += other.iou_sum


def match_frame(preds: list[tuple[int, Box3D]], gts: list[tuple[int, Box3D]],
                iou_threshold: float, last_match: dict[int, int],
                tp_scores: list[float] | None = None) -> FrameEval:
    """Hungarian matching for a single frame; mutates the id-switch memory.

    last_match maps each ground-truth id to the prediction id it was matched
    to at its most recent matched frame.
    """
    ev = FrameEval()
    n_g, n_p = len(gts), len(preds)
    if n_g and n_p:
        iou = np.zeros((n_g, n_p))
        for g, (_, gt_box) in enumerate(gts):
            for p, (_, pred_box) in enumerate(preds):
                iou[g, p] = iou_3d(gt_box, pred_box)
        cost = np.where(iou >= iou_threshold, 1.0 - iou, _INELIGIBLE_COST)
        rows, cols = linear_sum_assignment(cost)
        for g, p in zip(rows, cols):
            if iou[g, p] < iou_threshold:
                continue
            gt_id, pred_id = gts[g][0], preds[p][0]
            if gt_id in last_match and last_match[gt_id] != pred_id:
                ev.idsw += 1
            last_match[gt_id] = pred_id
            ev.tp += 1
            ev.iou_sum += float(iou[g, p])
            if tp_scores is not None:
                tp_scores.append(float(preds[p][1].score))
    ev.fp = n_p - ev.tp
    ev.fn = n_g - ev.tp
    return ev


def evaluate_clear(pred_frames: dict[int, list[tuple[int, Box3D]]],
                   gt_frames: dict[int, list[tuple[int, Box3D]]],
                   iou_threshold: float = 0.25,
                   collect_tp_scores: bool = False):
    """Accumulate CLEAR counts over a sequence.

    Returns (totals, num_gt) or (totals, num_gt, tp_scores) when asked to
    collect the confidences of matched predictions.
    """
    frames = sorted(set(pred_frames) | set(gt_frames))
    totals = FrameEval()
    last_match: dict[int, int] = {}
    tp_scores: list[float] = []
    num_gt = 0
    for f in frames:
        preds = pred_frames.get(f, [])
        gts = gt_frames.get(f, [])
        num_gt += len(gts)
        totals.add(match_frame(preds, gts, iou_threshold, last_match,
                               tp_scores if collect_tp_scores else None))
    if collect_tp_scores:
        return totals, num_gt, tp_scores
    return totals, num_gt


def mota(totals: FrameEval, num_gt: int) -> float:
    if num_gt == 0:
        raise MetricsUndefinedError("MOTA undefined without ground truth")
    return 1.0 - (totals.fp + totals.fn + totals.idsw) / num_gt


def motp(totals: FrameEval) -> float:
    """Mean matched IoU; 0 when nothing matched."""
    return totals.iou_sum / totals.tp if totals.tp else 0.0


@dataclass
class MetricReport:
    mota: float
    motp: float
    samota: float
    amota: float
    amotp: float
    mota_curve: list[float]
    smota_curve: list[float]
    motp_curve: list[float]
    recall_targets: list[float]
    thresholds: list[float | None]
    num_gt: int
    tp: int
    fp: int
    fn: int
    idsw: int

    def to_dict(self) -> dict:
        return {
            "MOTA": self.mota,
            "MOTP": self.motp,
            "sAMOTA": self.samota,
            "AMOTA": self.amota,
            "AMOTP": self.amotp,
            "num_gt": self.num_gt,
            "TP": self.tp,
            "FP": self.fp,
            "FN": self.fn,
            "IDSW": self.idsw,
            "recall_targets": self.recall_targets,
            "mota_curve": self.mota_curve,
            "smota_curve": self.smota_curve,
            "motp_curve": self.motp_curve,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def table(self) -> str:
        rows = [
            ("MOTA", self.mota), ("MOTP", self.motp), ("sAMOTA", self.samota),
            ("AMOTA", self.amota), ("AMOTP", self.amotp),
            ("GT", self.num_gt), ("TP", self.tp), ("FP", self.fp),
            ("FN", self.fn), ("IDSW", self.idsw),
        ]
        width = max(len(name) for name, _ in rows)
        lines = []
        for name, value in rows:
            if isinstance(value, float):
                lines.append(f"{name:<{width}}  {value:.6f}")
            else:
                lines.append(f"{name:<{width}}  {value}")
        return "\n".join(lines)

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["recall_target", "threshold", "mota", "smota", "motp"])
            for r, t, m, s, p in zip(self.recall_targets, self.thresholds,
                                     self.mota_curve, self.smota_curve, self.motp_curve):
                writer.writerow([r, "" if t is None else t, m, s, p])


def amota_family(pred_frames: dict[int, list[tuple[int, Box3D]]],
                 gt_frames: dict[int, list[tuple[int, Box3D]]],
                 iou_threshold: float = 0.25, levels: int = 40) -> MetricReport:
    """Full report: CLEAR totals plus the recall-averaged metrics.

    Prediction confidence is taken from each box's score field.
    """
    totals, num_gt, tp_scores = evaluate_clear(
        pred_frames, gt_frames, iou_threshold, collect_tp_scores=True)
    if num_gt == 0:
        raise MetricsUndefinedError("no ground-truth boxes in the sequence")

    scores_desc = sorted(tp_scores, reverse=True)
    recall_targets = [(k + 1) / levels for k in range(levels)]
    thresholds: list[float | None] = []
    for r in recall_targets:
        need = int(np.ceil(r * num_gt - 1e-12))
        if need <= len(scores_desc):
            thresholds.append(scores_desc[need - 1] if need > 0 else scores_desc[0])
        else:
            thresholds.append(None)

    cache: dict[float, tuple[FrameEval, int]] = {}
    mota_curve, smota_curve, motp_curve = [], [], []
    for thr in thresholds:
        if thr is None:
            mota_curve.append(0.0)
            smota_curve.append(0.0)
            motp_curve.append(0.0)
            continue
        if thr not in cache:
            filtered = {
                f: [(pid, box) for pid, box in preds if box.score >= thr]
                for f, preds in pred_frames.items()
            }
            cache[thr] = evaluate_clear(filtered, gt_frames, iou_threshold)
        ev, _ = cache[thr]
        mota_k = max(0.0, 1.0 - (ev.fp + ev.fn + ev.idsw) / num_gt)
        if ev.tp == 0:
            smota_k = 0.0
            motp_k = 0.0
        else:
            rho = ev.tp / num_gt
            smota_k = 1.0 - (ev.fp + ev.idsw + ev.fn - (1.0 - rho) * num_gt) / (rho * num_gt)
            smota_k = min(max(smota_k, 0.0), 1.0)
            motp_k = ev.iou_sum / ev.tp
        mota_curve.append(mota_k)
        smota_curve.append(smota_k)
        motp_curve.append(motp_k)

    return MetricReport(
        mota=mota(totals, num_gt),
        motp=motp(totals),
        samota=sum(smota_curve) / levels,
        amota=sum(mota_curve) / levels,
        amotp=sum(motp_curve) / levels,
        mota_curve=mota_curve,
        smota_curve=smota_curve,
        motp_curve=motp_curve,
        recall_targets=recall_targets,
        thresholds=thresholds,
        num_gt=num_gt,
        tp=totals.tp,
        fp=totals.fp,
        fn=totals.fn,
        idsw=totals.idsw,
    )
