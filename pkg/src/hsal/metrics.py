"""Evaluation metrics: multiset macro-F1, exact match, glimpse saliency."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .multiset import LabelMultiset


@dataclass
class ClassPRF:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class EvalReport:
    macro_f1: float
    exact_match: float
    attn_saliency: float | None = None
    per_class: dict[int, ClassPRF] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"macro_f1,{self.macro_f1:.6f}",
               f"exact_match,{self.exact_match:.6f}"]
        if self.attn_saliency is not None:
            out.append(f"attn_saliency,{self.attn_saliency:.6f}")
        for c in sorted(self.per_class):
            p = self.per_class[c]
            out.append(f"class_{c},precision={p.precision:.6f},"
                       f"recall={p.recall:.6f},f1={p.f1:.6f}")
        return out


def multiset_prf(preds: Sequence[LabelMultiset],
                 truths: Sequence[LabelMultiset]) -> EvalReport:
    """Count-truncated multiset precision/recall/F1 plus exact match.

    Per class, TP counts min(pred multiplicity, true multiplicity) per
    example; macro-F1 averages over every class appearing in predictions
    or ground truth; 0/0 ratios resolve to 0.
    """
    if len(preds) != len(truths):
        raise ValueError(f"multiset_prf: {len(preds)} predictions vs "
                         f"{len(truths)} ground truths")
    classes = set()
    for ms in list(preds) + list(truths):
        classes.update(ms.counts)
    tally = {c: [0, 0, 0] for c in classes}  # tp, fp, fn
    exact = 0
    for p, t in zip(preds, truths):
        if p == t:
            exact += 1
        for c in set(p.counts) | set(t.counts):
            pc = p.counts.get(c, 0)
            tc = t.counts.get(c, 0)
            hit = min(pc, tc)
            tally[c][0] += hit
            tally[c][1] += pc - hit
            tally[c][2] += tc - hit
    per_class = {}
    for c, (tp, fp, fn) in tally.items():
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
        per_class[c] = ClassPRF(prec, rec, f1, tp, fp, fn)
    macro = sum(p.f1 for p in per_class.values()) / len(per_class) if per_class else 0.0
    return EvalReport(macro_f1=macro,
                      exact_match=exact / len(preds) if preds else 0.0,
                      per_class=per_class)


def attn_saliency(traj) -> float:
    """Mean pre-update saliency value at the glimpsed cells of one episode."""
    per_step = []
    for step in traj.steps:
        if not step.glimpses:
            continue
        vals = [step.saliency[y, x] for (x, y) in step.glimpses]
        per_step.append(sum(vals) / len(vals))
    if not per_step:
        raise ValueError("attn_saliency: trajectory has no glimpses")
    return sum(per_step) / len(per_step)


def mean_attn_saliency(trajs: Sequence) -> float:
    vals = [attn_saliency(t) for t in trajs]
    return sum(vals) / len(vals) if vals else 0.0
