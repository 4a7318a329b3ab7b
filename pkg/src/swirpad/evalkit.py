"""ISO-style PAD metrics: error rates, threshold selection, curves, reports.

Decision rule everywhere: accept (declare bonafide) iff score >= tau, with
higher scores meaning more bonafide. Rates are percentages computed from
integer counts with the division last, so the ACER identity
acer == (apcer + bpcer) / 2 holds exactly.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import ATTACK_TYPES


class MissingClassError(ValueError):
    """Score set lacks one class; the message names the missing one."""


class GranularityWarning(UserWarning):
    """Too few bonafide scores to realize the requested BPCER target."""


@dataclass(frozen=True)
class ScoreEntry:
    presentation_id: str
    score: float
    label: str           # "bonafide" | "attack"
    attack_type: str = "none"


@dataclass
class ScoreSet:
    """Per-presentation scores with ground truth, the unit of all metrics."""

    entries: list[ScoreEntry]
    split: str = ""
    protocol: str = ""

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty score set")
        ids = [e.presentation_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate presentation ids in score set")
        scores = np.array([e.score for e in self.entries], dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValueError("non-finite scores in score set")

    def bonafide_scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries if e.label == "bonafide"],
                        dtype=np.float64)

    def attack_scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries if e.label == "attack"],
                        dtype=np.float64)

    def attack_scores_by_type(self) -> dict[str, np.ndarray]:
        out: dict[str, list[float]] = {}
        for e in self.entries:
            if e.label == "attack":
                out.setdefault(e.attack_type, []).append(e.score)
        return {t: np.array(v, dtype=np.float64) for t, v in out.items()}

    def all_scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries], dtype=np.float64)


@dataclass(frozen=True)
class RateTriple:
    apcer: float    # percent of attacks accepted
    bpcer: float    # percent of bonafide rejected
    acer: float     # (apcer + bpcer) / 2
    tau: float


def _require_both_classes(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    bf = scores.bonafide_scores()
    att = scores.attack_scores()
    if att.size == 0:
        raise MissingClassError("score set has no attack entries")
    if bf.size == 0:
        raise MissingClassError("score set has no bonafide entries")
    return bf, att


def compute_rates(scores: ScoreSet, tau: float) -> RateTriple:
    """APCER/BPCER/ACER at threshold tau, integer counts, division last."""
    bf, att = _require_both_classes(scores)
    apcer = 100.0 * int(np.count_nonzero(att >= tau)) / att.size
    bpcer = 100.0 * int(np.count_nonzero(bf < tau)) / bf.size
    return RateTriple(apcer=apcer, bpcer=bpcer, acer=(apcer + bpcer) / 2.0,
                      tau=tau)


def _candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent sorted values plus just-outside sentinels.

    Duplicated adjacent values contribute their own value as a midpoint;
    the candidate list itself is deduplicated.
    """
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    mids = (ordered[:-1] + ordered[1:]) / 2.0
    return np.unique(np.concatenate(
        ([ordered[0] - 1e-6], mids, [ordered[-1] + 1e-6])))


def threshold_at_bpcer(dev: ScoreSet, target: float = 1.0) -> float:
    """Largest candidate threshold whose dev BPCER does not exceed target (%).

    Candidates are midpoints of adjacent sorted bonafide scores plus
    sentinels just outside the observed range. With fewer bonafide scores
    than the target granularity allows, a warning is raised and the
    largest zero-BPCER threshold is returned.
    """
    bf = dev.bonafide_scores()
    if bf.size == 0:
        raise MissingClassError("score set has no bonafide entries")
    if target < 0:
        raise ValueError("target must be >= 0")
    candidates = _candidate_thresholds(bf)
    if target > 0 and bf.size * target < 100.0:
        warnings.warn(
            f"{bf.size} bonafide scores cannot resolve BPCER target {target}%; "
            "falling back to the largest zero-BPCER threshold",
            GranularityWarning, stacklevel=2)
        target = 0.0
    best = None
    for tau in candidates:
        bpcer = 100.0 * int(np.count_nonzero(bf < tau)) / bf.size
        if bpcer <= target and (best is None or tau > best):
            best = tau
    return float(best)


def eer(scores: ScoreSet) -> float:
    """Error rate where APCER and BPCER cross, scanned over midpoints.

    Returns (APCER + BPCER) / 2 at the threshold minimizing their absolute
    difference; ties resolve to the lower threshold.
    """
    _require_both_classes(scores)
    best_gap, best_rate = None, None
    for tau in _candidate_thresholds(scores.all_scores()):
        r = compute_rates(scores, float(tau))
        gap = abs(r.apcer - r.bpcer)
        if best_gap is None or gap < best_gap:
            best_gap, best_rate = gap, (r.apcer + r.bpcer) / 2.0
    return float(best_rate)


def roc_points(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """(tau, apcer, bpcer) per candidate threshold, tau ascending."""
    _require_both_classes(scores)
    points = []
    for tau in _candidate_thresholds(scores.all_scores()):
        r = compute_rates(scores, float(tau))
        points.append((float(tau), r.apcer, r.bpcer))
    return points


def apcer_by_type(scores: ScoreSet, tau: float) -> dict[str, float]:
    """Per-attack-type APCER at tau; types absent from the set are omitted."""
    by_type = scores.attack_scores_by_type()
    if not by_type:
        raise MissingClassError("score set has no attack entries")
    return {t: 100.0 * int(np.count_nonzero(v >= tau)) / v.size
            for t, v in by_type.items()}


# ---------------------------------------------------------------------------
# Report emission

def _format_table(protocol: str, test_rates: RateTriple, test_eer: float,
                  tau: float) -> str:
    lines = [
        f"protocol: {protocol}",
        f"threshold (dev, BPCER<=1%): {tau!r}",
        "",
        f"{'':12s}{'BPCER':>10s}{'APCER':>10s}{'ACER':>10s}",
        f"{'test':12s}{test_rates.bpcer:10.2f}{test_rates.apcer:10.2f}"
        f"{test_rates.acer:10.2f}",
        "",
        f"test EER: {test_eer:.2f}",
    ]
    return "\n".join(lines) + "\n"


def write_report(dev: ScoreSet, test: ScoreSet, out,
                 dev_bpcer_target: float = 1.0) -> dict[str, str]:
    """Select tau on dev, evaluate test, emit metrics/roc/breakdown files.

    Output is byte-stable for identical inputs. Returns the written paths.
    """
    os.makedirs(out, exist_ok=True)
    tau = threshold_at_bpcer(dev, dev_bpcer_target)
    rates = compute_rates(test, tau)
    test_eer = eer(test)
    protocol = test.protocol or dev.protocol

    paths = {
        "metrics": os.path.join(out, "metrics.json"),
        "roc": os.path.join(out, "roc.csv"),
        "breakdown": os.path.join(out, "breakdown.csv"),
        "summary": os.path.join(out, "summary.txt"),
    }
    metrics = {
        "protocol": protocol,
        "tau": tau,
        "dev_bpcer_target": dev_bpcer_target,
        "test_apcer": rates.apcer,
        "test_bpcer": rates.bpcer,
        "test_acer": rates.acer,
        "test_eer": test_eer,
    }
    with open(paths["metrics"], "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(paths["roc"], "w", encoding="utf-8", newline="") as fh:
        fh.write("tau,apcer,bpcer\n")
        for t, a, b in roc_points(test):
            fh.write(f"{t!r},{a!r},{b!r}\n")

    breakdown = apcer_by_type(test, tau)
    counts = {t: v.size for t, v in test.attack_scores_by_type().items()}
    with open(paths["breakdown"], "w", encoding="utf-8", newline="") as fh:
        fh.write("attack_type,count,apcer\n")
        for t in ATTACK_TYPES:
            if t in breakdown:
                fh.write(f"{t},{counts[t]},{breakdown[t]!r}\n")

    with open(paths["summary"], "w", encoding="utf-8") as fh:
        fh.write(_format_table(protocol, rates, test_eer, tau))
    return paths
