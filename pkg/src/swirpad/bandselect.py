"""Band-difference ranking and sequential floating subset selection.

Ranking scores every ordered wavelength pair by the ratio of mean
inter-class to mean intra-class distance between per-example difference
means (pixel-wise, attack-attack pairs ignored). Selection then walks the
ranked list forward, keeping a candidate only on strict improvement of the
criterion and attempting backward removals of earlier-retained entries
after each acceptance.
"""

from __future__ import annotations

import json
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import evalkit
from .dataset import ProtocolView, SpectralStack, sample_frames
from .swirdiff import DEFAULT_EPSILON, DiffSpec, enumerate_ordered_pairs, normalized_diff


@dataclass(frozen=True)
class RankedEntry:
    spec: DiffSpec
    ratio: float
    degenerate: bool = False   # zero intra-class distance for this component


@dataclass
class RankedDiffs:
    """Ordered ranking over the full enumerated pair set."""

    entries: list[RankedEntry]
    k_bf: int   # number of ordered bonafide-bonafide pairs
    k_a: int    # number of ordered mixed-label pairs

    def specs(self) -> list[DiffSpec]:
        return [e.spec for e in self.entries]


@dataclass(frozen=True)
class TraceEntry:
    subset: tuple[DiffSpec, ...]
    value: float
    failed: bool = False


@dataclass
class SelectionResult:
    selected: tuple[DiffSpec, ...]
    best_error: float
    trace: list[TraceEntry] = field(default_factory=list)


def _example_means(stack: SpectralStack, specs: Sequence[DiffSpec],
                   epsilon: float) -> np.ndarray:
    """Spatial mean of each difference map, in float64."""
    out = np.empty(len(specs), dtype=np.float64)
    bands = {wl: stack.bands[wl].values.astype(np.float64)
             for wl in stack.wavelengths}
    for i, spec in enumerate(specs):
        out[i] = normalized_diff(bands[spec.s1], bands[spec.s2], epsilon).mean()
    return out


def rank_differences(examples: Sequence[tuple[SpectralStack, str]],
                     epsilon: float = DEFAULT_EPSILON) -> RankedDiffs:
    """Rank every ordered pair by inter/intra class variability ratio.

    Each example is one spectral stack with a "bonafide"/"attack" label.
    All ordered example pairs (i, j), i != j contribute: both-bonafide
    pairs to the intra accumulator, mixed pairs to inter, attack-attack
    pairs to neither. Components with zero intra distance are flagged
    degenerate (ratio +inf when inter > 0, else 0).
    """
    if not examples:
        raise ValueError("no examples")
    wavelengths = examples[0][0].wavelengths
    for stack, label in examples:
        if stack.wavelengths != wavelengths:
            raise ValueError("examples disagree on wavelength set")
        if label not in ("bonafide", "attack"):
            raise ValueError(f"unknown label {label!r}")
    specs = enumerate_ordered_pairs(wavelengths)

    is_bf = np.array([label == "bonafide" for _, label in examples])
    n_bf = int(is_bf.sum())
    n_att = len(examples) - n_bf
    if n_bf < 2:
        raise ValueError(f"intra undefined: need >=2 bonafide examples, got {n_bf}")
    if n_att < 1:
        raise ValueError("inter undefined: need >=1 attack example")

    means = np.stack([_example_means(stack, specs, epsilon)
                      for stack, _ in examples])
    bf, att = means[is_bf], means[~is_bf]

    # Ordered pairs double every unordered pair in both accumulators,
    # which cancels in the ratio; counts kept as the loop would produce.
    k_bf = n_bf * (n_bf - 1)
    k_a = 2 * n_bf * n_att
    intra = np.zeros(len(specs))
    for i in range(n_bf):
        intra += 2.0 * np.abs(bf[i + 1:] - bf[i]).sum(axis=0)
    inter = np.zeros(len(specs))
    for start in range(0, n_att, 64):
        block = att[start:start + 64]
        inter += 2.0 * np.abs(bf[:, None, :] - block[None, :, :]).sum(axis=(0, 1))
    intra /= k_bf
    inter /= k_a

    entries = []
    for i, spec in enumerate(specs):
        if intra[i] > 0.0:
            entries.append(RankedEntry(spec, float(inter[i] / intra[i])))
        else:
            ratio = float("inf") if inter[i] > 0.0 else 0.0
            entries.append(RankedEntry(spec, ratio, degenerate=True))
    order = sorted(range(len(entries)), key=lambda i: (-entries[i].ratio, i))
    return RankedDiffs(entries=[entries[i] for i in order], k_bf=k_bf, k_a=k_a)


def sffs_select(ordered: RankedDiffs,
                criterion: Callable[[tuple[DiffSpec, ...]], float]) -> SelectionResult:
    """Forward pass with conditional backward removal, strict improvement.

    Walks the ranked list once; a candidate addition is accepted iff its
    criterion value is strictly below the best so far. Each acceptance
    triggers removal attempts on every earlier-retained element (never the
    one just added), again under strict improvement. A criterion failure
    scores the subset 100.0 and is flagged in the trace.
    """
    if not ordered.entries:
        raise ValueError("empty ranking")
    trace: list[TraceEntry] = []

    def evaluate(subset: list[DiffSpec]) -> float:
        key = tuple(subset)
        try:
            value = float(criterion(key))
            trace.append(TraceEntry(key, value))
        except Exception:
            value = 100.0
            trace.append(TraceEntry(key, value, failed=True))
        return value

    best: list[DiffSpec] = []
    best_err = 100.0
    for entry in ordered.entries:
        candidate = best + [entry.spec]
        err = evaluate(candidate)
        if err < best_err:
            best, best_err = candidate, err
            for earlier in best[:-1]:
                if earlier not in best:
                    continue
                reduced = [s for s in best if s != earlier]
                err = evaluate(reduced)
                if err < best_err:
                    best, best_err = reduced, err
    return SelectionResult(selected=tuple(best), best_error=best_err, trace=trace)


class AcerCriterion:
    """Subset -> dev ACER (%) at the dev-side BPCER target threshold.

    Trains the configured scorer from scratch for each new subset under a
    fixed seed, scores the dev split, picks the threshold reaching the
    BPCER target on dev, and returns the dev ACER at that threshold.
    Values are memoized on the exact ordered channel tuple; the cache is
    safe for concurrent insertion.
    """

    def __init__(self, kind: str, cfg, view: ProtocolView, seed: int,
                 epsilon: float = DEFAULT_EPSILON, bpcer_target: float = 1.0):
        from . import models
        if not view.train or not view.dev:
            raise ValueError("criterion needs non-empty train and dev splits")
        self._models = models
        self.kind = kind
        self.cfg = cfg
        self.view = view
        self.seed = seed
        self.epsilon = epsilon
        self.bpcer_target = bpcer_target
        self.cache: dict[tuple[DiffSpec, ...], float] = {}
        self._lock = threading.Lock()
        self.trainings = 0

    def __call__(self, subset: tuple[DiffSpec, ...]) -> float:
        subset = tuple(subset)
        if not subset:
            return 100.0
        with self._lock:
            if subset in self.cache:
                return self.cache[subset]
        scorer = self._models.train_scorer(
            self.kind, self.cfg, subset, self.view.train, self.view.dev,
            seed=self.seed, epsilon=self.epsilon)
        dev_scores = self._models.score_split(
            scorer, self.view.dev, split="dev", protocol=self.view.protocol,
            epsilon=self.epsilon)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", evalkit.GranularityWarning)
            tau = evalkit.threshold_at_bpcer(dev_scores, self.bpcer_target)
        acer = evalkit.compute_rates(dev_scores, tau).acer
        with self._lock:
            self.cache[subset] = acer
            self.trainings += 1
        return acer


def acer_criterion(kind: str, cfg, view: ProtocolView, seed: int,
                   epsilon: float = DEFAULT_EPSILON,
                   bpcer_target: float = 1.0) -> AcerCriterion:
    return AcerCriterion(kind, cfg, view, seed, epsilon, bpcer_target)


def examples_from_split(presentations, frames: int = 4):
    """Flatten presentations into (stack, label) ranking examples."""
    out = []
    for p in presentations:
        for stack in sample_frames(p, frames):
            out.append((stack, p.label))
    return out


# ---------------------------------------------------------------------------
# Artifact I/O

def write_ranking(ranked: RankedDiffs, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,s1,s2,ratio,degenerate\n")
        for rank, e in enumerate(ranked.entries, start=1):
            fh.write(f"{rank},{e.spec.s1},{e.spec.s2},{e.ratio!r},"
                     f"{int(e.degenerate)}\n")


def write_selection(result: SelectionResult, protocol: str, model: str,
                    path) -> None:
    doc = {
        "protocol": protocol,
        "model": model,
        "selected": [str(s) for s in result.selected],
        "best_acer_percent": result.best_error,
        "trace": [
            {"subset": [str(s) for s in t.subset], "acer_percent": t.value,
             "failed": t.failed}
            for t in result.trace
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_selection(path) -> tuple[tuple[DiffSpec, ...], float]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    specs = tuple(DiffSpec.parse(s) for s in doc["selected"])
    return specs, float(doc["best_acer_percent"])
