"""Trainable scorers: two miniature CNNs and the pixel-SVM baseline."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .. import evalkit
from ..swirdiff import DEFAULT_EPSILON
from .nets import (FRAME_AGGREGATIONS, McCnnConfig, McCnnNet, PixBisConfig,
                   PixBisNet, TrainingError, adapt_first_layer,
                   config_from_dict, default_dev_metric, make_net,
                   pixbis_loss, rebuild_net, score_presentation_net,
                   train_model)
from .skin import (DiagGmm, SkinPixelModel, SkinSvmConfig, SmoSvm,
                   default_svm_specs, derive_pixel_labels, face_region_mask,
                   fit_sigmoid, fit_skin_gmm, gmm_log_density, pixel_vectors,
                   rebuild_skin_model, score_pixel_svm, train_pixel_svm,
                   train_skin_scorer)
from .store import KINDS, ModelFormatError, TrainedScorer, load_scorer, save_scorer

from ..dataset import sample_frames


def default_config(kind: str):
    if kind == "pixbis":
        return PixBisConfig()
    if kind == "mccnn":
        return McCnnConfig()
    if kind == "pixel_svm":
        return SkinSvmConfig()
    raise ValueError(f"unknown model kind {kind!r}")


def train_scorer(kind: str, cfg, specs, train, dev, seed: int | None = None,
                 epsilon: float = DEFAULT_EPSILON, manifest_hash: str = "",
                 dev_metric=None) -> TrainedScorer:
    """Train any scorer kind on a train/dev split pair."""
    specs = tuple(specs)
    if cfg is None:
        cfg = default_config(kind)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if kind in ("pixbis", "mccnn"):
        cfg = replace(cfg, channels=len(specs))
        return train_model(kind, cfg, specs, train, dev, epsilon=epsilon,
                           dev_metric=dev_metric, manifest_hash=manifest_hash)
    if kind == "pixel_svm":
        return train_skin_scorer(cfg, specs, train, dev, epsilon=epsilon,
                                 manifest_hash=manifest_hash)
    raise ValueError(f"unknown model kind {kind!r}")


def score_presentation(scorer: TrainedScorer, p,
                       epsilon: float = DEFAULT_EPSILON) -> float:
    """Score one presentation in [0, 1]; higher means more bonafide.

    Frame scores (mean supervision-map value for pixbis, sigmoid output
    for mccnn, mean pixel skin probability for the SVM) are aggregated
    over the sampled frames with the configured rule (mean by default).
    """
    if scorer.kind in ("pixbis", "mccnn"):
        return score_presentation_net(scorer, p, epsilon)
    model = scorer.runtime(rebuild_skin_model)
    frames = sample_frames(p, int(scorer.config.get("frames", 10)))
    scores = np.array([score_pixel_svm(model, stack, epsilon)
                       for stack in frames])
    agg = scorer.config.get("frame_agg", "mean")
    if agg == "min":
        return float(scores.min())
    if agg == "median":
        return float(np.median(scores))
    return float(scores.mean())


def score_split(scorer: TrainedScorer, presentations, split: str = "",
                protocol: str = "", epsilon: float = DEFAULT_EPSILON
                ) -> evalkit.ScoreSet:
    entries = [
        evalkit.ScoreEntry(
            presentation_id=p.presentation_id,
            score=score_presentation(scorer, p, epsilon),
            label=p.label, attack_type=p.attack_type)
        for p in presentations
    ]
    return evalkit.ScoreSet(entries, split=split, protocol=protocol)
