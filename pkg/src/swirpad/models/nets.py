"""Desk-scale convolutional scorers.

Two miniature architectures trained from random init:

* pixbis: conv stem + downsampling stages ending in a low-resolution
  probability map (pixel-wise supervision) plus a binary head; at eval
  time the mean of the map is the score.
* mccnn: per-channel first conv stage, a shared second stage, global
  average pooling into per-channel embeddings, concatenation, then
  FC(10) -> FC(1), all sigmoid; the sigmoid output is the score.

Training is plain Adam with per-epoch dev evaluation; the weights of the
best-dev epoch are returned. Everything is deterministic given
(config, seed, data).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict, replace

import numpy as np
import torch
import torch.nn.functional as F

from .. import evalkit
from ..dataset import sample_frames
from ..swirdiff import DEFAULT_EPSILON, build_diff_stack

_CLAMP = 1e-7
MCCNN_HEAD_HIDDEN = 10   # fixed head: FC(10) -> FC(1)
MCCNN_HEAD_OUT = 1

FRAME_AGGREGATIONS = ("mean", "min", "median")


class TrainingError(RuntimeError):
    pass


@dataclass
class PixBisConfig:
    input_size: int = 112
    channels: int = 1
    stage_widths: tuple[int, ...] = (16, 32, 64)
    lambda_pix: float = 0.5
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    frames: int = 10
    frame_agg: str = "mean"
    seed: int = 0

    def __post_init__(self):
        self.stage_widths = tuple(self.stage_widths)
        down = 2 ** len(self.stage_widths)
        if self.input_size % down != 0 or self.input_size // down < 1:
            raise ValueError(
                f"input_size {self.input_size} not divisible into a map by "
                f"{len(self.stage_widths)} downsampling stages")
        if not 0.0 <= self.lambda_pix <= 1.0:
            raise ValueError("lambda_pix must be in [0, 1]")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.frame_agg not in FRAME_AGGREGATIONS:
            raise ValueError(f"unknown frame_agg {self.frame_agg!r}")

    @property
    def map_size(self) -> int:
        return self.input_size // 2 ** len(self.stage_widths)


@dataclass
class McCnnConfig:
    input_size: int = 128
    channels: int = 1
    trunk_widths: tuple[int, int] = (8, 16)
    embedding: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 50
    frames: int = 10
    frame_agg: str = "mean"
    seed: int = 0

    def __post_init__(self):
        self.trunk_widths = tuple(self.trunk_widths)
        if len(self.trunk_widths) != 2:
            raise ValueError("trunk_widths must be (channel_stage, shared_stage)")
        if self.input_size % 4 != 0:
            raise ValueError("input_size must be divisible by 4")
        if self.frame_agg not in FRAME_AGGREGATIONS:
            raise ValueError(f"unknown frame_agg {self.frame_agg!r}")


class PixBisNet(torch.nn.Module):
    def __init__(self, cfg: PixBisConfig):
        super().__init__()
        w = cfg.stage_widths
        self.stem = torch.nn.Conv2d(cfg.channels, w[0], 3, padding=1)
        stages = []
        prev = w[0]
        for width in w:
            stages.append(torch.nn.Conv2d(prev, width, 3, padding=1))
            prev = width
        self.stages = torch.nn.ModuleList(stages)
        self.map_head = torch.nn.Conv2d(prev, 1, 1)
        self.binary_head = torch.nn.Linear(cfg.map_size * cfg.map_size, 1)

    def forward(self, x):
        h = F.relu(self.stem(x))
        for conv in self.stages:
            h = F.max_pool2d(F.relu(conv(h)), 2)
        prob_map = torch.sigmoid(self.map_head(h))[:, 0]        # (N, m, m)
        binary = torch.sigmoid(
            self.binary_head(prob_map.flatten(1)))[:, 0]        # (N,)
        return prob_map, binary


class McCnnNet(torch.nn.Module):
    def __init__(self, cfg: McCnnConfig):
        super().__init__()
        w0, w1 = cfg.trunk_widths
        self.channel_stems = torch.nn.ModuleList([
            torch.nn.Conv2d(1, w0, 3, padding=1) for _ in range(cfg.channels)
        ])
        self.shared = torch.nn.Conv2d(w0, w1, 3, padding=1)
        self.embed = torch.nn.Linear(w1, cfg.embedding)
        self.fc1 = torch.nn.Linear(cfg.embedding * cfg.channels, MCCNN_HEAD_HIDDEN)
        self.fc2 = torch.nn.Linear(MCCNN_HEAD_HIDDEN, MCCNN_HEAD_OUT)

    def forward(self, x):
        feats = []
        for c, stem in enumerate(self.channel_stems):
            h = F.max_pool2d(F.relu(stem(x[:, c:c + 1])), 2)
            h = F.max_pool2d(F.relu(self.shared(h)), 2)
            feats.append(F.relu(self.embed(h.mean(dim=(2, 3)))))
        joint = torch.cat(feats, dim=1)
        hidden = torch.sigmoid(self.fc1(joint))
        return torch.sigmoid(self.fc2(hidden))[:, 0]


def pixbis_loss(prob_map, binary, label, lam: float = 0.5):
    """lam * mean-elementwise-BCE(map, label) + (1 - lam) * BCE(binary, label).

    Inputs are probabilities; they are clamped to [1e-7, 1 - 1e-7] before
    the log. ``label`` may be a scalar or a per-sample batch tensor.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    prob_map = torch.as_tensor(prob_map)
    binary = torch.as_tensor(binary, dtype=prob_map.dtype)
    label = torch.as_tensor(label, dtype=prob_map.dtype)
    map_target = label.reshape(label.shape + (1,) * (prob_map.dim() - label.dim()))
    map_target = map_target.expand_as(prob_map)
    l_pix = F.binary_cross_entropy(
        prob_map.clamp(_CLAMP, 1.0 - _CLAMP), map_target)
    l_bin = F.binary_cross_entropy(
        binary.clamp(_CLAMP, 1.0 - _CLAMP), label.expand_as(binary))
    return lam * l_pix + (1.0 - lam) * l_bin


def adapt_first_layer(filters: np.ndarray, m: int) -> np.ndarray:
    """Re-channel a first-layer filter bank by channel-averaging.

    Per kernel the channel mean is replicated m times and scaled by
    c_in/m, which preserves the response to channel-replicated inputs
    exactly.
    """
    filters = np.asarray(filters)
    if filters.ndim != 4:
        raise ValueError(f"expected (K, C, h, w) filters, got {filters.shape}")
    if m < 1:
        raise ValueError("target channel count must be >= 1")
    c_in = filters.shape[1]
    mean = filters.mean(axis=1, keepdims=True)
    return np.repeat(mean, m, axis=1) * (c_in / m)


# ---------------------------------------------------------------------------
# Training

def _frame_tensor(presentations, specs, frames, input_size, epsilon):
    """Stack sampled-frame diff maps; returns (X, y, frame_slices, ids)."""
    xs, ys, slices, ids = [], [], [], []
    for p in presentations:
        start = len(xs)
        for stack in sample_frames(p, frames):
            ds = build_diff_stack(stack, specs, epsilon)
            if ds.maps.shape[1:] != (input_size, input_size):
                raise ValueError(
                    f"{p.presentation_id}: frame size {ds.maps.shape[1:]} does "
                    f"not match configured input_size {input_size}")
            xs.append(ds.maps)
        ys.extend([1.0 if p.is_bonafide else 0.0] * (len(xs) - start))
        slices.append((start, len(xs)))
        ids.append(p.presentation_id)
    X = torch.from_numpy(np.stack(xs).astype(np.float32, copy=False))
    y = torch.tensor(ys, dtype=torch.float32)
    return X, y, slices, ids


def _aggregate(frame_scores: np.ndarray, agg: str) -> float:
    if agg == "mean":
        return float(frame_scores.mean())
    if agg == "min":
        return float(frame_scores.min())
    return float(np.median(frame_scores))


def _frame_scores(net, kind: str, X: torch.Tensor, batch: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(X), batch):
            chunk = X[start:start + batch]
            if kind == "pixbis":
                prob_map, _ = net(chunk)       # binary head ignored at eval
                out.append(prob_map.mean(dim=(1, 2)).numpy())
            else:
                out.append(net(chunk).numpy())
    return np.concatenate(out)


def _score_set_from_frames(net, kind, X, slices, ids, presentations,
                           agg, split, protocol) -> evalkit.ScoreSet:
    frame_scores = _frame_scores(net, kind, X)
    entries = []
    for (start, stop), pid, p in zip(slices, ids, presentations):
        entries.append(evalkit.ScoreEntry(
            presentation_id=pid,
            score=_aggregate(frame_scores[start:stop], agg),
            label=p.label, attack_type=p.attack_type))
    return evalkit.ScoreSet(entries, split=split, protocol=protocol)


def default_dev_metric(dev_scores: evalkit.ScoreSet,
                       bpcer_target: float = 1.0) -> float:
    """Dev ACER (%) at the threshold reaching the BPCER target on dev."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", evalkit.GranularityWarning)
        tau = evalkit.threshold_at_bpcer(dev_scores, bpcer_target)
    return evalkit.compute_rates(dev_scores, tau).acer


def _check_two_classes(presentations, name):
    labels = {p.label for p in presentations}
    if len(labels) < 2:
        raise ValueError(f"{name} split contains a single class: {labels}")


def make_net(kind: str, cfg):
    if kind == "pixbis":
        return PixBisNet(cfg)
    if kind == "mccnn":
        return McCnnNet(cfg)
    raise ValueError(f"unknown model kind {kind!r}")


def train_model(kind: str, cfg, specs, train, dev,
                epsilon: float = DEFAULT_EPSILON, dev_metric=None,
                manifest_hash: str = ""):
    """Train a conv scorer; returns the TrainedScorer of the best-dev epoch.

    One dev evaluation per epoch; the dev metric defaults to the ACER at
    the dev BPCER=1% threshold. Ties keep the later (most-trained) epoch.
    """
    from .store import TrainedScorer

    specs = tuple(specs)
    if not specs:
        raise ValueError("no input channels")
    if cfg.channels != len(specs):
        cfg = replace(cfg, channels=len(specs))
    _check_two_classes(train, "train")
    _check_two_classes(dev, "dev")
    if dev_metric is None:
        dev_metric = default_dev_metric

    X, y, _, _ = _frame_tensor(train, specs, cfg.frames, cfg.input_size, epsilon)
    Xd, _, dev_slices, dev_ids = _frame_tensor(
        dev, specs, cfg.frames, cfg.input_size, epsilon)

    torch.manual_seed(cfg.seed)
    net = make_net(kind, cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    shuffler = torch.Generator().manual_seed(cfg.seed)

    best_metric, best_epoch, best_state = None, -1, None
    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(X), generator=shuffler)
        for bstart in range(0, len(X), cfg.batch_size):
            idx = perm[bstart:bstart + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            opt.zero_grad()
            if kind == "pixbis":
                prob_map, binary = net(xb)
                finite = (torch.isfinite(prob_map).all()
                          and torch.isfinite(binary).all())
                if finite:
                    loss = pixbis_loss(prob_map, binary, yb, cfg.lambda_pix)
            else:
                out = net(xb)
                finite = torch.isfinite(out).all()
                if finite:
                    loss = F.binary_cross_entropy(
                        out.clamp(_CLAMP, 1.0 - _CLAMP), yb)
            if not finite or not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {bstart // cfg.batch_size}")
            loss.backward()
            opt.step()
        dev_scores = _score_set_from_frames(
            net, kind, Xd, dev_slices, dev_ids, dev, cfg.frame_agg, "dev", "")
        metric = float(dev_metric(dev_scores))
        # ties keep the later epoch: once the dev metric saturates at its
        # floor, the most-trained of the tied models has the widest margins
        if best_metric is None or metric <= best_metric:
            best_metric, best_epoch = metric, epoch
            best_state = {k: v.detach().numpy().astype(np.float32).copy()
                          for k, v in net.state_dict().items()}

    return TrainedScorer(kind=kind, specs=specs, params=best_state,
                         config=asdict(cfg), seed=cfg.seed,
                         manifest_hash=manifest_hash, best_epoch=best_epoch,
                         best_dev_metric=best_metric)


def rebuild_net(scorer):
    cfg = config_from_dict(scorer.kind, scorer.config)
    net = make_net(scorer.kind, cfg)
    state = {k: torch.from_numpy(v.copy()) for k, v in scorer.params.items()}
    net.load_state_dict(state)
    net.eval()
    return net


def config_from_dict(kind: str, doc: dict):
    doc = dict(doc)
    if kind == "pixbis":
        doc["stage_widths"] = tuple(doc.get("stage_widths", (16, 32, 64)))
        return PixBisConfig(**doc)
    if kind == "mccnn":
        doc["trunk_widths"] = tuple(doc.get("trunk_widths", (8, 16)))
        return McCnnConfig(**doc)
    raise ValueError(f"unknown model kind {kind!r}")


def score_presentation_net(scorer, p, epsilon: float = DEFAULT_EPSILON) -> float:
    net = scorer.runtime(rebuild_net)
    cfg = config_from_dict(scorer.kind, scorer.config)
    X, _, _, _ = _frame_tensor(
        [p], scorer.specs, cfg.frames, cfg.input_size, epsilon)
    frame_scores = _frame_scores(net, scorer.kind, X)
    return _aggregate(frame_scores, cfg.frame_agg)
