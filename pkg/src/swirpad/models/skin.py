"""Pixel-level skin classifier baseline: GMM labeling plus an RBF SVM.

The skin distribution over per-pixel band-difference vectors is learned
with a diagonal-covariance Gaussian mixture (EM, hand-rolled so the
likelihood trajectory is observable). A likelihood threshold separating
bonafide face pixels from impersonation-attack face pixels then labels
every training pixel, a small retained fraction of which trains a
soft-margin RBF SVM via sequential minimal optimization. The presentation
score is the mean calibrated skin probability over all pixels, averaged
over sampled frames.

Pixel annotations do not exist, so "face pixels" are approximated by a
fixed central ellipse slightly smaller than the rendered face region.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from ..dataset import sample_frames
from ..swirdiff import DEFAULT_EPSILON, DiffSpec, normalized_diff

SVM_REFERENCE_WAVELENGTHS = (935, 1060, 1300, 1550)


class TrainingError(RuntimeError):
    pass


@dataclass
class SkinSvmConfig:
    channels: int = 6
    gmm_components: int = 2
    gamma: float = 0.1
    C: float = 1.0
    retain_fraction: float = 0.01
    max_gmm_pixels: int = 20000
    max_train_pixels: int = 3000
    train_frames: int = 2
    frames: int = 10
    frame_agg: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if not 0 < self.retain_fraction <= 1:
            raise ValueError("retain_fraction must be in (0, 1]")


def default_svm_specs(wavelengths) -> tuple[DiffSpec, ...]:
    """Six unordered differences of the four reference wavelengths,
    each mapped to the nearest configured wavelength."""
    wl = list(wavelengths)
    mapped = []
    for target in SVM_REFERENCE_WAVELENGTHS:
        nearest = min(wl, key=lambda w: (abs(w - target), w))
        if nearest not in mapped:
            mapped.append(nearest)
    if len(mapped) < 2:
        raise ValueError(f"cannot map reference wavelengths onto {wl}")
    return tuple(DiffSpec(a, b) for i, a in enumerate(mapped)
                 for b in mapped[i + 1:])


# ---------------------------------------------------------------------------
# Gaussian mixture (diagonal covariances)

@dataclass
class DiagGmm:
    weights: np.ndarray       # (K,)
    means: np.ndarray         # (K, D)
    variances: np.ndarray     # (K, D), floored
    loglik_history: list[float] = field(default_factory=list)


def _gmm_component_logpdf(X, means, variances) -> np.ndarray:
    # (N, K) log N(x; mu_k, diag sigma_k^2)
    diff = X[:, None, :] - means[None, :, :]
    quad = (diff ** 2 / variances[None, :, :]).sum(axis=2)
    logdet = np.log(2.0 * np.pi * variances).sum(axis=1)
    return -0.5 * (quad + logdet[None, :])


def gmm_log_density(gmm: DiagGmm, X: np.ndarray) -> np.ndarray:
    """Per-sample log-likelihood under the mixture."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    logp = _gmm_component_logpdf(X, gmm.means, gmm.variances)
    logp = logp + np.log(gmm.weights)[None, :]
    m = logp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logp - m).sum(axis=1, keepdims=True)))[:, 0]


def fit_skin_gmm(pixels: np.ndarray, k: int, seed: int = 0, tol: float = 1e-6,
                 max_iter: int = 200, var_floor: float = 1e-6) -> DiagGmm:
    """EM fit; records the total log-likelihood after every iteration.

    Needs at least 10*k samples. Covariances are diagonal and floored at
    ``var_floor``. Converges when the total log-likelihood moves by less
    than ``tol`` or after ``max_iter`` iterations.
    """
    X = np.asarray(pixels, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected (N, D) pixels, got shape {X.shape}")
    if k <= 0:
        raise ValueError("k must be >= 1")
    n = X.shape[0]
    if n < 10 * k:
        raise ValueError(f"need at least {10 * k} pixels for k={k}, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite pixel vectors")

    rng = np.random.default_rng(seed)
    means = X[rng.choice(n, size=k, replace=False)].copy()
    variances = np.maximum(X.var(axis=0), var_floor)[None, :].repeat(k, axis=0)
    weights = np.full(k, 1.0 / k)

    gmm = DiagGmm(weights, means, variances)
    prev_ll = -np.inf
    for _ in range(max_iter):
        logp = _gmm_component_logpdf(X, gmm.means, gmm.variances)
        logp = logp + np.log(gmm.weights)[None, :]
        m = logp.max(axis=1, keepdims=True)
        log_norm = m + np.log(np.exp(logp - m).sum(axis=1, keepdims=True))
        ll = float(log_norm.sum())
        gmm.loglik_history.append(ll)

        resp = np.exp(logp - log_norm)                  # (N, K)
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        gmm.weights = nk / n
        gmm.means = (resp.T @ X) / nk[:, None]
        sq = resp.T @ (X ** 2) / nk[:, None] - gmm.means ** 2
        gmm.variances = np.maximum(sq, var_floor)

        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
    return gmm


# ---------------------------------------------------------------------------
# Pixel labeling

def face_region_mask(height: int, width: int) -> np.ndarray:
    """Central-ellipse stand-in for face pixels (no annotations exist)."""
    yy, xx = np.mgrid[0:height, 0:width]
    cx, cy = 0.50 * width, 0.52 * height
    ax, ay = 0.27 * width, 0.36 * height
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def pixel_vectors(stack, specs, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Per-pixel difference vectors, shape (H*W, len(specs)), float64."""
    cols = []
    for spec in specs:
        if spec.s1 not in stack.bands or spec.s2 not in stack.bands:
            raise ValueError(f"wavelengths for {spec} missing from stack")
        d = normalized_diff(stack.bands[spec.s1].values.astype(np.float64),
                            stack.bands[spec.s2].values.astype(np.float64),
                            epsilon)
        cols.append(d.ravel())
    return np.stack(cols, axis=1)


def _image_rng(seed: int, token: str) -> np.random.Generator:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    sub = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), sub]))


def _best_balanced_threshold(pos: np.ndarray, neg: np.ndarray) -> tuple[float, float]:
    pooled = np.unique(np.concatenate([pos, neg]))
    if pooled.size < 2:
        raise ValueError("threshold undefined: all likelihood values equal")
    mids = (pooled[:-1] + pooled[1:]) / 2.0
    candidates = np.concatenate(([pooled[0] - 1e-6], mids, [pooled[-1] + 1e-6]))
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr = 1.0 - np.searchsorted(pos_sorted, candidates, side="left") / pos.size
    tnr = np.searchsorted(neg_sorted, candidates, side="left") / neg.size
    balanced = (tpr + tnr) / 2.0
    best = int(np.argmax(balanced))
    return float(candidates[best]), float(balanced[best])


def derive_pixel_labels(gmm: DiagGmm, examples, specs,
                        epsilon: float = DEFAULT_EPSILON,
                        retain_fraction: float = 0.01,
                        seed: int = 0) -> tuple[float, np.ndarray, np.ndarray]:
    """Threshold skin likelihood, label all pixels, retain a fraction.

    ``examples`` is a list of (stack, label, presentation_id, frame_index)
    where attacks should be impersonation-group presentations. The
    threshold maximizes balanced accuracy of {loglik >= t -> skin} with
    bonafide face pixels as positives and attack face pixels as negatives.
    Every pixel of every example is then labeled and floor(fraction*H*W)
    pixels per image (at least 1) are retained by seeded uniform sampling.

    Returns (threshold, features, labels) with labels in {+1, -1}.
    """
    pos_ll, neg_ll = [], []
    per_image = []
    for stack, label, pid, frame_index in examples:
        vec = pixel_vectors(stack, specs, epsilon)
        ll = gmm_log_density(gmm, vec)
        face = face_region_mask(stack.height, stack.width).ravel()
        (pos_ll if label == "bonafide" else neg_ll).append(ll[face])
        per_image.append((vec, ll, pid, frame_index))
    if not pos_ll or not neg_ll:
        raise ValueError("need both bonafide and attack examples")
    pos = np.concatenate(pos_ll)
    neg = np.concatenate(neg_ll)
    threshold, balanced = _best_balanced_threshold(pos, neg)
    if balanced <= 0.5 + 1e-12:
        warnings.warn("degenerate likelihood threshold: balanced accuracy "
                      f"{balanced:.3f}", stacklevel=2)

    feats, labels = [], []
    for vec, ll, pid, frame_index in per_image:
        n_pixels = vec.shape[0]
        keep = max(1, int(np.floor(retain_fraction * n_pixels)))
        rng = _image_rng(seed, f"{pid}#{frame_index}")
        idx = rng.choice(n_pixels, size=keep, replace=False)
        feats.append(vec[idx])
        labels.append(np.where(ll[idx] >= threshold, 1.0, -1.0))
    return threshold, np.concatenate(feats), np.concatenate(labels)


# ---------------------------------------------------------------------------
# SMO support vector machine

def _rbf(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    aa = (A ** 2).sum(axis=1)[:, None]
    bb = (B ** 2).sum(axis=1)[None, :]
    sq = np.maximum(aa + bb - 2.0 * A @ B.T, 0.0)
    return np.exp(-gamma * sq)


class SmoSvm:
    """Soft-margin RBF SVM trained by sequential minimal optimization."""

    def __init__(self, gamma: float = 0.1, C: float = 1.0, tol: float = 1e-3,
                 max_iter: int = 100000, seed: int = 0):
        self.gamma = gamma
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed
        self.support_x = None
        self.support_ya = None    # y_i * alpha_i over support vectors
        self.bias = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "SmoSvm":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if set(np.unique(y)) != {-1.0, 1.0}:
            raise ValueError("labels must contain both +1 and -1")
        n = len(X)
        K = _rbf(X, X, self.gamma)
        alpha = np.zeros(n)
        self._b = 0.0
        errors = -y.copy()          # f(x)=0 initially, E_i = f(x_i) - y_i
        rng = np.random.default_rng(self.seed)
        steps = 0

        def take_step(i1: int, i2: int) -> int:
            nonlocal steps
            if i1 == i2:
                return 0
            a1, a2 = alpha[i1], alpha[i2]
            y1, y2 = y[i1], y[i2]
            e1, e2 = errors[i1], errors[i2]
            s = y1 * y2
            if s < 0:
                lo, hi = max(0.0, a2 - a1), min(self.C, self.C + a2 - a1)
            else:
                lo, hi = max(0.0, a2 + a1 - self.C), min(self.C, a2 + a1)
            if lo >= hi:
                return 0
            k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
            eta = k11 + k22 - 2.0 * k12
            if eta > 0:
                a2_new = a2 + y2 * (e1 - e2) / eta
                a2_new = min(hi, max(lo, a2_new))
            else:
                # objective at the interval ends (duplicate points)
                f1 = y1 * (e1 + self._b) - a1 * k11 - s * a2 * k12
                f2 = y2 * (e2 + self._b) - s * a1 * k12 - a2 * k22
                l1 = a1 + s * (a2 - lo)
                h1 = a1 + s * (a2 - hi)
                obj_l = (l1 * f1 + lo * f2 + 0.5 * l1 ** 2 * k11
                         + 0.5 * lo ** 2 * k22 + s * lo * l1 * k12)
                obj_h = (h1 * f1 + hi * f2 + 0.5 * h1 ** 2 * k11
                         + 0.5 * hi ** 2 * k22 + s * hi * h1 * k12)
                if obj_l < obj_h - 1e-12:
                    a2_new = lo
                elif obj_h < obj_l - 1e-12:
                    a2_new = hi
                else:
                    return 0
            if abs(a2_new - a2) < 1e-8 * (a2_new + a2 + 1e-8):
                return 0
            a1_new = a1 + s * (a2 - a2_new)

            b_old = self._b
            b1 = (e1 + y1 * (a1_new - a1) * k11
                  + y2 * (a2_new - a2) * k12 + b_old)
            b2 = (e2 + y1 * (a1_new - a1) * k12
                  + y2 * (a2_new - a2) * k22 + b_old)
            if 0 < a1_new < self.C:
                self._b = b1
            elif 0 < a2_new < self.C:
                self._b = b2
            else:
                self._b = (b1 + b2) / 2.0
            errors[:] = (errors + y1 * (a1_new - a1) * K[i1]
                         + y2 * (a2_new - a2) * K[i2] - (self._b - b_old))
            alpha[i1], alpha[i2] = a1_new, a2_new
            steps += 1
            if steps > self.max_iter:
                raise TrainingError(f"SMO did not converge in {self.max_iter} steps")
            return 1

        def examine(i2: int) -> int:
            y2, a2, e2 = y[i2], alpha[i2], errors[i2]
            r2 = e2 * y2
            if not ((r2 < -self.tol and a2 < self.C)
                    or (r2 > self.tol and a2 > 0)):
                return 0
            non_bound = np.flatnonzero((alpha > 0) & (alpha < self.C))
            if len(non_bound) > 1:
                i1 = int(non_bound[np.argmax(np.abs(errors[non_bound] - e2))])
                if take_step(i1, i2):
                    return 1
            start = rng.integers(len(non_bound)) if len(non_bound) else 0
            for j in range(len(non_bound)):
                if take_step(int(non_bound[(start + j) % len(non_bound)]), i2):
                    return 1
            start = rng.integers(n)
            for j in range(n):
                if take_step(int((start + j) % n), i2):
                    return 1
            return 0

        examine_all = True
        changed = 0
        while changed > 0 or examine_all:
            changed = 0
            if examine_all:
                targets = range(n)
            else:
                targets = np.flatnonzero((alpha > 0) & (alpha < self.C))
            for i2 in targets:
                changed += examine(int(i2))
            if examine_all:
                examine_all = False
            elif changed == 0:
                examine_all = True

        keep = alpha > 1e-8
        self.support_x = X[keep]
        self.support_ya = (alpha * y)[keep]
        self.bias = float(self._b)
        return self

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.support_x is None or len(self.support_x) == 0:
            return np.full(len(X), -self.bias)
        return _rbf(X, self.support_x, self.gamma) @ self.support_ya - self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision(X) >= 0, 1.0, -1.0)


def fit_sigmoid(decision: np.ndarray, labels: np.ndarray,
                max_iter: int = 100) -> tuple[float, float]:
    """Platt scaling: fit (a, b) of P = 1/(1 + exp(a*f + b)) by Newton.

    ``labels`` in {+1, -1}; prior-smoothed targets are used.
    """
    f = np.asarray(decision, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))
    for _ in range(max_iter):
        z = a * f + b
        p = 1.0 / (1.0 + np.exp(z))
        g = p - t                       # d(nll)/dz with P = sigma(-z)
        grad_a, grad_b = -(g * f).sum(), -g.sum()
        w = p * (1.0 - p)
        h_aa = (w * f * f).sum() + 1e-12
        h_ab = (w * f).sum()
        h_bb = w.sum() + 1e-12
        det = h_aa * h_bb - h_ab ** 2
        if abs(det) < 1e-18:
            break
        da = (h_bb * grad_a - h_ab * grad_b) / det
        db = (h_aa * grad_b - h_ab * grad_a) / det
        a -= da
        b -= db
        if max(abs(da), abs(db)) < 1e-10:
            break
    return float(a), float(b)


def train_pixel_svm(features: np.ndarray, labels: np.ndarray,
                    gamma: float = 0.1, C: float = 1.0, tol: float = 1e-3,
                    max_iter: int = 100000, seed: int = 0,
                    calib_fraction: float = 0.1) -> tuple[SmoSvm, tuple[float, float]]:
    """Fit the SVM on 90% of the pixels, Platt-calibrate on the held-out 10%."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (N, D) with matching labels")
    classes = set(np.unique(y))
    if classes != {-1.0, 1.0}:
        raise ValueError(f"need both classes, got labels {sorted(classes)}")

    rng = np.random.default_rng(seed)
    hold = np.zeros(len(y), dtype=bool)
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        n_hold = max(1, int(round(calib_fraction * len(idx)))) if len(idx) > 1 else 0
        hold[rng.choice(idx, size=n_hold, replace=False)] = True
    if (~hold).sum() < 2 or len(set(np.unique(y[~hold]))) < 2:
        hold[:] = False     # too small to hold anything out

    svm = SmoSvm(gamma=gamma, C=C, tol=tol, max_iter=max_iter, seed=seed)
    svm.fit(X[~hold], y[~hold])
    calib_x = X[hold] if hold.any() else X
    calib_y = y[hold] if hold.any() else y
    calib = fit_sigmoid(svm.decision(calib_x), calib_y)
    return svm, calib


# ---------------------------------------------------------------------------
# End-to-end skin scorer

@dataclass
class SkinPixelModel:
    specs: tuple[DiffSpec, ...]
    gmm: DiagGmm
    likelihood_threshold: float
    svm: SmoSvm
    calibration: tuple[float, float]
    epsilon: float = DEFAULT_EPSILON


def score_pixel_svm(model: SkinPixelModel, stack,
                    epsilon: float | None = None) -> float:
    """Mean calibrated P(skin) over all pixels of one frame."""
    eps = model.epsilon if epsilon is None else epsilon
    vec = pixel_vectors(stack, model.specs, eps)
    f = model.svm.decision(vec)
    a, b = model.calibration
    return float(np.mean(1.0 / (1.0 + np.exp(a * f + b))))


def train_skin_scorer(cfg: SkinSvmConfig, specs, train, dev=None,
                      epsilon: float = DEFAULT_EPSILON,
                      manifest_hash: str = ""):
    """Full baseline pipeline on a train split; returns a TrainedScorer."""
    from .store import TrainedScorer

    specs = tuple(specs)
    bonafide = [p for p in train if p.is_bonafide]
    attacks = [p for p in train if not p.is_bonafide]
    if not bonafide or not attacks:
        raise ValueError("train split needs both classes")
    negatives = [p for p in attacks if p.group == "impersonation"]
    if not negatives:
        warnings.warn("no impersonation attacks in train split; thresholding "
                      "on all attacks instead", stacklevel=2)
        negatives = attacks

    rng = np.random.default_rng(cfg.seed)
    face_pixels = []
    for p in bonafide:
        for stack in sample_frames(p, cfg.train_frames):
            vec = pixel_vectors(stack, specs, epsilon)
            face = face_region_mask(stack.height, stack.width).ravel()
            face_pixels.append(vec[face])
    pixels = np.concatenate(face_pixels)
    if len(pixels) > cfg.max_gmm_pixels:
        idx = rng.choice(len(pixels), size=cfg.max_gmm_pixels, replace=False)
        pixels = pixels[idx]
    gmm = fit_skin_gmm(pixels, cfg.gmm_components, seed=cfg.seed)

    examples = []
    for p in bonafide + negatives:
        for stack in sample_frames(p, cfg.train_frames):
            examples.append((stack, p.label, p.presentation_id, stack.frame_index))
    threshold, feats, labels = derive_pixel_labels(
        gmm, examples, specs, epsilon, cfg.retain_fraction, cfg.seed)

    if len(set(np.unique(labels))) < 2:
        raise ValueError("pixel labeling produced a single class")
    if len(feats) > cfg.max_train_pixels:
        keep = np.zeros(len(feats), dtype=bool)
        for cls in (-1.0, 1.0):
            idx = np.flatnonzero(labels == cls)
            n_keep = max(1, int(round(cfg.max_train_pixels * len(idx) / len(feats))))
            keep[rng.choice(idx, size=min(n_keep, len(idx)), replace=False)] = True
        feats, labels = feats[keep], labels[keep]

    svm, calib = train_pixel_svm(feats, labels, gamma=cfg.gamma, C=cfg.C,
                                 seed=cfg.seed)
    params = {
        "gmm_weights": gmm.weights.astype(np.float32),
        "gmm_means": gmm.means.astype(np.float32),
        "gmm_variances": gmm.variances.astype(np.float32),
        "likelihood_threshold": np.array([threshold], dtype=np.float32),
        "support_x": svm.support_x.astype(np.float32),
        "support_ya": svm.support_ya.astype(np.float32),
        "bias": np.array([svm.bias], dtype=np.float32),
        "calibration": np.array(calib, dtype=np.float32),
    }
    cfg_doc = asdict(cfg)
    cfg_doc["channels"] = len(specs)
    return TrainedScorer(kind="pixel_svm", specs=specs, params=params,
                         config=cfg_doc, seed=cfg.seed,
                         manifest_hash=manifest_hash, best_epoch=-1)


def rebuild_skin_model(scorer) -> SkinPixelModel:
    p = scorer.params
    gmm = DiagGmm(weights=p["gmm_weights"].astype(np.float64),
                  means=p["gmm_means"].astype(np.float64),
                  variances=p["gmm_variances"].astype(np.float64))
    svm = SmoSvm(gamma=float(scorer.config.get("gamma", 0.1)),
                 C=float(scorer.config.get("C", 1.0)))
    svm.support_x = p["support_x"].astype(np.float64)
    svm.support_ya = p["support_ya"].astype(np.float64)
    svm.bias = float(p["bias"][0])
    return SkinPixelModel(
        specs=scorer.specs, gmm=gmm,
        likelihood_threshold=float(p["likelihood_threshold"][0]),
        svm=svm, calibration=(float(p["calibration"][0]),
                              float(p["calibration"][1])))
