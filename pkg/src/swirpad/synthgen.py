"""Synthetic multispectral face dataset generator.

Scenes are flat-reflectance composites: a fabric background, an elliptical
face region, and (for obfuscation attacks) an altered sub-region. Per-band
pixel values are illumination_gain * reflectance + Gaussian noise, clipped
to [0, 1]. The skin table carries the water-absorption dip near 1430 nm,
and tattoo ink is transparent beyond the visible range, so the qualitative
separability this toolkit exploits holds by construction.

All randomness flows from a single seed through counter-based per-
presentation streams, so presentations can be rendered in any order (or in
parallel) with identical output.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import (ATTACK_TYPES, IMPERSONATION_TYPES, OBFUSCATION_TYPES,
                      SPLITS, BandImage, Presentation, SpectralStack,
                      frame_filename, write_pgm16)

SWIR_WAVELENGTHS = (940, 1050, 1200, 1300, 1450, 1550, 1650)
VISIBLE_WAVELENGTHS = (465, 550, 640)
VISIBLE_CUTOFF_NM = 700

MATERIALS = ("skin", "paper", "silicone", "plastic", "screen", "fabric",
             "tattoo_ink_on_skin", "glass_lens")

# Mean reflectance tables. The skin column encodes the one physical fact
# that matters: strong water absorption near 1430 nm. Tattoo ink equals
# skin at every SWIR wavelength and is dark only in the visible bands.
_SKIN = {465: 0.30, 550: 0.40, 640: 0.45,
         940: 0.55, 1050: 0.50, 1200: 0.40, 1300: 0.35,
         1450: 0.05, 1550: 0.10, 1650: 0.20}

DEFAULT_REFLECTANCE: dict[str, dict[int, float]] = {
    "skin": dict(_SKIN),
    "tattoo_ink_on_skin": {465: 0.05, 550: 0.06, 640: 0.08,
                           **{wl: _SKIN[wl] for wl in SWIR_WAVELENGTHS}},
    "paper": {wl: 0.70 for wl in VISIBLE_WAVELENGTHS + SWIR_WAVELENGTHS},
    "screen": {465: 0.35, 550: 0.35, 640: 0.35,
               **{wl: 0.12 for wl in SWIR_WAVELENGTHS}},
    "silicone": {465: 0.50, 550: 0.52, 640: 0.55,
                 940: 0.40, 1050: 0.42, 1200: 0.45, 1300: 0.44,
                 1450: 0.40, 1550: 0.38, 1650: 0.35},
    "plastic": {465: 0.55, 550: 0.55, 640: 0.55,
                940: 0.60, 1050: 0.58, 1200: 0.55, 1300: 0.53,
                1450: 0.52, 1550: 0.50, 1650: 0.48},
    "fabric": {465: 0.45, 550: 0.45, 640: 0.45,
               940: 0.55, 1050: 0.52, 1200: 0.48, 1300: 0.45,
               1450: 0.32, 1550: 0.36, 1650: 0.40},
    "glass_lens": {465: 0.30, 550: 0.30, 640: 0.30,
                   **{wl: 0.60 for wl in SWIR_WAVELENGTHS}},
}

ATTACK_MATERIAL = {
    "print": "paper",
    "replay": "screen",
    "rigid_mask": "plastic",
    "paper_mask": "paper",
    "flexible_mask": "silicone",
    "mannequin": "plastic",
    "glasses": "glass_lens",
    "makeup": "silicone",
    "tattoo": "tattoo_ink_on_skin",
    "wig": "fabric",
}

# Desk-scale presentation counts; the attack mix per split follows the
# source database's published distribution, rounded per type. The dev
# split carries 100 bonafide presentations so a BPCER=1% threshold is
# actually realizable there (coarser dev splits degrade the a-priori
# threshold into an order-statistic cliff at the bonafide minimum).
DEFAULT_COUNTS: dict[str, dict[str, int]] = {
    "train": {"bonafide": 16, "print": 3, "replay": 2, "rigid_mask": 11,
              "paper_mask": 2, "flexible_mask": 6, "mannequin": 1,
              "glasses": 4, "makeup": 18, "tattoo": 2, "wig": 1},
    "dev": {"bonafide": 100, "print": 2, "replay": 2, "rigid_mask": 3,
            "paper_mask": 1, "flexible_mask": 2, "mannequin": 1,
            "glasses": 1, "makeup": 6, "tattoo": 1, "wig": 1},
    "test": {"bonafide": 35, "print": 0, "replay": 6, "rigid_mask": 6,
             "paper_mask": 2, "flexible_mask": 2, "mannequin": 3,
             "glasses": 2, "makeup": 12, "tattoo": 1, "wig": 1},
}

# Reference attack distribution the default counts were scaled from
# (per split: attack_type -> count in the full-size database).
REFERENCE_ATTACK_COUNTS = {
    "train": {"print": 48, "replay": 36, "rigid_mask": 162, "paper_mask": 28,
              "flexible_mask": 90, "mannequin": 20, "glasses": 56,
              "makeup": 264, "tattoo": 24, "wig": 14},
    "dev": {"print": 98, "replay": 100, "rigid_mask": 118, "paper_mask": 24,
            "flexible_mask": 86, "mannequin": 38, "glasses": 38,
            "makeup": 271, "tattoo": 24, "wig": 26},
    "test": {"print": 0, "replay": 126, "rigid_mask": 140, "paper_mask": 49,
             "flexible_mask": 48, "mannequin": 77, "glasses": 36,
             "makeup": 258, "tattoo": 24, "wig": 26},
}


@dataclass
class MaterialSpectrum:
    material: str
    reflectance: dict[int, float]
    variability: float = 0.05

    def __post_init__(self):
        for wl, r in self.reflectance.items():
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{self.material}@{wl}nm reflectance {r} not in [0,1]")


@dataclass
class SceneSpec:
    """Geometry and noise parameters for one rendered presentation."""

    attack_type: str              # "none" for bonafide
    face_center: tuple[float, float]   # (cx, cy) pixels
    face_axes: tuple[float, float]     # (ax, ay) pixels
    image_size: int
    altered_region: np.ndarray | None = None   # bool mask, obfuscation only
    noise_sigma: float = 0.02
    gain_range: tuple[float, float] = (0.95, 1.05)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (0 < self.gain_range[0] <= self.gain_range[1]):
            raise ValueError(f"bad gain range {self.gain_range}")
        if self.altered_region is not None:
            face = ellipse_mask(self.image_size, self.face_center, self.face_axes)
            if np.any(self.altered_region & ~face):
                raise ValueError("altered_region must lie inside the face region")


@dataclass
class GeneratorConfig:
    wavelengths: tuple[int, ...] = SWIR_WAVELENGTHS
    counts: dict = field(default_factory=lambda: {s: dict(DEFAULT_COUNTS[s])
                                                  for s in SPLITS})
    frames_per_presentation: int = 10
    noise_sigma: float = 0.02
    seed: int = 42
    image_size: int = 64
    variability: float = 0.05
    gain_range: tuple[float, float] = (0.95, 1.05)
    materials: dict = field(default_factory=lambda: {
        m: dict(t) for m, t in DEFAULT_REFLECTANCE.items()})

    def __post_init__(self):
        if len(set(self.wavelengths)) != len(self.wavelengths):
            raise ValueError("duplicate wavelengths")
        for split, by_type in self.counts.items():
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r} in counts")
            for kind, n in by_type.items():
                if kind != "bonafide" and kind not in ATTACK_TYPES:
                    raise ValueError(f"unknown presentation kind {kind!r}")
                if n < 0:
                    raise ValueError(f"negative count for {split}/{kind}")
        for m in MATERIALS:
            table = self.materials.get(m)
            if table is None:
                raise ValueError(f"material table missing {m!r}")
            for wl in self.wavelengths:
                if wl not in table:
                    raise ValueError(f"material {m!r} lacks reflectance at {wl}nm")

    def total_presentations(self) -> int:
        return sum(n for by_type in self.counts.values() for n in by_type.values())

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        kwargs = {}
        if "wavelengths" in raw:
            kwargs["wavelengths"] = tuple(int(w) for w in raw["wavelengths"])
        if "counts" in raw:
            kwargs["counts"] = {s: {k: int(v) for k, v in d.items()}
                                for s, d in raw["counts"].items()}
        if "materials" in raw:
            tables = {m: dict(t) for m, t in DEFAULT_REFLECTANCE.items()}
            for m, t in raw["materials"].items():
                tables[m] = {int(wl): float(r) for wl, r in t.items()}
            kwargs["materials"] = tables
        for key in ("frames_per_presentation", "seed", "image_size"):
            if key in raw:
                kwargs[key] = int(raw[key])
        for key in ("noise_sigma", "variability"):
            if key in raw:
                kwargs[key] = float(raw[key])
        if "gain_range" in raw:
            kwargs["gain_range"] = tuple(float(g) for g in raw["gain_range"])
        return cls(**kwargs)

    def to_json(self, path) -> None:
        doc = asdict(self)
        doc["wavelengths"] = list(self.wavelengths)
        doc["gain_range"] = list(self.gain_range)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def presentation_rng(seed: int, presentation_id: str) -> np.random.Generator:
    """Counter-based stream keyed on (seed, presentation_id)."""
    digest = hashlib.sha256(presentation_id.encode("utf-8")).digest()
    sub = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), sub]))


def material_reflectance(material: str, wavelength: int,
                         rng: np.random.Generator,
                         materials: dict | None = None,
                         variability: float = 0.0) -> float:
    """Draw mean*(1 + variability*z), z standard normal, clamped to [0,1]."""
    tables = materials if materials is not None else DEFAULT_REFLECTANCE
    if material not in tables:
        raise ValueError(f"unknown material {material!r}")
    table = tables[material]
    if wavelength not in table:
        raise ValueError(f"material {material!r} has no reflectance at {wavelength}nm")
    mean = table[wavelength]
    value = mean * (1.0 + variability * rng.standard_normal())
    return float(min(1.0, max(0.0, value)))


def ellipse_mask(size: int, center: tuple[float, float],
                 axes: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    cx, cy = center
    ax, ay = axes
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def _altered_region(attack_type: str, size: int, center, axes) -> np.ndarray:
    """Obfuscation attacks only alter a sub-region of the face."""
    face = ellipse_mask(size, center, axes)
    cx, cy = center
    ax, ay = axes
    yy, xx = np.mgrid[0:size, 0:size]
    if attack_type == "glasses":
        # wide decorative frames: a tall band through the widest part
        band = (yy >= cy - 0.55 * ay) & (yy <= cy + 0.05 * ay)
        return face & band
    if attack_type == "wig":
        # a thin hairline strip: wigs barely register in SWIR differences
        return face & (yy <= cy - 0.70 * ay)
    if attack_type == "tattoo":
        patch = ellipse_mask(size, (cx + 0.40 * ax, cy + 0.30 * ay),
                             (0.30 * ax, 0.22 * ay))
        return face & patch
    if attack_type == "makeup":
        left = ellipse_mask(size, (cx - 0.45 * ax, cy + 0.25 * ay),
                            (0.32 * ax, 0.26 * ay))
        right = ellipse_mask(size, (cx + 0.45 * ax, cy + 0.25 * ay),
                             (0.32 * ax, 0.26 * ay))
        forehead = (yy >= cy - 0.80 * ay) & (yy <= cy - 0.50 * ay)
        return face & (left | right | forehead)
    raise ValueError(f"{attack_type!r} is not an obfuscation attack")


def _material_map(spec: SceneSpec) -> np.ndarray:
    """Per-pixel material indices into MATERIALS."""
    size = spec.image_size
    face = ellipse_mask(size, spec.face_center, spec.face_axes)
    index = {m: i for i, m in enumerate(MATERIALS)}
    grid = np.full((size, size), index["fabric"], dtype=np.uint8)
    at = spec.attack_type
    if at == "none" or at in OBFUSCATION_TYPES:
        grid[face] = index["skin"]
        if at != "none":
            grid[spec.altered_region] = index[ATTACK_MATERIAL[at]]
    elif at in IMPERSONATION_TYPES:
        grid[face] = index[ATTACK_MATERIAL[at]]
    else:
        raise ValueError(f"unknown attack_type {at!r}")
    return grid


def _draw_reflectances(cfg: GeneratorConfig, rng) -> dict[str, dict[int, float]]:
    # Fixed draw order over the full material table keeps streams aligned
    # across attack types; tattoo ink then inherits skin's drawn SWIR
    # values (the ink is transparent beyond the visible range).
    drawn: dict[str, dict[int, float]] = {}
    for material in MATERIALS:
        drawn[material] = {}
        for wl in sorted(cfg.wavelengths):
            drawn[material][wl] = material_reflectance(
                material, wl, rng, cfg.materials, cfg.variability)
    for wl in sorted(cfg.wavelengths):
        if wl > VISIBLE_CUTOFF_NM:
            drawn["tattoo_ink_on_skin"][wl] = drawn["skin"][wl]
    return drawn


def render_presentation(spec: SceneSpec, cfg: GeneratorConfig,
                        rng: np.random.Generator,
                        presentation_id: str = "p0",
                        split: str = "train") -> Presentation:
    """Render one presentation: all frames, all configured wavelengths."""
    grid = _material_map(spec)
    reflect = _draw_reflectances(cfg, rng)
    size = spec.image_size
    lookup = np.empty((len(MATERIALS), len(cfg.wavelengths)))
    wl_order = list(cfg.wavelengths)
    for mi, material in enumerate(MATERIALS):
        for wi, wl in enumerate(wl_order):
            lookup[mi, wi] = reflect[material][wl]

    frames = []
    for k in range(cfg.frames_per_presentation):
        gain = rng.uniform(*spec.gain_range)
        bands = {}
        for wi, wl in enumerate(wl_order):
            img = gain * lookup[grid, wi]
            if spec.noise_sigma > 0:
                img = img + rng.normal(0.0, spec.noise_sigma, size=(size, size))
            img = np.clip(img, 0.0, 1.0).astype(np.float32)
            bands[wl] = BandImage(wavelength=wl, values=img)
        frames.append(SpectralStack(bands, frame_index=k))

    at = spec.attack_type
    if at == "none":
        label, group = "bonafide", "none"
    else:
        label = "attack"
        group = "impersonation" if at in IMPERSONATION_TYPES else "obfuscation"
    return Presentation(presentation_id, label, at, group, split, frames=frames)


def build_scene(attack_type: str, cfg: GeneratorConfig,
                rng: np.random.Generator) -> SceneSpec:
    """Face geometry with mild per-presentation jitter, drawn first."""
    size = cfg.image_size
    cx = size * (0.50 + 0.02 * rng.uniform(-1, 1))
    cy = size * (0.52 + 0.02 * rng.uniform(-1, 1))
    ax = size * 0.32 * (1.0 + 0.10 * rng.uniform(-1, 1))
    ay = size * 0.42 * (1.0 + 0.10 * rng.uniform(-1, 1))
    altered = None
    if attack_type in OBFUSCATION_TYPES:
        altered = _altered_region(attack_type, size, (cx, cy), (ax, ay))
    return SceneSpec(attack_type=attack_type, face_center=(cx, cy),
                     face_axes=(ax, ay), image_size=size,
                     altered_region=altered, noise_sigma=cfg.noise_sigma,
                     gain_range=cfg.gain_range)


def iter_presentation_ids(cfg: GeneratorConfig):
    """Deterministic (split, kind, presentation_id) enumeration."""
    for split in SPLITS:
        by_type = cfg.counts.get(split, {})
        for kind in ("bonafide",) + ATTACK_TYPES:
            for idx in range(by_type.get(kind, 0)):
                yield split, kind, f"{split}_{kind}_{idx:03d}"


def generate_presentation(cfg: GeneratorConfig, split: str, kind: str,
                          presentation_id: str) -> Presentation:
    rng = presentation_rng(cfg.seed, presentation_id)
    attack_type = "none" if kind == "bonafide" else kind
    scene = build_scene(attack_type, cfg, rng)
    return render_presentation(scene, cfg, rng, presentation_id, split)


def generate_dataset(cfg: GeneratorConfig, out) -> str:
    """Write the full synthetic tree; returns the manifest path.

    Byte-identical for a fixed config: per-presentation RNG streams are
    keyed on (seed, presentation_id), never on generation order.
    """
    if cfg.total_presentations() == 0:
        raise ValueError("config yields zero presentations")
    os.makedirs(out, exist_ok=True)
    rows = []
    for split, kind, pid in iter_presentation_ids(cfg):
        p = generate_presentation(cfg, split, kind, pid)
        pres_dir = os.path.join(out, pid)
        os.makedirs(pres_dir, exist_ok=True)
        for stack in p.frames:
            for wl, img in stack.bands.items():
                write_pgm16(img, os.path.join(
                    pres_dir, frame_filename(stack.frame_index, wl)))
        rows.append((pid, p.split, p.label, p.attack_type, p.group,
                     len(p.frames), pid))
    manifest_path = os.path.join(out, "manifest.csv")
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("presentation_id,split,label,attack_type,group,n_frames,path\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    cfg.to_json(os.path.join(out, "generator.json"))
    return manifest_path
