"""On-disk data model: 16-bit PGM band images, manifests, protocols, sampling.

Band images are stored as binary PGM ("P5") with maxval 65535 and
big-endian samples; values are kept in [0, 1] in memory. A dataset root
holds one ``manifest.csv`` plus one directory per presentation with frame
files named ``frame_<k>_<wavelength>nm.pgm``.
"""

from __future__ import annotations

import csv
import os
import re
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np

PGM_MAXVAL = 65535

SPLITS = ("train", "dev", "test")
LABELS = ("bonafide", "attack")
GROUPS = ("none", "impersonation", "obfuscation")

IMPERSONATION_TYPES = ("print", "replay", "rigid_mask", "paper_mask",
                       "flexible_mask", "mannequin")
OBFUSCATION_TYPES = ("glasses", "makeup", "tattoo", "wig")
ATTACK_TYPES = IMPERSONATION_TYPES + OBFUSCATION_TYPES

MANIFEST_COLUMNS = ("presentation_id", "split", "label", "attack_type",
                    "group", "n_frames", "path")

_FRAME_RE = re.compile(r"frame_(\d+)_(\d+)nm\.pgm$")


class PgmFormatError(ValueError):
    """Malformed PGM magic or header."""


class UnsupportedPgmError(PgmFormatError):
    """Structurally valid PGM we do not handle (wrong maxval or type)."""


class ManifestError(ValueError):
    """Invalid manifest row; the message names the offending row."""


@dataclass(frozen=True)
class BandImage:
    """One single-band image: values in [0, 1], wavelength in nm."""

    wavelength: int
    values: np.ndarray

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be > 0, got {self.wavelength}")
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"image must be 2-D and non-empty, got shape {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("band image values out of [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class SpectralStack:
    """One frame's co-registered bands, indexed by wavelength (nm)."""

    def __init__(self, bands: dict[int, BandImage], frame_index: int = 0):
        shapes = {img.values.shape for img in bands.values()}
        if len(shapes) > 1:
            raise ValueError(f"bands disagree on shape: {sorted(shapes)}")
        for wl, img in bands.items():
            if wl != img.wavelength:
                raise ValueError(f"band keyed {wl}nm holds image at {img.wavelength}nm")
        self.bands = {wl: bands[wl] for wl in sorted(bands)}
        self.frame_index = frame_index

    @property
    def wavelengths(self) -> tuple[int, ...]:
        return tuple(self.bands)

    @property
    def height(self) -> int:
        return next(iter(self.bands.values())).height

    @property
    def width(self) -> int:
        return next(iter(self.bands.values())).width


def _validate_labeling(label: str, attack_type: str, group: str) -> None:
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    if group not in GROUPS:
        raise ValueError(f"unknown group {group!r}")
    if label == "bonafide":
        if attack_type != "none" or group != "none":
            raise ValueError(
                f"bonafide requires attack_type=none and group=none, "
                f"got attack_type={attack_type!r} group={group!r}")
        return
    if attack_type not in ATTACK_TYPES:
        raise ValueError(f"unknown attack_type {attack_type!r}")
    expected = "impersonation" if attack_type in IMPERSONATION_TYPES else "obfuscation"
    if group != expected:
        raise ValueError(
            f"attack_type {attack_type!r} belongs to group {expected!r}, "
            f"got {group!r}")


class Presentation:
    """A labeled sequence of spectral stacks plus attack metadata.

    Frames may be given eagerly or through a loader callable; lazy loads
    are synchronized and cached.
    """

    def __init__(self, presentation_id: str, label: str, attack_type: str,
                 group: str, split: str, frames=None, loader=None,
                 n_frames: int | None = None):
        _validate_labeling(label, attack_type, group)
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        if (frames is None) == (loader is None):
            raise ValueError("exactly one of frames/loader must be given")
        if frames is not None and len(frames) == 0:
            raise ValueError("presentation must have at least one frame")
        if loader is not None and (n_frames is None or int(n_frames) < 1):
            raise ValueError("loader-backed presentation needs n_frames >= 1")
        self.presentation_id = presentation_id
        self.label = label
        self.attack_type = attack_type
        self.group = group
        self.split = split
        self._frames = list(frames) if frames is not None else None
        self._loader = loader
        self._n_frames = len(frames) if frames is not None else int(n_frames)
        self._lock = threading.Lock()

    @property
    def is_bonafide(self) -> bool:
        return self.label == "bonafide"

    @property
    def n_frames(self) -> int:
        return self._n_frames

    @property
    def frames(self) -> list[SpectralStack]:
        with self._lock:
            if self._frames is None:
                self._frames = self._loader()
                if len(self._frames) != self._n_frames:
                    raise IOError(
                        f"{self.presentation_id}: loader returned "
                        f"{len(self._frames)} frames, manifest says {self._n_frames}")
            return self._frames

    def __repr__(self):
        return (f"Presentation({self.presentation_id!r}, {self.label}, "
                f"{self.attack_type}, split={self.split}, frames={self._n_frames})")


@dataclass
class ProtocolView:
    """A protocol's train/dev/test filtering of a presentation list."""

    protocol: str
    train: list = field(default_factory=list)
    dev: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


# ---------------------------------------------------------------------------
# PGM I/O

def _read_header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines per the PNM grammar
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise PgmFormatError("unterminated comment in header")
            pos = nl + 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PgmFormatError("truncated PGM header")
    return buf[start:pos], pos


def read_pgm16(path, wavelength: int) -> BandImage:
    """Read a 16-bit binary PGM; the wavelength comes from the caller.

    Values are raw/65535 in float32. Only "P5" with maxval 65535 and
    big-endian samples is accepted.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    pos = 2
    try:
        w_tok, pos = _read_header_token(buf, pos)
        h_tok, pos = _read_header_token(buf, pos)
        max_tok, pos = _read_header_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError as exc:
        raise PgmFormatError(f"{path}: bad header: {exc}") from exc
    if width < 1 or height < 1:
        raise PgmFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != PGM_MAXVAL:
        raise UnsupportedPgmError(f"{path}: maxval {maxval}, expected {PGM_MAXVAL}")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos:pos + width * height * 2]
    if len(payload) != width * height * 2:
        raise IOError(f"{path}: truncated payload "
                      f"({len(payload)} of {width * height * 2} bytes)")
    raw = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    values = raw.astype(np.float32) / np.float32(PGM_MAXVAL)
    return BandImage(wavelength=wavelength, values=values)


def write_pgm16(image: BandImage, path) -> None:
    """Write a BandImage as 16-bit binary PGM, round(v*65535) half-up."""
    v = image.values
    if v.min() < 0.0 or v.max() > 1.0:
        raise ValueError("values out of [0, 1]")
    raw = np.floor(v.astype(np.float64) * PGM_MAXVAL + 0.5).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n{PGM_MAXVAL}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw.tobytes())


# ---------------------------------------------------------------------------
# Manifest

def frame_filename(k: int, wavelength: int) -> str:
    return f"frame_{k}_{wavelength}nm.pgm"


def _discover_wavelengths(pres_dir) -> list[int]:
    wls = []
    for name in os.listdir(pres_dir):
        m = _FRAME_RE.match(name)
        if m and int(m.group(1)) == 0:
            wls.append(int(m.group(2)))
    if not wls:
        raise IOError(f"{pres_dir}: no frame_0_*nm.pgm files found")
    return sorted(wls)


def _make_loader(pres_dir, n_frames: int, wavelengths: list[int]):
    def load() -> list[SpectralStack]:
        frames = []
        for k in range(n_frames):
            bands = {
                wl: read_pgm16(os.path.join(pres_dir, frame_filename(k, wl)), wl)
                for wl in wavelengths
            }
            frames.append(SpectralStack(bands, frame_index=k))
        return frames
    return load


def load_manifest(root) -> list[Presentation]:
    """Parse ``manifest.csv`` under root into lazily loading Presentations.

    Every frame file referenced by a row is checked for existence up
    front; enum or labeling violations raise ManifestError naming the row.
    """
    manifest_path = os.path.join(root, "manifest.csv")
    presentations = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"manifest missing columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                split = row["split"]
                if split not in SPLITS:
                    raise ValueError(f"unknown split {split!r}")
                n_frames = int(row["n_frames"])
                if n_frames < 1:
                    raise ValueError("n_frames must be >= 1")
                pres_dir = os.path.join(root, row["path"])
                wavelengths = _discover_wavelengths(pres_dir)
                for k in range(n_frames):
                    for wl in wavelengths:
                        fp = os.path.join(pres_dir, frame_filename(k, wl))
                        if not os.path.isfile(fp):
                            raise IOError(f"missing frame file {fp}")
                presentations.append(Presentation(
                    presentation_id=row["presentation_id"],
                    label=row["label"],
                    attack_type=row["attack_type"],
                    group=row["group"],
                    split=split,
                    loader=_make_loader(pres_dir, n_frames, wavelengths),
                    n_frames=n_frames,
                ))
            except IOError:
                raise
            except ValueError as exc:
                raise ManifestError(f"manifest row {lineno} "
                                    f"({row.get('presentation_id')}): {exc}") from exc
    return presentations


def manifest_sha256(root) -> str:
    import hashlib
    with open(os.path.join(root, "manifest.csv"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# Protocols and sampling

PROTOCOLS = ("grand_test", "impersonation", "obfuscation")


def select_protocol(data: list[Presentation], protocol: str) -> ProtocolView:
    """Filter presentations into a protocol view; bonafide always retained."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not data:
        raise ValueError("no presentations to filter")
    keep_group = {"grand_test": None,
                  "impersonation": "impersonation",
                  "obfuscation": "obfuscation"}[protocol]
    view = ProtocolView(protocol=protocol)
    for p in data:
        if not p.is_bonafide and keep_group is not None and p.group != keep_group:
            continue
        view.split(p.split).append(p)
    for name in SPLITS:
        if not view.split(name):
            warnings.warn(f"protocol {protocol}: empty {name} split", stacklevel=2)
    return view


def sample_frames(p: Presentation, k: int = 10) -> list[SpectralStack]:
    """Evenly sample k frames along the sequence, endpoint-inclusive.

    Indices are round(j*(n-1)/(k-1)) for j=0..k-1, deduplicated in order;
    if the presentation has fewer than k frames, all are returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    frames = p.frames
    n = len(frames)
    if n <= k:
        return list(frames)
    positions = np.linspace(0.0, n - 1, num=k)
    indices = np.floor(positions + 0.5).astype(int)  # round half up
    seen, out = set(), []
    for i in indices:
        if i not in seen:
            seen.add(i)
            out.append(frames[i])
    return out
