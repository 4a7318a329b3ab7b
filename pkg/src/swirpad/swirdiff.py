"""Normalized band differences and ordered wavelength-pair enumeration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_EPSILON = 1e-4


@dataclass(frozen=True)
class DiffSpec:
    """An ordered wavelength pair (s1, s2), in nm.

    Ordered pairs are distinct features: the difference map of (s1, s2)
    is the exact negation of (s2, s1).
    """

    s1: int
    s2: int

    def __post_init__(self):
        if self.s1 == self.s2:
            raise ValueError(f"degenerate pair: {self.s1}-{self.s2}")

    def __str__(self) -> str:
        return f"{self.s1}-{self.s2}"

    @property
    def wavelengths(self) -> tuple[int, int]:
        return (self.s1, self.s2)

    @classmethod
    def parse(cls, text: str) -> "DiffSpec":
        """Parse the textual form ``"<s1>-<s2>"``, e.g. ``"1550-1200"``."""
        parts = text.strip().split("-")
        if len(parts) != 2:
            raise ValueError(f"cannot parse difference spec {text!r}")
        try:
            return cls(int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ValueError(f"cannot parse difference spec {text!r}") from exc


def parse_spec_list(text: str) -> tuple[DiffSpec, ...]:
    """Parse a comma-separated list of difference specs."""
    items = [t for t in text.split(",") if t.strip()]
    return tuple(DiffSpec.parse(t) for t in items)


@dataclass
class DiffStack:
    """Multi-channel tensor of normalized difference maps for one frame.

    ``maps`` has shape (len(specs), H, W); maps[i] corresponds to specs[i].
    """

    specs: tuple[DiffSpec, ...]
    maps: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        self.specs = tuple(self.specs)
        if self.maps.ndim != 3 or self.maps.shape[0] != len(self.specs):
            raise ValueError(
                f"maps shape {self.maps.shape} does not match {len(self.specs)} specs"
            )


def enumerate_ordered_pairs(wavelengths: Sequence[int]) -> list[DiffSpec]:
    """All ordered pairs (s1, s2) with s1 != s2, n*(n-1) of them.

    Order is lexicographic in the *indices* of the input list, so the
    channel layout is stable for a fixed wavelength list.
    """
    wl = list(wavelengths)
    if len(set(wl)) != len(wl):
        raise ValueError(f"duplicate wavelengths in {wl}")
    return [DiffSpec(a, b) for a in wl for b in wl if a != b]


def normalized_diff(i1, i2, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Per-pixel (i1 - i2) / (i1 + i2 + epsilon).

    Accepts BandImage objects or plain arrays. The result is bounded in
    (-1, 1) for inputs in [0, 1] and is the exact negation under argument
    swap. Computed in the input precision, at least float32.
    """
    a = np.asarray(getattr(i1, "values", i1))
    b = np.asarray(getattr(i2, "values", i2))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if epsilon <= 0 and not np.all(a + b > 0):
        raise ValueError("epsilon must be > 0 unless i1 + i2 > 0 everywhere")
    dtype = np.result_type(a.dtype, b.dtype, np.float32)
    a = a.astype(dtype, copy=False)
    b = b.astype(dtype, copy=False)
    return (a - b) / (a + b + dtype.type(epsilon))


def build_diff_stack(stack, specs: Sequence[DiffSpec],
                     epsilon: float = DEFAULT_EPSILON) -> DiffStack:
    """Compute the difference map for each spec against one spectral stack.

    Channel order follows ``specs``. An empty spec list yields an empty
    stack (used as the selection base case).
    """
    specs = tuple(specs)
    for spec in specs:
        for wl in spec.wavelengths:
            if wl not in stack.bands:
                raise ValueError(f"wavelength {wl}nm missing from stack")
    if not specs:
        return DiffStack(specs, np.zeros((0, stack.height, stack.width), np.float32),
                         epsilon)
    maps = np.stack([
        normalized_diff(stack.bands[s.s1], stack.bands[s.s2], epsilon)
        for s in specs
    ])
    return DiffStack(specs, maps, epsilon)
