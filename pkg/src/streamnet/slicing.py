"""Intensity-slice decomposition of images and the zero-noise corruption protocol.

Slicing partitions [0, 1] into half-open intervals; keeping only the values
inside one interval (and zeroing the rest) yields a slice, and the slices sum
back to the original image exactly.

Corruption zeroes a fixed count of pixel locations chosen uniformly without
replacement. The randomness comes from a small, fully documented xorshift64*
generator so masks are reproducible independent of platform and numpy
version, and per-image sub-seeds make the corruption independent of
iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    """One splitmix64 finalization round (Stafford mix13)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def subseed(seed: int, index: int) -> int:
    """Derive a stable 64-bit sub-seed for item ``index`` under ``seed``."""
    return _mix64(_mix64(seed & _MASK64) ^ (index & _MASK64))


class Xorshift64Star:
    """xorshift64* generator: shift-register core, multiplicative output mix.

    State update: s ^= s >> 12; s ^= s << 25; s ^= s >> 27.
    Output: (s * 0x2545F4914F6CDD1D) mod 2^64.
    """

    def __init__(self, seed: int):
        s = _mix64(seed)
        self._s = s if s != 0 else _GOLDEN

    def next_u64(self) -> int:
        s = self._s
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self._s = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def keys(self, count: int) -> np.ndarray:
        """``count`` consecutive outputs as a uint64 array."""
        return np.array([self.next_u64() for _ in range(count)], dtype=np.uint64)


# ---------------------------------------------------------------------------
# Slice specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SliceSpec:
    """Ordered interval boundaries partitioning [0, 1] into intensity slices.

    Slice i is [boundaries[i], boundaries[i+1]); the final boundary is 1.1 so
    the value 1.0 falls inside the last slice.
    """

    boundaries: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if len(b) < 2:
            raise ValueError("SliceSpec needs at least two boundaries")
        if b[0] != 0.0:
            raise ValueError(f"first boundary must be 0.0, got {b[0]}")
        if b[-1] != 1.1:
            raise ValueError(f"last boundary must be 1.1, got {b[-1]}")
        if any(lo >= hi for lo, hi in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_slices(self) -> int:
        return len(self.boundaries) - 1

    def interval(self, i: int) -> tuple:
        if not 0 <= i < self.n_slices:
            raise IndexError(f"slice index {i} out of range [0, {self.n_slices})")
        return self.boundaries[i], self.boundaries[i + 1]


def make_slice_spec(n_slices: int) -> SliceSpec:
    """Equal-width partition of [0, 1] into ``n_slices`` intervals.

    The terminal boundary is always 1.1, e.g. n=10 gives
    0.0, 0.1, ..., 0.9, 1.1.
    """
    if n_slices < 1:
        raise ValueError(f"n_slices must be >= 1, got {n_slices}")
    return SliceSpec(tuple(i / n_slices for i in range(n_slices)) + (1.1,))


def extract_slice(image: np.ndarray, spec: SliceSpec, i: int,
                  membership: str = "per_channel") -> np.ndarray:
    """Keep values falling in slice i's interval, zero everything else.

    ``membership`` selects how an RGB pixel is assigned:
      - "per_channel": each channel value is tested independently (default).
      - "luminance": the channel-mean decides, and all channels of the pixel
        are kept together.
    Both choices keep the decomposition exact: every element is nonzero in at
    most one slice and the slices sum back to the image.
    """
    image = np.asarray(image, dtype=np.float64)
    lo, hi = spec.interval(i)
    if membership == "per_channel":
        mask = (image >= lo) & (image < hi)
    elif membership == "luminance":
        luma = image.mean(axis=-3, keepdims=True)
        mask = np.broadcast_to((luma >= lo) & (luma < hi), image.shape)
    else:
        raise ValueError(f"unknown slice membership mode: {membership!r}")
    return np.where(mask, image, 0.0)


def slice_image(image: np.ndarray, spec: SliceSpec,
                membership: str = "per_channel") -> list:
    """All slices of an image, ordered by slice index."""
    return [extract_slice(image, spec, i, membership) for i in range(spec.n_slices)]


# ---------------------------------------------------------------------------
# Zero-noise corruption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Fraction of pixel locations to zero, plus the 64-bit mask seed."""

    ratio: float
    seed: int = 0
    per_channel: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"noise ratio must be in [0, 1], got {self.ratio}")


def noise_count(ratio: float, h: int, w: int) -> int:
    """Number of zeroed locations: round(ratio * h * w), half away from zero."""
    return int(np.floor(ratio * h * w + 0.5))


def corruption_mask(h: int, w: int, ratio: float, rng: Xorshift64Star) -> np.ndarray:
    """Boolean (h, w) mask with exactly round(ratio*h*w) True entries.

    Each location gets one 64-bit key from ``rng``; the locations with the k
    smallest keys are zeroed. Ranking i.i.d. keys yields a uniform choice
    without replacement.
    """
    k = noise_count(ratio, h, w)
    mask = np.zeros(h * w, dtype=bool)
    if k:
        keys = rng.keys(h * w)
        mask[np.argsort(keys, kind="stable")[:k]] = True
    return mask.reshape(h, w)


def corrupt_with_noise(image: np.ndarray, noise: NoiseSpec,
                       rng: Xorshift64Star) -> np.ndarray:
    """Zero noise.ratio of the pixel locations of one (..., c, h, w) image.

    By default a chosen location is blacked out across all channels; with
    noise.per_channel each channel draws its own mask (same count per
    channel).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2], image.shape[-1]
    out = image.copy()
    if noise.per_channel:
        c = image.shape[-3]
        for ch in range(c):
            mask = corruption_mask(h, w, noise.ratio, rng)
            out[..., ch, :, :][..., mask] = 0.0
    else:
        mask = corruption_mask(h, w, noise.ratio, rng)
        out[..., mask] = 0.0
    return out


def corrupt_batch(images: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """Corrupt a stack of images, sub-seeding per image index.

    Image i uses the generator seeded with subseed(noise.seed, i), so the
    result does not depend on evaluation order or batch boundaries.
    """
    if noise.ratio == 0.0:
        return images.copy()
    out = np.empty_like(images)
    for i in range(images.shape[0]):
        out[i] = corrupt_with_noise(images[i], noise,
                                    Xorshift64Star(subseed(noise.seed, i)))
    return out
