"""Intensity-thresholded patch extraction and raw patch dictionaries.

Sonar-style targets concentrate energy in bright highlight regions, so patch
windows are only drawn where enough pixels survive a global intensity
threshold.  Surviving patches are vectorized column-major, normalized to unit
l2 norm, and stacked class-by-class into a Dictionary.

Images travel as 16-bit binary PGM (P5, maxval 65535, two-byte big-endian
samples), laid out on disk as ``<root>/<class>/<regime>/<name>.pgm``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse_solver import Dictionary

REGIMES = ("narrow", "middling", "expansive")

PGM_MAXVAL = 65535


@dataclass
class Image:
    """A nonnegative magnitude image with an optional label and window regime."""

    pixels: np.ndarray
    label: str | None = None
    window_regime: str | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if not np.all(np.isfinite(self.pixels)) or np.any(self.pixels < 0):
            raise ValueError("pixels must be finite and >= 0")
        if self.window_regime is not None and self.window_regime not in REGIMES:
            raise ValueError(f"window_regime must be one of {REGIMES}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class PatchConfig:
    # 28x28 windows and a 65th-percentile mask separate the desk-scale
    # synthetic shapes; smaller windows or looser masks measurably do not
    b1: int = 28
    b2: int = 28
    patches_per_image: int = 17
    threshold_percentile: float = 65.0
    min_survive_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.b1 < 1 or self.b2 < 1:
            raise ValueError("patch dimensions must be >= 1")
        if self.patches_per_image < 1:
            raise ValueError("patches_per_image must be >= 1")
        if not 0.0 <= self.threshold_percentile < 100.0:
            raise ValueError("threshold_percentile must lie in [0, 100)")
        if not 0.0 <= self.min_survive_fraction <= 1.0:
            raise ValueError("min_survive_fraction must lie in [0, 1]")

    @property
    def patch_len(self) -> int:
        return self.b1 * self.b2


@dataclass
class PatchSet:
    """Unit-norm vectorized patches from one source image."""

    patches: np.ndarray  # (b, P), columns unit norm
    label: str | None
    source_image: str | None
    origins: np.ndarray  # (P, 2) top-left (row, col) per patch
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=float)
        self.origins = np.asarray(self.origins, dtype=int)
        if self.patches.ndim != 2:
            raise ValueError("patches must be a (b, P) matrix")
        norms = np.linalg.norm(self.patches, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise ValueError("every patch must be unit l2 norm")
        if self.origins.shape != (self.patches.shape[1], 2):
            raise ValueError("one (row, col) origin per patch required")
        if np.any(self.origins < 0):
            raise ValueError("origins must be nonnegative")
        if self.image_shape is not None:
            h, w = self.image_shape
            if np.any(self.origins[:, 0] >= h) or np.any(self.origins[:, 1] >= w):
                raise ValueError("origins out of image bounds")

    @property
    def count(self) -> int:
        return self.patches.shape[1]


@dataclass
class MaskResult:
    mask: np.ndarray
    threshold: float
    empty: bool


def intensity_mask(image: Image, threshold_percentile: float) -> MaskResult:
    """Keep pixels strictly above the nearest-rank percentile of all pixels.

    Percentile 0 keeps everything by definition.  A constant image with a
    positive percentile yields an empty mask, reported via the flag rather
    than an error.
    """
    if not 0.0 <= threshold_percentile < 100.0:
        raise ValueError("threshold_percentile must lie in [0, 100)")
    pix = image.pixels
    if threshold_percentile == 0.0:
        return MaskResult(np.ones_like(pix, dtype=bool), -np.inf, False)
    n = pix.size
    rank = max(1, int(np.ceil(threshold_percentile / 100.0 * n)))  # nearest rank
    threshold = float(np.partition(pix.ravel(), rank - 1)[rank - 1])
    mask = pix > threshold
    return MaskResult(mask, threshold, not bool(mask.any()))


def _window_sums(a: np.ndarray, b1: int, b2: int) -> np.ndarray:
    """Sum of every (b1, b2) window via an integral image; output indexed by origin."""
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=a.dtype)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=s[1:, 1:])
    return s[b1:, b2:] - s[:-b1, b2:] - s[b1:, :-b2] + s[:-b1, :-b2]


def qualifying_origins(image: Image, mask: np.ndarray, config: PatchConfig) -> np.ndarray:
    """Row-major (row, col) origins whose window passes the survival fraction.

    All-zero pixel windows never qualify: they cannot be normalized.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.pixels.shape:
        raise ValueError("mask shape must equal image shape")
    if config.b1 > image.height or config.b2 > image.width:
        raise ValueError("image smaller than patch size")
    survive = _window_sums(mask.astype(np.int64), config.b1, config.b2)
    need = config.min_survive_fraction * config.b1 * config.b2
    ok = survive >= need - 1e-9
    pixel_sum = _window_sums(image.pixels, config.b1, config.b2)
    ok &= pixel_sum > 0.0
    return np.argwhere(ok)


def sample_patches(
    image: Image,
    mask,
    config: PatchConfig,
    rng: np.random.Generator,
    source_id: str | None = None,
) -> PatchSet:
    """Draw exactly P qualifying patches, uniformly over qualifying origins.

    Sampling is without replacement while enough origins exist, then with
    replacement.  Patches are vectorized column-major and l2-normalized.
    """
    if isinstance(mask, MaskResult):
        mask = mask.mask
    origins = qualifying_origins(image, mask, config)
    if len(origins) == 0:
        raise ValueError("no qualifying patch region")
    p = config.patches_per_image
    count = len(origins)
    if count >= p:
        sel = rng.choice(count, size=p, replace=False)
    else:
        sel = np.concatenate(
            [rng.permutation(count), rng.choice(count, size=p - count, replace=True)]
        )
    chosen = origins[sel]
    cols = np.empty((config.patch_len, p))
    for i, (r, c) in enumerate(chosen):
        win = image.pixels[r : r + config.b1, c : c + config.b2]
        v = win.flatten(order="F")
        cols[:, i] = v / np.linalg.norm(v)
    return PatchSet(
        patches=cols,
        label=image.label,
        source_image=source_id,
        origins=chosen,
        image_shape=image.pixels.shape,
    )


def build_dictionary(
    patch_sets,
    per_class_subsample: int | None = None,
    rng: np.random.Generator | None = None,
) -> Dictionary:
    """Stack patch sets into a class-blocked Dictionary.

    Sets are grouped by label in first-seen order; columns are ordered
    class-by-class and the per-class index sets recorded.  An optional seeded
    uniform subsample bounds the column count per class.
    """
    groups: dict[str, list[np.ndarray]] = {}
    for ps in patch_sets:
        if ps.label is None:
            raise ValueError("patch sets must carry a class label")
        groups.setdefault(ps.label, []).append(ps.patches)
    if len(groups) < 2:
        raise ValueError("need patch sets from at least 2 classes")
    lens = {mats[0].shape[0] for mats in groups.values()}
    if len(lens) != 1:
        raise ValueError("inconsistent patch length across classes")
    blocks, index_sets, labels = [], [], []
    start = 0
    for label, mats in groups.items():
        block = np.hstack(mats)
        if block.shape[1] == 0:
            raise ValueError(f"class {label!r} has no patches")
        if per_class_subsample is not None and per_class_subsample < block.shape[1]:
            if rng is None:
                raise ValueError("subsampling requires an rng")
            keep = np.sort(rng.choice(block.shape[1], size=per_class_subsample, replace=False))
            block = block[:, keep]
        blocks.append(block)
        index_sets.append(np.arange(start, start + block.shape[1]))
        labels.append(label)
        start += block.shape[1]
    return Dictionary(np.hstack(blocks), index_sets, labels)


# ---------------------------------------------------------------------------
# PGM I/O


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a [0, 1] float image as binary 16-bit PGM (big-endian samples)."""
    pixels = np.asarray(pixels, dtype=float)
    if pixels.ndim != 2:
        raise ValueError("pixels must be 2-D")
    quant = np.round(np.clip(pixels, 0.0, 1.0) * PGM_MAXVAL).astype(">u2")
    h, w = quant.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(quant.tobytes())


def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    i = 0
    while True:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated PGM header")
        yield data[start:i].decode("ascii"), i


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM; returns (raw integer samples as (h, w), maxval)."""
    data = Path(path).read_bytes()
    toks = _pgm_tokens(data)
    magic, _ = next(toks)
    if magic != "P5":
        raise ValueError(f"not a binary PGM (magic {magic!r})")
    w, _ = next(toks)
    h, _ = next(toks)
    maxval, end = next(toks)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval <= 65535:
        raise ValueError(f"invalid maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    body = data[end + 1 :]
    arr = np.frombuffer(body, dtype=dtype, count=h * w).reshape(h, w)
    return arr.astype(np.int64), maxval


def load_image(path, label: str | None = None, regime: str | None = None) -> Image:
    """Load a PGM and normalize so the maximum pixel is 1 (unless all-zero)."""
    raw, _ = read_pgm(path)
    pix = raw.astype(float)
    top = pix.max()
    if top > 0:
        pix /= top
    return Image(pixels=pix, label=label, window_regime=regime)


def save_image(path, image: Image) -> None:
    write_pgm(path, image.pixels)


def dataset_image_path(root, label: str, regime: str, name: str) -> Path:
    return Path(root) / label / regime / name
