"""Synthetic sonar-style labeled scenes: shapes, poses, speckle, Rayleigh noise.

Each scene is a textured low-amplitude background, a bright target highlight
(block, cone, sphere, cylinder, or torus at a pose angle and pixel offset),
and a dark shadow cast away from a fixed insonification direction (sound
arrives from the left).  The three window regimes control how much clutter
surrounds the target: narrow frames are mostly target, expansive frames are
mostly seafloor.

This is a controlled testbed with class-discriminative highlights, not a
physical sonar simulation.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .patch_sampler import Image, dataset_image_path, write_pgm

SHAPES = ("block", "cone", "sphere", "cylinder", "torus")

REGIME_SIZES = {"narrow": 64, "middling": 96, "expansive": 128}

# the regime widens the window around a fixed-size target: the narrow frame
# is mostly target (36/64 = 56% linear extent), middling ~38%, expansive ~28%
TARGET_EXTENT_PX = 36.0

# only blocks and cylinders are pose-varied; cones, spheres, and toruses
# present the same highlight from every capture heading
ANGLE_RANGES = {
    "block": (15.0, 75.0),
    "cylinder": (0.0, 120.0),
    "cone": (0.0, 0.0),
    "sphere": (0.0, 0.0),
    "torus": (0.0, 0.0),
}


def _target_extent(regime: str, size: int) -> float:
    return TARGET_EXTENT_PX * size / REGIME_SIZES[regime]


def _circumradius(shape: str, extent: float) -> float:
    """Radius of the smallest centered disk containing the highlight (pixels)."""
    s = extent
    if shape == "block":
        return 0.5 * math.hypot(s, 0.62 * s)
    if shape == "cone":
        return math.hypot(0.5 * s, 0.4 * s)
    if shape in ("sphere", "cylinder", "torus"):
        return 0.5 * s
    raise ValueError(f"unknown shape {shape!r}")


def max_offset(shape: str, regime: str, size: int | None = None) -> float:
    """Largest |offset| component keeping the highlight fully in frame."""
    size = size or REGIME_SIZES[regime]
    extent = _target_extent(regime, size)
    return max(0.0, (size - 1) / 2.0 - _circumradius(shape, extent) - 1.0)


@dataclass
class SceneSpec:
    shape: str
    pose_angle_deg: float = 0.0
    offset: tuple[float, float] = (0.0, 0.0)  # (dx, dy) pixels
    window_regime: str = "narrow"
    background_seed: int = 0
    size: int | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.window_regime not in REGIME_SIZES:
            raise ValueError(f"unknown window regime {self.window_regime!r}")
        lo, hi = ANGLE_RANGES[self.shape]
        if not lo <= self.pose_angle_deg <= hi:
            raise ValueError(
                f"pose angle {self.pose_angle_deg} outside [{lo}, {hi}] for {self.shape}"
            )
        if self.size is None:
            self.size = REGIME_SIZES[self.window_regime]
        allowed = max_offset(self.shape, self.window_regime, self.size)
        dx, dy = self.offset
        if abs(dx) > allowed or abs(dy) > allowed:
            raise ValueError(
                f"offset {self.offset} pushes the highlight out of frame "
                f"(|component| must be <= {allowed:.2f})"
            )


@dataclass
class NoiseSpec:
    sigma: float
    seed: int = 0
    mode: str = "multiplicative"  # or "complex_additive"

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValueError("sigma must be finite and >= 0")
        if self.mode not in ("multiplicative", "complex_additive"):
            raise ValueError(f"unknown noise mode {self.mode!r}")


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    # structured sand ripples (instance-specific wave vectors) over speckle;
    # the low-frequency structure is what decorrelates whole frames
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    ripple = np.zeros((size, size))
    for _ in range(3):
        freq = rng.uniform(0.8, 5.0)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        ripple += np.sin(
            2.0 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) / size
            + phase
        )
    ripple01 = (ripple + 3.0) / 6.0
    speckle = rng.exponential(1.0, size=(size, size))
    return 0.06 + 0.16 * ripple01 + 0.06 * speckle


def _highlight(spec: SceneSpec) -> np.ndarray:
    """Anti-aliased highlight intensity in [0, 1] for the spec's shape/pose."""
    size = spec.size
    extent = _target_extent(spec.window_regime, size)
    cy = (size - 1) / 2.0 + spec.offset[1]
    cx = (size - 1) / 2.0 + spec.offset[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    x0 = xx - cx
    y0 = yy - cy
    ang = math.radians(spec.pose_angle_deg)
    u = x0 * math.cos(ang) + y0 * math.sin(ang)
    v = -x0 * math.sin(ang) + y0 * math.cos(ang)
    s = extent

    if spec.shape == "block":
        a, b = s, 0.62 * s
        d = np.maximum(np.abs(u) - a / 2.0, np.abs(v) - b / 2.0)
        shade = 0.85 + 0.15 * np.cos(math.pi * np.clip(v / b, -0.5, 0.5))
    elif spec.shape == "sphere":
        r = 0.5 * s
        rho = np.hypot(x0, y0)
        d = rho - r
        shade = 0.55 + 0.45 * np.sqrt(np.clip(1.0 - (rho / r) ** 2, 0.0, 1.0))
    elif spec.shape == "cylinder":
        w = 0.26 * s
        hl = (s - w) / 2.0
        t = np.clip(u, -hl, hl)
        d = np.hypot(u - t, v) - w / 2.0
        shade = 0.80 + 0.20 * np.cos(math.pi * np.clip(v / w, -0.5, 0.5))
    elif spec.shape == "cone":
        # isoceles triangle: apex at u = +s/2, base at u = -s/2 with half-width
        # 0.34 s; strong axial ramp toward a bright apex sets it apart locally
        half_w = 0.34 * s
        e1 = -(u + s / 2.0)  # behind the base
        t_frac = np.clip((u + s / 2.0) / s, 0.0, 1.0)
        e2 = np.abs(v) - half_w * (1.0 - t_frac)  # outside the tapering sides
        d = np.maximum(e1, e2)
        shade = 0.40 + 0.60 * t_frac**1.5
    elif spec.shape == "torus":
        w = 0.24 * s
        rmid = 0.38 * s
        rho = np.hypot(x0, y0)
        d = np.abs(rho - rmid) - w / 2.0
        shade = 0.75 + 0.25 * np.cos(math.pi * np.clip((rho - rmid) / w, -0.5, 0.5))
    else:  # pragma: no cover - guarded by SceneSpec
        raise ValueError(spec.shape)

    alpha = np.clip(0.5 - d, 0.0, 1.0)
    return alpha * shade


def _shadow_mask(solid: np.ndarray, extent: float) -> np.ndarray:
    """Region shadowed by the target: shifted copies of its footprint, downrange (+x)."""
    size = solid.shape[1]
    shadow = np.zeros_like(solid, dtype=bool)
    for frac in (0.35, 0.7, 1.05, 1.4):
        k = int(round(frac * extent))
        if k <= 0 or k >= size:
            continue
        shifted = np.zeros_like(solid, dtype=bool)
        shifted[:, k:] = solid[:, :-k]
        shadow |= shifted
    return shadow & ~solid


def render_scene(spec: SceneSpec) -> Image:
    """Deterministic scene for a spec: background + highlight + shadow, max pixel 1."""
    rng = np.random.default_rng(spec.background_seed)
    bg = _background(spec.size, rng)
    hi = _highlight(spec)
    solid = hi > 0.25
    extent = _target_extent(spec.window_regime, spec.size)
    shadow = _shadow_mask(solid, extent)
    scene = bg.copy()
    scene[shadow] *= 0.3
    scene = np.maximum(scene, hi)
    scene /= scene.max()
    return Image(scene, label=spec.shape, window_regime=spec.window_regime)


def rayleigh_draws(sigma: float, size, rng: np.random.Generator) -> np.ndarray:
    """Rayleigh(sigma) samples via inverse-CDF: sigma * sqrt(-2 ln u), u in (0, 1]."""
    u = 1.0 - rng.random(size=size)
    return sigma * np.sqrt(-2.0 * np.log(u))


def apply_rayleigh_noise(image: Image, noise: NoiseSpec) -> Image:
    """Corrupt a normalized image and renormalize its maximum back to 1.

    Multiplicative mode scales every pixel by an independent Rayleigh(sigma)
    draw; complex_additive mode takes the magnitude of the pixel plus a
    circular complex Gaussian with per-component deviation sigma.
    """
    if noise.sigma == 0.0:
        return Image(image.pixels.copy(), image.label, image.window_regime)
    rng = np.random.default_rng(noise.seed)
    if noise.mode == "multiplicative":
        out = image.pixels * rayleigh_draws(noise.sigma, image.pixels.shape, rng)
    else:
        g1 = noise.sigma * rng.standard_normal(image.pixels.shape)
        g2 = noise.sigma * rng.standard_normal(image.pixels.shape)
        out = np.hypot(image.pixels + g1, g2)
    top = out.max()
    if top > 0:
        out = out / top
    return Image(out, image.label, image.window_regime)


@dataclass
class DatasetManifest:
    """Counts, pose ranges, regimes, and noise levels for one generated dataset."""

    classes: tuple[str, ...] = ("block", "cone", "sphere", "cylinder")
    per_class: int = 60
    anomaly_class: str | None = "torus"
    anomaly_count: int = 22
    regimes: tuple[str, ...] = ("narrow",)
    sigmas: tuple[float, ...] = (0.0,)
    seed: int = 0
    angle_ranges: dict = field(default_factory=dict)  # per-shape overrides

    def __post_init__(self):
        for cls in self.classes:
            if cls not in SHAPES:
                raise ValueError(f"unknown class shape {cls!r}")
        for regime in self.regimes:
            if regime not in REGIME_SIZES:
                raise ValueError(f"unknown regime {regime!r}")
        if self.per_class < 0 or self.anomaly_count < 0:
            raise ValueError("counts must be >= 0")

    def class_counts(self) -> list[tuple[str, int]]:
        out = [(cls, self.per_class) for cls in self.classes]
        if self.anomaly_class:
            out.append((self.anomaly_class, self.anomaly_count))
        return out


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def generate_dataset(manifest: DatasetManifest, output_root) -> Path:
    """Render every image in the manifest under ``root/<class>/<regime>/`` and
    write ``manifest.csv`` (path,class,regime,angle,sigma,seed).

    The whole dataset is a pure function of the manifest, so regeneration
    with the same seed reproduces identical files byte for byte.
    """
    root = Path(output_root)
    rows = []
    for ci, (cls, count) in enumerate(manifest.class_counts()):
        if count == 0:
            warnings.warn(f"class {cls!r} requested with zero images")
        for regime in manifest.regimes:
            (root / cls / regime).mkdir(parents=True, exist_ok=True)
        lo, hi = manifest.angle_ranges.get(cls, ANGLE_RANGES[cls])
        for i in range(count):
            rng = np.random.default_rng([manifest.seed, ci, i])
            angle = float(rng.uniform(lo, hi))
            off_frac = rng.uniform(-1.0, 1.0, size=2)
            bg_seed = int(rng.integers(2**31))
            for ri, regime in enumerate(manifest.regimes):
                allowed = max_offset(cls, regime)
                spec = SceneSpec(
                    shape=cls,
                    pose_angle_deg=angle,
                    offset=(off_frac[0] * allowed, off_frac[1] * allowed),
                    window_regime=regime,
                    background_seed=bg_seed,
                )
                clean = render_scene(spec)
                for si, sigma in enumerate(manifest.sigmas):
                    if sigma == 0.0:
                        img = clean
                    else:
                        img = apply_rayleigh_noise(
                            clean,
                            NoiseSpec(sigma, seed=_derived_seed(manifest.seed, ci, i, ri, si)),
                        )
                    name = f"{cls}_{i:03d}_sig{sigma:g}.pgm"
                    path = dataset_image_path(root, cls, regime, name)
                    write_pgm(path, img.pixels)
                    rows.append(
                        {
                            "path": path.relative_to(root).as_posix(),
                            "class": cls,
                            "regime": regime,
                            "angle": repr(angle),
                            "sigma": repr(float(sigma)),
                            "seed": str(bg_seed),
                        }
                    )
    manifest_path = root / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["path", "class", "regime", "angle", "sigma", "seed"])
        writer.writeheader()
        writer.writerows(rows)
    return manifest_path
