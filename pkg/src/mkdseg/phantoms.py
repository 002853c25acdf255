"""Procedural two-modality phantom generation and label-safe augmentation.

A phantom is a square grayscale image of 3-6 smooth blob structures (a large
body, one nested cavity, and adjacent lobes) on a background, with per-pixel
class labels. Geometry is a pure function of ``(geometry_seed, sample_seed)``,
so the same anatomy can be rendered in two appearance styles: the style only
controls per-class intensities, noise, and a multiplicative low-frequency
bias field. This gives unpaired datasets with shared anatomy and a real
appearance gap between modalities, at desk scale.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, InputError

MODALITIES = ("assistant", "target")
STYLES = ("A", "B")

# Dihedral ops usable without interpolation: exact pixel permutations.
DIHEDRAL_OPS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one modality's phantom population.

    ``intensity_map`` holds the per-class mean intensity in [-1, 1], indexed
    by class id (0 is background); each sample draws its actual class
    intensities uniformly within ``intensity_jitter`` of those means, the way
    tissue response varies between acquisitions. Two specs with equal
    ``geometry_seed`` produce identical label maps for equal sample seeds
    regardless of style.
    """

    image_size: int = 64
    num_classes: int = 4
    geometry_seed: int = 0
    modality_style: str = "A"
    intensity_map: Tuple[float, ...] = ()
    noise_sigma: float = 0.06
    bias_strength: float = 0.12
    intensity_jitter: float = 0.0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        if self.modality_style not in STYLES:
            raise ConfigError(f"modality_style must be one of {STYLES}")
        if len(self.intensity_map) != self.num_classes:
            raise ConfigError(
                f"intensity_map has {len(self.intensity_map)} entries, "
                f"expected {self.num_classes}"
            )
        if any(abs(v) > 1.0 for v in self.intensity_map):
            raise ConfigError("intensity_map values must lie in [-1, 1]")
        if not 0.0 <= self.bias_strength < 1.0:
            raise ConfigError("bias_strength must lie in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.intensity_jitter < 0.0:
            raise ConfigError("intensity_jitter must be >= 0")


@dataclass
class LabeledSample:
    """One image/label pair. Image is float32 in [-1, 1], label is uint8."""

    image: np.ndarray
    label: np.ndarray
    modality: str

    def validate(self, num_classes: int) -> None:
        if self.image.shape != self.label.shape:
            raise InputError(
                f"image shape {self.image.shape} != label shape {self.label.shape}"
            )
        if self.label.max(initial=0) >= num_classes:
            raise InputError(
                f"label value {int(self.label.max())} >= num_classes {num_classes}"
            )
        if self.modality not in MODALITIES:
            raise InputError(f"modality must be one of {MODALITIES}")


@dataclass
class Dataset:
    """Ordered single-modality collection of samples."""

    samples: List[LabeledSample]
    modality: str
    num_classes: int

    def __len__(self) -> int:
        return len(self.samples)

    def validate(self) -> None:
        if not self.samples:
            raise InputError("dataset is empty")
        shape = self.samples[0].image.shape
        for i, s in enumerate(self.samples):
            s.validate(self.num_classes)
            if s.modality != self.modality:
                raise InputError(f"sample {i} modality {s.modality} != {self.modality}")
            if s.image.shape != shape:
                raise InputError(f"sample {i} shape {s.image.shape} != {shape}")

    @property
    def image_size(self) -> int:
        return int(self.samples[0].image.shape[0])


def default_intensity_map(num_classes: int, style: str) -> Tuple[float, ...]:
    """Per-class intensities with a deliberately large cross-style gap.

    Style A: dark background, structures well separated and ascending in
    brightness. Style B: bright background, dark structures, with all classes
    above 1 squeezed into a narrow band, so they are barely separable by
    intensity and must be told apart by shape and position. Intensity alone
    never transfers across styles, and the target-like style is the harder
    one, as in low-contrast acquisition.
    """
    span = max(num_classes - 2, 1)
    if style == "A":
        fg = [-0.3 + 1.1 * (c - 1) / span for c in range(1, num_classes)]
        return tuple([-0.75] + fg)
    return tuple([0.55, 0.15] + [-0.6] * (num_classes - 2))


def default_spec(style: str, image_size: int = 64, num_classes: int = 4,
                 geometry_seed: int = 0) -> PhantomSpec:
    """Stock spec for one appearance style; styles share geometry parameters."""
    if style not in STYLES:
        raise ConfigError(f"style must be one of {STYLES}")
    noise = 0.10 if style == "A" else 0.12
    bias = 0.20 if style == "A" else 0.35
    return PhantomSpec(
        image_size=image_size,
        num_classes=num_classes,
        geometry_seed=geometry_seed,
        modality_style=style,
        intensity_map=default_intensity_map(num_classes, style),
        noise_sigma=noise,
        bias_strength=bias,
        intensity_jitter=0.12,
    )


def _warp_grid(rng: np.random.Generator, xx: np.ndarray, yy: np.ndarray):
    """Low-frequency smooth displacement applied to the sampling grid."""
    dx = np.zeros_like(xx)
    dy = np.zeros_like(yy)
    for _ in range(3):
        amp = rng.uniform(0.02, 0.08)
        wx, wy = rng.uniform(1.0, 4.5, size=2)
        px, py = rng.uniform(0.0, 2 * np.pi, size=2)
        dx += amp * np.sin(wx * yy + px)
        dy += amp * np.cos(wy * xx + py)
    return xx + dx, yy + dy


def _ellipse_mask(xx, yy, center, axes, angle) -> np.ndarray:
    ca, sa = np.cos(angle), np.sin(angle)
    u = (xx - center[0]) * ca + (yy - center[1]) * sa
    v = -(xx - center[0]) * sa + (yy - center[1]) * ca
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _geometry(spec: PhantomSpec, sample_seed: int) -> np.ndarray:
    """Label map for one sample; depends only on geometry_seed and sample_seed.

    Each structure independently draws one of several discrete regimes
    (shape archetypes) on top of continuous jitter. The regime combinations
    span a population far wider than a few dozen samples can cover, which is
    what makes extra anatomies from a second modality genuinely informative.
    """
    rng = np.random.default_rng([spec.geometry_seed, sample_seed, spec.image_size,
                                 spec.num_classes])
    n = spec.image_size
    coords = np.linspace(-1.0, 1.0, n)
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    xx, yy = _warp_grid(rng, xx, yy)

    center = rng.uniform(-0.12, 0.12, size=2)
    scale = rng.uniform(0.75, 1.0)
    label = np.zeros((n, n), dtype=np.uint8)

    # Body (class 1): central ellipse, round or strongly elongated.
    body_regime = rng.integers(0, 2)
    if body_regime == 0:
        body_axes = rng.uniform(0.38, 0.55, size=2) * scale
    else:
        body_axes = np.array([rng.uniform(0.5, 0.62), rng.uniform(0.3, 0.4)]) * scale
    body_angle = rng.uniform(0.0, np.pi)
    label[_ellipse_mask(xx, yy, center, body_axes, body_angle)] = 1

    # Adjacent lobes (classes 3..C-1): detached, touching, or embedded.
    n_adjacent = max(spec.num_classes - 3, 0)
    base_angle = rng.uniform(0.0, 2 * np.pi)
    for k in range(n_adjacent):
        theta = base_angle + 2 * np.pi * k / n_adjacent + rng.uniform(-0.35, 0.35)
        lobe_regime = rng.integers(0, 3)
        if lobe_regime == 0:      # detached round blob
            axes = rng.uniform(0.16, 0.24, size=2) * scale
            reach_frac = rng.uniform(0.8, 0.95)
        elif lobe_regime == 1:    # touching, elongated along the rim
            axes = np.array([rng.uniform(0.22, 0.3), rng.uniform(0.12, 0.18)]) * scale
            reach_frac = rng.uniform(0.6, 0.8)
        else:                     # embedded deep into the body
            axes = rng.uniform(0.15, 0.22, size=2) * scale
            reach_frac = rng.uniform(0.35, 0.55)
        dist = (max(body_axes) + max(axes)) * reach_frac
        c = center + dist * np.array([np.cos(theta), np.sin(theta)])
        # Keep the lobe inside the frame so no class vanishes off-canvas.
        reach = np.abs(c) + max(axes) + 0.12
        if reach.max() > 0.98:
            c = c * (0.98 - max(axes) - 0.12) / (np.abs(c).max() + 1e-9)
        label[_ellipse_mask(xx, yy, c, axes, rng.uniform(0.0, np.pi))] = 3 + k

    # Nested cavity (class 2): painted last so nothing overwrites it.
    # Regimes: compact and centered, elongated and drifting toward the rim,
    # or a double blob.
    if spec.num_classes >= 3:
        cav_regime = rng.integers(0, 3)
        cav_angle = rng.uniform(0.0, np.pi)
        if cav_regime == 0:
            cav_axes = rng.uniform(0.15, 0.24, size=2) * scale
            cav_center = center + rng.uniform(-0.08, 0.08, size=2)
            label[_ellipse_mask(xx, yy, cav_center, cav_axes, cav_angle)] = 2
        elif cav_regime == 1:
            cav_axes = np.array([rng.uniform(0.22, 0.3), rng.uniform(0.1, 0.15)]) * scale
            cav_center = center + rng.uniform(-0.16, 0.16, size=2)
            label[_ellipse_mask(xx, yy, cav_center, cav_axes, cav_angle)] = 2
        else:
            first = center + rng.uniform(-0.1, 0.1, size=2)
            gap = rng.uniform(0.14, 0.22)
            second = first + gap * np.array([np.cos(cav_angle), np.sin(cav_angle)])
            for c in (first, second):
                axes = rng.uniform(0.11, 0.16, size=2) * scale
                label[_ellipse_mask(xx, yy, c, axes, rng.uniform(0.0, np.pi))] = 2

    return label


def _bias_field(rng: np.random.Generator, xx, yy) -> np.ndarray:
    """Smooth field in [-1, 1] simulating acquisition inhomogeneity."""
    wx, wy = rng.uniform(0.8, 2.0, size=2)
    px, py = rng.uniform(0.0, 2 * np.pi, size=2)
    return np.sin(wx * xx + px) * np.cos(wy * yy + py)


def synthesize_sample(spec: PhantomSpec, sample_seed: int,
                      modality: str = "target") -> LabeledSample:
    """Render one phantom: geometry, then style-dependent appearance.

    Deterministic for a fixed ``(spec, sample_seed)``. The image is built as
    ``clip(lifted_intensity * (1 + bias_strength * field) + noise, ...)`` and
    clipped to [-1, 1].
    """
    spec.validate()
    if sample_seed < 0:
        raise ConfigError(f"sample_seed must be >= 0, got {sample_seed}")

    label = _geometry(spec, sample_seed)
    n = spec.image_size
    coords = np.linspace(-1.0, 1.0, n)
    xx, yy = np.meshgrid(coords, coords, indexing="xy")

    style_code = STYLES.index(spec.modality_style)
    rng = np.random.default_rng([spec.geometry_seed, sample_seed, style_code, 101])

    means = np.asarray(spec.intensity_map, dtype=np.float64)
    if spec.intensity_jitter > 0:
        means = means + rng.uniform(-spec.intensity_jitter, spec.intensity_jitter,
                                    size=means.shape)
    intensity = means[label]
    lifted = (intensity + 1.0) / 2.0
    lifted = lifted * (1.0 + spec.bias_strength * _bias_field(rng, xx, yy))
    image = 2.0 * lifted - 1.0 + spec.noise_sigma * rng.standard_normal((n, n))
    image = np.clip(image, -1.0, 1.0).astype(np.float32)
    return LabeledSample(image=image, label=label, modality=modality)


def make_dataset(spec: PhantomSpec, count: int, modality: str,
                 first_sample_seed: int = 0) -> Dataset:
    """Generate ``count`` samples with consecutive sample seeds."""
    if modality not in MODALITIES:
        raise ConfigError(f"modality must be one of {MODALITIES}")
    samples = [
        synthesize_sample(spec, first_sample_seed + i, modality)
        for i in range(count)
    ]
    return Dataset(samples=samples, modality=modality, num_classes=spec.num_classes)


def apply_dihedral(s: LabeledSample, op: int) -> LabeledSample:
    """Apply dihedral op 0..5 (see DIHEDRAL_OPS) identically to image and label."""
    if not 0 <= op < len(DIHEDRAL_OPS):
        raise InputError(f"dihedral op must be in [0, {len(DIHEDRAL_OPS)}), got {op}")

    def t(a: np.ndarray) -> np.ndarray:
        if op == 0:
            return a.copy()
        if op == 1:
            return np.ascontiguousarray(np.flip(a, axis=1))
        if op == 2:
            return np.ascontiguousarray(np.flip(a, axis=0))
        return np.ascontiguousarray(np.rot90(a, k=op - 2))

    return LabeledSample(image=t(s.image), label=t(s.label), modality=s.modality)


def augment_sample(s: LabeledSample, rng_seed: int) -> LabeledSample:
    """Seed-chosen flip/90-degree-rotation augmentation; exactly label-preserving."""
    op = int(np.random.default_rng(rng_seed).integers(0, len(DIHEDRAL_OPS)))
    return apply_dihedral(s, op)
