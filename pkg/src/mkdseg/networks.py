"""The six-network toolkit: translation generators, patch discriminators,
and residual encoder-decoder segmentors, at configurable desk scale.

All three builders share the same small-CNN vocabulary. Normalization is
instance-style without affine parameters, so every trainable parameter lives
in a conv layer and batch size 1 behaves like any other. Forward passes are
pure functions of (params, input); inference never mutates parameters.

Layer recipes (W = width, d = depth, C = num_classes):

* generator: Conv7x7(1->W) | d x [Conv3x3 s2 (W*2^(i-1) -> W*2^i)]
  | 2 residual blocks at W*2^d (two Conv3x3 each)
  | d x [upsample + Conv3x3 (W*2^i -> W*2^(i-1))] | Conv7x7(W->1) | tanh.
  Every conv has a bias; norms are parameter-free, so the parameter count is
  the sum of k*k*c_in*c_out + c_out over those convs.

* discriminator: d x [Conv4x4 s2 p1 (-> W*2^(i-1))] | Conv4x4 s1 p1 (-> 1).
  Output is a patch grid of raw scores with spatial side
  ``image_size // 2**d - 1``.

* segmentor: Conv3x3(1->W) | d x [Conv3x3 s2 down + residual block]
  | d x [upsample + Conv3x3, concat skip, Conv3x3 fuse + residual block]
  | Conv1x1(W->C), softmax over classes.
"""

import hashlib
import io
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .errors import CheckpointError, ConfigError, InputError

KINDS = ("generator", "discriminator", "segmentor")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    width: int = 16
    depth: int = 2
    num_classes: Optional[int] = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.width < 4:
            raise ConfigError(f"width must be >= 4, got {self.width}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.kind == "segmentor":
            if self.num_classes is None or self.num_classes < 2:
                raise ConfigError("segmentor requires num_classes >= 2")


def _norm(channels: int) -> nn.Module:
    return nn.InstanceNorm2d(channels, affine=False)


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _norm(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _norm(channels),
        )

    def forward(self, x):
        return torch.relu(x + self.body(x))


class _Generator(nn.Module):
    def __init__(self, width: int, depth: int):
        super().__init__()
        layers = [
            nn.Conv2d(1, width, 7, padding=3, padding_mode="reflect"),
            _norm(width),
            nn.ReLU(),
        ]
        ch = width
        for _ in range(depth):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1), _norm(ch * 2), nn.ReLU()]
            ch *= 2
        layers += [_ResidualBlock(ch), _ResidualBlock(ch)]
        for _ in range(depth):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, ch // 2, 3, padding=1),
                _norm(ch // 2),
                nn.ReLU(),
            ]
            ch //= 2
        layers += [nn.Conv2d(ch, 1, 7, padding=3, padding_mode="reflect"), nn.Tanh()]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class _Discriminator(nn.Module):
    def __init__(self, width: int, depth: int):
        super().__init__()
        layers = []
        in_ch = 1
        ch = width
        for i in range(depth):
            layers.append(nn.Conv2d(in_ch, ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(_norm(ch))
            layers.append(nn.LeakyReLU(0.2))
            in_ch = ch
            ch *= 2
        layers.append(nn.Conv2d(in_ch, 1, 4, stride=1, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class _Segmentor(nn.Module):
    def __init__(self, width: int, depth: int, num_classes: int):
        super().__init__()
        self.depth = depth
        self.stem = nn.Conv2d(1, width, 3, padding=1)
        downs, enc_blocks = [], []
        ch = width
        for _ in range(depth):
            downs.append(nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1))
            enc_blocks.append(_ResidualBlock(ch * 2))
            ch *= 2
        self.downs = nn.ModuleList(downs)
        self.enc_blocks = nn.ModuleList(enc_blocks)
        ups, fuses, dec_blocks = [], [], []
        for _ in range(depth):
            ups.append(nn.Conv2d(ch, ch // 2, 3, padding=1))
            fuses.append(nn.Conv2d(ch, ch // 2, 3, padding=1))
            dec_blocks.append(_ResidualBlock(ch // 2))
            ch //= 2
        self.ups = nn.ModuleList(ups)
        self.fuses = nn.ModuleList(fuses)
        self.dec_blocks = nn.ModuleList(dec_blocks)
        self.head = nn.Conv2d(width, num_classes, 1)

    def forward(self, x):
        h = self.stem(x)
        skips = [h]
        for down, block in zip(self.downs, self.enc_blocks):
            h = block(torch.relu(down(h)))
            skips.append(h)
        for i, (up, fuse, block) in enumerate(zip(self.ups, self.fuses, self.dec_blocks)):
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = torch.relu(up(h))
            skip = skips[self.depth - 1 - i]
            h = block(torch.relu(fuse(torch.cat([h, skip], dim=1))))
        return self.head(h)


@dataclass
class NetworkHandle:
    """A spec plus its parameterized torch module."""

    spec: NetworkSpec
    module: nn.Module

    def fingerprint(self) -> str:
        """SHA-256 over parameter names, shapes, dtypes, and raw bytes."""
        h = hashlib.sha256()
        for name, p in self.module.state_dict().items():
            h.update(name.encode())
            h.update(str(tuple(p.shape)).encode())
            h.update(str(p.dtype).encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.module.parameters()).dtype

    def param_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())


def build_network(spec: NetworkSpec, init_seed: int,
                  dtype: torch.dtype = torch.float64) -> NetworkHandle:
    """Construct and deterministically initialize a network.

    Weights are zero-mean Gaussian with 1/sqrt(fan_in) scaling, biases zero,
    drawn from a generator seeded with ``init_seed``, so equal (spec, seed)
    always yields equal fingerprints.
    """
    spec.validate()
    if spec.kind == "generator":
        module: nn.Module = _Generator(spec.width, spec.depth)
    elif spec.kind == "discriminator":
        module = _Discriminator(spec.width, spec.depth)
    else:
        module = _Segmentor(spec.width, spec.depth, spec.num_classes)
    module = module.to(dtype)
    gen = torch.Generator().manual_seed(int(init_seed) % 2**63)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = fan_in ** -0.5
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=gen, dtype=torch.float64) * std
                )
                m.bias.zero_()
    for p in module.parameters():
        if not torch.isfinite(p).all():
            raise ConfigError("non-finite parameter after initialization")
    return NetworkHandle(spec=spec, module=module)


def _as_batch(handle: NetworkHandle, x: torch.Tensor):
    """Normalize input to (N, 1, H, W); returns the tensor and original ndim."""
    if not torch.is_tensor(x):
        raise InputError(f"expected a torch tensor, got {type(x).__name__}")
    ndim = x.dim()
    if ndim == 2:
        x = x[None, None]
    elif ndim == 3:
        x = x[:, None]
    elif ndim != 4:
        raise InputError(f"expected 2-4 dims, got shape {tuple(x.shape)}")
    if x.shape[1] != 1:
        raise InputError(f"expected a single channel, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    step = 2 ** handle.spec.depth
    if h % step or w % step or h < step * 2 or w < step * 2:
        raise InputError(
            f"spatial size {h}x{w} incompatible with depth {handle.spec.depth}"
        )
    return x.to(handle.dtype), ndim


def _restore(y: torch.Tensor, ndim: int) -> torch.Tensor:
    if ndim == 2:
        return y[0, 0] if y.shape[1] == 1 else y[0]
    if ndim == 3:
        return y[:, 0] if y.shape[1] == 1 else y
    return y


def translate(g: NetworkHandle, x: torch.Tensor) -> torch.Tensor:
    """Map an image through a generator; output is tanh-bounded in [-1, 1]."""
    if g.spec.kind != "generator":
        raise InputError(f"translate needs a generator, got {g.spec.kind}")
    x4, ndim = _as_batch(g, x)
    return _restore(g.module(x4), ndim)


def discriminate(d: NetworkHandle, x: torch.Tensor,
                 variant: str = "vanilla") -> torch.Tensor:
    """Patch realness grid: in (0, 1) for the vanilla head, raw for least_squares."""
    if d.spec.kind != "discriminator":
        raise InputError(f"discriminate needs a discriminator, got {d.spec.kind}")
    if variant not in ("vanilla", "least_squares"):
        raise InputError(f"unknown gan variant {variant!r}")
    x4, ndim = _as_batch(d, x)
    out = d.module(x4)
    if variant == "vanilla":
        # Clamp away float saturation so outputs stay strictly inside (0, 1).
        eps = 1e-7
        out = torch.sigmoid(out).clamp(eps, 1.0 - eps)
    return _restore(out, ndim)


def segment(s: NetworkHandle, x: torch.Tensor) -> torch.Tensor:
    """Per-pixel class distribution (..., C, H, W); softmax over the class axis."""
    if s.spec.kind != "segmentor":
        raise InputError(f"segment needs a segmentor, got {s.spec.kind}")
    x4, ndim = _as_batch(s, x)
    probs = torch.softmax(s.module(x4), dim=1)
    return _restore(probs, ndim)


def patch_grid_size(image_size: int, depth: int) -> int:
    """Spatial side of the discriminator's patch output for a square input."""
    return image_size // 2 ** depth - 1


def save_network(handle: NetworkHandle, path) -> None:
    """Parameter dump with spec header and fingerprint."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": {
            "kind": handle.spec.kind,
            "width": handle.spec.width,
            "depth": handle.spec.depth,
            "num_classes": handle.spec.num_classes,
        },
        "dtype": str(handle.dtype),
        "state_dict": handle.module.state_dict(),
        "fingerprint": handle.fingerprint(),
    }
    torch.save(payload, path)


def _dtype_from_str(name: str) -> torch.dtype:
    dt = getattr(torch, name.removeprefix("torch."), None)
    if not isinstance(dt, torch.dtype):
        raise CheckpointError(f"unknown dtype {name!r} in checkpoint")
    return dt


def load_network(path) -> NetworkHandle:
    """Rebuild a network from :func:`save_network` output; verifies fingerprint."""
    try:
        payload = torch.load(path, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read network checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    spec = NetworkSpec(**payload["spec"])
    handle = build_network(spec, init_seed=0, dtype=_dtype_from_str(payload["dtype"]))
    handle.module.load_state_dict(payload["state_dict"])
    if handle.fingerprint() != payload["fingerprint"]:
        raise CheckpointError(f"fingerprint mismatch loading {path}")
    return handle
