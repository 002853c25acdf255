"""Dataset directory I/O.

Layout: ``<root>/<modality>/<index>.pxm`` plus a plain-text ``manifest.txt``
(key=value: num_classes, image_size, count, modality) in the modality
directory. Each .pxm file is a fixed 32-byte header (magic, version, H, W,
num_classes, zero padding) followed by the little-endian float32 image
row-major and the uint8 label row-major. The round trip is bit-exact.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError
from .phantoms import Dataset, LabeledSample, MODALITIES

MAGIC = b"PXM1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII12x")  # magic, version, H, W, num_classes
MANIFEST_NAME = "manifest.txt"


def _sample_bytes(s: LabeledSample, num_classes: int) -> bytes:
    h, w = s.image.shape
    header = _HEADER.pack(MAGIC, VERSION, h, w, num_classes)
    image = np.ascontiguousarray(s.image, dtype="<f4").tobytes()
    label = np.ascontiguousarray(s.label, dtype=np.uint8).tobytes()
    return header + image + label


def write_dataset(d: Dataset, root: Union[str, Path]) -> Path:
    """Write ``d`` under ``<root>/<modality>/``; returns the modality directory."""
    d.validate()
    out = Path(root) / d.modality
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(d.samples):
        (out / f"{i:04d}.pxm").write_bytes(_sample_bytes(s, d.num_classes))
    manifest = (
        f"num_classes={d.num_classes}\n"
        f"image_size={d.image_size}\n"
        f"count={len(d.samples)}\n"
        f"modality={d.modality}\n"
    )
    (out / MANIFEST_NAME).write_text(manifest)
    return out


def _read_manifest(path: Path) -> dict:
    mf = path / MANIFEST_NAME
    if not mf.is_file():
        raise FormatError(f"missing manifest: {mf}")
    values = {}
    for line in mf.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"malformed manifest line in {mf}: {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    for key in ("num_classes", "image_size", "count", "modality"):
        if key not in values:
            raise FormatError(f"manifest {mf} missing key {key}")
    if values["modality"] not in MODALITIES:
        raise FormatError(f"manifest {mf} has unknown modality {values['modality']!r}")
    return values


def read_sample(path: Path, num_classes: int, image_size: int,
                modality: str) -> LabeledSample:
    """Parse one .pxm file; raises FormatError naming the file on any defect."""
    raw = path.read_bytes() if path.is_file() else None
    if raw is None:
        raise FormatError(f"missing sample file: {path}")
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header in {path}")
    magic, version, h, w, file_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic in {path}: {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} in {path}")
    if (h, w) != (image_size, image_size):
        raise FormatError(f"shape {h}x{w} in {path} != manifest size {image_size}")
    if file_classes != num_classes:
        raise FormatError(
            f"num_classes {file_classes} in {path} != manifest value {num_classes}"
        )
    expected = _HEADER.size + h * w * 4 + h * w
    if len(raw) != expected:
        raise FormatError(f"{path} has {len(raw)} bytes, expected {expected}")
    image = np.frombuffer(raw, dtype="<f4", count=h * w, offset=_HEADER.size)
    label = np.frombuffer(raw, dtype=np.uint8, count=h * w,
                          offset=_HEADER.size + h * w * 4)
    if label.max(initial=0) >= num_classes:
        raise FormatError(
            f"label value {int(label.max())} >= num_classes {num_classes} in {path}"
        )
    return LabeledSample(
        image=image.reshape(h, w).copy(),
        label=label.reshape(h, w).copy(),
        modality=modality,
    )


def read_dataset(path: Union[str, Path]) -> Dataset:
    """Read a modality directory written by :func:`write_dataset`."""
    path = Path(path)
    values = _read_manifest(path)
    num_classes = int(values["num_classes"])
    image_size = int(values["image_size"])
    count = int(values["count"])
    modality = values["modality"]
    samples = [
        read_sample(path / f"{i:04d}.pxm", num_classes, image_size, modality)
        for i in range(count)
    ]
    ds = Dataset(samples=samples, modality=modality, num_classes=num_classes)
    ds.validate()
    return ds
