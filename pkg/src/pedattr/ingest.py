"""Dataset manifests, samples and train/verify/test splits.

Manifest layout (UTF-8, tab separated)::

    #id  image  mask  split  <attr_1>  ...  <attr_m>
    p001 images/p001.png  masks/p001.png  train  1  0  ?

The header names the attributes. ``mask`` and ``split`` may be ``-``.
Label tokens are ``1`` (positive), ``0`` (negative) or ``?`` (unknown).
Paths are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import dataclasses
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SPLITS = ("train", "verify", "test")
POSITIVE, NEGATIVE, UNKNOWN = 1, 0, -1
_TOKEN_TO_LABEL = {"1": POSITIVE, "0": NEGATIVE, "?": UNKNOWN}
_LABEL_TO_TOKEN = {v: k for k, v in _TOKEN_TO_LABEL.items()}
_FIXED_COLUMNS = ("id", "image", "mask", "split")
MASK_THRESHOLD = 128


class ManifestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    image: np.ndarray
    labels: Mapping[str, int]
    mask: np.ndarray | None = None
    split: str | None = None

    def __post_init__(self):
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValueError(f"sample {self.id!r}: image must be an HxWx3 uint8 array")
        if self.mask is not None:
            if self.mask.shape != img.shape[:2]:
                raise ValueError(
                    f"sample {self.id!r}: mask {self.mask.shape} does not match "
                    f"image {img.shape[:2]}"
                )
            if self.mask.dtype != bool:
                object.__setattr__(self, "mask", self.mask.astype(bool))
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"sample {self.id!r}: unknown split {self.split!r}")
        for name, value in self.labels.items():
            if value not in (POSITIVE, NEGATIVE, UNKNOWN):
                raise ValueError(f"sample {self.id!r}: bad label {value!r} for {name!r}")


@dataclass(frozen=True)
class AttributeRegistry:
    """Ordered attribute names plus (positives, negatives) per split."""

    names: tuple[str, ...]
    counts: Mapping[str, Mapping[str, tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("attribute names must be unique")

    @classmethod
    def from_samples(cls, names: Sequence[str], samples: Sequence[Sample]) -> "AttributeRegistry":
        names = tuple(names)
        known = set(names)
        counts = {n: {s: [0, 0] for s in SPLITS + ("unassigned",)} for n in names}
        for smp in samples:
            extra = set(smp.labels) - known
            if extra:
                raise ValueError(f"sample {smp.id!r} has unregistered attributes {sorted(extra)}")
            split = smp.split or "unassigned"
            for n in names:
                lab = smp.labels.get(n, UNKNOWN)
                if lab == POSITIVE:
                    counts[n][split][0] += 1
                elif lab == NEGATIVE:
                    counts[n][split][1] += 1
        frozen = {n: {s: tuple(c) for s, c in per.items()} for n, per in counts.items()}
        return cls(names, frozen)

    def labeled(self, name: str) -> int:
        return sum(p + q for p, q in self.counts[name].values())


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= MASK_THRESHOLD


def load_manifest(path) -> tuple[AttributeRegistry, list[Sample]]:
    path = Path(path)
    root = path.parent
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = None
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if header is None:
                header = line[1:].split("\t")
            continue
        rows.append((lineno, line.split("\t")))
    if header is None:
        raise ManifestError(f"{path}: missing '#id\\timage\\tmask\\tsplit\\t...' header")
    if tuple(header[:4]) != _FIXED_COLUMNS:
        raise ManifestError(f"{path}: header must start with {'/'.join(_FIXED_COLUMNS)}")
    names = tuple(header[4:])
    if not rows:
        raise ManifestError(f"{path}: no samples")

    samples = []
    seen = set()
    for lineno, cols in rows:
        if len(cols) != len(header):
            raise ManifestError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(cols)}"
            )
        sid, img_rel, mask_rel, split = cols[:4]
        if not sid or sid in seen:
            raise ManifestError(f"{path}:{lineno}: empty or duplicate id {sid!r}")
        seen.add(sid)
        try:
            labels = {n: _TOKEN_TO_LABEL[t] for n, t in zip(names, cols[4:])}
        except KeyError as exc:
            raise ManifestError(f"{path}:{lineno}: bad label token {exc.args[0]!r}") from None
        if split == "-":
            split = None
        elif split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        img_path = root / img_rel
        if not img_path.is_file():
            raise ManifestError(f"{path}:{lineno}: image not found: {img_path}")
        image = _read_image(img_path)
        mask = None
        if mask_rel != "-":
            mask_path = root / mask_rel
            if mask_path.is_file():
                mask = read_mask(mask_path)
                if mask.shape != image.shape[:2]:
                    raise ManifestError(
                        f"sample {sid!r}: mask {mask.shape[0]}x{mask.shape[1]} does not "
                        f"match image {image.shape[0]}x{image.shape[1]}"
                    )
        samples.append(Sample(sid, image, labels, mask, split))
    return AttributeRegistry.from_samples(names, samples), samples


def write_manifest(path, registry: AttributeRegistry, samples: Sequence[Sample]) -> None:
    """Write samples as PNGs under the manifest's directory plus the manifest itself."""
    path = Path(path)
    root = path.parent
    (root / "images").mkdir(parents=True, exist_ok=True)
    if any(s.mask is not None for s in samples):
        (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["#" + "\t".join(_FIXED_COLUMNS + registry.names)]
    for s in samples:
        img_rel = f"images/{s.id}.png"
        Image.fromarray(s.image).save(root / img_rel)
        mask_rel = "-"
        if s.mask is not None:
            mask_rel = f"masks/{s.id}.png"
            Image.fromarray(s.mask.astype(np.uint8) * 255).save(root / mask_rel)
        tokens = [_LABEL_TO_TOKEN[s.labels.get(n, UNKNOWN)] for n in registry.names]
        lines.append("\t".join([s.id, img_rel, mask_rel, s.split or "-"] + tokens))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder rounding of ``n * ratios``."""
    raw = [n * r for r in ratios]
    sizes = [int(np.floor(x + 1e-9)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split_partition(samples: Sequence[Sample], ratios=(0.5, 0.1, 0.4), seed: int = 0) -> list[Sample]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError("ratios must be (train, verify, test)")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    n = len(samples)
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=object)
    start = 0
    for name, size in zip(SPLITS, sizes):
        assign[perm[start:start + size]] = name
        start += size
    return [dataclasses.replace(s, split=assign[i]) for i, s in enumerate(samples)]


def by_split(samples: Sequence[Sample]) -> dict[str, list[Sample]]:
    out = {s: [] for s in SPLITS}
    for smp in samples:
        if smp.split is None:
            raise ValueError(f"sample {smp.id!r} has no split assigned")
        out[smp.split].append(smp)
    return out
