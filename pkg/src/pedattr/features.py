"""Color/texture channel stacks and strip histogram descriptors.

Each crop is resized to a working resolution and turned into 29 channels
(8 color + 8 Gabor + 13 Schmid), all in [0, 1].  The descriptor for one
region is a per-(channel, strip) 16-bin histogram, L1 normalised, laid out
channel-major: ``values[(c * strips + s) * bins + b]``.
"""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.fft
from PIL import Image

N_COLOR = 8
COLOR_NAMES = ("R", "G", "B", "Y", "Cb", "Cr", "H", "S")
SCHEMES = ("whole", "fore", "fore+back", "fore+whole")
_SCHEME_ALIASES = {"fore-back": "fore+back", "fore-whole": "fore+whole"}
DEFAULT_SIZE = (128, 48)  # (height, width)
DEFAULT_STRIPS = 6
DEFAULT_BINS = 16


def canonical_scheme(name: str) -> str:
    name = _SCHEME_ALIASES.get(name, name)
    if name not in SCHEMES:
        raise ValueError(f"unknown feature scheme {name!r}; expected one of {SCHEMES}")
    return name


@dataclass(frozen=True)
class GaborParams:
    orientation: float  # radians
    wavelength: float
    aspect: float
    bandwidth: float  # std of the Gaussian envelope, pixels


@dataclass(frozen=True)
class FilterBankConfig:
    gabor: tuple[GaborParams, ...]
    schmid: tuple[tuple[float, float], ...]  # (sigma, tau)

    def __post_init__(self):
        if len(self.gabor) != 8 or len(self.schmid) != 13:
            raise ValueError(
                f"filter bank needs 8 Gabor + 13 Schmid filters, "
                f"got {len(self.gabor)} + {len(self.schmid)}"
            )

    @property
    def n_channels(self) -> int:
        return N_COLOR + len(self.gabor) + len(self.schmid)

    @classmethod
    def from_dict(cls, d: dict) -> "FilterBankConfig":
        gabor = tuple(GaborParams(**{k: float(v) for k, v in g.items()}) for g in d["gabor"])
        schmid = tuple((float(s), float(t)) for s, t in d["schmid"])
        return cls(gabor, schmid)

    @classmethod
    def from_json(cls, path) -> "FilterBankConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "FilterBankConfig":
        text = resources.files("pedattr").joinpath("data/filter_bank.json").read_text("utf-8")
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "gabor": [vars(g) for g in self.gabor],
            "schmid": [list(p) for p in self.schmid],
        }


def gabor_kernel(p: GaborParams) -> np.ndarray:
    """Even (cosine) Gabor kernel with its DC component removed."""
    sigma = p.bandwidth
    radius = int(np.ceil(3 * sigma / min(p.aspect, 1.0)))
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(float)
    c, s = np.cos(p.orientation), np.sin(p.orientation)
    xr = x * c + y * s
    yr = -x * s + y * c
    env = np.exp(-(xr ** 2 + (p.aspect * yr) ** 2) / (2 * sigma ** 2))
    k = env * np.cos(2 * np.pi * xr / p.wavelength)
    k -= env * (k.sum() / env.sum())
    return k / np.abs(k).sum()


def schmid_kernel(sigma: float, tau: float) -> np.ndarray:
    """Rotation-invariant Schmid filter ``F0 + cos(pi*tau*r/sigma) exp(-r^2 / 2 sigma^2)``."""
    radius = int(np.ceil(3 * sigma))
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(float)
    r = np.hypot(x, y)
    k = np.cos(np.pi * tau * r / sigma) * np.exp(-(r ** 2) / (2 * sigma ** 2))
    k -= k.mean()
    return k / np.abs(k).sum()


class _TextureOperator:
    """Filter bank applied by FFT on a symmetric-padded luminance image."""

    def __init__(self, bank: FilterBankConfig, shape: tuple[int, int]):
        kernels = [gabor_kernel(g) for g in bank.gabor] + [schmid_kernel(*p) for p in bank.schmid]
        self.radius = max(k.shape[0] // 2 for k in kernels)
        h, w = shape
        R = self.radius
        self.shape = shape
        self.fft_shape = (scipy.fft.next_fast_len(h + 2 * R, real=True),
                          scipy.fft.next_fast_len(w + 2 * R, real=True))
        spectra = []
        lows, highs = [], []
        for k in kernels:
            # centre the kernel on the origin of the circular FFT grid
            kr = k.shape[0] // 2
            grid = np.zeros(self.fft_shape)
            grid[:k.shape[0], :k.shape[1]] = k
            grid = np.roll(grid, (-kr, -kr), axis=(0, 1))
            spectra.append(scipy.fft.rfft2(grid))
            lows.append(k[k < 0].sum())
            highs.append(k[k > 0].sum())
        self.spectra = np.stack(spectra)
        self.low = np.asarray(lows)[:, None, None]
        self.span = (np.asarray(highs) - np.asarray(lows))[:, None, None]

    def __call__(self, lum: np.ndarray) -> np.ndarray:
        R = self.radius
        h, w = self.shape
        padded = np.pad(lum, R, mode="symmetric")
        resp = scipy.fft.irfft2(scipy.fft.rfft2(padded, s=self.fft_shape)[None] * self.spectra, s=self.fft_shape)
        resp = resp[:, R:R + h, R:R + w]
        out = (resp - self.low) / self.span
        # collapse FFT round-off so constant inputs give bitwise constant channels
        return np.clip(np.round(out, 10), 0.0, 1.0)


@lru_cache(maxsize=8)
def _texture_operator(bank: FilterBankConfig, shape: tuple[int, int]) -> _TextureOperator:
    return _TextureOperator(bank, shape)


def color_channels(rgb: np.ndarray) -> np.ndarray:
    """R, G, B, Y, Cb, Cr, H, S for a float RGB image in [0, 1]; shape (8, H, W)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 0.5 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 + 0.5 * r - 0.418688 * g - 0.081312 * b
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.where(
        mx == r, ((g - b) / safe) % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    ) / 6.0
    hue = np.where(delta > 0, hue, 0.0)
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.clip(np.stack([r, g, b, y, cb, cr, hue, sat]), 0.0, 1.0)


def compute_channels(image: np.ndarray, bank: FilterBankConfig | None = None) -> np.ndarray:
    """29-channel stack, shape (C, H, W), values in [0, 1]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an HxWx3 RGB image")
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError("zero-area image")
    bank = bank or FilterBankConfig.default()
    rgb = image.astype(float) / 255.0 if image.dtype == np.uint8 else np.asarray(image, float)
    colors = color_channels(rgb)
    texture = _texture_operator(bank, image.shape[:2])(colors[3])
    return np.concatenate([colors, texture])


def strip_bounds(height: int, strips: int) -> np.ndarray:
    return np.round(np.linspace(0, height, strips + 1)).astype(int)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    scheme: str
    channels: int = 29
    strips: int = DEFAULT_STRIPS
    bins: int = DEFAULT_BINS

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def layout(self) -> tuple[int, int, int]:
        return (self.channels, self.strips, self.bins)


def region_counts(stack: np.ndarray, region: np.ndarray | None, strips: int, bins: int) -> np.ndarray:
    """Raw pixel counts, shape (C, strips, bins)."""
    if strips < 1 or bins < 1:
        raise ValueError("strips and bins must be >= 1")
    c, h, w = stack.shape
    if region is not None and region.shape != (h, w):
        raise ValueError(f"mask {region.shape} does not match channels {(h, w)}")
    idx = np.minimum((stack * bins).astype(np.int64), bins - 1)
    strip_of_row = np.repeat(np.arange(strips), np.diff(strip_bounds(h, strips)))
    key = (np.arange(c)[:, None, None] * strips + strip_of_row[None, :, None]) * bins + idx
    weights = None
    if region is not None:
        weights = np.broadcast_to(region.astype(np.float64), (c, h, w)).ravel()
    counts = np.bincount(key.ravel(), weights=weights, minlength=c * strips * bins)
    return counts.reshape(c, strips, bins)


def strip_histograms(stack: np.ndarray, region_mask: np.ndarray | None = None,
                     strips: int = DEFAULT_STRIPS, bins: int = DEFAULT_BINS,
                     scheme: str = "whole") -> FeatureVector:
    counts = region_counts(stack, region_mask, strips, bins).astype(np.float64)
    totals = counts.sum(axis=2, keepdims=True)
    hist = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return FeatureVector(hist.ravel(), scheme, stack.shape[0], strips, bins)


def compose_scheme(fore: FeatureVector | None, back: FeatureVector | None,
                   whole: FeatureVector | None, scheme: str) -> FeatureVector:
    scheme = canonical_scheme(scheme)
    parts = {"whole": [whole], "fore": [fore], "fore+back": [fore, back],
             "fore+whole": [fore, whole]}[scheme]
    if any(p is None for p in parts):
        raise ValueError(f"scheme {scheme!r} needs region descriptors that were not given")
    layouts = {p.layout for p in parts}
    if len(layouts) != 1:
        raise ValueError(f"mismatched histogram layouts {sorted(layouts)}")
    values = np.concatenate([p.values for p in parts]) if len(parts) > 1 else parts[0].values.copy()
    c, s, b = parts[0].layout
    return FeatureVector(values, scheme, c, s, b)


def prepare(image: np.ndarray, mask: np.ndarray | None, size=DEFAULT_SIZE):
    """Resize an image (bilinear) and its mask (nearest) to the working size."""
    h, w = size
    if image.shape[:2] != (h, w):
        image = np.asarray(Image.fromarray(image).resize((w, h), Image.BILINEAR))
        if mask is not None:
            m = Image.fromarray(mask.astype(np.uint8) * 255).resize((w, h), Image.NEAREST)
            mask = np.asarray(m) >= 128
    return image, mask


def extract(image: np.ndarray, mask: np.ndarray | None, scheme: str,
            bank: FilterBankConfig | None = None, size=DEFAULT_SIZE,
            strips: int = DEFAULT_STRIPS, bins: int = DEFAULT_BINS) -> FeatureVector:
    """Full descriptor for one crop.  A missing mask means the whole crop is foreground."""
    scheme = canonical_scheme(scheme)
    image, mask = prepare(image, mask, size)
    stack = compute_channels(image, bank)
    whole = fore = back = None
    if scheme in ("whole", "fore+whole") or (scheme in ("fore", "fore+back") and mask is None):
        whole = strip_histograms(stack, None, strips, bins, "whole")
    if scheme != "whole":
        fore = whole if mask is None else strip_histograms(stack, mask, strips, bins, "fore")
    if scheme == "fore+back":
        if mask is None:
            back = FeatureVector(np.zeros_like(whole.values), "back", *whole.layout)
        else:
            back = strip_histograms(stack, ~mask, strips, bins, "back")
    return compose_scheme(fore, back, whole, scheme)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Row-stacked descriptors for a set of samples (row order = ``ids``)."""

    ids: tuple[str, ...]
    X: np.ndarray
    scheme: str
    layout: tuple[int, int, int] = (29, DEFAULT_STRIPS, DEFAULT_BINS)
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.X.shape[0] != len(self.ids):
            raise ValueError("row count does not match ids")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.ids)})

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        return self.X[[self._index[i] for i in ids]]

    def index(self, sid: str) -> int:
        return self._index[sid]


def extract_many(samples, scheme: str, bank: FilterBankConfig | None = None,
                 size=DEFAULT_SIZE) -> FeatureSet:
    scheme = canonical_scheme(scheme)
    bank = bank or FilterBankConfig.default()
    vecs = [extract(s.image, s.mask, scheme, bank, size) for s in samples]
    X = np.stack([v.values for v in vecs]) if vecs else np.zeros((0, 0))
    layout = vecs[0].layout if vecs else (bank.n_channels, DEFAULT_STRIPS, DEFAULT_BINS)
    return FeatureSet(tuple(s.id for s in samples), X, scheme, layout)


CACHE_VERSION = 1


def save_features(path, fs: FeatureSet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, version=CACHE_VERSION, ids=np.asarray(fs.ids, dtype=str),
                 values=fs.X, scheme=fs.scheme, dim=fs.X.shape[1], layout=np.asarray(fs.layout))


def load_features(path) -> FeatureSet:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported feature cache version {int(z['version'])}")
        X = z["values"]
        if X.shape[1] != int(z["dim"]):
            raise ValueError(f"{path}: corrupt feature cache (dim mismatch)")
        return FeatureSet(tuple(str(s) for s in z["ids"]), X, str(z["scheme"]),
                          tuple(int(v) for v in z["layout"]))
