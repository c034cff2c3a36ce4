"""Procedural pedestrian crops for desk-scale runs.

Each crop is a blocky figure (head, torso, legs, optional hat/hair) on a
textured background, plus an optional bag drawn outside the figure.  Crops
are drawn from a set of latent "outfit" prototypes so that attribute values
are shared by look-alike neighbours.  Labels are read off the rendering
parameters, then flipped with probability ``noise``.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .ingest import AttributeRegistry, Sample, split_partition

ATTRIBUTES = ("UpperRed", "LowerDark", "Backpack", "Hat", "UpperStriped", "LongHair")
HEIGHT, WIDTH = 128, 48
_PREVALENCE = (0.35, 0.4, 0.3, 0.25, 0.3, 0.35)


@dataclass(frozen=True)
class Outfit:
    torso_hue: float
    torso_sat: float
    torso_val: float
    leg_hue: float
    leg_val: float
    bag: bool
    hat: bool
    stripes: bool
    long_hair: bool
    bg_hue: float
    bg_val: float
    bg_texture: int  # 0 flat, 1 vertical stripes, 2 checker, 3 gradient


def _attribute_values(o: Outfit) -> dict[str, int]:
    red = o.torso_hue < 0.05 or o.torso_hue > 0.95
    return {
        "UpperRed": int(red),
        "LowerDark": int(o.leg_val < 0.4),
        "Backpack": int(o.bag),
        "Hat": int(o.hat),
        "UpperStriped": int(o.stripes),
        "LongHair": int(o.long_hair),
    }


def _draw_outfit(rng: np.random.Generator, flags: dict[str, bool]) -> Outfit:
    if flags["UpperRed"]:
        torso_hue = float(rng.uniform(-0.03, 0.03)) % 1.0
    else:
        torso_hue = float(rng.uniform(0.12, 0.88))
    leg_val = float(rng.uniform(0.1, 0.3) if flags["LowerDark"] else rng.uniform(0.5, 0.9))
    return Outfit(
        torso_hue=torso_hue,
        torso_sat=float(rng.uniform(0.55, 0.95)),
        torso_val=float(rng.uniform(0.55, 0.95)),
        leg_hue=float(rng.uniform(0.0, 1.0)),
        leg_val=leg_val,
        bag=flags["Backpack"],
        hat=flags["Hat"],
        stripes=flags["UpperStriped"],
        long_hair=flags["LongHair"],
        bg_hue=float(rng.uniform(0.0, 1.0)),
        bg_val=float(rng.uniform(0.3, 0.8)),
        bg_texture=int(rng.integers(0, 4)),
    )


def _jitter(o: Outfit, rng: np.random.Generator) -> Outfit:
    """Small per-sample drift that never crosses an attribute threshold."""
    def hue(h, lo=None, hi=None):
        h = h + rng.normal(0, 0.01)
        return float(h % 1.0) if lo is None else float(np.clip(h, lo, hi))
    red = o.torso_hue < 0.05 or o.torso_hue > 0.95
    th = float((o.torso_hue + rng.uniform(-0.015, 0.015)) % 1.0) if red else hue(o.torso_hue, 0.1, 0.9)
    lv = float(np.clip(o.leg_val + rng.normal(0, 0.03), 0.05, 0.35) if o.leg_val < 0.4
               else np.clip(o.leg_val + rng.normal(0, 0.03), 0.45, 0.95))
    return Outfit(th, float(np.clip(o.torso_sat + rng.normal(0, 0.04), 0.4, 1.0)),
                  float(np.clip(o.torso_val + rng.normal(0, 0.04), 0.45, 1.0)),
                  hue(o.leg_hue), lv, o.bag, o.hat, o.stripes, o.long_hair,
                  hue(o.bg_hue), float(np.clip(o.bg_val + rng.normal(0, 0.05), 0.2, 0.9)),
                  o.bg_texture)


def _rgb(h, s, v) -> np.ndarray:
    return np.asarray(colorsys.hsv_to_rgb(h % 1.0, s, v))


def render(o: Outfit, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Render one crop; returns (uint8 HxWx3 image, bool foreground mask)."""
    h, w = HEIGHT, WIDTH
    rows, cols = np.mgrid[0:h, 0:w]
    bg = _rgb(o.bg_hue, 0.35, o.bg_val)
    img = np.broadcast_to(bg, (h, w, 3)).copy()
    if o.bg_texture == 1:
        img *= (1.0 + 0.2 * ((cols // 3) % 2))[..., None]
    elif o.bg_texture == 2:
        img *= (1.0 + 0.2 * (((rows // 6) + (cols // 6)) % 2))[..., None]
    elif o.bg_texture == 3:
        img *= (0.8 + 0.4 * rows / h)[..., None]

    cx = w // 2 + int(rng.integers(-2, 3))
    top = int(rng.integers(4, 9))
    mask = np.zeros((h, w), dtype=bool)

    torso_w = int(rng.integers(9, 12))
    torso_top, torso_bot = top + 18, top + 60
    torso = (rows >= torso_top) & (rows < torso_bot) & (np.abs(cols - cx) <= torso_w)
    torso_col = _rgb(o.torso_hue, o.torso_sat, o.torso_val)
    img[torso] = torso_col
    if o.stripes:
        band = torso & (((rows - torso_top) // 3) % 2 == 1)
        img[band] = torso_col * 0.35
    mask |= torso

    leg_col = _rgb(o.leg_hue, 0.3, o.leg_val)
    legs = (rows >= torso_bot) & (rows < min(h - 2, torso_bot + 58)) & \
           (np.abs(cols - cx) <= 8) & (np.abs(cols - cx) >= 1)
    img[legs] = leg_col
    mask |= legs

    skin = np.array([0.87, 0.72, 0.6])
    head = ((rows - (top + 9)) / 8.0) ** 2 + ((cols - cx) / 5.5) ** 2 <= 1.0
    img[head] = skin
    mask |= head
    hair_col = np.array([0.15, 0.1, 0.05])
    hair = head & (rows < top + 5)
    if o.long_hair:
        hair |= (rows >= top + 2) & (rows < top + 32) & (np.abs(cols - cx) >= 4) & (np.abs(cols - cx) <= 7)
    img[hair] = hair_col
    mask |= hair
    if o.hat:
        hat = (rows >= top - 3) & (rows < top + 4) & (np.abs(cols - cx) <= 8)
        img[hat] = np.array([0.1, 0.2, 0.55])
        mask |= hat
    if o.bag:
        side = 1 if rng.random() < 0.5 else -1
        x0 = cx + side * (torso_w + 1)
        bag = (rows >= torso_top + 6) & (rows < torso_top + 34) & \
              ((cols - x0) * side >= 0) & ((cols - x0) * side < 6)
        bag &= ~mask
        img[bag] = np.array([0.35, 0.2, 0.1])

    img *= float(rng.uniform(0.85, 1.15))
    img += rng.normal(0, 0.03, img.shape)
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8), mask


def generate_synthetic(n: int, attrs: int = 4, noise: float = 0.0, seed: int = 0,
                       clusters: int | None = None, mix: float = 0.1,
                       ratios=(0.5, 0.1, 0.4), return_outfits: bool = False):
    """Render ``n`` crops labelled with the first ``attrs`` synthetic attributes.

    ``clusters`` outfit prototypes (default ``n // 25``) are shared between
    samples; each attribute is redrawn independently per sample with
    probability ``mix``.  With ``return_outfits`` the per-sample rendering
    parameters are returned as a third element.
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    if not 1 <= attrs <= len(ATTRIBUTES):
        raise ValueError(f"attrs must be in [1, {len(ATTRIBUTES)}]")
    if not 0.0 <= noise < 1.0:
        raise ValueError("noise must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    names = ATTRIBUTES[:attrs]
    n_clusters = clusters if clusters is not None else max(2, n // 25)
    prototypes = []
    for _ in range(n_clusters):
        flags = {a: bool(rng.random() < p) for a, p in zip(ATTRIBUTES, _PREVALENCE)}
        prototypes.append((flags, _draw_outfit(rng, flags)))

    samples, outfits = [], []
    width = len(str(n - 1))
    for i in range(n):
        flags, proto = prototypes[int(rng.integers(n_clusters))]
        redraw = rng.random(len(ATTRIBUTES)) < mix
        if redraw.any():
            flags = dict(flags)
            for a, p, r in zip(ATTRIBUTES, _PREVALENCE, redraw):
                if r:
                    flags[a] = bool(rng.random() < p)
            fresh = _draw_outfit(rng, flags)
            proto = Outfit(
                fresh.torso_hue if redraw[0] else proto.torso_hue, proto.torso_sat,
                proto.torso_val, proto.leg_hue, fresh.leg_val if redraw[1] else proto.leg_val,
                flags["Backpack"], flags["Hat"], flags["UpperStriped"], flags["LongHair"],
                proto.bg_hue, proto.bg_val, proto.bg_texture)
        outfit = _jitter(proto, rng)
        outfits.append(outfit)
        image, mask = render(outfit, rng)
        truth = _attribute_values(outfit)
        flips = rng.random(len(names)) < noise
        labels = {a: int(truth[a]) ^ int(f) for a, f in zip(names, flips)}
        samples.append(Sample(f"s{i:0{width}d}", image, labels, mask, None))
    samples = split_partition(samples, ratios, seed)
    registry = AttributeRegistry.from_samples(names, samples)
    if return_outfits:
        return registry, samples, outfits
    return registry, samples


def outfit_labels(o: Outfit) -> dict[str, int]:
    return _attribute_values(o)
