"""Synthetic defect-pattern generator.

Eleven defect classes rendered as parametric geometries over a textured
gray background: each class follows its catalogued feature description
(linear depression for scratches, four-plus raised dots, round particles,
flat border regions, and so on). The real inspection-camera look is out of
reach; the point is a reproducible, learnable dataset whose classes are
separable by their geometry.

All randomness flows from one seeded generator per image, so identical
(class, size, seed) calls produce identical pixels.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

CLASS_NAMES = (
    "Remain",
    "Silk",
    "Multi-dots",
    "Scratch",
    "Small-Particle",
    "Ball",
    "Hump",
    "Flask",
    "Fallon",
    "Oval",
    "Color-Mark",
)

MIN_SIZE = 32


def class_id(label) -> int:
    """Resolve a class name or integer id to the dense id 0..10."""
    if isinstance(label, (int, np.integer)):
        if 0 <= int(label) < len(CLASS_NAMES):
            return int(label)
        raise ConfigError(f"class id {label} outside 0..{len(CLASS_NAMES) - 1}")
    name = str(label)
    for i, n in enumerate(CLASS_NAMES):
        if n.lower() == name.lower():
            return i
    raise ConfigError(f"unknown defect class {label!r}")


# ---------------------------------------------------------------------------
# drawing helpers (all return an alpha mask in [0, 1], anti-aliased)
# ---------------------------------------------------------------------------


def _grid(h, w):
    return np.mgrid[0:h, 0:w].astype(np.float64)


def _disc(yy, xx, cy, cx, r):
    d = np.hypot(yy - cy, xx - cx)
    return np.clip(r + 0.5 - d, 0.0, 1.0)


def _ellipse(yy, xx, cy, cx, a, b, angle):
    ca, sa = np.cos(angle), np.sin(angle)
    u = (xx - cx) * ca + (yy - cy) * sa
    v = -(xx - cx) * sa + (yy - cy) * ca
    q = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    return np.clip((1.0 - q) * min(a, b) + 0.5, 0.0, 1.0)


def _segment(yy, xx, y0, x0, y1, x1, width):
    vy, vx = y1 - y0, x1 - x0
    seg2 = vy * vy + vx * vx
    if seg2 == 0:
        return _disc(yy, xx, y0, x0, width / 2)
    t = np.clip(((yy - y0) * vy + (xx - x0) * vx) / seg2, 0.0, 1.0)
    d = np.hypot(yy - (y0 + t * vy), xx - (x0 + t * vx))
    return np.clip(width / 2 + 0.5 - d, 0.0, 1.0)


def _blob(yy, xx, cy, cx, r0, rng, roughness=0.25, lobes=5):
    """Star-shaped region: radius modulated by random low harmonics."""
    theta = np.arctan2(yy - cy, xx - cx)
    r = np.full_like(theta, r0)
    for k in range(2, 2 + lobes):
        amp = r0 * roughness * rng.uniform(0.3, 1.0) / (k - 1)
        phase = rng.uniform(0, 2 * np.pi)
        r = r + amp * np.cos(k * theta + phase)
    d = np.hypot(yy - cy, xx - cx)
    return np.clip(r - d + 0.5, 0.0, 1.0)


def _smooth_noise(h, w, rng, cell=8):
    """Band-limited noise: coarse grid, bilinear upsample."""
    gh, gw = max(2, h // cell + 2), max(2, w // cell + 2)
    coarse = rng.normal(size=(gh, gw))
    ys = np.linspace(0, gh - 1.001, h)
    xs = np.linspace(0, gw - 1.001, w)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx)


# ---------------------------------------------------------------------------
# per-class renderers: write an intensity delta and optional chroma onto the
# background; `s` is the geometry scale (min(H, W) / 64)
# ---------------------------------------------------------------------------


def _render_remain(yy, xx, h, w, s, rng):
    side = rng.integers(0, 4)
    along = rng.uniform(0.2, 0.8)
    r0 = rng.uniform(10, 16) * s
    edge = {
        0: (rng.uniform(-2, 2), along * w),
        1: (h + rng.uniform(-2, 2), along * w),
        2: (along * h, rng.uniform(-2, 2)),
        3: (along * h, w + rng.uniform(-2, 2)),
    }[int(side)]
    mask = _blob(yy, xx, edge[0], edge[1], r0, rng, roughness=0.3)
    return mask * rng.uniform(0.16, 0.22), None  # flat, modest contrast


def _render_silk(yy, xx, h, w, s, rng):
    # discontinuous linear protrusion: dashes along one gently bent path
    y0, x0 = rng.uniform(0.15, 0.5) * h, rng.uniform(0.1, 0.3) * w
    angle = rng.uniform(-0.5, 0.5)
    length = rng.uniform(0.55, 0.8) * min(h, w)
    n_dash = int(rng.integers(3, 6))
    mask = np.zeros_like(yy)
    pos = 0.0
    bend = rng.uniform(-0.3, 0.3)
    for k in range(n_dash):
        frac0 = pos + rng.uniform(0.08, 0.15)  # gap wide enough to survive AA
        frac1 = frac0 + rng.uniform(0.10, 0.18)
        pos = frac1
        a0 = angle + bend * frac0
        a1 = angle + bend * frac1
        p0 = (y0 + length * frac0 * np.sin(a0), x0 + length * frac0 * np.cos(a0))
        p1 = (y0 + length * frac1 * np.sin(a1), x0 + length * frac1 * np.cos(a1))
        mask = np.maximum(mask, _segment(yy, xx, *p0, *p1, width=2.0 * s))
    return mask * rng.uniform(0.28, 0.35), None


def _render_multidots(yy, xx, h, w, s, rng):
    # at least four clearly separated raised dots
    n = int(rng.integers(4, 9))
    mask = np.zeros_like(yy)
    centers = []
    attempts = 0
    while len(centers) < n and attempts < 200:
        attempts += 1
        cy, cx = rng.uniform(0.12, 0.88) * h, rng.uniform(0.12, 0.88) * w
        r = rng.uniform(1.6, 2.8) * s
        if all(np.hypot(cy - oy, cx - ox) > (r + orr + 4 * s) for oy, ox, orr in centers):
            centers.append((cy, cx, r))
            mask = np.maximum(mask, _disc(yy, xx, cy, cx, r))
    return mask * rng.uniform(0.3, 0.38), None


def _render_scratch(yy, xx, h, w, s, rng):
    # one long anti-aliased linear depression
    angle = rng.uniform(0, np.pi)
    cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    half = rng.uniform(0.3, 0.45) * min(h, w)
    dy, dx = np.sin(angle) * half, np.cos(angle) * half
    mask = _segment(yy, xx, cy - dy, cx - dx, cy + dy, cx + dx, width=rng.uniform(1.6, 2.4) * s)
    return mask * -rng.uniform(0.3, 0.38), None


def _render_small_particle(yy, xx, h, w, s, rng):
    n = int(rng.integers(1, 4))
    mask = np.zeros_like(yy)
    for _ in range(n):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        mask = np.maximum(
            mask, _blob(yy, xx, cy, cx, rng.uniform(2.0, 3.5) * s, rng, roughness=0.45, lobes=4)
        )
    return mask * rng.uniform(0.3, 0.38), None


def _render_ball(yy, xx, h, w, s, rng):
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    r = rng.uniform(8, 12) * s
    return _disc(yy, xx, cy, cx, r) * rng.uniform(0.3, 0.38), None


def _render_hump(yy, xx, h, w, s, rng):
    # bump fused into the surface: smooth radial falloff, no sharp edge
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    r = rng.uniform(8, 13) * s
    d = np.hypot(yy - cy, xx - cx)
    dome = np.exp(-((d / r) ** 2) * 2.0)
    return dome * rng.uniform(0.26, 0.34), None


def _render_flask(yy, xx, h, w, s, rng):
    # flaky patch with an undulated (rippled) top surface
    cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    mask = _blob(yy, xx, cy, cx, rng.uniform(9, 14) * s, rng, roughness=0.3)
    angle = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    waves = np.sin(((xx * np.cos(angle) + yy * np.sin(angle)) / (2.2 * s)) + phase)
    return mask * (0.22 + 0.1 * waves), None


def _render_fallon(yy, xx, h, w, s, rng):
    # one large jagged particle
    cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    mask = _blob(yy, xx, cy, cx, rng.uniform(13, 18) * s, rng, roughness=0.45, lobes=8)
    return mask * rng.uniform(0.26, 0.34), None


def _render_oval(yy, xx, h, w, s, rng):
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    a = rng.uniform(10, 14) * s
    b = a * rng.uniform(0.45, 0.65)
    mask = _ellipse(yy, xx, cy, cx, a, b, rng.uniform(0, np.pi))
    return mask * rng.uniform(0.3, 0.38), None


def _render_color_mark(yy, xx, h, w, s, rng):
    # no surface relief: a smooth chromatic stain, luminance almost flat
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    a = rng.uniform(12, 18) * s
    b = a * rng.uniform(0.6, 0.9)
    q_mask = _ellipse(yy, xx, cy, cx, a, b, rng.uniform(0, np.pi))
    soft = q_mask**0.5
    tint = rng.uniform(0.12, 0.18) * (1 if rng.random() < 0.5 else -1)
    chroma = np.stack([soft * tint, soft * tint * -0.2, soft * -tint], axis=-1)
    return np.zeros_like(yy), chroma


_RENDERERS = (
    _render_remain,
    _render_silk,
    _render_multidots,
    _render_scratch,
    _render_small_particle,
    _render_ball,
    _render_hump,
    _render_flask,
    _render_fallon,
    _render_oval,
    _render_color_mark,
)


def generate_defect(klass, size, seed) -> np.ndarray:
    """Render one defect image; returns uint8 (H, W, 3), RGB.

    Identical (klass, size, seed) triples produce identical pixels.
    """
    h, w = size
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ConfigError(f"image size {size} below the {MIN_SIZE}px minimum")
    cid = class_id(klass)
    rng = np.random.default_rng(seed)
    yy, xx = _grid(h, w)
    s = min(h, w) / 64.0

    base = rng.uniform(0.40, 0.48)
    gray = base + 0.025 * _smooth_noise(h, w, rng) + 0.012 * rng.normal(size=(h, w))
    delta, chroma = _RENDERERS[cid](yy, xx, h, w, s, rng)
    gray = gray + delta
    img = np.repeat(gray[:, :, None], 3, axis=2)
    if chroma is not None:
        img = img + chroma
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
