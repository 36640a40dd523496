"""Rasterizer for glyph faces.

Faces are drawn as soft-edged dark strokes on a light background.  All
geometry comes from the landmark set, so pixels and landmarks can never
disagree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .au import AUVector
from .geometry import (
    CX,
    CY,
    EYE_RX,
    EYE_RY_BASE,
    IMAGE_SIZE,
    K5,
    apply_aus,
    baseline_landmarks,
    identity_geometry,
    measure_aus,
)

INK_OUTLINE = 0.30
INK_BROW = 0.12
INK_EYE = 0.08
INK_NOSE = 0.22
INK_CHEEK = 0.35
INK_LIP = 0.10
INK_MOUTH_CAVITY = 0.40
INK_CHIN = 0.28


@dataclass
class GlyphSpec:
    identity_params: np.ndarray
    au: AUVector
    seed: int = 0

    def __post_init__(self):
        self.identity_params = np.asarray(self.identity_params, dtype=np.float64)


@dataclass
class GlyphImage:
    pixels: np.ndarray  # [H, W] float in [0,1]
    landmarks: dict = field(default_factory=dict)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


_YY, _XX = np.meshgrid(np.arange(IMAGE_SIZE, dtype=np.float64) + 0.5,
                       np.arange(IMAGE_SIZE, dtype=np.float64) + 0.5, indexing="ij")


def _seg_distance(p0, p1):
    """Distance from every pixel center to segment p0-p1."""
    d = p1 - p0
    L2 = float(d @ d)
    if L2 < 1e-12:
        return np.hypot(_XX - p0[0], _YY - p0[1])
    t = ((_XX - p0[0]) * d[0] + (_YY - p0[1]) * d[1]) / L2
    t = np.clip(t, 0.0, 1.0)
    px = p0[0] + t * d[0]
    py = p0[1] + t * d[1]
    return np.hypot(_XX - px, _YY - py)


def _polyline_distance(pts):
    d = None
    for a, b in zip(pts[:-1], pts[1:]):
        sd = _seg_distance(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
        d = sd if d is None else np.minimum(d, sd)
    return d


def _stroke(img, dist, half_width, ink):
    cov = np.clip(half_width + 0.5 - dist, 0.0, 1.0)
    np.minimum(img, img * (1 - cov) + ink * cov, out=img)
    return img


def _quad_points(p0, mid, p1, n=9):
    """Quadratic through three points (mid hit at t=0.5)."""
    p0, mid, p1 = (np.asarray(p, dtype=np.float64) for p in (p0, mid, p1))
    ctrl = 2.0 * mid - 0.5 * (p0 + p1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * ctrl + t ** 2 * p1


def _ellipse_norm(cx, cy, rx, ry):
    return np.sqrt(((_XX - cx) / rx) ** 2 + ((_YY - cy) / ry) ** 2)


def _fill_ellipse(img, cx, cy, rx, ry, ink):
    r = _ellipse_norm(cx, cy, rx, ry)
    cov = np.clip(0.5 + (1.0 - r) * min(rx, ry), 0.0, 1.0)
    np.minimum(img, img * (1 - cov) + ink * cov, out=img)
    return img


def _ring(img, cx, cy, rx, ry, width, ink):
    r = _ellipse_norm(cx, cy, rx, ry)
    dist = np.abs(r - 1.0) * min(rx, ry)
    return _stroke(img, dist, width / 2, ink)


def render(spec: GlyphSpec) -> GlyphImage:
    """Render a glyph face; deterministic, landmarks returned exactly."""
    g = identity_geometry(spec.identity_params)
    base = baseline_landmarks(spec.identity_params)
    lm = apply_aus(base, spec.au)
    s = spec.au.intensity.astype(np.float64) / 5.0
    from .au import AU_INDEX

    img = np.full((IMAGE_SIZE, IMAGE_SIZE), g.gray, dtype=np.float64)

    _ring(img, CX, CY, g.face_rx, g.face_ry, 1.4, INK_OUTLINE)

    # cheek arcs: bend upward with AU6
    s6 = s[AU_INDEX[6]]
    for side in ("l", "r"):
        c = lm[f"cheek_{side}"]
        bow = 1.5 * (1.0 + 0.8 * s6)
        pts = _quad_points((c[0] - 3.0, c[1] + bow), (c[0], c[1] - bow), (c[0] + 3.0, c[1] + bow))
        _stroke(img, _polyline_distance(pts), 0.55, INK_CHEEK)

    # brows: two horizontal dashes per side (inner and outer), so the
    # dashes translate but never slant as AUs move their anchors apart
    for side in ("l", "r"):
        for part in ("inner", "outer"):
            p = lm[f"brow_{part}_{side}"]
            d = _seg_distance(p + [-1.2, 0], p + [1.2, 0])
            _stroke(img, d, g.brow_w / 2, INK_BROW)

    # eyes (openness = vertical radius)
    s5 = s[AU_INDEX[5]]
    ry_eye = EYE_RY_BASE + K5 * s5
    for side in ("l", "r"):
        e = lm[f"eye_{side}"]
        _fill_ellipse(img, e[0], e[1], EYE_RX, ry_eye, INK_EYE)

    # nose stroke, plus wrinkles when AU9 fires
    nose = lm["nose"]
    _stroke(img, _seg_distance(nose + [0, -1.2], nose + [0, 1.2]), 0.6, INK_NOSE)
    s9 = s[AU_INDEX[9]]
    if s9 > 0:
        for dy in (3.0, 4.6):
            d = _seg_distance(nose + [-2.5, -dy], nose + [2.5, -dy])
            _stroke(img, d, 0.5, 1.0 - (1.0 - INK_NOSE) * s9)

    # mouth: upper lip through lip_top, lower lip through quarter points
    upper = _quad_points(lm["mouth_l"], lm["lip_top"], lm["mouth_r"], n=11)
    lower = np.concatenate([
        _quad_points(lm["mouth_l"], lm["lip_low_l"], lm["lip_bottom"], n=7),
        _quad_points(lm["lip_bottom"], lm["lip_low_r"], lm["mouth_r"], n=7)[1:],
    ])
    gap = lm["lip_bottom"][1] - lm["lip_top"][1]
    if gap > 0.3:
        # cavity fill between the lip curves (both are x-monotone)
        xs = _XX[0]
        uy = np.interp(xs, upper[:, 0], upper[:, 1], left=np.nan, right=np.nan)
        ly = np.interp(xs, lower[:, 0], lower[:, 1], left=np.nan, right=np.nan)
        inside = (~np.isnan(uy)) & (_YY >= uy) & (_YY <= ly)
        cov = inside.astype(np.float64)
        np.minimum(img, img * (1 - cov) + INK_MOUTH_CAVITY * cov, out=img)
    # upper lip thin, lower lip full: the width contrast is what tells
    # the landmark fitter which line is which
    _stroke(img, _polyline_distance(upper), 0.45, INK_LIP)
    _stroke(img, _polyline_distance(lower), 1.05, INK_LIP)

    # chin arc (thin)
    chin = lm["chin"]
    pts = _quad_points((chin[0] - 3.5, chin[1] + 0.8), chin, (chin[0] + 3.5, chin[1] + 0.8))
    _stroke(img, _polyline_distance(pts), 0.5, INK_CHIN)

    return GlyphImage(pixels=np.clip(img, 0.0, 1.0), landmarks=lm)


def face_mask(identity_params):
    """Soft face-region mask (1 inside the outline, 0 outside)."""
    g = identity_geometry(identity_params)
    r = _ellipse_norm(CX, CY, g.face_rx, g.face_ry)
    return np.clip(0.5 + (1.0 - r) * min(g.face_rx, g.face_ry), 0.0, 1.0)


def oracle_measure(landmarks, identity_params):
    """Exact inverse of the deformation table given the identity baseline."""
    base = baseline_landmarks(identity_params)
    return measure_aus(landmarks, base)
