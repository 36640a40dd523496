"""Approximate landmark recovery for generated images.

Part templates are synthesized from the same stroke math the renderer
uses and matched by normalized cross-correlation inside search windows
sized to the AU deformation ranges around the identity baseline.

Two modes share the window/template tables:
  * hard: argmax + parabolic subpixel refinement (evaluation paths);
  * soft: softargmax over the correlation map, built from tape ops, so
    pixel-space losses can push gradients into the generator.

Eye openness is not template-matched; it is read out as calibrated ink
mass in a column box over the eye.  The outline bottom mirrors the
fitted top (the outline is a rigid ellipse), which keeps every search
window inside the frame.
"""

from __future__ import annotations

import numpy as np

from ..numerics import tensor as T
from ..numerics.tensor import Tensor
from .au import AU_INDEX, NUM_AUS
from .geometry import (
    CY,
    EYE_RX,
    EYE_RY_BASE,
    IMAGE_SIZE,
    K1, K2, K4X, K4Y_IN, K4Y_OUT, K5, K6, K9, K12, K15, K15_LOW, K17, K20,
    K25_BOT, K25_LOW, K25_TOP, K26_BOT, K26_CHIN, K26_LOW,
    baseline_landmarks,
    identity_geometry,
)

SOFT_TEMPERATURE = 0.05
_EPS = 1e-6


# -- templates -------------------------------------------------------------------

def _grid(h, w):
    yy, xx = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij")
    return yy.astype(np.float64), xx.astype(np.float64)


def _tpl_disc(rx, ry):
    h = 2 * int(np.ceil(ry)) + 3
    w = 2 * int(np.ceil(rx)) + 3
    yy, xx = _grid(h, w)
    r = np.sqrt((xx / rx) ** 2 + (yy / ry) ** 2)
    return np.clip(0.5 + (1.0 - r) * min(rx, ry), 0.0, 1.0)


def _tpl_bar(half_len, half_w, vertical=False, above=0.0, below=0.0, pad_w=None):
    """Soft bar; optional asymmetric context planes above/below the bar.

    ``pad_w`` overrides the cross-axis half-extent so template variants
    of differing bar widths share one canvas shape.
    """
    cross = half_w if pad_w is None else pad_w
    if vertical:
        h, w = 2 * int(np.ceil(half_len)) + 1, 2 * int(np.ceil(cross)) + 3
        yy, xx = _grid(h, w)
        d = np.where(np.abs(yy) <= half_len, np.abs(xx), np.hypot(xx, np.abs(yy) - half_len))
    else:
        h, w = 2 * int(np.ceil(cross)) + 3, 2 * int(np.ceil(half_len)) + 1
        yy, xx = _grid(h, w)
        d = np.where(np.abs(xx) <= half_len, np.abs(yy), np.hypot(yy, np.abs(xx) - half_len))
    bar = np.clip(half_w + 0.5 - d, 0.0, 1.0)
    if above or below:
        yy, _ = _grid(h, w)
        ctx = np.where(yy < -half_w - 0.5, above, np.where(yy > half_w + 0.5, below, 0.0))
        bar = np.maximum(bar, ctx)
    return bar


def _tpl_end_bar(length, half_w, direction, slope=0.0, max_slope=0.0):
    """Bar that terminates at the template center and extends one way.

    ``direction`` +1 extends right, -1 left; ``slope`` tilts the bar
    (dy per unit along).  Pins the fit to stroke endpoints instead of
    letting it slide along the stroke.
    """
    rise = max(abs(slope), max_slope) * length
    h = 2 * int(np.ceil(half_w + rise)) + 5
    w = 2 * int(np.ceil(length)) + 3
    yy, xx = _grid(h, w)
    u = xx * direction  # bar occupies u in [0, length]
    along = np.clip(u, 0.0, length)
    bar_y = slope * along
    d = np.hypot(xx - along * direction, yy - bar_y)
    d = np.where((u >= 0) & (u <= length), np.abs(yy - bar_y), d)
    return np.clip(half_w + 0.5 - d, 0.0, 1.0)


def _tpl_arc(half_len=3.0, bow=1.5, width=0.55):
    h, w = 9, 2 * int(np.ceil(half_len)) + 3
    yy, xx = _grid(h, w)
    # parabola through (+-half_len, +bow) and (0, -bow)
    curve_y = -bow + 2.0 * bow * (xx / half_len) ** 2
    d = np.abs(yy - curve_y)
    return np.clip(width + 0.5 - d, 0.0, 1.0)


def _part_table():
    """(templates, up, down, left, right) per fitted landmark.

    Each part carries one or more template variants (slants for strokes
    that tilt under AUs, cavity context for the lips); the NCC map is
    the max over variants.  Templates are identity-free; NCC is
    scale-free so mild width mismatch only softens the peak.
    """
    bw = 0.875
    corner_slants = (-0.7, 0.0, 0.7)

    def brow(_direction):
        return [_tpl_bar(1.2, bw)]

    def corner(direction):
        return [_tpl_end_bar(3.0, 0.8, direction, s, max_slope=0.7) for s in corner_slants]

    return {
        "eye_l": ([_tpl_disc(EYE_RX, EYE_RY_BASE)], 3, 3, 3, 3),
        "eye_r": ([_tpl_disc(EYE_RX, EYE_RY_BASE)], 3, 3, 3, 3),
        "brow_inner_l": (brow(-1), 5, 4, 2, 4),
        "brow_inner_r": (brow(+1), 5, 4, 4, 2),
        "brow_outer_l": (brow(+1), 5, 3, 2, 2),
        "brow_outer_r": (brow(-1), 5, 3, 2, 2),
        "cheek_l": ([_tpl_arc()], 5, 2, 2, 2),
        "cheek_r": ([_tpl_arc()], 5, 2, 2, 2),
        "nose": ([_tpl_bar(1.2, 0.6, vertical=True)], 4, 2, 2, 2),
        "mouth_l": (corner(+1), 6, 5, 6, 2),
        "mouth_r": (corner(-1), 6, 5, 2, 6),
        # lip_top variants: open mouth (thin bar, cavity below) and fully
        # closed (merged into the thick lower lip)
        "lip_top": ([_tpl_bar(2.0, 0.45, below=0.6, pad_w=1.05), _tpl_bar(2.0, 1.05)], 5, 2, 1, 1),
        "lip_bottom": ([_tpl_bar(2.0, 1.05), _tpl_bar(2.0, 1.05, above=0.6)], 2, 9, 1, 1),
        "lip_low_l": ([_tpl_bar(1.5, 1.05), _tpl_bar(1.5, 1.05, above=0.6)], 2, 10, 1, 1),
        "lip_low_r": ([_tpl_bar(1.5, 1.05), _tpl_bar(1.5, 1.05, above=0.6)], 2, 10, 1, 1),
        "chin": ([_tpl_bar(3.0, 0.5)], 5, 6, 2, 2),
        "outline_l": ([_tpl_bar(3.0, 0.7, vertical=True)], 1, 1, 3, 3),
        "outline_r": ([_tpl_bar(3.0, 0.7, vertical=True)], 1, 1, 3, 3),
        "outline_top": ([_tpl_bar(3.0, 0.7)], 3, 3, 1, 1),
    }


# -- eye-openness calibration ------------------------------------------------------

def _openness_coefficients():
    """Linear fit of column-box ink mass against eye vertical radius."""
    samples = []
    for ry in np.linspace(EYE_RY_BASE, EYE_RY_BASE + K5 + 0.4, 9):
        for fy in (0.0, 0.33, 0.66):
            yy, xx = np.meshgrid(np.arange(-5, 6) - fy, np.arange(-1, 2), indexing="ij")
            r = np.sqrt((xx / EYE_RX) ** 2 + (yy / ry) ** 2)
            cov = np.clip(0.5 + (1.0 - r) * min(EYE_RX, ry), 0.0, 1.0)
            samples.append((cov.sum(), ry))
    s = np.array(samples)
    b, a = np.polyfit(s[:, 0], s[:, 1], 1)
    return a, b


_OPEN_A, _OPEN_B = _openness_coefficients()
# renderer eye ink contrast: coverage -> ink is scaled by (gray - INK_EYE)
from .render import INK_EYE  # noqa: E402


class LandmarkFit:
    def __init__(self, landmarks, confidences, gray):
        self.landmarks = landmarks
        self.confidences = confidences
        self.gray = gray

    @property
    def confidence(self):
        return float(np.mean(list(self.confidences.values())))


def _window_bounds(center, tpl, up, down, left, right):
    t_ry, t_rx = tpl.shape[0] // 2, tpl.shape[1] // 2
    cy, cx = int(round(center[1])), int(round(center[0]))
    y0, y1 = cy - up - t_ry, cy + down + t_ry + 1
    x0, x1 = cx - left - t_rx, cx + right + t_rx + 1
    # shift (never shrink) windows that poke outside the frame
    if y0 < 0:
        y1 -= y0
        y0 = 0
    if x0 < 0:
        x1 -= x0
        x0 = 0
    if y1 > IMAGE_SIZE:
        y0 -= y1 - IMAGE_SIZE
        y1 = IMAGE_SIZE
    if x1 > IMAGE_SIZE:
        x0 -= x1 - IMAGE_SIZE
        x1 = IMAGE_SIZE
    return y0, y1, x0, x1, cy, cx


def fit_landmarks(pixels, identity_params):
    """Hard fit: landmarks, per-part NCC confidence, background estimate."""
    from .embed import image_gray_level

    base = baseline_landmarks(identity_params)
    gray = image_gray_level(pixels)
    ink = np.clip(gray - np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    parts = _part_table()
    out, conf = {}, {}
    for name, (tpls, up, down, left, right) in parts.items():
        tpl = tpls[0]
        y0, y1, x0, x1, cy, cx = _window_bounds(base[name], tpl, up, down, left, right)
        patch = ink[y0:y1, x0:x1]
        win = np.lib.stride_tricks.sliding_window_view(patch, tpl.shape)
        ssum = win.sum(axis=(-1, -2))
        ssq = (win * win).sum(axis=(-1, -2))
        var = np.maximum(ssq - ssum * ssum / tpl.size, 0.0)
        wnorm = np.sqrt(var)
        ncc = None
        for t in tpls:
            t0 = t - t.mean()
            cand = (win * t0).sum(axis=(-1, -2)) / (wnorm * np.linalg.norm(t0) + _EPS)
            ncc = cand if ncc is None else np.maximum(ncc, cand)
        iy, ix = np.unravel_index(np.argmax(ncc), ncc.shape)
        dy, dx = float(iy), float(ix)
        for axis, idx, extent in (("y", iy, ncc.shape[0]), ("x", ix, ncc.shape[1])):
            if 0 < idx < extent - 1:
                c0 = ncc[idx - 1, ix] if axis == "y" else ncc[iy, idx - 1]
                c1 = ncc[idx, ix] if axis == "y" else ncc[iy, idx]
                c2 = ncc[idx + 1, ix] if axis == "y" else ncc[iy, idx + 1]
                denom = c0 - 2 * c1 + c2
                shift = 0.0 if abs(denom) < 1e-9 else np.clip(0.5 * (c0 - c2) / denom, -0.5, 0.5)
                if axis == "y":
                    dy += shift
                else:
                    dx += shift
        t_ry, t_rx = tpl.shape[0] // 2, tpl.shape[1] // 2
        # +0.5: template centers land on pixel centers
        out[name] = np.array([x0 + t_rx + dx + 0.5, y0 + t_ry + dy + 0.5], dtype=np.float64)
        conf[name] = float(np.clip(ncc[iy, ix], 0.0, 1.0))

    # eye openness from calibrated ink mass (contrast-normalized)
    contrast = max(gray - INK_EYE, 0.05)
    for side in ("l", "r"):
        e = out[f"eye_{side}"]
        cy, cx = int(round(e[1])), int(round(e[0]))
        box = ink[max(cy - 5, 0):cy + 6, max(cx - 1, 0):cx + 2]
        ry = _OPEN_A + _OPEN_B * (box.sum() / contrast)
        ry = float(np.clip(ry, EYE_RY_BASE - 0.4, EYE_RY_BASE + K5 + 0.6))
        out[f"eyelid_{side}"] = np.array([e[0], e[1] - ry], dtype=np.float64)

    # outline bottom mirrors the fitted top across the (rigid) center
    out["outline_bottom"] = np.array(
        [out["outline_top"][0], 2 * CY - out["outline_top"][1]], dtype=np.float64)
    return LandmarkFit(out, conf, gray)


# -- soft (differentiable) fit ------------------------------------------------------

class SoftFitResult:
    """Batch intensities (0..5 scale), identity summaries, and confidences."""

    def __init__(self, intensity, summary, mean_confidence):
        self.intensity = intensity          # Tensor [B, 12]
        self.summary = summary              # Tensor [B, 5]
        self.mean_confidence = mean_confidence  # np array [B]


def soft_fit_batch(pixels, identity_params_batch, temperature=SOFT_TEMPERATURE):
    """Differentiable landmark fit over a batch.

    ``pixels``: Tensor [B, H, W]; windows are anchored at each sample's
    identity baseline (known from the conditioning exemplar), offsets
    inside each window come from a softargmax over the NCC map.
    """
    B = pixels.shape[0]
    dtype = pixels.dtype
    bases = [baseline_landmarks(p) for p in identity_params_batch]
    geoms = [identity_geometry(p) for p in identity_params_batch]

    # background is the conditioning identity's gray: a known constant,
    # not estimated from pixels, so it carries no gradient.  No clamp:
    # NCC is zero-mean, and a clamp would put a kink at every
    # background pixel.
    grays = np.array([g.gray for g in geoms])
    gray_c = Tensor(grays.astype(dtype)[:, None, None])
    ink = T.sub(gray_c, pixels)  # [B, H, W]

    parts = _part_table()

    soft_x, soft_y, confs = {}, {}, []
    for name, (tpls, up, down, left, right) in parts.items():
        th, tw = tpls[0].shape
        mh, mw = up + down + 1, left + right + 1
        # gather per-sample patches (window bounds differ across the batch)
        y0s, x0s = [], []
        for b in range(B):
            y0, y1, x0, x1, _, _ = _window_bounds(bases[b][name], tpls[0], up, down, left, right)
            y0s.append(y0)
            x0s.append(x0)
        ph, pw = mh + th - 1, mw + tw - 1
        bi = np.arange(B)[:, None, None]
        yi = (np.asarray(y0s)[:, None, None] + np.arange(ph)[None, :, None])
        xi = (np.asarray(x0s)[:, None, None] + np.arange(pw)[None, None, :])
        patch = pixels_gather(ink, bi, yi, xi)  # [B, ph, pw]
        patch4 = T.reshape(patch, (B, ph, pw, 1))

        ones = np.ones((th, tw, 1, 1), dtype=dtype)
        ssum = T.conv2d(patch4, Tensor(ones))
        ssq = T.conv2d(T.mul(patch4, patch4), Tensor(ones))
        # no clamp on the variance: the 1e-4 floor dominates the tiny
        # negative rounding residue of flat windows and keeps sqrt smooth
        var = T.sub(ssq, T.mul(ssum, ssum) * (1.0 / (th * tw)))
        wnorm = T.sqrt(T.add(var, Tensor(np.asarray(1e-4, dtype=dtype))))

        maps = []
        for t in tpls:
            t0 = t - t.mean()
            kern = t0[:, :, None, None].astype(dtype)
            num = T.conv2d(patch4, Tensor(kern))  # [B, mh, mw, 1]
            denom = T.add(wnorm * float(np.linalg.norm(t0)), Tensor(np.asarray(_EPS, dtype=dtype)))
            maps.append(T.reshape(T.div(num, denom), (B, mh * mw)))
        flat = maps[0] if len(maps) == 1 else T.concat(maps, axis=1)
        w = T.softmax(flat * (1.0 / temperature), axis=-1)
        gy, gx = np.meshgrid(np.arange(mh, dtype=np.float64), np.arange(mw, dtype=np.float64), indexing="ij")
        gy = np.tile(gy.reshape(-1), len(maps))
        gx = np.tile(gx.reshape(-1), len(maps))
        off_y = T.matmul(w, Tensor(gy.reshape(-1, 1).astype(dtype)))  # [B,1]
        off_x = T.matmul(w, Tensor(gx.reshape(-1, 1).astype(dtype)))
        base_y = np.asarray(y0s, dtype=np.float64) + th // 2 + 0.5
        base_x = np.asarray(x0s, dtype=np.float64) + tw // 2 + 0.5
        soft_y[name] = T.add(off_y, Tensor(base_y[:, None].astype(dtype)))
        soft_x[name] = T.add(off_x, Tensor(base_x[:, None].astype(dtype)))
        confs.append((w.data * flat.data).sum(axis=1))

    # openness boxes anchored at baseline eye centers
    contrast = np.maximum(grays - INK_EYE, 0.05)
    ry_eye = {}
    for side in ("l", "r"):
        y0s = [int(round(b[f"eye_{side}"][1])) - 5 for b in bases]
        x0s = [int(round(b[f"eye_{side}"][0])) - 1 for b in bases]
        bi = np.arange(B)[:, None, None]
        yi = (np.asarray(y0s)[:, None, None] + np.arange(11)[None, :, None])
        xi = (np.asarray(x0s)[:, None, None] + np.arange(3)[None, None, :])
        box = pixels_gather(ink, bi, yi, xi)
        mass = T.mul(T.tsum(T.reshape(box, (B, 33)), axis=1),
                     Tensor((1.0 / contrast).astype(dtype)))
        ry = T.add(mass * float(_OPEN_B), Tensor(np.full(B, _OPEN_A, dtype=dtype)))
        ry_eye[side] = T.reshape(ry, (B, 1))

    intensity = _soft_measure(soft_x, soft_y, ry_eye, bases, dtype)
    summary = _soft_summary(soft_x, soft_y, grays, dtype)
    return SoftFitResult(intensity, summary, np.stack(confs, axis=1).mean(axis=1))


def pixels_gather(ink, bi, yi, xi):
    """Fancy gather as a tape op (scatter-add backward)."""
    return ink[bi, yi, xi]


def _col(base_arr, dtype):
    return Tensor(np.asarray(base_arr, dtype=dtype).reshape(-1, 1))


def _soft_measure(sx, sy, ry_eye, bases, dtype):
    """Triangular AU solve on soft landmarks; returns Tensor [B, 12]."""
    B = len(bases)

    def basecol(name, axis):
        return _col([b[name][axis] for b in bases], dtype)

    def dx(name):
        return T.sub(sx[name], basecol(name, 0))

    def dy(name):
        return T.sub(sy[name], basecol(name, 1))

    half = lambda a, b: T.add(a, b) * 0.5
    s = {}
    s[4] = T.sub(dx("brow_inner_l"), dx("brow_inner_r")) * (1.0 / (2 * K4X))
    s[1] = T.sub(s[4] * K4Y_IN, half(dy("brow_inner_l"), dy("brow_inner_r"))) * (1.0 / K1)
    s[2] = T.sub(s[4] * K4Y_OUT, half(dy("brow_outer_l"), dy("brow_outer_r"))) * (1.0 / K2)
    lid_dy_l = T.sub(T.sub(sy["eye_l"], ry_eye["l"]), _col([b["eyelid_l"][1] for b in bases], dtype))
    lid_dy_r = T.sub(T.sub(sy["eye_r"], ry_eye["r"]), _col([b["eyelid_r"][1] for b in bases], dtype))
    s[5] = half(lid_dy_l, lid_dy_r) * (-1.0 / K5)
    s[6] = half(dy("cheek_l"), dy("cheek_r")) * (-1.0 / K6)
    s[9] = dy("nose") * (-1.0 / K9)
    s[20] = T.sub(dx("mouth_r"), dx("mouth_l")) * (1.0 / (2 * K20))
    s[25] = dy("lip_top") * (-1.0 / K25_TOP)
    s[26] = T.sub(dy("lip_bottom"), s[25] * K25_BOT) * (1.0 / K26_BOT)
    low = half(dy("lip_low_l"), dy("lip_low_r"))
    s[15] = T.sub(T.sub(low, s[25] * K25_LOW), s[26] * K26_LOW) * (1.0 / K15_LOW)
    s[12] = T.sub(s[15] * K15, half(dy("mouth_l"), dy("mouth_r"))) * (1.0 / K12)
    s[17] = T.sub(s[26] * K26_CHIN, dy("chin")) * (1.0 / K17)
    cols = [s[au] for au in (1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26)]
    return T.concat(cols, axis=1) * 5.0


def _soft_summary(sx, sy, grays, dtype):
    spacing = T.sub(sx["eye_r"], sx["eye_l"]) * 0.5
    eye_y = T.add(sy["eye_l"], sy["eye_r"]) * 0.5
    face_rx = T.sub(sx["outline_r"], sx["outline_l"]) * 0.5
    face_ry = T.sub(Tensor(np.full_like(sy["outline_top"].data, CY)), sy["outline_top"])
    cols = [
        T.sub(spacing, Tensor(np.full_like(spacing.data, 8.0))) * (1.0 / 5.0),
        T.sub(eye_y, Tensor(np.full_like(eye_y.data, CY - 14.0))) * (1.0 / 5.0),
        T.sub(face_rx, Tensor(np.full_like(face_rx.data, 20.0))) * (1.0 / 6.0),
        T.sub(face_ry, Tensor(np.full_like(face_ry.data, 24.0))) * (1.0 / 5.0),
        Tensor(((grays - 0.75) / 0.2).astype(dtype).reshape(-1, 1)),
    ]
    return T.concat(cols, axis=1)
