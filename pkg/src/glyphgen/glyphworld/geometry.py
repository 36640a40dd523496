"""Identity parameters, baseline landmarks, and the AU deformation table.

Every landmark displacement is linear in intensity/5 with per-AU max
offsets pinned below.  The solve order in ``measure_aus`` is triangular:
each action unit is recovered from one measurement after substituting
the already-recovered integer levels, so recovery from exact landmarks
is exact for every label vector, including antagonist pairs (12/15,
25/26) that share landmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .au import AU_INDEX, AUVector, NUM_AUS

IMAGE_SIZE = 64
CX, CY = 32.0, 34.0

LANDMARK_NAMES = (
    "eye_l", "eye_r", "eyelid_l", "eyelid_r",
    "brow_inner_l", "brow_inner_r", "brow_outer_l", "brow_outer_r",
    "cheek_l", "cheek_r", "nose",
    "mouth_l", "mouth_r", "lip_top", "lip_bottom", "lip_low_l", "lip_low_r",
    "chin", "outline_l", "outline_r", "outline_top", "outline_bottom",
)

# per-AU max displacements in pixels (at intensity 5)
K1 = 3.0          # AU1: inner brows up
K2 = 3.0          # AU2: outer brows up
K4Y_IN = 2.5      # AU4: inner brows down
K4Y_OUT = 1.5     # AU4: outer brows down
K4X = 2.2         # AU4: inner brows pulled toward midline
K5 = 2.2          # AU5: eye opening gain
K6 = 3.0          # AU6: cheek arcs up
K9 = 2.5          # AU9: nose up
K12 = 4.0         # AU12: mouth corners up
K15 = 3.0         # AU15: mouth corners down
K15_LOW = 3.5     # AU15: lower-lip quarter points down
K17 = 3.0         # AU17: chin up
K20 = 4.0         # AU20: mouth corners outward
K25_TOP = 3.0     # AU25: upper lip up
K25_BOT = 3.0     # AU25: lower lip down
K25_LOW = 2.1     # AU25: lower-lip quarter points down
K26_BOT = 5.0     # AU26: lower lip down (jaw)
K26_LOW = 4.0     # AU26: quarter points down
K26_CHIN = 4.0    # AU26: chin down

EYE_RX = 2.2
EYE_RY_BASE = 1.6
ROUND_TOL = 0.3   # fraction of one intensity level accepted before warning

NUM_IDENTITY_PARAMS = 8


@dataclass
class IdentityGeometry:
    face_rx: float
    face_ry: float
    eye_dx: float
    eye_y: float
    brow_w: float
    mouth_hw: float
    mouth_y: float
    gray: float


def identity_geometry(params):
    """Map the 8 identity parameters in [0,1] to pixel geometry."""
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (NUM_IDENTITY_PARAMS,):
        raise ValueError(f"identity params must have shape ({NUM_IDENTITY_PARAMS},), got {p.shape}")
    if (p < 0).any() or (p > 1).any():
        raise ValueError("identity params must lie in [0,1]")
    return IdentityGeometry(
        face_rx=20.0 + 6.0 * p[0],
        face_ry=24.0 + 5.0 * p[1],
        eye_dx=8.0 + 5.0 * p[2],
        eye_y=CY - 14.0 + 5.0 * p[3],
        brow_w=1.0 + 1.5 * p[4],
        mouth_hw=7.0 + 5.0 * p[5],
        mouth_y=CY + 7.0 + 4.0 * p[6],
        gray=0.75 + 0.2 * p[7],
    )


def baseline_landmarks(params):
    g = identity_geometry(params)
    brow_y = g.eye_y - 6.5
    lm = {
        "eye_l": (CX - g.eye_dx, g.eye_y),
        "eye_r": (CX + g.eye_dx, g.eye_y),
        "eyelid_l": (CX - g.eye_dx, g.eye_y - EYE_RY_BASE),
        "eyelid_r": (CX + g.eye_dx, g.eye_y - EYE_RY_BASE),
        "brow_inner_l": (CX - g.eye_dx + 3.4, brow_y),
        "brow_inner_r": (CX + g.eye_dx - 3.4, brow_y),
        "brow_outer_l": (CX - g.eye_dx - 3.4, brow_y),
        "brow_outer_r": (CX + g.eye_dx + 3.4, brow_y),
        "cheek_l": (CX - g.eye_dx - 2.5, (g.eye_y + g.mouth_y) / 2 + 1.0),
        "cheek_r": (CX + g.eye_dx + 2.5, (g.eye_y + g.mouth_y) / 2 + 1.0),
        "nose": (CX, CY + 1.0),
        "mouth_l": (CX - g.mouth_hw, g.mouth_y),
        "mouth_r": (CX + g.mouth_hw, g.mouth_y),
        "lip_top": (CX, g.mouth_y),
        "lip_bottom": (CX, g.mouth_y),
        "lip_low_l": (CX - 0.55 * g.mouth_hw, g.mouth_y),
        "lip_low_r": (CX + 0.55 * g.mouth_hw, g.mouth_y),
        "chin": (CX, g.mouth_y + 8.0),
        "outline_l": (CX - g.face_rx, CY),
        "outline_r": (CX + g.face_rx, CY),
        "outline_top": (CX, CY - g.face_ry),
        "outline_bottom": (CX, CY + g.face_ry),
    }
    return {k: np.array(v, dtype=np.float64) for k, v in lm.items()}


def apply_aus(base, au: AUVector):
    """Deform baseline landmarks by the AU table (strictly monotone per AU)."""
    s = au.intensity.astype(np.float64) / 5.0
    lm = {k: v.copy() for k, v in base.items()}
    s1, s2, s4, s5, s6, s9, s12, s15, s17, s20, s25, s26 = (
        s[AU_INDEX[a]] for a in (1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26))

    for side, sign in (("l", +1.0), ("r", -1.0)):
        lm[f"brow_inner_{side}"][1] += -K1 * s1 + K4Y_IN * s4
        lm[f"brow_inner_{side}"][0] += sign * K4X * s4
        lm[f"brow_outer_{side}"][1] += -K2 * s2 + K4Y_OUT * s4
        lm[f"eyelid_{side}"][1] += -K5 * s5
        lm[f"cheek_{side}"][1] += -K6 * s6
        lm[f"mouth_{side}"][1] += -K12 * s12 + K15 * s15
        lm[f"mouth_{side}"][0] += -sign * K20 * s20
        lm[f"lip_low_{side}"][1] += K15_LOW * s15 + K25_LOW * s25 + K26_LOW * s26
    lm["nose"][1] += -K9 * s9
    lm["lip_top"][1] += -K25_TOP * s25
    lm["lip_bottom"][1] += K25_BOT * s25 + K26_BOT * s26
    lm["chin"][1] += -K17 * s17 + K26_CHIN * s26
    return lm


def landmark_deltas(landmarks, base):
    return {k: landmarks[k] - base[k] for k in base}


def measure_aus_continuous(landmarks, base):
    """Solve the deformation table for real-valued intensities (0..5 scale).

    Works on plain floats; the autograd twin lives in fit.py.  Returns
    the 12 intensities before any rounding.
    """
    d = landmark_deltas(landmarks, base)
    s = np.zeros(NUM_AUS)

    def put(au, val):
        s[AU_INDEX[au]] = val

    s4 = ((d["brow_inner_l"][0]) + (-d["brow_inner_r"][0])) / (2 * K4X)
    put(4, s4)
    dy_in = (d["brow_inner_l"][1] + d["brow_inner_r"][1]) / 2
    put(1, (K4Y_IN * s4 - dy_in) / K1)
    dy_out = (d["brow_outer_l"][1] + d["brow_outer_r"][1]) / 2
    put(2, (K4Y_OUT * s4 - dy_out) / K2)
    put(5, -(d["eyelid_l"][1] + d["eyelid_r"][1]) / (2 * K5))
    put(6, -(d["cheek_l"][1] + d["cheek_r"][1]) / (2 * K6))
    put(9, -d["nose"][1] / K9)
    put(20, (d["mouth_r"][0] - d["mouth_l"][0]) / (2 * K20))
    s25 = -d["lip_top"][1] / K25_TOP
    put(25, s25)
    s26 = (d["lip_bottom"][1] - K25_BOT * s25) / K26_BOT
    put(26, s26)
    dy_low = (d["lip_low_l"][1] + d["lip_low_r"][1]) / 2
    s15 = (dy_low - K25_LOW * s25 - K26_LOW * s26) / K15_LOW
    put(15, s15)
    dy_corner = (d["mouth_l"][1] + d["mouth_r"][1]) / 2
    put(12, (K15 * s15 - dy_corner) / K12)
    dy_chin = d["chin"][1]
    put(17, (K26_CHIN * s26 - dy_chin) / K17)
    return s * 5.0


def measure_aus(landmarks, base):
    """Recover the integer AUVector; triangular with integer re-substitution.

    Out-of-table deformations clamp to the grid and raise the warning
    flag instead of failing.
    """
    d = landmark_deltas(landmarks, base)
    levels = np.zeros(NUM_AUS, dtype=np.int8)
    warned = False

    def snap(raw):
        nonlocal warned
        lvl = int(round(raw * 5))
        if abs(raw * 5 - lvl) > ROUND_TOL or lvl < 0 or lvl > 5:
            warned = True
        return np.clip(lvl, 0, 5)

    s4 = snap((d["brow_inner_l"][0] - d["brow_inner_r"][0]) / (2 * K4X))
    dy_in = (d["brow_inner_l"][1] + d["brow_inner_r"][1]) / 2
    s1 = snap((K4Y_IN * s4 / 5 - dy_in) / K1)
    dy_out = (d["brow_outer_l"][1] + d["brow_outer_r"][1]) / 2
    s2 = snap((K4Y_OUT * s4 / 5 - dy_out) / K2)
    s5 = snap(-(d["eyelid_l"][1] + d["eyelid_r"][1]) / (2 * K5))
    s6 = snap(-(d["cheek_l"][1] + d["cheek_r"][1]) / (2 * K6))
    s9 = snap(-d["nose"][1] / K9)
    s20 = snap((d["mouth_r"][0] - d["mouth_l"][0]) / (2 * K20))
    s25 = snap(-d["lip_top"][1] / K25_TOP)
    s26 = snap((d["lip_bottom"][1] - K25_BOT * s25 / 5) / K26_BOT)
    dy_low = (d["lip_low_l"][1] + d["lip_low_r"][1]) / 2
    s15 = snap((dy_low - K25_LOW * s25 / 5 - K26_LOW * s26 / 5) / K15_LOW)
    dy_corner = (d["mouth_l"][1] + d["mouth_r"][1]) / 2
    s12 = snap((K15 * s15 / 5 - dy_corner) / K12)
    s17 = snap((K26_CHIN * s26 / 5 - d["chin"][1]) / K17)

    for au, lvl in ((1, s1), (2, s2), (4, s4), (5, s5), (6, s6), (9, s9),
                    (12, s12), (15, s15), (17, s17), (20, s20), (25, s25), (26, s26)):
        levels[AU_INDEX[au]] = lvl
    return AUVector.from_intensity(levels), warned


def sample_identity(seed):
    """Uniform identity parameters, deterministic in the seed."""
    from ..numerics.rng import rng_for

    return rng_for("identity", seed).uniform(0.0, 1.0, size=NUM_IDENTITY_PARAMS)
