"""Deterministic stand-in embedders for the text / image / identity spaces.

The text and image embedders share one fixed projection of the AU
intensity vector, which gives the alignment score and the directional
loss a well-defined geometry: matched image/prompt pairs align, AU-
disjoint pairs do not.  The identity embedder projects only AU-invariant
landmark measurements, so it is constant across expressions of one
identity by construction.
"""

from __future__ import annotations

import numpy as np

from ..numerics.rng import rng_for
from .au import AU_IDS, NUM_AUS
from .geometry import CY, baseline_landmarks, measure_aus_continuous
from .grammar import AU_DESCRIPTIONS, parse_prompt, tokenize

D_EMBED = 32
D_IDENTITY = 16
N_SUMMARY = 5  # eye spacing, eye height, face width, face height, gray
IDENTITY_TERM_SCALE = 0.5


def _unit_columns(rng, rows, cols):
    m = rng.normal(size=(rows, cols))
    return m / np.linalg.norm(m, axis=0, keepdims=True)


_P_AU = _unit_columns(rng_for("embed", "au-axes"), D_EMBED, NUM_AUS)
_Q_ID = _unit_columns(rng_for("embed", "image-identity"), D_EMBED, N_SUMMARY) * IDENTITY_TERM_SCALE
_R_ID = _unit_columns(rng_for("embed", "identity"), D_IDENTITY, N_SUMMARY)


def token_embedding(word: str) -> np.ndarray:
    return rng_for("token", word).normal(0.0, 1.0 / np.sqrt(D_EMBED), size=D_EMBED)


def embed_text(text: str):
    """(pooled [D_EMBED], tokens [L, D_EMBED]); parse errors propagate."""
    au = parse_prompt(text)
    words = tokenize(text)
    tokens = np.stack([token_embedding(w) for w in words])
    pooled = tokens.mean(axis=0) + _P_AU @ (au.intensity.astype(np.float64) / 5.0)
    return pooled, tokens


def identity_summary_from_landmarks(landmarks, gray):
    """AU-invariant geometry summary, each component scaled to ~[0,1]."""
    eye_l, eye_r = landmarks["eye_l"], landmarks["eye_r"]
    out_l, out_r = landmarks["outline_l"], landmarks["outline_r"]
    out_t, out_b = landmarks["outline_top"], landmarks["outline_bottom"]
    spacing = (eye_r[0] - eye_l[0]) / 2.0
    eye_y = (eye_l[1] + eye_r[1]) / 2.0
    return np.array([
        (spacing - 8.0) / 5.0,
        (eye_y - (CY - 14.0)) / 5.0,
        ((out_r[0] - out_l[0]) / 2.0 - 20.0) / 6.0,
        ((out_b[1] - out_t[1]) / 2.0 - 24.0) / 5.0,
        (gray - 0.75) / 0.2,
    ])


def image_gray_level(pixels):
    """Background level from the 3x3 image corners (outside the face)."""
    p = np.asarray(pixels)
    corners = np.concatenate([
        p[:3, :3].ravel(), p[:3, -3:].ravel(), p[-3:, :3].ravel(), p[-3:, -3:].ravel(),
    ])
    return float(corners.mean())


def embed_image_from_measurements(intensity01, summary):
    """Shared-space image embedding from AU scale values and identity summary."""
    return _P_AU @ np.asarray(intensity01, dtype=np.float64) + _Q_ID @ np.asarray(summary, dtype=np.float64)


def embed_image(pixels, landmarks, identity_params):
    """Embed a glyph with known (exact or fitted) landmarks."""
    base = baseline_landmarks(identity_params)
    intensity = measure_aus_continuous(landmarks, base)
    summary = identity_summary_from_landmarks(landmarks, image_gray_level(pixels))
    return embed_image_from_measurements(np.clip(intensity, 0.0, 5.0) / 5.0, summary)


def embed_identity_from_summary(summary):
    return _R_ID @ np.asarray(summary, dtype=np.float64)


def embed_identity(pixels, landmarks):
    """Identity embedding from AU-invariant landmarks; expression-blind."""
    return embed_identity_from_summary(
        identity_summary_from_landmarks(landmarks, image_gray_level(pixels)))


def au_description_embeddings():
    """[12, D_EMBED]: pooled lexicon-description embedding per action unit.

    Each row is the mean token embedding of the AU's one-sentence
    description plus that AU's unit semantic axis, keeping rows distinct
    and aligned with the prompt geometry.
    """
    rows = []
    for i, au in enumerate(AU_IDS):
        words = tokenize(AU_DESCRIPTIONS[au])
        tokens = np.stack([token_embedding(w) for w in words])
        rows.append(tokens.mean(axis=0) + _P_AU[:, i])
    return np.stack(rows)


def au_projection_matrix():
    """The fixed AU semantic axes shared by the text/image embedders."""
    return _P_AU.copy()


def identity_projection_matrices():
    return _Q_ID.copy(), _R_ID.copy()
