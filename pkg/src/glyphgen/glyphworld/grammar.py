"""Closed, invertible prompt grammar for AU label vectors.

Prompts enumerate active AUs in canonical order, each with the adverb
of its level, inside one of a few synonymous sentence frames.  Parsing
recovers the exact label vector or pinpoints the offending token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.rng import rng_for
from .au import AU_IDS, AU_INDEX, AU_NAMES, AUVector, NUM_AUS

ADVERBS = {1: "slightly", 2: "mildly", 3: "moderately", 4: "strongly", 5: "intensely"}
ADVERB_LEVEL = {v: k for k, v in ADVERBS.items()}

TEMPLATES = (
    ("a face showing ", "."),
    ("the face displays ", "."),
    ("a portrait with ", "."),
    ("this face presents ", "."),
)

NEUTRAL_SENTENCE = "a neutral face with no active action units."

PHRASE_TO_AU = {name: au for au, name in AU_NAMES.items()}

# one-sentence lexicon descriptions (feed the per-AU text anchors)
AU_DESCRIPTIONS = {
    1: "the inner brow raiser lifts the inner corners of the brows.",
    2: "the outer brow raiser lifts the outer corners of the brows.",
    4: "the brow lowerer pulls the brows down and together.",
    5: "the upper lid raiser widens the eye opening.",
    6: "the cheek raiser pushes the cheek lines upward.",
    9: "the nose wrinkler lifts and creases the nose.",
    12: "the lip corner puller raises the mouth corners into a smile.",
    15: "the lip corner depressor pulls the mouth corners downward.",
    17: "the chin raiser pushes the chin line upward.",
    20: "the lip stretcher widens the mouth sideways.",
    25: "lips part opens a gap between the lips.",
    26: "jaw drop lowers the jaw and opens the mouth wide.",
}


class PromptError(ValueError):
    """Out-of-grammar text; message carries the position."""


@dataclass
class Prompt:
    text: str
    au_source: AUVector


def prompt_from_au(au: AUVector, seed=0) -> Prompt:
    """Render a label vector as text; the seed picks the sentence frame."""
    active = [i for i in range(NUM_AUS) if au.intensity[i] > 0]
    if not active:
        return Prompt(text=NEUTRAL_SENTENCE, au_source=au)
    items = [
        f"the {AU_NAMES[AU_IDS[i]]} {ADVERBS[int(au.intensity[i])]} active"
        for i in active
    ]
    rng = rng_for("prompt", seed)
    prefix, suffix = TEMPLATES[int(rng.integers(0, len(TEMPLATES)))]
    return Prompt(text=prefix + " and ".join(items) + suffix, au_source=au)


def parse_prompt(text: str) -> AUVector:
    """Exact inverse of prompt_from_au."""
    if text == NEUTRAL_SENTENCE:
        return AUVector.zeros()
    body = None
    for prefix, suffix in TEMPLATES:
        if text.startswith(prefix) and text.endswith(suffix):
            body = text[len(prefix):len(text) - len(suffix)]
            break
    if body is None:
        raise PromptError(f"unrecognized sentence frame at position 0: {text[:24]!r}")
    intensity = np.zeros(NUM_AUS, dtype=np.int8)
    for idx, item in enumerate(body.split(" and ")):
        words = item.split(" ")
        if len(words) < 4 or words[0] != "the" or words[-1] != "active":
            raise PromptError(f"malformed item {idx}: {item!r}")
        adverb = words[-2]
        if adverb not in ADVERB_LEVEL:
            raise PromptError(f"unknown intensity adverb in item {idx}: {adverb!r}")
        phrase = " ".join(words[1:-2])
        if phrase not in PHRASE_TO_AU:
            raise PromptError(f"unknown action unit phrase in item {idx}: {phrase!r}")
        au_id = PHRASE_TO_AU[phrase]
        if intensity[AU_INDEX[au_id]]:
            raise PromptError(f"duplicate action unit in item {idx}: {phrase!r}")
        intensity[AU_INDEX[au_id]] = ADVERB_LEVEL[adverb]
    return AUVector.from_intensity(intensity)


def tokenize(text: str):
    return text.replace(".", " .").replace(",", " ,").split()
