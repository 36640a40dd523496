from .au import AU_IDS, AU_INDEX, AU_NAMES, NUM_AUS, AUVector, random_au_vector
from .geometry import (
    IMAGE_SIZE,
    LANDMARK_NAMES,
    NUM_IDENTITY_PARAMS,
    baseline_landmarks,
    measure_aus,
    measure_aus_continuous,
    sample_identity,
)
from .render import GlyphImage, GlyphSpec, face_mask, oracle_measure, render
from .grammar import (
    AU_DESCRIPTIONS,
    NEUTRAL_SENTENCE,
    Prompt,
    PromptError,
    parse_prompt,
    prompt_from_au,
    tokenize,
)
from .embed import (
    D_EMBED,
    D_IDENTITY,
    au_description_embeddings,
    embed_identity,
    embed_image,
    embed_text,
)
from .fit import LandmarkFit, fit_landmarks, soft_fit_batch
from .io import read_jsonl, read_pgm, write_jsonl, write_pgm, landmark_record

__all__ = [
    "AU_IDS", "AU_INDEX", "AU_NAMES", "NUM_AUS", "AUVector", "random_au_vector",
    "IMAGE_SIZE", "LANDMARK_NAMES", "NUM_IDENTITY_PARAMS",
    "baseline_landmarks", "measure_aus", "measure_aus_continuous", "sample_identity",
    "GlyphImage", "GlyphSpec", "face_mask", "oracle_measure", "render",
    "AU_DESCRIPTIONS", "NEUTRAL_SENTENCE", "Prompt", "PromptError",
    "parse_prompt", "prompt_from_au", "tokenize",
    "D_EMBED", "D_IDENTITY", "au_description_embeddings",
    "embed_identity", "embed_image", "embed_text",
    "LandmarkFit", "fit_landmarks", "soft_fit_batch",
    "read_jsonl", "read_pgm", "write_jsonl", "write_pgm", "landmark_record",
]
