"""Action-unit label vectors over the 12 DISFA action units."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# fixed index order
AU_IDS = (1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26)
AU_INDEX = {au: i for i, au in enumerate(AU_IDS)}
NUM_AUS = len(AU_IDS)

AU_NAMES = {
    1: "inner brow raiser",
    2: "outer brow raiser",
    4: "brow lowerer",
    5: "upper lid raiser",
    6: "cheek raiser",
    9: "nose wrinkler",
    12: "lip corner puller",
    15: "lip corner depressor",
    17: "chin raiser",
    20: "lip stretcher",
    25: "lips part",
    26: "jaw drop",
}


@dataclass
class AUVector:
    """12 occurrence bits plus 12 intensities in {0..5}.

    Intensities clamp into range; occurrence is kept consistent with
    intensity > 0 when built from a single source.
    """

    occurrence: np.ndarray = field(default_factory=lambda: np.zeros(NUM_AUS, dtype=np.int8))
    intensity: np.ndarray = field(default_factory=lambda: np.zeros(NUM_AUS, dtype=np.int8))

    def __post_init__(self):
        self.occurrence = np.asarray(self.occurrence, dtype=np.int8).reshape(NUM_AUS)
        self.intensity = np.clip(np.asarray(self.intensity), 0, 5).astype(np.int8).reshape(NUM_AUS)

    @classmethod
    def from_intensity(cls, intensity):
        intensity = np.clip(np.asarray(intensity), 0, 5).astype(np.int8)
        return cls(occurrence=(intensity > 0).astype(np.int8), intensity=intensity)

    @classmethod
    def zeros(cls):
        return cls()

    def active_set(self):
        return {AU_IDS[i] for i in range(NUM_AUS) if self.occurrence[i]}

    def __eq__(self, other):
        return (
            isinstance(other, AUVector)
            and np.array_equal(self.occurrence, other.occurrence)
            and np.array_equal(self.intensity, other.intensity)
        )

    def __repr__(self):
        on = [f"AU{AU_IDS[i]}={self.intensity[i]}" for i in range(NUM_AUS) if self.occurrence[i]]
        return f"AUVector({', '.join(on) or 'neutral'})"


def random_au_vector(rng, max_active=4, p_stop=0.5):
    """Sparse activation prior: truncated-geometric count, uniform levels."""
    k = 0
    while k < max_active and rng.random() > p_stop:
        k += 1
    chosen = rng.choice(NUM_AUS, size=k, replace=False) if k else []
    intensity = np.zeros(NUM_AUS, dtype=np.int8)
    for i in chosen:
        intensity[i] = rng.integers(1, 6)
    return AUVector.from_intensity(intensity)
