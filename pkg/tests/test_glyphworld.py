import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphgen.glyphworld import (
    AU_IDS,
    AU_INDEX,
    AUVector,
    GlyphSpec,
    baseline_landmarks,
    face_mask,
    oracle_measure,
    random_au_vector,
    render,
    sample_identity,
)
from glyphgen.glyphworld.geometry import apply_aus
from glyphgen.numerics.rng import rng_for


def spec_for(intensities, ident_seed=0, **kw):
    vec = np.zeros(12, dtype=np.int8)
    for au, lvl in intensities.items():
        vec[AU_INDEX[au]] = lvl
    return GlyphSpec(sample_identity(ident_seed), AUVector.from_intensity(vec), **kw)


class TestIdentity:
    def test_same_seed_identical(self):
        assert np.array_equal(sample_identity(7), sample_identity(7))

    def test_different_seeds_differ(self):
        assert not np.array_equal(sample_identity(0), sample_identity(1))

    def test_bounds(self):
        for s in range(20):
            p = sample_identity(s)
            assert np.all(p >= 0) and np.all(p <= 1)


class TestRender:
    def test_neutral_landmarks_at_baseline(self):
        spec = spec_for({})
        img = render(spec)
        base = baseline_landmarks(spec.identity_params)
        for k, v in base.items():
            assert np.allclose(img.landmarks[k], v)

    def test_deterministic(self):
        spec = spec_for({12: 3, 4: 2}, ident_seed=5)
        a, b = render(spec), render(spec)
        assert a.pixels.tobytes() == b.pixels.tobytes()

    def test_au12_moves_mouth_corner_up(self):
        lo = render(spec_for({12: 0}))
        hi = render(spec_for({12: 5}))
        # image y decreases toward the top
        assert hi.landmarks["mouth_l"][1] < lo.landmarks["mouth_l"][1]

    def test_closed_mouth_has_zero_lip_gap(self):
        img = render(spec_for({}))
        gap = img.landmarks["lip_bottom"][1] - img.landmarks["lip_top"][1]
        assert gap == 0.0

    def test_pixels_in_range_and_landmarks_in_frame(self):
        rng = rng_for("render-range")
        for i in range(25):
            spec = GlyphSpec(sample_identity(i), random_au_vector(rng))
            img = render(spec)
            assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
            for v in img.landmarks.values():
                assert 0 <= v[0] < 64 and 0 <= v[1] < 64

    def test_monotone_displacement_per_au(self):
        targets = {
            1: ("brow_inner_l", 1, -1), 2: ("brow_outer_l", 1, -1),
            4: ("brow_inner_l", 0, +1), 5: ("eyelid_l", 1, -1),
            6: ("cheek_l", 1, -1), 9: ("nose", 1, -1),
            12: ("mouth_l", 1, -1), 15: ("mouth_l", 1, +1),
            17: ("chin", 1, -1), 20: ("mouth_r", 0, +1),
            25: ("lip_bottom", 1, +1), 26: ("lip_bottom", 1, +1),
        }
        for au, (lmk, axis, sign) in targets.items():
            prev = None
            for lvl in range(6):
                img = render(spec_for({au: lvl}, ident_seed=3))
                val = sign * img.landmarks[lmk][axis]
                if prev is not None:
                    assert val > prev, f"AU{au} not strictly monotone at level {lvl}"
                prev = val


class TestOracle:
    def test_neutral_is_all_zero(self):
        spec = spec_for({})
        au, warned = oracle_measure(render(spec).landmarks, spec.identity_params)
        assert au == AUVector.zeros() and not warned

    def test_single_au_recovered(self):
        spec = spec_for({4: 3}, ident_seed=11)
        au, warned = oracle_measure(render(spec).landmarks, spec.identity_params)
        want = np.zeros(12, dtype=np.int8)
        want[AU_INDEX[4]] = 3
        assert np.array_equal(au.intensity, want) and not warned

    def test_inverts_render_on_random_sweep(self):
        rng = rng_for("oracle-sweep")
        for i in range(1000):
            spec = GlyphSpec(sample_identity(i), random_au_vector(rng))
            au, warned = oracle_measure(render(spec).landmarks, spec.identity_params)
            assert not warned
            assert au == spec.au, f"sweep {i}: {au} != {spec.au}"

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=12, max_size=12), st.integers(0, 500))
    def test_inverts_dense_vectors(self, levels, ident_seed):
        # antagonist pairs active together still recover exactly
        spec = GlyphSpec(sample_identity(ident_seed), AUVector.from_intensity(levels))
        au, _ = oracle_measure(apply_aus(baseline_landmarks(spec.identity_params), spec.au),
                               spec.identity_params)
        assert au == spec.au


class TestMask:
    def test_mask_inside_outline(self):
        p = sample_identity(2)
        m = face_mask(p)
        assert m[32, 32] == 1.0
        assert m[0, 0] == 0.0 and m[63, 63] == 0.0
