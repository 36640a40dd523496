import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphgen.glyphworld import (
    AU_INDEX,
    AUVector,
    GlyphSpec,
    NEUTRAL_SENTENCE,
    PromptError,
    au_description_embeddings,
    embed_identity,
    embed_image,
    embed_text,
    parse_prompt,
    prompt_from_au,
    random_au_vector,
    render,
    sample_identity,
)
from glyphgen.numerics.rng import rng_for


def vec(**levels):
    v = np.zeros(12, dtype=np.int8)
    for au, lvl in levels.items():
        v[AU_INDEX[int(au[2:])]] = lvl
    return AUVector.from_intensity(v)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestGrammar:
    def test_neutral_sentence_fixed(self):
        for seed in range(5):
            assert prompt_from_au(AUVector.zeros(), seed).text == NEUTRAL_SENTENCE

    def test_tokens_carry_adverb_and_phrase(self):
        p = prompt_from_au(vec(au12=5, au6=2), seed=3)
        assert "intensely" in p.text and "lip corner puller" in p.text
        assert "mildly" in p.text and "cheek raiser" in p.text

    def test_round_trip_small(self):
        v = vec(au1=1, au25=4)
        for seed in range(8):
            assert parse_prompt(prompt_from_au(v, seed).text) == v

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=12, max_size=12), st.integers(0, 10**6))
    def test_round_trip_property(self, levels, seed):
        v = AUVector.from_intensity(levels)
        assert parse_prompt(prompt_from_au(v, seed).text) == v

    def test_round_trip_bulk_10000(self):
        rng = rng_for("grammar-bulk")
        for i in range(10000):
            v = AUVector.from_intensity(rng.integers(0, 6, size=12))
            assert parse_prompt(prompt_from_au(v, int(rng.integers(0, 2**40))).text) == v

    def test_malformed_token_errors(self):
        with pytest.raises(PromptError):
            parse_prompt("a face showing the lip corner puller extremely active.")
        with pytest.raises(PromptError):
            parse_prompt("lorem ipsum.")
        with pytest.raises(PromptError, match="item 1"):
            parse_prompt("a face showing the cheek raiser mildly active and the slightly active.")

    def test_neutral_parses_to_zero(self):
        assert parse_prompt(NEUTRAL_SENTENCE) == AUVector.zeros()


class TestEmbedText:
    def test_deterministic(self):
        t = prompt_from_au(vec(au4=2), 1).text
        p1, tok1 = embed_text(t)
        p2, tok2 = embed_text(t)
        assert np.array_equal(p1, p2) and np.array_equal(tok1, tok2)

    def test_token_count(self):
        t = prompt_from_au(vec(au4=2, au9=1), 1).text
        _, toks = embed_text(t)
        assert toks.shape[0] == len(t.replace(".", " .").split())

    def test_disjoint_prompts_less_similar_than_shared(self):
        a = prompt_from_au(vec(au1=4, au2=3), 0).text
        b = prompt_from_au(vec(au1=4, au2=3), 1).text  # same AUs, other frame
        c = prompt_from_au(vec(au15=4, au20=3), 0).text  # disjoint
        pa, _ = embed_text(a)
        pb, _ = embed_text(b)
        pc, _ = embed_text(c)
        assert cosine(pa, pb) > cosine(pa, pc)


class TestEmbedImage:
    def test_matched_pair_beats_disjoint(self):
        spec = GlyphSpec(sample_identity(4), vec(au12=4, au6=3))
        img = render(spec)
        e_img = embed_image(img.pixels, img.landmarks, spec.identity_params)
        t_match, _ = embed_text(prompt_from_au(spec.au, 0).text)
        t_disj, _ = embed_text(prompt_from_au(vec(au1=4, au2=3), 0).text)
        assert cosine(e_img, t_match) > cosine(e_img, t_disj)

    def test_identity_change_bounded_by_identity_term(self):
        au = vec(au4=2)
        s1, s2 = GlyphSpec(sample_identity(1), au), GlyphSpec(sample_identity(2), au)
        i1, i2 = render(s1), render(s2)
        e1 = embed_image(i1.pixels, i1.landmarks, s1.identity_params)
        e2 = embed_image(i2.pixels, i2.landmarks, s2.identity_params)
        from glyphgen.glyphworld.embed import _Q_ID, identity_summary_from_landmarks, image_gray_level

        su1 = identity_summary_from_landmarks(i1.landmarks, image_gray_level(i1.pixels))
        su2 = identity_summary_from_landmarks(i2.landmarks, image_gray_level(i2.pixels))
        bound = np.linalg.norm(_Q_ID @ (su1 - su2)) + 1e-9
        assert np.linalg.norm(e1 - e2) <= bound

    def test_neutral_image_prompt_maximal_among_fixtures(self):
        spec = GlyphSpec(sample_identity(9), AUVector.zeros())
        img = render(spec)
        e_img = embed_image(img.pixels, img.landmarks, spec.identity_params)
        e_neutral, _ = embed_text(NEUTRAL_SENTENCE)
        others = [vec(au1=3), vec(au12=5), vec(au25=2, au26=2), vec(au4=1, au15=1)]
        best_other = max(cosine(e_img, embed_text(prompt_from_au(v, 0).text)[0]) for v in others)
        assert cosine(e_img, e_neutral) > best_other


class TestEmbedIdentity:
    def test_identical_across_aus(self):
        p = sample_identity(12)
        a = render(GlyphSpec(p, AUVector.zeros()))
        b = render(GlyphSpec(p, vec(au12=5, au4=3, au25=4)))
        ea = embed_identity(a.pixels, a.landmarks)
        eb = embed_identity(b.pixels, b.landmarks)
        assert np.array_equal(ea, eb)

    def test_distinct_identities_distinct(self):
        a = render(GlyphSpec(sample_identity(0), AUVector.zeros()))
        b = render(GlyphSpec(sample_identity(1), AUVector.zeros()))
        assert not np.allclose(embed_identity(a.pixels, a.landmarks),
                               embed_identity(b.pixels, b.landmarks))

    def test_dimension(self):
        img = render(GlyphSpec(sample_identity(3), AUVector.zeros()))
        assert embed_identity(img.pixels, img.landmarks).shape == (16,)


class TestDescriptions:
    def test_shape_and_determinism(self):
        e1, e2 = au_description_embeddings(), au_description_embeddings()
        assert e1.shape == (12, 32)
        assert np.array_equal(e1, e2)

    def test_rows_pairwise_distinct(self):
        e = au_description_embeddings()
        for i in range(12):
            for j in range(i + 1, 12):
                assert not np.allclose(e[i], e[j])
