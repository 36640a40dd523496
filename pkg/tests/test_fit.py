import numpy as np

from glyphgen.glyphworld import (
    GlyphSpec,
    oracle_measure,
    random_au_vector,
    render,
    sample_identity,
)
from glyphgen.glyphworld.fit import fit_landmarks, soft_fit_batch
from glyphgen.numerics import finite_difference_check
from glyphgen.numerics.rng import rng_for
from glyphgen.numerics.tensor import Tensor


def make_specs(n, tag="fit-test"):
    rng = rng_for(tag)
    return [GlyphSpec(sample_identity(i), random_au_vector(rng)) for i in range(n)]


class TestHardFit:
    def test_landmark_accuracy_on_renders(self):
        errs = []
        for spec in make_specs(40):
            img = render(spec)
            fit = fit_landmarks(img.pixels, spec.identity_params)
            for k, v in fit.landmarks.items():
                errs.append(np.linalg.norm(v - img.landmarks[k]))
        errs = np.array(errs)
        assert errs.mean() < 0.8
        assert np.percentile(errs, 90) < 2.0

    def test_oracle_from_fit_mostly_agrees(self):
        agree = []
        for spec in make_specs(60, "fit-occ"):
            img = render(spec)
            fit = fit_landmarks(img.pixels, spec.identity_params)
            au, _ = oracle_measure(fit.landmarks, spec.identity_params)
            agree.append((au.occurrence == spec.au.occurrence).mean())
        assert np.mean(agree) > 0.9

    def test_confidence_degrades_with_noise(self):
        spec = make_specs(1)[0]
        img = render(spec)
        clean = fit_landmarks(img.pixels, spec.identity_params)
        noisy_pix = np.clip(
            img.pixels + rng_for("fit-noise").normal(0, 0.35, img.pixels.shape), 0, 1)
        noisy = fit_landmarks(noisy_pix, spec.identity_params)
        assert noisy.confidence < clean.confidence


class TestSoftFit:
    def test_matches_truth_on_renders(self):
        specs = make_specs(8, "soft")
        pix = Tensor(np.stack([render(s).pixels for s in specs]))
        res = soft_fit_batch(pix, [s.identity_params for s in specs])
        true = np.stack([s.au.intensity for s in specs]).astype(float)
        assert np.median(np.abs(res.intensity.data - true)) < 0.5

    def test_gradients_flow_and_match_fd(self):
        specs = make_specs(2, "soft-fd")
        pix = Tensor(np.stack([render(s).pixels for s in specs]))
        params = [s.identity_params for s in specs]

        def fn(xs):
            r = soft_fit_batch(xs["pix"], params)
            return [r.intensity, r.summary]

        assert finite_difference_check(fn, {"pix": pix}, eps=1e-6) <= 1e-4
