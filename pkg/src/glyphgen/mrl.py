"""Multi-modal representation learning: the conditioned downsampling path.

Text tokens, the identity embedding, and the (always detached) AU
co-activation rows form one cross-attention context; the downsampling
UNet path consumes the noisy latent plus the downsampled face mask and
yields the multi-scale joint latent pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .glyphworld import embed as gw_embed
from .glyphworld.grammar import parse_prompt, tokenize
from .numerics import tensor as T
from .numerics.layers import Conv2d, Linear, LayerNorm, Module, ModuleList, MultiHeadAttention, timestep_embedding
from .numerics.tensor import Tensor


@dataclass
class ConditionBundle:
    """Per-batch conditioning state for one denoising step.

    ``c_au`` is stored detached: gradients may never flow into the
    previous step through the co-activation rows.
    """

    tokens: Tensor          # [B, L, d_e] padded token embeddings
    token_bias: np.ndarray  # [B, 1, 1, L] additive attention bias (0 / -inf)
    pooled: np.ndarray      # [B, d_e]
    c_id: Tensor            # [B, d_id]
    c_au: Tensor            # [B, 12, d_q], detached
    t: np.ndarray           # [B] timesteps

    def __post_init__(self):
        if self.c_au.shape[1] != 12:
            raise ValueError(f"c_au must have 12 rows, got {self.c_au.shape}")
        if self.c_au.requires_grad:
            raise ValueError("c_au must be detached before conditioning")


def encode_prompts(prompts, dtype=np.float32):
    """Tokenize + embed a list of prompts, padded to a common length.

    Padded positions carry a -1e9 attention bias so they are never
    attended to.
    """
    embs, pooled = [], []
    for p in prompts:
        parse_prompt(p)  # propagate grammar errors before embedding
        pool, toks = gw_embed.embed_text(p)
        embs.append(toks)
        pooled.append(pool)
    L = max(e.shape[0] for e in embs)
    B = len(embs)
    out = np.zeros((B, L, gw_embed.D_EMBED), dtype=dtype)
    bias = np.full((B, 1, 1, L), -1e9, dtype=dtype)
    for i, e in enumerate(embs):
        out[i, :e.shape[0]] = e
        bias[i, :, :, :e.shape[0]] = 0.0
    return Tensor(out), bias, np.stack(pooled).astype(dtype)


def encode_conditions(prompts, identity_images, identity_landmarks, c_au_prev, t, dtype=np.float32):
    """Assemble the conditioning bundle from raw modalities.

    ``c_au_prev``: [B, 12, d_q] array or Tensor (step-0 projection of the
    per-AU description embeddings, or the EMA state fed back from the
    label decoder).  It is detached here regardless of origin.
    """
    tokens, bias, pooled = encode_prompts(prompts, dtype)
    cids = np.stack([
        gw_embed.embed_identity(img, lms)
        for img, lms in zip(identity_images, identity_landmarks)
    ]).astype(dtype)
    c_au = c_au_prev if isinstance(c_au_prev, Tensor) else Tensor(np.asarray(c_au_prev, dtype=dtype))
    return ConditionBundle(
        tokens=tokens,
        token_bias=bias,
        pooled=pooled,
        c_id=Tensor(cids),
        c_au=c_au.detach(),
        t=np.asarray(t).reshape(-1),
    )


class ConvAutoencoder(Module):
    """Two-level convolutional autoencoder: 64x64x1 <-> 16x16x4."""

    def __init__(self, rng, base=16, latent_channels=4, dtype=np.float32):
        super().__init__()
        self.e1 = Conv2d(1, base, rng, stride=2, dtype=dtype)
        self.e2 = Conv2d(base, 2 * base, rng, stride=2, dtype=dtype)
        self.e3 = Conv2d(2 * base, latent_channels, rng, dtype=dtype)
        self.d1 = Conv2d(latent_channels, 2 * base, rng, dtype=dtype)
        self.d2 = Conv2d(2 * base, base, rng, dtype=dtype)
        self.d3 = Conv2d(base, base, rng, dtype=dtype)
        self.d4 = Conv2d(base, 1, rng, dtype=dtype)

    def encode(self, x):
        h = T.silu(self.e1(x))
        h = T.silu(self.e2(h))
        return self.e3(h)

    def decode(self, z):
        h = T.silu(self.d1(z))
        h = T.upsample2(h)
        h = T.silu(self.d2(h))
        h = T.upsample2(h)
        h = T.silu(self.d3(h))
        return T.sigmoid(self.d4(h))


class ResBlock(Module):
    def __init__(self, c_in, c_out, temb_dim, rng, dtype=np.float32):
        super().__init__()
        self.n1 = LayerNorm(c_in, dtype)
        self.c1 = Conv2d(c_in, c_out, rng, dtype=dtype)
        self.temb = Linear(temb_dim, c_out, rng, dtype)
        self.n2 = LayerNorm(c_out, dtype)
        self.c2 = Conv2d(c_out, c_out, rng, dtype=dtype)
        self.skip = Conv2d(c_in, c_out, rng, k=1, padding=0, dtype=dtype) if c_in != c_out else None

    def __call__(self, x, temb):
        h = self.c1(T.silu(self.n1(x)))
        h = T.add(h, T.reshape(self.temb(T.silu(temb)), (x.shape[0], 1, 1, h.shape[3])))
        h = self.c2(T.silu(self.n2(h)))
        return T.add(h, x if self.skip is None else self.skip(x))


class CrossAttnBlock(Module):
    """Spatial tokens attend to the conditioning sequence (pre-LN)."""

    def __init__(self, channels, d_ctx, rng, heads=4, dtype=np.float32):
        super().__init__()
        self.norm = LayerNorm(channels, dtype)
        self.attn = MultiHeadAttention(channels, rng, heads=heads, d_ctx=d_ctx, dtype=dtype)

    def __call__(self, x, context, attn_bias=None):
        b, h, w, c = x.shape
        tok = T.reshape(x, (b, h * w, c))
        out = self.attn(self.norm(tok), context, attn_bias=attn_bias)
        return T.reshape(T.add(tok, out), (b, h, w, c))


class MRLDown(Module):
    """Downsampling path; returns the per-level joint latent pyramid.

    The final convolution (second conv of the deepest residual block)
    is the reference layer for gradient-norm loss weighting.
    """

    def __init__(self, rng, in_channels, channels=(32, 64, 96), temb_dim=64, d_ctx=32,
                 heads=4, dtype=np.float32):
        super().__init__()
        c1, c2, c3 = channels
        self.conv_in = Conv2d(in_channels, c1, rng, dtype=dtype)
        self.res1 = ResBlock(c1, c1, temb_dim, rng, dtype)
        self.att1 = CrossAttnBlock(c1, d_ctx, rng, heads, dtype)
        self.down1 = Conv2d(c1, c2, rng, stride=2, dtype=dtype)
        self.res2 = ResBlock(c2, c2, temb_dim, rng, dtype)
        self.att2 = CrossAttnBlock(c2, d_ctx, rng, heads, dtype)
        self.down2 = Conv2d(c2, c3, rng, stride=2, dtype=dtype)
        self.res3 = ResBlock(c3, c3, temb_dim, rng, dtype)
        self.att3 = CrossAttnBlock(c3, d_ctx, rng, heads, dtype)
        self.res4 = ResBlock(c3, c3, temb_dim, rng, dtype)

    def __call__(self, z_masked, temb, context, attn_bias=None):
        h1 = self.att1(self.res1(self.conv_in(z_masked), temb), context, attn_bias)
        h2 = self.att2(self.res2(self.down1(h1), temb), context, attn_bias)
        h3 = self.att3(self.res3(self.down2(h2), temb), context, attn_bias)
        h3 = self.res4(h3, temb)
        return [h1, h2, h3]

    # Eq-style reference layer: deepest convolution of this path
    REFERENCE_PARAM = "res4.c2.w"


def mutual_loop(model, z_t, mask_latent, prompts, identity_images, identity_landmarks,
                t_steps, noise_rng, collect=True):
    """Run ``t_steps`` denoising steps with the closed conditioning loop.

    At each step the joint latent is computed from the detached
    co-activation rows of the previous step, the label decoder refines
    them, and the EMA merge becomes the next step's conditioning.
    Returns the trajectory of (pyramid, c_au) pairs plus the final
    latent when ``collect`` is set, else just the final state.
    """
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    B = z_t.shape[0]
    c_au = np.repeat(model.initial_queries()[None], B, axis=0)
    trajectory = []
    z = z_t
    for step_index in range(t_steps):
        t = model.schedule.T - step_index
        bundle = encode_conditions(prompts, identity_images, identity_landmarks,
                                   c_au, np.full(B, t), dtype=model.dtype)
        eps_hat, down_pyr, up_pyr = model.unet_forward(z, mask_latent, bundle)
        occ, _, intens, final_q = model.cld_forward(up_pyr, bundle)
        c_au = model.ema_update(c_au, final_q.data)
        z = model.posterior_sample(z, eps_hat, t, noise_rng)
        if collect:
            trajectory.append((down_pyr, np.array(c_au)))
    return trajectory, z
