"""Joint image/label generator.

The upsampling denoiser mirrors the downsampling path with skip
connections and the same cross-attention conditioning; the label branch
is a transformer decoder over the up-path latents whose AU queries are
purified by identity decoupling (attention-gate + residual projection
removal), enhanced from prompt tokens, and read out by dual heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .glyphworld import embed as gw_embed
from .glyphworld.au import AUVector, NUM_AUS
from .glyphworld.geometry import baseline_landmarks
from .glyphworld.render import GlyphSpec, face_mask, render
from .glyphworld.grammar import prompt_from_au
from .mrl import ConditionBundle, ConvAutoencoder, CrossAttnBlock, MRLDown, ResBlock, encode_conditions
from .numerics import tensor as T
from .numerics.layers import (
    Conv2d,
    LayerNorm,
    Linear,
    MLP,
    Module,
    ModuleList,
    MultiHeadAttention,
    timestep_embedding,
    uniform_init,
)
from .numerics.rng import rng_for
from .numerics.tensor import Tensor


# -- diffusion schedule ----------------------------------------------------------

class NoiseSchedule:
    """Linear-beta DDPM schedule with the exact posterior variance."""

    def __init__(self, T=50, beta_start=1e-4, beta_end=0.02):
        self.T = T
        self.betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        self.posterior_var = (1.0 - prev) / (1.0 - self.alpha_bar) * self.betas

    def ab(self, t):
        """alpha-bar at one-indexed timestep(s) t."""
        return self.alpha_bar[np.asarray(t) - 1]

    def noisy(self, z0, eps, t):
        ab = self.ab(t).reshape(-1, 1, 1, 1)
        return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


# -- identity decoupling ------------------------------------------------------------

class IDM(Module):
    """Identity decoupling: modulation mask plus residual filtering.

    z_pure = LN(Softmax(Q K^T / sqrt(d) * M_ID) V + z_res) with
    M_ID = 1 - sigmoid(mlp_mm(C_ID) . K^T) per head and
    z_res = z - <z, c_hat> c_hat, c_hat = normalize(mlp_rf(C_ID)).
    """

    def __init__(self, d_model, d_id, rng, heads=4, dtype=np.float32):
        super().__init__()
        self.heads = heads
        self.d_head = d_model // heads
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_model, d_model, rng, dtype)
        self.v = Linear(d_model, d_model, rng, dtype)
        self.mlp_mm = MLP([d_id, d_model, d_model], rng, dtype, act=T.gelu)
        self.mlp_rf = MLP([d_id, d_model, d_model], rng, dtype, act=T.gelu)
        self.norm = LayerNorm(d_model, dtype)

    def _split(self, x, b, n):
        return T.transpose(T.reshape(x, (b, n, self.heads, self.d_head)), (0, 2, 1, 3))

    def modulation_mask(self, c_id, k_split):
        """M_ID in (0,1): [B, heads, 1, n_k] from identity/key alignment."""
        b = c_id.shape[0]
        m = self._split(T.reshape(self.mlp_mm(c_id), (b, 1, -1)), b, 1)  # [B,H,1,d_head]
        dots = T.matmul(m, T.transpose(k_split, (0, 1, 3, 2)))           # [B,H,1,n_k]
        return T.sub(1.0, T.sigmoid(dots))

    def residual_filter(self, z, c_id):
        """Remove the per-token projection onto the identity direction."""
        c = self.mlp_rf(c_id)                                   # [B, d]
        norm = T.sqrt(T.tsum(T.mul(c, c), axis=-1, keepdims=True) + 1e-8)
        c_hat = T.div(c, norm)                                  # [B, d]
        c_row = T.reshape(c_hat, (c_hat.shape[0], 1, c_hat.shape[1]))
        dots = T.tsum(T.mul(z, c_row), axis=-1, keepdims=True)  # [B, n, 1]
        return T.sub(z, T.mul(dots, c_row))

    def __call__(self, z, c_id, gate_enabled=True, filter_enabled=True):
        b, n, d = z.shape
        q = self._split(self.q(z), b, n)
        k = self._split(self.k(z), b, n)
        v = self._split(self.v(z), b, n)
        gate = self.modulation_mask(c_id, k) if gate_enabled else None
        att = T.gated_attention(q, k, v, gate)
        merged = T.reshape(T.transpose(att, (0, 2, 1, 3)), (b, n, d))
        residual = self.residual_filter(z, c_id) if filter_enabled else z
        return self.norm(T.add(merged, residual))


class LGFE(Module):
    """Language-guided feature enhancement of the AU queries.

    Self-attention pools token-wise context; zero-initialized cross
    attention injects it into the queries, so an untrained block is an
    exact identity map.
    """

    def __init__(self, d_q, d_e, rng, heads=4, dtype=np.float32):
        super().__init__()
        self.tok_norm = LayerNorm(d_e, dtype)
        self.self_attn = MultiHeadAttention(d_e, rng, heads=heads, dtype=dtype)
        self.q_norm = LayerNorm(d_q, dtype)
        self.cross = MultiHeadAttention(d_q, rng, heads=heads, d_ctx=d_e, dtype=dtype, zero_out=True)

    def __call__(self, queries, tokens, token_bias=None):
        if tokens.shape[1] == 0:
            import warnings

            warnings.warn("LGFE got an empty prompt; acting as identity")
            return queries
        ctx = T.add(tokens, self.self_attn(self.tok_norm(tokens), attn_bias=token_bias))
        return T.add(queries, self.cross(self.q_norm(queries), ctx, attn_bias=token_bias))


class CLDBlock(Module):
    """One decoder block: identity-purified level tokens, cross-attention
    into the queries, feed-forward, then language enhancement."""

    def __init__(self, d_q, d_id, d_e, level_channels, rng, heads=4, dtype=np.float32):
        super().__init__()
        self.level_proj = Linear(level_channels, d_q, rng, dtype)
        self.idm = IDM(d_q, d_id, rng, heads, dtype)
        self.q_norm = LayerNorm(d_q, dtype)
        self.cross = MultiHeadAttention(d_q, rng, heads=heads, dtype=dtype)
        self.ffn_norm = LayerNorm(d_q, dtype)
        self.ffn = MLP([d_q, 2 * d_q, d_q], rng, dtype, act=T.gelu)
        self.lgfe = LGFE(d_q, d_e, rng, heads, dtype)

    def __call__(self, queries, level_tokens, c_id, tokens, token_bias,
                 idm_enabled=True, lgfe_enabled=True):
        z = self.level_proj(level_tokens)
        z = self.idm(z, c_id, gate_enabled=idm_enabled, filter_enabled=idm_enabled)
        queries = T.add(queries, self.cross(self.q_norm(queries), z))
        queries = T.add(queries, self.ffn(self.ffn_norm(queries)))
        if lgfe_enabled:
            queries = self.lgfe(queries, tokens, token_bias)
        return queries


class CLD(Module):
    """Conditional label decoder with dual prediction heads."""

    def __init__(self, rng, level_channels, d_q=32, d_id=16, d_e=32, heads=4, dtype=np.float32):
        super().__init__()
        self.blocks = ModuleList([
            CLDBlock(d_q, d_id, d_e, c, rng, heads, dtype) for c in level_channels
        ])
        self.final_norm = LayerNorm(d_q, dtype)
        self.occ_head = MLP([d_q, d_q, 1], rng, dtype, act=T.gelu)
        self.int_head = MLP([d_q, d_q, 1], rng, dtype, act=T.gelu)
        # language-initialized queries: shared projection of the per-AU
        # description embeddings; the randomly initialized alternative is
        # a free parameter used by the ablation
        self.query_proj = Linear(d_e, d_q, rng, dtype)
        self.free_queries = Tensor(
            uniform_init(rng, (NUM_AUS, d_q), d_q, dtype), requires_grad=True)

    def initial_queries_tensor(self, language_init=True):
        if language_init:
            desc = Tensor(gw_embed.au_description_embeddings().astype(self.free_queries.dtype))
            return self.query_proj(desc)          # [12, d_q]
        return self.free_queries

    MAX_LEVEL_TOKENS = 64

    def __call__(self, up_pyramid, c_id, tokens, token_bias,
                 idm_enabled=True, lgfe_enabled=True, language_init=True):
        b = up_pyramid[0].shape[0]
        q0 = self.initial_queries_tensor(language_init)
        # broadcast the shared queries over the batch (grads fold back)
        queries = T.add(T.reshape(q0, (1,) + tuple(q0.shape)),
                        Tensor(np.zeros((b, 1, 1), dtype=q0.dtype)))
        for block, level in zip(self.blocks, up_pyramid):
            lb, lh, lw, lc = level.shape
            # cap token count per level: quadratic self-attention over the
            # finest map is the step's hot spot
            while lh * lw > self.MAX_LEVEL_TOKENS:
                level = T.avg_pool(level, 2)
                lb, lh, lw, lc = level.shape
            level_tokens = T.reshape(level, (lb, lh * lw, lc))
            queries = block(queries, level_tokens, c_id, tokens, token_bias,
                            idm_enabled, lgfe_enabled)
        final = self.final_norm(queries)
        occ_logits = T.reshape(self.occ_head(final), (b, NUM_AUS))
        occ = T.sigmoid(occ_logits)
        intensity = T.mul(T.sigmoid(T.reshape(self.int_head(final), (b, NUM_AUS))), 5.0)
        return occ, occ_logits, intensity, final


class DIGUp(Module):
    """Upsampling path with skips; returns eps prediction and the
    coarse-to-fine up-path pyramid feeding the label decoder."""

    def __init__(self, rng, channels=(32, 64, 96), temb_dim=64, d_ctx=32, heads=4,
                 out_channels=4, dtype=np.float32):
        super().__init__()
        c1, c2, c3 = channels
        self.res3 = ResBlock(c3, c3, temb_dim, rng, dtype)
        self.att3 = CrossAttnBlock(c3, d_ctx, rng, heads, dtype)
        self.up2 = Conv2d(c3, c2, rng, dtype=dtype)
        self.res2 = ResBlock(2 * c2, c2, temb_dim, rng, dtype)
        self.att2 = CrossAttnBlock(c2, d_ctx, rng, heads, dtype)
        self.up1 = Conv2d(c2, c1, rng, dtype=dtype)
        self.res1 = ResBlock(2 * c1, c1, temb_dim, rng, dtype)
        self.att1 = CrossAttnBlock(c1, d_ctx, rng, heads, dtype)
        self.out_norm = LayerNorm(c1, dtype)
        self.conv_out = Conv2d(c1, out_channels, rng, dtype=dtype)

    def __call__(self, pyramid, temb, context, attn_bias=None):
        h1, h2, h3 = pyramid
        u3 = self.att3(self.res3(h3, temb), context, attn_bias)
        x = self.up2(T.upsample2(u3))
        u2 = self.att2(self.res2(T.concat([x, h2], axis=3), temb), context, attn_bias)
        x = self.up1(T.upsample2(u2))
        u1 = self.att1(self.res1(T.concat([x, h1], axis=3), temb), context, attn_bias)
        eps = self.conv_out(T.silu(self.out_norm(u1)))
        return eps, [u3, u2, u1]


@dataclass
class GenerationResult:
    images: np.ndarray        # [B, H, W]
    labels: list              # AUVector per sample
    occ: np.ndarray           # [B, 12] raw probabilities
    intensity: np.ndarray     # [B, 12] raw (unrounded) intensities
    latents: np.ndarray


class JointGenerator(Module):
    """Full model: autoencoder, conditioned UNet, and label decoder."""

    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config
        self.dtype = np.float32 if config.get("precision", "f32") == "f32" else np.float64
        rng = rng_for("model", seed)
        ch = tuple(config.get("unet_channels", (32, 64, 96)))
        heads = config.get("heads", 4)
        self.temb_dim = config.get("temb_dim", 64)
        d_q = config.get("d_q", 32)
        d_id = config.get("d_id", 16)
        d_e = config.get("d_e", 32)
        lat_c = config.get("latent_channels", 4)
        self.ae = ConvAutoencoder(rng, config.get("ae_base", 16), lat_c, self.dtype)
        self.mrl = MRLDown(rng, lat_c + 1, ch, self.temb_dim, d_e, heads, self.dtype)
        self.dig = DIGUp(rng, ch, self.temb_dim, d_e, heads, lat_c, self.dtype)
        self.cld = CLD(rng, (ch[2], ch[1], ch[0]), d_q, d_id, d_e, heads, self.dtype)
        self.id_proj = Linear(d_id, d_e, rng, self.dtype)
        self.au_proj = Linear(d_q, d_e, rng, self.dtype)
        self.schedule = NoiseSchedule(config.get("T", 50),
                                      config.get("beta_start", 1e-4),
                                      config.get("beta_end", 0.02))
        self.ema_alpha = config.get("ema_alpha", 0.9)
        self.idm_enabled = bool(config.get("idm_enabled", True))
        self.lgfe_enabled = bool(config.get("lgfe_enabled", True))
        self.language_init = bool(config.get("language_init", True))
        self.latent_scale = 1.0

    # -- conditioning ---------------------------------------------------------
    def initial_queries(self):
        with T.no_grad():
            return self.cld.initial_queries_tensor(self.language_init).data.copy()

    def build_context(self, bundle: ConditionBundle):
        """[tokens; identity row; co-activation rows] plus padding bias."""
        b, L = bundle.tokens.shape[0], bundle.tokens.shape[1]
        id_row = T.reshape(self.id_proj(bundle.c_id), (b, 1, -1))
        au_rows = self.au_proj(bundle.c_au)
        ctx = T.concat([bundle.tokens, id_row, au_rows], axis=1)
        bias = np.concatenate(
            [bundle.token_bias,
             np.zeros((b, 1, 1, 1 + NUM_AUS), dtype=bundle.token_bias.dtype)], axis=3)
        return ctx, bias

    # -- core passes -----------------------------------------------------------
    def unet_forward(self, z_t, mask_latent, bundle: ConditionBundle):
        if np.any(bundle.t < 0) or np.any(bundle.t > self.schedule.T):
            raise ValueError(f"timestep out of [0, {self.schedule.T}]")
        ctx, bias = self.build_context(bundle)
        temb = timestep_embedding(bundle.t, self.temb_dim, self.dtype)
        z_in = z_t if isinstance(z_t, Tensor) else Tensor(z_t.astype(self.dtype))
        m = mask_latent if isinstance(mask_latent, Tensor) else Tensor(mask_latent.astype(self.dtype))
        x = T.concat([z_in, m], axis=3)
        down = self.mrl(x, temb, ctx, bias)
        eps, up = self.dig(down, temb, ctx, bias)
        return eps, down, up

    def cld_forward(self, up_pyramid, bundle: ConditionBundle):
        return self.cld(up_pyramid, bundle.c_id, bundle.tokens, bundle.token_bias,
                        self.idm_enabled, self.lgfe_enabled, self.language_init)

    def ema_update(self, c_au_state, final_queries):
        """alpha * state + (1 - alpha) * queries, detached for conditioning."""
        q = final_queries.data if isinstance(final_queries, Tensor) else final_queries
        return self.ema_alpha * np.asarray(c_au_state) + (1.0 - self.ema_alpha) * q

    # -- latent space -----------------------------------------------------------
    def encode_image(self, pixels):
        x = pixels if isinstance(pixels, Tensor) else Tensor(pixels.astype(self.dtype))
        z = self.ae.encode(T.reshape(x, tuple(x.shape) + (1,)))
        return z * (1.0 / self.latent_scale)

    def decode_image(self, z):
        zt = z if isinstance(z, Tensor) else Tensor(z.astype(self.dtype))
        out = self.ae.decode(zt * self.latent_scale)
        return T.reshape(out, tuple(out.shape[:3]))

    def denoise_step(self, z_t, mask_latent, bundle: ConditionBundle, rng):
        """One reverse step z_t -> z_{t-1} under the given conditioning."""
        t = int(bundle.t[0])
        if not 1 <= t <= self.schedule.T:
            raise ValueError(f"timestep {t} outside [1, {self.schedule.T}]")
        with T.no_grad():
            eps_hat, _, _ = self.unet_forward(z_t, mask_latent, bundle)
            return self.posterior_sample(z_t, eps_hat, t, rng)

    def posterior_sample(self, z_t, eps_hat, t, rng):
        """One reverse step; sigma_1 is exactly zero (deterministic tail)."""
        sch = self.schedule
        beta = sch.betas[t - 1]
        alpha = sch.alphas[t - 1]
        ab = sch.alpha_bar[t - 1]
        eps = eps_hat.data if isinstance(eps_hat, Tensor) else eps_hat
        z = z_t.data if isinstance(z_t, Tensor) else z_t
        mean = (z - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(alpha)
        var = sch.posterior_var[t - 1]
        if var > 0:
            mean = mean + np.sqrt(var) * rng.standard_normal(z.shape)
        return mean.astype(z.dtype)

    # -- generation ---------------------------------------------------------------
    def generate(self, prompts, identity_seeds, noise_seed, mask=None, occ_threshold=0.5):
        """Full reverse diffusion with the mutual conditioning loop.

        Deterministic in (parameters, prompts, identity_seeds,
        noise_seed).  Labels come from the label decoder at the final
        step, occurrence thresholded then reconciled with the rounded
        intensities.
        """
        from .glyphworld.geometry import sample_identity

        B = len(prompts)
        if len(identity_seeds) != B:
            raise ValueError("one identity seed per prompt required")
        id_params = [sample_identity(s) for s in identity_seeds]
        exemplars = [render(GlyphSpec(p, AUVector.zeros())) for p in id_params]
        masks = np.stack([face_mask(p) for p in id_params]) if mask is None \
            else np.repeat(mask[None], B, axis=0)
        mask_lat = T.avg_pool(Tensor(masks[:, :, :, None].astype(self.dtype)), 4)

        rng = rng_for("generate", noise_seed)
        ls = self.config.get("latent_size", 16)
        z = rng.standard_normal((B, ls, ls, self.config.get("latent_channels", 4))).astype(self.dtype)
        c_au = np.repeat(self.initial_queries()[None], B, axis=0)
        occ = intens = None
        with T.no_grad():
            for step in range(self.schedule.T, 0, -1):
                bundle = encode_conditions(
                    prompts, [e.pixels for e in exemplars], [e.landmarks for e in exemplars],
                    c_au, np.full(B, step), dtype=self.dtype)
                eps_hat, _, up = self.unet_forward(z, mask_lat, bundle)
                occ_t, _, int_t, final_q = self.cld_forward(up, bundle)
                c_au = self.ema_update(c_au, final_q)
                z = self.posterior_sample(z, eps_hat, step, rng)
                occ, intens = occ_t.data, int_t.data
            images = np.clip(self.decode_image(z).data, 0.0, 1.0)

        labels = []
        for b in range(B):
            bits = (occ[b] >= occ_threshold).astype(np.int8)
            lvl = np.rint(intens[b]).astype(np.int8)
            lvl[bits == 0] = 0
            lvl[(bits == 1) & (lvl == 0)] = 1
            labels.append(AUVector(occurrence=bits, intensity=np.clip(lvl, 0, 5)))
        return GenerationResult(images=images, labels=labels, occ=occ,
                                intensity=intens, latents=z)
