"""
Video-surface masked autoencoder.

One spatial mask is shared by all T frames of a window (frames are
concatenated along the patch features), visible patches are encoded by the
surface vision transformer, a learned mask embedding fills the masked slots,
positional rows are re-added to every position and a shallow decoder
reconstructs the masked patches.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from surfalign.errors import ArgumentError
from surfalign.models.sit import SurfaceVisionTransformer, TransformerStack, init_weights, seeded
from surfalign.settings import SitConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskPlan:
    masked: np.ndarray  # sorted patch indices
    visible: np.ndarray  # sorted complement
    ratio: float

    @property
    def num_patches(self):
        return len(self.masked) + len(self.visible)

    @classmethod
    def from_masked(cls, masked, num_patches, ratio=None):
        masked = np.unique(np.asarray(masked, dtype=np.int64))
        if masked.size and (masked[0] < 0 or masked[-1] >= num_patches):
            raise ArgumentError(f"masked indices must lie in 0..{num_patches - 1}")
        visible = np.setdiff1d(np.arange(num_patches), masked)
        return cls(masked=masked, visible=visible,
                   ratio=len(masked) / num_patches if ratio is None else ratio)

    def boolean(self):
        out = np.zeros(self.num_patches, dtype=bool)
        out[self.masked] = True
        return out


def masked_count(num_patches, ratio):
    return int(np.floor(ratio * num_patches + 0.5))


def sample_mask(num_patches, ratio, rng):
    """
    Draw a uniform random spatial mask.

    Args:
        num_patches (int): N
        ratio (float): masking ratio in (0, 1)
        rng (numpy.random.Generator): randomness

    Returns:
        MaskPlan: round(ratio * N) masked patches
    """
    if not 0.0 < ratio < 1.0:
        raise ArgumentError(f"masking ratio must lie in (0, 1), got {ratio}")
    k = masked_count(num_patches, ratio)
    if k == 0 or k == num_patches:
        raise ArgumentError(f"ratio {ratio} leaves no masked or no visible patches out of {num_patches}")
    masked = np.sort(rng.choice(num_patches, size=k, replace=False))
    return MaskPlan.from_masked(masked, num_patches, ratio)


class VsmaeModel(nn.Module):
    """Encoder, decoder stack, mask embedding and the D -> p*T reconstruction head."""

    def __init__(self, config: SitConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.encoder = SurfaceVisionTransformer(config)
        self.decoder = TransformerStack(config.decoder_layers, d, config.num_heads, config.mlp_dim,
                                        config.dropout_rate)
        self.mask_embedding = nn.Parameter(torch.zeros(d))
        self.decoder_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.input_dim)
        self.decoder.apply(init_weights)
        self.decoder_norm.apply(init_weights)
        self.head.apply(init_weights)
        nn.init.trunc_normal_(self.mask_embedding, std=0.02)

    def forward(self, patches, plans, generator=None):
        """
        Reconstruct every patch of a batch.

        Args:
            patches (torch.Tensor): B x N x (p*T) z-scored patch rows
            plans (list): one MaskPlan per batch item, all with the same masked count
            generator (torch.Generator, optional): dropout randomness

        Returns:
            torch.Tensor: B x N x (p*T) reconstruction
        """
        batch, num, width = patches.shape
        if num != self.config.num_patches or width != self.config.input_dim:
            raise ArgumentError(
                f"patches must be B x {self.config.num_patches} x {self.config.input_dim}, got {tuple(patches.shape)}")
        if len(plans) != batch or len({len(p.masked) for p in plans}) > 1:
            raise ArgumentError("need one mask plan per batch item, all masking the same number of patches")

        visible = torch.as_tensor(np.stack([p.visible for p in plans]), dtype=torch.long)
        masked = torch.as_tensor(np.stack([p.masked for p in plans]), dtype=torch.long)
        restore = torch.argsort(torch.cat([visible, masked], dim=1), dim=1)

        rows = torch.gather(patches, 1, visible.unsqueeze(-1).expand(-1, -1, width))
        tokens = self.encoder.embed(rows, positions=visible)
        latent, _ = self.encoder.encode(tokens, generator=generator)

        cls_out = self.config.use_cls
        body = latent[:, 1:] if cls_out else latent
        fill = self.mask_embedding.to(body.dtype).expand(batch, masked.shape[1], -1)
        full = torch.cat([body, fill], dim=1)
        full = torch.gather(full, 1, restore.unsqueeze(-1).expand(-1, -1, full.shape[-1]))
        full = full + self.encoder.pos_embed[1:]
        if cls_out:
            full = torch.cat([latent[:, :1] + self.encoder.pos_embed[0], full], dim=1)

        decoded, _ = self.decoder(full, generator=generator)
        recon = self.head(self.decoder_norm(decoded))
        return recon[:, 1:] if cls_out else recon


def build_vsmae(config: SitConfig, seed=0, float64=False):
    with seeded(seed):
        model = VsmaeModel(config)
    return model.double() if float64 else model


def vsmae_forward(window, patching, mask, model, train_mode=False, generator=None):
    """
    Reconstruct one window.

    Args:
        window (numpy.ndarray): V x T z-scored frames
        patching (PatchIndex): tokenization grid
        mask (MaskPlan): which patches the encoder does not see
        model (VsmaeModel): autoencoder
        train_mode (bool): enables dropout
        generator (torch.Generator, optional): dropout randomness

    Returns:
        torch.Tensor: N x (p*T) reconstruction
    """
    from surfalign.data_processing.transformers import patchify

    window = np.asarray(window)
    if window.ndim != 2 or window.shape[1] != model.config.frames_per_window:
        raise ArgumentError(f"window must be V x {model.config.frames_per_window}, got {window.shape}")
    if mask.num_patches != model.config.num_patches:
        raise ArgumentError(f"mask covers {mask.num_patches} patches, model expects {model.config.num_patches}")
    model.train(train_mode)
    dtype = model.head.weight.dtype
    patches = torch.as_tensor(patchify(window, patching), dtype=dtype).unsqueeze(0)
    return model(patches, [mask], generator=generator)[0]


def _mask_tensor(mask, shape):
    if isinstance(mask, MaskPlan):
        mask = mask.boolean()
    mask = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask, dtype=torch.bool)
    if mask.dim() == 1 and len(shape) == 3:
        mask = mask.unsqueeze(0).expand(shape[0], -1)
    return mask


def masked_mse(recon, target, mask):
    """
    Mean squared error over masked patches only.

    Args:
        recon (torch.Tensor): [B x] N x F reconstruction
        target (torch.Tensor): same shape
        mask (MaskPlan or bool array): N or B x N, True where masked

    Returns:
        torch.Tensor: scalar, averaged over patch elements and masked patches
    """
    recon = torch.as_tensor(recon)
    target = torch.as_tensor(target, dtype=recon.dtype)
    if recon.shape != target.shape:
        raise ArgumentError(f"reconstruction {tuple(recon.shape)} and target {tuple(target.shape)} differ")
    mask = _mask_tensor(mask, recon.shape)
    if not mask.any():
        raise ArgumentError("masked MSE is undefined for an empty mask")
    return ((recon - target) ** 2)[mask].mean()


def mean_predictor_mse(target, mask):
    """
    Masked MSE of the best constant predictor of the masked targets.

    Returns:
        float: variance of the masked target values
    """
    target = torch.as_tensor(target, dtype=torch.float64)
    mask = _mask_tensor(mask, target.shape)
    if not mask.any():
        raise ArgumentError("masked MSE is undefined for an empty mask")
    values = target[mask]
    return float(((values - values.mean()) ** 2).mean())
