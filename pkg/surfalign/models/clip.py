"""
Multimodal mappers and the tri-modal contrastive loss.

Each modality's token sequence is projected to the shared CLIP space, passed
through a residual GeLU block, mean-pooled and L2-normalised. Directional
losses are softmax cross-entropies over cosine similarities scaled by a fixed
temperature; the tri-modal loss averages all six directions between fMRI,
video and audio.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from surfalign.errors import ArgumentError, NumericError
from surfalign.models.sit import SurfaceVisionTransformer, dropout, init_weights, seeded
from surfalign.settings import MapperConfig, SitConfig

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-3
PROB_FLOOR = 1e-12

# (query, target) pairs, in reporting order
DIRECTIONS = {
    'fV': ('f', 'V'), 'Vf': ('V', 'f'),
    'fA': ('f', 'A'), 'Af': ('A', 'f'),
    'AV': ('A', 'V'), 'VA': ('V', 'A'),
}


class ClampCounter:
    """Counts diagonal probabilities floored at PROB_FLOOR."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n):
        with self._lock:
            self._count += n

    @property
    def count(self):
        with self._lock:
            return self._count

    def reset(self):
        with self._lock:
            self._count = 0


clamp_warnings = ClampCounter()


class Mapper(nn.Module):
    """proj -> h + Drop(W2 GeLU(W1 h)) per token -> mean over tokens -> L2 normalise."""

    def __init__(self, input_dim, config: MapperConfig):
        super().__init__()
        self.input_dim = input_dim
        self.proj = nn.Linear(input_dim, config.clip_dim)
        self.fc1 = nn.Linear(config.clip_dim, config.clip_dim)
        self.fc2 = nn.Linear(config.clip_dim, config.clip_dim)
        self.dropout_rate = config.dropout_rate
        self.apply(init_weights)

    def forward(self, seq, generator=None):
        if seq.shape[-2] < 1:
            raise ArgumentError("mapper input must contain at least one token")
        if seq.shape[-1] != self.input_dim:
            raise ArgumentError(f"mapper expects {self.input_dim}-dim tokens, got {seq.shape[-1]}")
        h = self.proj(seq)
        h = h + dropout(self.fc2(F.gelu(self.fc1(h))), self.dropout_rate, self.training, generator)
        pooled = h.mean(dim=-2)
        norms = pooled.norm(dim=-1, keepdim=True)
        if bool((norms < 1e-12).any()):
            raise NumericError("mapper output is a zero vector and cannot be normalised")
        return pooled / norms


def mapper_forward(seq, mapper, train_mode=False, generator=None):
    """
    Map one token sequence (n x D_m) or a batch (B x n x D_m) to unit CLIP vectors.
    """
    mapper.train(train_mode)
    seq = torch.as_tensor(seq, dtype=mapper.proj.weight.dtype)
    return mapper(seq, generator=generator)


def similarity_matrix(y_a, y_b):
    """
    Cosine similarities between two sets of unit vectors.

    Args:
        y_a (torch.Tensor): M x D unit rows
        y_b (torch.Tensor): M' x D unit rows

    Returns:
        torch.Tensor: Z[i, j] = <y_a[i], y_b[j]>
    """
    y_a = torch.as_tensor(y_a)
    y_b = torch.as_tensor(y_b, dtype=y_a.dtype)
    with torch.no_grad():
        for name, y in (('y_a', y_a), ('y_b', y_b)):
            worst = float((y.norm(dim=-1) - 1.0).abs().max()) if y.numel() else 0.0
            if worst > UNIT_NORM_TOL:
                raise ArgumentError(f"{name} rows must be unit-norm (max deviation {worst:.3g})")
    return y_a @ y_b.transpose(-2, -1)


def clip_probabilities(z, temperature):
    """
    Row-wise softmax of Z / temperature with the row maximum subtracted first.
    """
    if temperature <= 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    z = torch.as_tensor(z)
    logits = z / temperature
    logits = logits - logits.amax(dim=-1, keepdim=True).detach()
    return torch.softmax(logits, dim=-1)


def directional_loss(p):
    """
    -(1/M) sum_i log P[i, i].

    Diagonal probabilities below 1e-12 are floored there and counted in
    ``clamp_warnings``.
    """
    p = torch.as_tensor(p)
    diag = torch.diagonal(p, dim1=-2, dim2=-1)
    low = int((diag < PROB_FLOOR).sum())
    if low:
        clamp_warnings.add(low)
        logger.warning(f"{low} matched probabilities clamped at {PROB_FLOOR}")
    return -torch.log(diag.clamp_min(PROB_FLOOR)).mean()


@dataclass
class ClipBatch:
    y_f: Optional[torch.Tensor]
    y_v: Optional[torch.Tensor]
    y_a: Optional[torch.Tensor]
    temperature: float

    def embeddings(self):
        return {k: v for k, v in (('f', self.y_f), ('V', self.y_v), ('A', self.y_a)) if v is not None}


@dataclass
class LossBreakdown:
    total: torch.Tensor
    components: Dict[str, torch.Tensor]

    def as_floats(self):
        row = {'total': float(self.total)}
        row.update({k: float(v) for k, v in self.components.items()})
        return row


def trimodal_loss(batch: ClipBatch):
    """
    Mean of the directional losses among the modalities present in the batch.

    Three modalities give six directions; two give the pair in both directions.

    Returns:
        LossBreakdown: total and per-direction losses keyed 'fV', 'Vf', ...
    """
    ys = batch.embeddings()
    if len(ys) < 2:
        raise ArgumentError("a contrastive batch needs at least two modalities")
    sizes = {y.shape[0] for y in ys.values()}
    if len(sizes) != 1:
        raise ArgumentError(f"all modalities need the same batch size, got {sorted(sizes)}")
    components = {}
    for key, (query, target) in DIRECTIONS.items():
        if query in ys and target in ys:
            z = similarity_matrix(ys[query], ys[target])
            components[key] = directional_loss(clip_probabilities(z, batch.temperature))
    total = torch.stack(list(components.values())).mean()
    return LossBreakdown(total=total, components=components)


class AlignmentModel(nn.Module):
    """fMRI encoder plus one mapper per modality."""

    def __init__(self, sit_config: SitConfig, mapper_config: MapperConfig, video_dim, audio_dim):
        super().__init__()
        self.encoder = SurfaceVisionTransformer(sit_config)
        self.mappers = nn.ModuleDict({
            'f': Mapper(sit_config.hidden_dim, mapper_config),
            'V': Mapper(video_dim, mapper_config),
            'A': Mapper(audio_dim, mapper_config),
        })

    @property
    def dtype(self):
        return self.encoder.patch_embed.weight.dtype

    def embed_fmri(self, patches, generator=None):
        """B x N x (p*T) patch rows -> B x D_CLIP."""
        tokens = self.encoder(torch.as_tensor(patches, dtype=self.dtype), generator=generator)
        return self.mappers['f'](tokens, generator=generator)

    def embed_stimulus(self, seq, modality, generator=None):
        """B x tokens x dim stimulus sequences -> B x D_CLIP."""
        return self.mappers[modality](torch.as_tensor(seq, dtype=self.dtype), generator=generator)


def build_alignment_model(sit_config, mapper_config, video_dim, audio_dim, seed=0, float64=False):
    with seeded(seed):
        model = AlignmentModel(sit_config, mapper_config, video_dim, audio_dim)
    return model.double() if float64 else model
