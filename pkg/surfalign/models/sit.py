"""
Surface vision transformer.

Patches of T consecutive surface frames are flattened frame-major, projected
to D dimensions by a trainable linear layer, offset by a fixed sine-cosine
positional table and passed through pre-norm MHSA + FFN blocks. Row 0 of the
positional table belongs to the CLS token and patch i uses row i + 1.
"""
import logging
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from surfalign.errors import ArgumentError, NumericError, StateError
from surfalign.settings import SitConfig

logger = logging.getLogger(__name__)


def positional_embeddings(count, dim):
    """
    Fixed sine-cosine table.

    Args:
        count (int): number of rows
        dim (int): embedding width (even)

    Returns:
        numpy.ndarray: count x dim, row i columns (2j, 2j+1) =
        (sin(i / 10000^(2j/dim)), cos(i / 10000^(2j/dim)))
    """
    if dim % 2 != 0:
        raise ArgumentError(f"positional embedding dim must be even, got {dim}")
    positions = np.arange(count, dtype=np.float64)[:, None]
    freqs = 1.0 / 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = positions * freqs[None, :]
    table = np.empty((count, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def dropout(x, rate, training, generator=None):
    """Inverted dropout drawing its mask from an explicit generator."""
    if not training or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= rate
    return x * keep / (1.0 - rate)


@dataclass
class TokenSequence:
    tokens: torch.Tensor  # (n, D) or (B, n, D)
    includes_cls: bool

    def __len__(self):
        return int(self.tokens.shape[-2])


@dataclass
class AttentionRecord:
    """Post-softmax attention per layer, each (B, H, n, n) or (H, n, n)."""
    matrices: List[torch.Tensor] = field(default_factory=list)
    includes_cls: bool = True

    @property
    def num_layers(self):
        return len(self.matrices)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim, num_heads, dropout_rate=0.0):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.dropout_rate = dropout_rate

    def forward(self, x, generator=None):
        batch, length, dim = x.shape
        qkv = self.qkv(x).reshape(batch, length, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(-2, -1)) * self.scale
        scores = scores - scores.amax(dim=-1, keepdim=True).detach()
        attn = scores.softmax(dim=-1)
        weights = dropout(attn, self.dropout_rate, self.training, generator)
        out = (weights @ v).transpose(1, 2).reshape(batch, length, dim)
        out = dropout(self.proj(out), self.dropout_rate, self.training, generator)
        return out, attn


class FeedForward(nn.Module):
    def __init__(self, dim, hidden, dropout_rate=0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.dropout_rate = dropout_rate

    def forward(self, x, generator=None):
        x = dropout(F.gelu(self.fc1(x)), self.dropout_rate, self.training, generator)
        return dropout(self.fc2(x), self.dropout_rate, self.training, generator)


class EncoderBlock(nn.Module):
    """norm -> MHSA -> residual; norm -> FFN -> residual."""

    def __init__(self, dim, num_heads, mlp_dim, dropout_rate=0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads, dropout_rate)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_dim, dropout_rate)

    def forward(self, x, generator=None):
        out, attn = self.attn(self.norm1(x), generator)
        x = x + out
        x = x + self.ffn(self.norm2(x), generator)
        return x, attn


class TransformerStack(nn.Module):
    def __init__(self, num_layers, dim, num_heads, mlp_dim, dropout_rate=0.0):
        super().__init__()
        self.blocks = nn.ModuleList(
            [EncoderBlock(dim, num_heads, mlp_dim, dropout_rate) for _ in range(num_layers)])

    def forward(self, x, generator=None, record=False):
        matrices = []
        for index, block in enumerate(self.blocks):
            x, attn = block(x, generator)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after encoder layer {index}", layer=index)
            if record:
                matrices.append(attn.detach())
        return x, matrices


def init_weights(module):
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class SurfaceVisionTransformer(nn.Module):
    """Patch projection, CLS token, fixed positions and the encoder stack."""

    def __init__(self, config: SitConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.patch_embed = nn.Linear(config.input_dim, d)
        self.cls_token = nn.Parameter(torch.zeros(d)) if config.use_cls else None
        table = torch.as_tensor(positional_embeddings(config.num_patches + 1, d), dtype=torch.float32)
        self.register_buffer("pos_embed", table, persistent=False)
        self.stack = TransformerStack(config.num_layers, d, config.num_heads, config.mlp_dim,
                                      config.dropout_rate)
        self.apply(init_weights)
        if self.cls_token is not None:
            nn.init.trunc_normal_(self.cls_token, std=0.02)

    def embed(self, patches, positions=None):
        """
        Project flattened patches and add positional rows.

        Args:
            patches (torch.Tensor): (B, n, p*T) flattened patches
            positions (torch.Tensor, optional): (B, n) patch indices of the rows,
                defaults to 0..N-1

        Returns:
            torch.Tensor: (B, n [+1], D) tokens, CLS first when configured
        """
        if patches.shape[-1] != self.config.input_dim:
            raise ArgumentError(
                f"patch width {patches.shape[-1]} does not match input_dim {self.config.input_dim}")
        tokens = self.patch_embed(patches)
        if positions is None:
            if patches.shape[1] != self.config.num_patches:
                raise ArgumentError(
                    f"expected {self.config.num_patches} patches, got {patches.shape[1]}")
            tokens = tokens + self.pos_embed[1:]
        else:
            tokens = tokens + self.pos_embed[positions + 1]
        return self.prepend_cls(tokens)

    def prepend_cls(self, tokens):
        if self.cls_token is None:
            return tokens
        cls = (self.cls_token + self.pos_embed[0]).expand(tokens.shape[0], 1, -1)
        return torch.cat([cls, tokens], dim=1)

    def encode(self, tokens, generator=None, record=False):
        return self.stack(tokens, generator=generator, record=record)

    def forward(self, patches, generator=None):
        tokens, _ = self.encode(self.embed(patches), generator=generator)
        return tokens


def _as_batch(array, dtype):
    tensor = torch.as_tensor(array, dtype=dtype)
    return tensor.unsqueeze(0) if tensor.dim() == 2 else tensor


def tokenize(window, patching, model):
    """
    Turn a T-frame surface window into tokens.

    Args:
        window (numpy.ndarray): V x T frames on the patching's fine mesh
        patching (PatchIndex): tokenization grid
        model (SurfaceVisionTransformer): supplies projection, CLS and positions

    Returns:
        TokenSequence: (N [+1]) x D tokens
    """
    from surfalign.data_processing.transformers import patchify

    config = model.config
    window = np.asarray(window)
    if window.ndim != 2 or window.shape[1] != config.frames_per_window:
        raise ArgumentError(f"window must be V x {config.frames_per_window}, got {window.shape}")
    if window.shape[0] != patching.num_fine_vertices:
        raise ArgumentError(
            f"window has {window.shape[0]} vertices but the patching expects {patching.num_fine_vertices}")
    if patching.num_patches != config.num_patches or patching.patch_vertex_count != config.patch_vertex_count:
        raise ArgumentError("patching does not match the model configuration")
    dtype = model.patch_embed.weight.dtype
    tokens = model.embed(_as_batch(patchify(window, patching), dtype))
    return TokenSequence(tokens=tokens[0], includes_cls=config.use_cls)


def encoder_forward(seq, model, train_mode=False, generator=None):
    """
    Run the encoder stack on a token sequence.

    Args:
        seq (TokenSequence): tokens (n, D) or (B, n, D)
        model (SurfaceVisionTransformer): encoder
        train_mode (bool): enables dropout
        generator (torch.Generator, optional): dropout randomness

    Returns:
        tuple: (TokenSequence, AttentionRecord)
    """
    if len(seq) != model.config.sequence_length:
        raise ArgumentError(f"sequence length {len(seq)} does not match config {model.config.sequence_length}")
    model.train(train_mode)
    tokens = seq.tokens
    single = tokens.dim() == 2
    out, matrices = model.encode(tokens.unsqueeze(0) if single else tokens, generator=generator, record=True)
    if single:
        out = out[0]
        matrices = [m[0] for m in matrices]
    return (TokenSequence(tokens=out, includes_cls=seq.includes_cls),
            AttentionRecord(matrices=matrices, includes_cls=seq.includes_cls))


def backward(outputs, grad_outputs, model):
    """
    Back-propagate an upstream gradient through a recorded forward pass.

    Args:
        outputs (TokenSequence or torch.Tensor): result of a forward pass run with autograd
        grad_outputs (torch.Tensor): dL/d(outputs)
        model (nn.Module): module whose parameters receive gradients

    Returns:
        OrderedDict: parameter name -> gradient for every trainable parameter
    """
    tokens = outputs.tokens if isinstance(outputs, TokenSequence) else outputs
    if not isinstance(tokens, torch.Tensor) or tokens.grad_fn is None:
        raise StateError("no recorded activations: run the forward pass with autograd enabled")
    model.zero_grad(set_to_none=True)
    try:
        torch.autograd.backward(tokens, grad_tensors=grad_outputs)
    except RuntimeError as e:
        raise StateError(f"saved activations are no longer available: {e}")
    grads = OrderedDict()
    for name, param in model.named_parameters():
        if param.requires_grad:
            grads[name] = param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
    return grads


def parameter_count(config: SitConfig):
    """Trainable parameters of a SurfaceVisionTransformer built from ``config``."""
    d, m = config.hidden_dim, config.mlp_dim
    per_layer = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * m + m) + (m * d + d)
    total = config.input_dim * d + d + config.num_layers * per_layer
    if config.use_cls:
        total += d
    return total


def count_trainable(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


@contextmanager
def seeded(seed):
    """Run a block (typically model construction) under a fixed torch seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def build_encoder(config: SitConfig, seed: int = 0, float64: bool = False):
    """Deterministically initialised encoder, optionally in 64-bit mode."""
    with seeded(seed):
        model = SurfaceVisionTransformer(config)
    return model.double() if float64 else model


def make_generator(seed: Optional[int]):
    if seed is None:
        return None
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def log_model_summary(modules):
    """
    Log the parameter count of each named module.

    Args:
        modules (dict): name -> torch.nn.Module

    Returns:
        dict: name -> number of parameters, trainable or not
    """
    counts = {name: sum(p.numel() for p in module.parameters()) for name, module in modules.items()}
    for name, count in counts.items():
        logger.info(f"{name}: {count:,} parameters")
    return counts


__all__ = [
    "AttentionRecord", "SurfaceVisionTransformer", "TokenSequence", "TransformerStack",
    "backward", "build_encoder", "encoder_forward", "log_model_summary", "make_generator",
    "parameter_count", "positional_embeddings", "tokenize",
]
