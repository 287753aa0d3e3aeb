"""
CLS attention maps on the cortical sphere.

Attention from the CLS token to every patch token is read per layer and head,
spread back over each patch's vertices, averaged across heads or clips and
compared to reference fields by Pearson correlation.
"""
import os
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from surfalign.data_processing.transformers import patchify, scatter_patch_values
from surfalign.errors import ArgumentError, StateError, UndefinedCorrelationError
from surfalign.geometry.fields import SurfaceField
from surfalign.models.sit import AttentionRecord
from surfalign.storage.surface_io import write_surface_field, write_vertex_csv

logger = logging.getLogger(__name__)

GROUP_KEYS = ('head', 'layer', 'subject', 'movie', 'clip', 'triplet_id')


class AttentionSurface(SurfaceField):
    """Single-channel attention field; metadata holds layer, head and triplet ids."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise ArgumentError("attention fields must be non-negative")


@dataclass
class AggregateField:
    key: object
    mean: SurfaceField
    variance: SurfaceField
    count: int


def record_attention(encoder, patches):
    """
    Run the encoder in eval mode and keep every layer's attention.

    Args:
        encoder (SurfaceVisionTransformer): fMRI encoder
        patches (numpy.ndarray): B x N x (T*p) patch rows

    Returns:
        AttentionRecord: per-layer (B, H, n, n) post-softmax matrices
    """
    encoder.eval()
    dtype = encoder.patch_embed.weight.dtype
    with torch.no_grad():
        _, matrices = encoder.encode(encoder.embed(torch.as_tensor(patches, dtype=dtype)), record=True)
    return AttentionRecord(matrices=matrices, includes_cls=encoder.config.use_cls)


def extract_cls_attention(record: AttentionRecord, layer=-1, head=0, item=0):
    """
    Attention from CLS to the patch tokens.

    Args:
        record (AttentionRecord): recorded attention
        layer (int): layer index, the last layer by default
        head (int): head index
        item (int): batch item when the record is batched

    Returns:
        numpy.ndarray: length-N weights summing to 1 (CLS self-attention dropped)
    """
    if not record.includes_cls:
        raise StateError("model has no CLS token to read attention from")
    if record.num_layers == 0:
        raise StateError("attention record is empty (encoder has no layers)")
    matrix = record.matrices[layer]
    if matrix.dim() == 4:
        matrix = matrix[item]
    row = matrix[head, 0, 1:].double().cpu().numpy()
    total = row.sum()
    if total <= 0:
        raise StateError("CLS attends only to itself; patch weights are undefined")
    return row / total


def project_to_surface(weights, patching, **metadata):
    """
    Give every vertex of patch i the weight of token i.

    Vertices shared by several patches get the mean of their patches' weights.

    Returns:
        AttentionSurface: field on the patching's fine mesh
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (patching.num_patches,):
        raise ArgumentError(f"expected {patching.num_patches} patch weights, got shape {weights.shape}")
    values = scatter_patch_values(weights, patching)
    return AttentionSurface(mesh_level=patching.fine_level, values=values, metadata=dict(metadata))


def attention_maps(encoder, dataset, ids, patching, layer=-1, heads=None):
    """
    Per-head attention surfaces for a set of clips.

    Returns:
        list: AttentionSurface per (triplet, head) with triplet_id, subject,
        movie, clip, layer and head in its metadata
    """
    ids = np.asarray(ids, dtype=np.int64)
    record = record_attention(encoder, patchify(dataset.windows(ids), patching))
    layer_index = layer % max(record.num_layers, 1)
    heads = range(encoder.config.num_heads) if heads is None else heads
    meta = dataset.metadata
    maps = []
    for item, tid in enumerate(ids):
        row = meta.iloc[int(tid)]
        for head in heads:
            weights = extract_cls_attention(record, layer=layer, head=head, item=item)
            maps.append(project_to_surface(
                weights, patching, triplet_id=int(tid), subject=int(row['subject']), movie=int(row['movie']),
                clip=int(row['clip']), layer=layer_index, head=int(head)))
    logger.info(f"Projected {len(maps)} attention maps (layer {layer_index}, {len(ids)} clips)")
    return maps


def aggregate(maps, group_by=None):
    """
    Per-vertex mean and population variance of attention surfaces.

    Args:
        maps (list): SurfaceField objects on one mesh level
        group_by (str, optional): metadata key; one aggregate per value, or a
            single aggregate over all maps when None

    Returns:
        list: AggregateField per group, sorted by key
    """
    if not maps:
        raise ArgumentError("cannot aggregate an empty list of maps")
    levels = {m.mesh_level for m in maps}
    if len(levels) != 1:
        raise ArgumentError(f"maps span several mesh levels: {sorted(levels)}")
    level = levels.pop()
    stack = np.stack([m.values[:, 0].astype(np.float64) for m in maps])

    if group_by is None:
        groups = {None: np.arange(len(maps))}
    else:
        if group_by not in GROUP_KEYS:
            raise ArgumentError(f"unknown group key {group_by!r}; expected one of {GROUP_KEYS}")
        keys = pd.Series([m.metadata.get(group_by) for m in maps])
        if keys.isna().any():
            raise ArgumentError(f"some maps have no {group_by!r} metadata")
        groups = {k: np.asarray(v) for k, v in keys.groupby(keys).groups.items()}

    out = []
    for key in sorted(groups, key=lambda k: (k is None, k)):
        members = stack[groups[key]]
        mean = members.mean(axis=0)
        variance = np.mean((members - mean) ** 2, axis=0)
        info = {'group_by': group_by, 'key': key, 'count': len(members)}
        out.append(AggregateField(
            key=key, count=len(members),
            mean=SurfaceField(mesh_level=level, values=mean, metadata={**info, 'statistic': 'mean'}),
            variance=SurfaceField(mesh_level=level, values=variance, metadata={**info, 'statistic': 'variance'})))
    return out


def _pearson(x, y):
    xc = x - x.mean()
    yc = y - y.mean()
    sx, sy = np.sqrt(np.sum(xc ** 2)), np.sqrt(np.sum(yc ** 2))
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant field")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


def correlate_fields(a, b, labels=None):
    """
    Pearson correlation between two surface fields.

    Args:
        a (SurfaceField): first field (channel 0)
        b (SurfaceField): second field (channel 0)
        labels (SurfaceField or array-like, optional): region label per vertex;
            both fields are averaged within each label before correlating

    Returns:
        float: r over vertices, or over label means
    """
    x = np.asarray(a.values[:, 0] if isinstance(a, SurfaceField) else a, dtype=np.float64)
    y = np.asarray(b.values[:, 0] if isinstance(b, SurfaceField) else b, dtype=np.float64)
    if x.shape != y.shape:
        raise ArgumentError(f"fields differ in vertex count: {x.shape[0]} vs {y.shape[0]}")
    if labels is not None:
        lab = np.asarray(labels.values[:, 0] if isinstance(labels, SurfaceField) else labels).ravel()
        if lab.shape != x.shape:
            raise ArgumentError("label field must have one label per vertex")
        means = pd.DataFrame({'label': lab, 'a': x, 'b': y}).groupby('label')[['a', 'b']].mean()
        if len(means) < 2:
            raise UndefinedCorrelationError("correlation over labels needs at least two regions")
        x, y = means['a'].to_numpy(), means['b'].to_numpy()
    return _pearson(x, y)


def export_aggregates(aggregates, out_dir, prefix):
    """
    Write each aggregate's mean and variance as surface files plus one per-vertex CSV.

    Returns:
        list: paths written
    """
    os.makedirs(out_dir, exist_ok=True)
    paths, columns = [], {}
    for agg in aggregates:
        tag = 'all' if agg.key is None else f"{agg.mean.metadata['group_by']}{agg.key}"
        for stat, surface in (('mean', agg.mean), ('var', agg.variance)):
            paths.append(write_surface_field(os.path.join(out_dir, f"{prefix}_{tag}_{stat}.simf"), surface))
            columns[f"{tag}_{stat}"] = surface.values[:, 0]
    paths.append(write_vertex_csv(os.path.join(out_dir, f"{prefix}.csv"), columns))
    return paths
