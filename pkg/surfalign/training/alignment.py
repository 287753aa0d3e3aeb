"""
Contrastive alignment of the fMRI encoder with frozen stimulus embeddings.

Regimes:
    frozen    encoder loaded from a vsMAE checkpoint and held fixed, mappers train
    scratch   encoder randomly initialised and trained with the mappers
    finetune  encoder loaded from a vsMAE checkpoint and trained with the mappers
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from surfalign.data_processing.transformers import patchify
from surfalign.errors import ArgumentError, NumericError, StateError
from surfalign.models.clip import ClipBatch, DIRECTIONS, trimodal_loss
from surfalign.models.optim import cosine_lr, make_optimizer, set_lr
from surfalign.models.sit import make_generator
from surfalign.settings import AlignSchedule, Modalities, Regime
from surfalign.storage.checkpoint import load_module_tensors

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ['iteration', 'split', 'total'] + list(DIRECTIONS)


@dataclass
class AlignResult:
    model: object
    trace: pd.DataFrame
    trainable_parameters: int
    regime: Regime
    modalities: Modalities


def prepare_encoder(model, regime, checkpoint=None):
    """
    Initialise the fMRI encoder for a regime.

    Args:
        model (AlignmentModel): model whose encoder is prepared
        regime (Regime): frozen, scratch or finetune
        checkpoint (Checkpoint, optional): vsMAE checkpoint, required unless scratch
    """
    regime = Regime(regime)
    if regime != Regime.SCRATCH:
        if checkpoint is None:
            raise StateError(f"regime '{regime.value}' needs a vsMAE checkpoint")
        load_module_tensors(model.encoder, checkpoint.subset('encoder'))
        logger.info(f"Initialised fMRI encoder from vsMAE checkpoint (step {checkpoint.step})")
    frozen = regime == Regime.FROZEN
    for param in model.encoder.parameters():
        param.requires_grad_(not frozen)
    return model


def trainable_parameters(model, regime, modalities):
    """Parameters updated under a regime: mappers of the trained modalities, plus the encoder unless frozen."""
    params = []
    for key in Modalities(modalities).members:
        params.extend(model.mappers[key].parameters())
    if Regime(regime) != Regime.FROZEN:
        params.extend(model.encoder.parameters())
    return params


def sample_stimulus_batch(metadata, ids, size, rng):
    """
    Draw up to ``size`` triplet ids with pairwise distinct (movie, clip) stimuli.
    """
    perm = rng.permutation(np.asarray(ids, dtype=np.int64))
    rows = metadata.iloc[perm]
    keep = ~rows.duplicated(subset=['movie', 'clip']).to_numpy()
    chosen = perm[keep][:size]
    if chosen.size < 2:
        raise ArgumentError("need at least two distinct stimuli to form a contrastive batch")
    return chosen


def embed_batch(model, dataset, ids, patching, members, temperature, generator=None, frozen=False):
    """ClipBatch for ``ids`` over the modalities in ``members``."""
    dtype = model.dtype
    y = {}
    if 'f' in members:
        patches = torch.as_tensor(patchify(dataset.windows(ids), patching), dtype=dtype)
        if frozen:
            with torch.no_grad():
                tokens = model.encoder(patches)
        else:
            tokens = model.encoder(patches, generator=generator)
        y['f'] = model.mappers['f'](tokens, generator=generator)
    for key in ('V', 'A'):
        if key in members:
            y[key] = model.embed_stimulus(dataset.stimulus(ids, key), key, generator=generator)
    return ClipBatch(y_f=y.get('f'), y_v=y.get('V'), y_a=y.get('A'), temperature=temperature)


def _loss_row(iteration, split, breakdown):
    row = {'iteration': iteration, 'split': split}
    row.update(breakdown.as_floats())
    return row


def train_alignment(dataset, model, regime, modalities, schedule: AlignSchedule, patching, train_ids,
                    val_ids=None, checkpoint=None, seed=0):
    """
    Train mappers (and the encoder, per regime) with the contrastive loss.

    Args:
        dataset (TripletDataset): triplets; stimulus sequences are treated as fixed inputs
        model (AlignmentModel): encoder and mappers, updated in place
        regime (Regime): encoder regime
        modalities (Modalities): fV, fA or fVA
        schedule (AlignSchedule): iterations, batch size, AdamW, temperature
        patching (PatchIndex): tokenization grid
        train_ids (array-like): training triplet ids
        val_ids (array-like, optional): validation triplet ids
        checkpoint (Checkpoint, optional): vsMAE checkpoint for frozen/finetune
        seed (int): drives batches and dropout

    Returns:
        AlignResult: model, loss trace and number of trained parameters
    """
    regime, modalities = Regime(regime), Modalities(modalities)
    prepare_encoder(model, regime, checkpoint)
    params = trainable_parameters(model, regime, modalities)
    optimizer = make_optimizer(params, schedule.lr, schedule.weight_decay, schedule.betas)
    n_params = sum(p.numel() for p in params)
    members = modalities.members
    frozen = regime == Regime.FROZEN
    logger.info(
        f"Aligning {'/'.join(members)} ({regime.value}): {n_params:,} trainable parameters, "
        f"{schedule.iterations} iterations, batch {schedule.batch_size}, tau {schedule.temperature}")

    rng = np.random.default_rng([int(seed), 3])
    generator = make_generator(seed)
    meta = dataset.metadata
    val_batch_ids = None
    if val_ids is not None and len(val_ids) > 1:
        val_batch_ids = sample_stimulus_batch(meta, val_ids, schedule.batch_size, np.random.default_rng([int(seed), 4]))

    rows = []
    for it in range(schedule.iterations):
        set_lr(optimizer, cosine_lr(it, schedule.iterations, schedule.lr, schedule.lr_min))
        ids = sample_stimulus_batch(meta, train_ids, schedule.batch_size, rng)
        model.train()
        if frozen:
            model.encoder.eval()
        breakdown = trimodal_loss(embed_batch(model, dataset, ids, patching, members, schedule.temperature,
                                              generator, frozen))
        if not torch.isfinite(breakdown.total):
            raise NumericError(f"alignment loss became non-finite at iteration {it}", iteration=it)
        optimizer.zero_grad(set_to_none=True)
        breakdown.total.backward()
        optimizer.step()
        rows.append(_loss_row(it, 'train', breakdown))

        if (it + 1) % schedule.log_every == 0:
            logger.info(f"iter {it + 1}/{schedule.iterations} loss {float(breakdown.total):.4f} "
                        f"(log M = {np.log(len(ids)):.4f})")
        if val_batch_ids is not None and ((it + 1) % schedule.val_every == 0 or it + 1 == schedule.iterations):
            model.eval()
            with torch.no_grad():
                val = trimodal_loss(embed_batch(model, dataset, val_batch_ids, patching, members,
                                                schedule.temperature))
            rows.append(_loss_row(it, 'val', val))
            logger.info(f"iter {it + 1} val loss {float(val.total):.4f}")

    trace = pd.DataFrame(rows).reindex(columns=LOSS_COLUMNS)
    return AlignResult(model=model, trace=trace, trainable_parameters=n_params, regime=regime,
                       modalities=modalities)
