"""
vsMAE self-supervised pretraining and the masking-ratio sweep.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from surfalign.data_processing.transformers import patchify
from surfalign.errors import ArgumentError, NumericError
from surfalign.models.optim import cosine_lr, make_optimizer, set_lr
from surfalign.models.sit import count_trainable, make_generator
from surfalign.models.vsmae import build_vsmae, masked_mse, mean_predictor_mse, sample_mask
from surfalign.settings import PretrainSchedule

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ['iteration', 'split', 'masked_mse']
SWEEP_RATIOS = (0.25, 0.5, 0.75, 0.9)


@dataclass
class PretrainResult:
    model: object
    trace: pd.DataFrame
    val_mse: float
    oracle_mse: float
    iterations: int


@dataclass
class MaskedBatch:
    patches: torch.Tensor
    plans: list

    @property
    def mask(self):
        return np.stack([p.boolean() for p in self.plans])


def make_batch(dataset, ids, patching, ratio, rng, dtype=torch.float32):
    """Z-scored, patchified windows of ``ids`` with one fresh mask each."""
    patches = torch.as_tensor(patchify(dataset.windows(ids), patching), dtype=dtype)
    plans = [sample_mask(patching.num_patches, ratio, rng) for _ in ids]
    return MaskedBatch(patches=patches, plans=plans)


def evaluate_masked_mse(model, batch, chunk=64):
    """
    Masked MSE of ``model`` over a fixed batch, in eval mode.

    Returns:
        float: mean over all masked patch elements of the batch
    """
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, batch.patches.shape[0], chunk):
            patches = batch.patches[start:start + chunk].to(model.head.weight.dtype)
            plans = batch.plans[start:start + chunk]
            recon = model(patches, plans)
            mask = np.stack([p.boolean() for p in plans])
            n = int(mask.sum()) * patches.shape[-1]
            total += float(masked_mse(recon, patches, mask)) * n
            count += n
    return total / count


def validation_batch(dataset, ids, patching, schedule, seed):
    rng = np.random.default_rng([int(seed), 2])
    size = min(schedule.val_windows, len(ids))
    chosen = np.sort(rng.choice(ids, size=size, replace=False))
    return make_batch(dataset, chosen, patching, schedule.masking_ratio, rng)


def pretrain(dataset, model, schedule: PretrainSchedule, patching, train_ids, val_ids=None, seed=0):
    """
    Train a vsMAE on masked reconstruction of surface windows.

    Args:
        dataset (TripletDataset): source of fMRI windows
        model (VsmaeModel): autoencoder, updated in place
        schedule (PretrainSchedule): iterations, batch size, AdamW and masking settings
        patching (PatchIndex): tokenization grid of the dataset mesh
        train_ids (array-like): triplet ids to train on
        val_ids (array-like, optional): triplet ids for validation, train ids when empty
        seed (int): drives batch sampling, masks and dropout

    Returns:
        PretrainResult: model, loss trace (iteration, split, masked_mse), final
        validation masked MSE and the constant-mean predictor's masked MSE on the same targets
    """
    train_ids = np.asarray(train_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise ArgumentError("pretraining needs a non-empty training set")
    if val_ids is None or len(val_ids) == 0:
        logger.warning("No validation ids given; validating on training windows")
        val_ids = train_ids
    val_batch = validation_batch(dataset, np.asarray(val_ids, dtype=np.int64), patching, schedule, seed)
    oracle = mean_predictor_mse(val_batch.patches, val_batch.mask)

    rng = np.random.default_rng([int(seed), 1])
    generator = make_generator(seed)
    dtype = model.head.weight.dtype
    optimizer = make_optimizer(model.parameters(), schedule.lr, schedule.weight_decay, schedule.betas)
    logger.info(
        f"Pretraining vsMAE ({count_trainable(model):,} parameters) for {schedule.iterations} iterations, "
        f"batch {schedule.batch_size}, ratio {schedule.masking_ratio}")

    rows = []
    val_mse = float('nan')
    for it in range(schedule.iterations):
        set_lr(optimizer, cosine_lr(it, schedule.iterations, schedule.lr, schedule.lr_min))
        ids = rng.choice(train_ids, size=schedule.batch_size, replace=train_ids.size < schedule.batch_size)
        batch = make_batch(dataset, ids, patching, schedule.masking_ratio, rng, dtype)

        model.train()
        recon = model(batch.patches, batch.plans, generator=generator)
        loss = masked_mse(recon, batch.patches, batch.mask)
        if not torch.isfinite(loss):
            raise NumericError(f"vsMAE loss became non-finite at iteration {it}", iteration=it)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        rows.append({'iteration': it, 'split': 'train', 'masked_mse': float(loss)})

        if (it + 1) % schedule.log_every == 0:
            logger.info(f"iter {it + 1}/{schedule.iterations} masked_mse {float(loss):.4f}")
        if (it + 1) % schedule.val_every == 0 or it + 1 == schedule.iterations:
            val_mse = evaluate_masked_mse(model, val_batch)
            rows.append({'iteration': it, 'split': 'val', 'masked_mse': val_mse})
            logger.info(f"iter {it + 1} val masked_mse {val_mse:.4f} (mean predictor {oracle:.4f})")

    trace = pd.DataFrame(rows, columns=LOSS_COLUMNS)
    return PretrainResult(model=model, trace=trace, val_mse=val_mse, oracle_mse=oracle,
                          iterations=schedule.iterations)


def moving_average(values, window=100):
    values = np.asarray(values, dtype=np.float64)
    if values.size < window:
        return values.copy()
    return np.convolve(values, np.ones(window) / window, mode='valid')


def masking_ratio_sweep(dataset, sit_config, schedule, patching, train_ids, val_ids=None,
                        ratios=SWEEP_RATIOS, seeds=(0, 1, 2)):
    """
    Pretrain once per (ratio, seed) and tabulate the validation masked MSE.

    Returns:
        pandas.DataFrame: ratio, mean_masked_mse, std_masked_mse, runs
    """
    rows = []
    for ratio in ratios:
        scores = []
        for seed in seeds:
            model = build_vsmae(sit_config, seed=seed)
            run_schedule = schedule.model_copy(update={'masking_ratio': float(ratio)})
            result = pretrain(dataset, model, run_schedule, patching, train_ids, val_ids, seed=seed)
            scores.append(result.val_mse)
        rows.append({'ratio': float(ratio), 'mean_masked_mse': float(np.mean(scores)),
                     'std_masked_mse': float(np.std(scores)), 'runs': len(scores)})
        logger.info(f"ratio {ratio}: masked_mse {np.mean(scores):.3f} +/- {np.std(scores):.3f}")
    return pd.DataFrame(rows, columns=['ratio', 'mean_masked_mse', 'std_masked_mse', 'runs'])
