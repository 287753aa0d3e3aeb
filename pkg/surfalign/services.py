"""
Pipeline commands behind the CLI.

Each ``cmd_*`` function validates its inputs, runs one pipeline stage, writes
its artifacts into the run directory and registers them in the manifest.
"""
import os
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from surfalign.analysis.attnmap import aggregate, attention_maps, correlate_fields, export_aggregates
from surfalign.data_processing.datagen import make_world
from surfalign.data_processing.readers import get_latest_file, import_stimulus_embeddings
from surfalign.data_processing.splits import split_experiment, validation_ids
from surfalign.errors import ArgumentError, StateError
from surfalign.evaluation.lag import lag_scan, lag_significance
from surfalign.evaluation.retrieval import (
    RESULT_COLUMNS,
    CandidatePool,
    chance_rows,
    compute_embeddings,
    draw_trials,
    evaluate_retrieval,
    random_embeddings,
    result_from_ranks,
)
from surfalign.evaluation.ridge import ridge_baseline
from surfalign.evaluation.stats import TTEST_COLUMNS, two_sample_ttest
from surfalign.geometry.fields import SurfaceField
from surfalign.geometry.icosphere import generate_icosphere, write_mesh_text
from surfalign.geometry.patching import patching_for
from surfalign.models.clip import build_alignment_model
from surfalign.models.sit import build_encoder, log_model_summary, parameter_count
from surfalign.models.vsmae import build_vsmae
from surfalign.settings import Direction, Experiment, Modalities, Regime, architecture_hash, config_hash
from surfalign.storage.checkpoint import load_checkpoint, load_module_tensors, model_tensors, save_checkpoint
from surfalign.storage.container import read_dataset, write_dataset
from surfalign.storage.manifest import RunManifest, write_resolved_config
from surfalign.storage.results import save_summary, save_table
from surfalign.storage.surface_io import read_surface_field, write_surface_field, write_vertex_csv
from surfalign.training.alignment import train_alignment
from surfalign.training.pretrain import masking_ratio_sweep, pretrain

logger = logging.getLogger(__name__)

DATASET_FILE = 'dataset.simd'
VSMAE_FILE = 'vsmae.simc'


@dataclass
class RunContext:
    config: object
    run_dir: str
    manifest: RunManifest
    config_hash: str
    arch_hash: str
    force: bool = False

    def path(self, *parts):
        return os.path.join(self.run_dir, *parts)


def configure_runtime(threads=None, deterministic=True):
    """Cap torch worker threads and pin deterministic kernels."""
    if threads:
        torch.set_num_threads(int(threads))
    torch.use_deterministic_algorithms(bool(deterministic))


def open_run(config, command, force=False, **params):
    """
    Prepare the run directory for a command.

    Returns:
        RunContext: config, manifest and hashes shared by every command
    """
    run_dir = config.output_dir
    digest = config_hash(config)
    write_resolved_config(run_dir, config, digest)
    manifest = RunManifest(run_dir)
    manifest.record_command(command, digest, **params)
    configure_runtime(config.threads, config.deterministic)
    return RunContext(config=config, run_dir=run_dir, manifest=manifest, config_hash=digest,
                      arch_hash=architecture_hash(config), force=force)


def _resolve(ctx, given, artifact, pattern):
    """An explicit path, the manifest's artifact, or the newest matching file in the run directory."""
    path = given or ctx.manifest.artifact_path(artifact) or get_latest_file(ctx.run_dir, pattern)
    if path is None:
        raise StateError(f"no {artifact} given and none found in {ctx.run_dir}")
    if not os.path.exists(path):
        raise StateError(f"{artifact} file {path} does not exist")
    return path


def _encoder_checkpoint(ctx, given=None):
    """Attention reads the alignment encoder; a pretrained vsMAE encoder is used only when no alignment exists."""
    path = given or ctx.manifest.artifact_path('alignment') or get_latest_file(ctx.run_dir, '*alignment*.simc')
    if path is None:
        path = _resolve(ctx, None, 'vsmae', '*vsmae*.simc')
        logger.warning(f"No alignment checkpoint in {ctx.run_dir}; using the pretrained encoder {path}")
    if not os.path.exists(path):
        raise StateError(f"checkpoint file {path} does not exist")
    return path


def load_run_dataset(ctx, dataset_path=None, video=None, audio=None):
    dataset = read_dataset(_resolve(ctx, dataset_path, 'dataset', '*.simd'))
    if dataset.config.model_dump() != ctx.config.world.model_dump():
        logger.warning("Dataset world differs from the run config; using the dataset's world")
    if video or audio:
        import_stimulus_embeddings(dataset, video=video, audio=audio)
    return dataset


def _patching(ctx, dataset):
    coarse = dataset.mesh_level - ctx.config.patch_level_gap
    if coarse != ctx.config.coarse_level:
        raise ArgumentError(f"dataset mesh level {dataset.mesh_level} does not match the config's "
                            f"level {ctx.config.world.mesh_level}")
    return patching_for(dataset.mesh_level, coarse)


def _split(ctx, dataset, experiment):
    return split_experiment(dataset, experiment or ctx.config.align.experiment)


def cmd_mesh(level, out):
    """
    Generate an icosphere and export it as text.

    Returns:
        str: the ``V=.. F=..`` line printed to stdout
    """
    mesh = generate_icosphere(level)
    os.makedirs(out, exist_ok=True)
    write_mesh_text(mesh, os.path.join(out, f"ico{level}.txt"))
    line = f"V={mesh.num_vertices} F={mesh.num_faces}"
    print(line)
    return line


def cmd_synth(ctx):
    """Build the synthetic world and save it as a dataset container."""
    dataset = make_world(ctx.config.world, threads=ctx.config.threads)
    path = write_dataset(ctx.path(DATASET_FILE), dataset)
    ctx.manifest.add_artifact('dataset', path, ctx.config_hash, kind='dataset',
                              triplets=len(dataset), world_hash=config_hash(ctx.config.world))
    return path


def cmd_pretrain(ctx, dataset_path=None, ratio_sweep=False, sweep_seeds=3):
    """
    vsMAE pretraining on the training split; writes a checkpoint and the loss trace.

    Returns:
        dict: summary (validation masked MSE, mean-predictor MSE, parameters)
    """
    cfg = ctx.config
    dataset = load_run_dataset(ctx, dataset_path)
    patching = _patching(ctx, dataset)
    split = _split(ctx, dataset, None)
    train_ids, val_ids = validation_ids(dataset, split)

    model = build_vsmae(cfg.model, seed=cfg.seed)
    logger.info(f"Encoder parameters: {parameter_count(cfg.model):,}")
    result = pretrain(dataset, model, cfg.pretrain, patching, train_ids, val_ids, seed=cfg.seed)

    ckpt = save_checkpoint(ctx.path(VSMAE_FILE), model_tensors(model), ctx.arch_hash, step=result.iterations)
    ctx.manifest.add_artifact('vsmae', ckpt, ctx.config_hash, kind='checkpoint', step=result.iterations)
    loss = save_table(result.trace, ctx.path('pretrain_loss.csv'), ctx.config_hash)
    ctx.manifest.add_artifact('pretrain_loss', loss, ctx.config_hash, kind='table')

    summary = {'val_masked_mse': result.val_mse, 'mean_predictor_mse': result.oracle_mse,
               'ratio_to_mean_predictor': result.val_mse / result.oracle_mse,
               'encoder_parameters': parameter_count(cfg.model), 'iterations': result.iterations}
    if ratio_sweep:
        table = masking_ratio_sweep(dataset, cfg.model, cfg.pretrain, patching, train_ids, val_ids,
                                    seeds=tuple(cfg.seed + s for s in range(sweep_seeds)))
        path = save_table(table, ctx.path('ratio_sweep.csv'), ctx.config_hash)
        ctx.manifest.add_artifact('ratio_sweep', path, ctx.config_hash, kind='table')
        summary['best_ratio'] = float(table.loc[table['mean_masked_mse'].idxmin(), 'ratio'])
    save_summary(summary, ctx.path('pretrain_summary.json'), ctx.config_hash)
    return summary


def cmd_align(ctx, dataset_path=None, checkpoint_path=None, regime=None, modalities=None,
              video=None, audio=None):
    """
    Contrastive alignment in one of the three encoder regimes.

    Returns:
        dict: summary (regime, modalities, trainable parameters, final losses)
    """
    cfg = ctx.config
    regime = Regime(regime or cfg.align.regime)
    modalities = Modalities(modalities or cfg.align.modalities)
    dataset = load_run_dataset(ctx, dataset_path, video, audio)
    patching = _patching(ctx, dataset)
    split = _split(ctx, dataset, None)
    train_ids, val_ids = validation_ids(dataset, split)

    checkpoint = None
    if regime != Regime.SCRATCH:
        checkpoint = load_checkpoint(_resolve(ctx, checkpoint_path, 'vsmae', '*vsmae*.simc'),
                                     ctx.arch_hash, ctx.force)
    model = build_alignment_model(cfg.model, cfg.mapper, dataset.config.video_dim, dataset.config.audio_dim,
                                  seed=cfg.seed)
    parameters = log_model_summary({'encoder': model.encoder,
                                   **{f"mapper_{key}": mapper for key, mapper in model.mappers.items()}})
    result = train_alignment(dataset, model, regime, modalities, cfg.align, patching, train_ids, val_ids,
                             checkpoint=checkpoint, seed=cfg.seed)

    name = f"alignment_{regime.value}_{modalities.value}"
    ckpt = save_checkpoint(ctx.path(f"{name}.simc"), model_tensors(model), ctx.arch_hash,
                           step=cfg.align.iterations)
    ctx.manifest.add_artifact('alignment', ckpt, ctx.config_hash, kind='checkpoint',
                              regime=regime.value, modalities=modalities.value)
    loss = save_table(result.trace, ctx.path(f"{name}_loss.csv"), ctx.config_hash)
    ctx.manifest.add_artifact(f"{name}_loss", loss, ctx.config_hash, kind='table')

    train_rows = result.trace[result.trace['split'] == 'train']
    summary = {'regime': regime.value, 'modalities': modalities.value,
               'trainable_parameters': result.trainable_parameters,
               'parameters': parameters,
               'final_train_loss': float(train_rows['total'].iloc[-1])}
    save_summary(summary, ctx.path(f"{name}_summary.json"), ctx.config_hash)
    return summary


def load_alignment(ctx, dataset, checkpoint_path=None, untrained=False):
    cfg = ctx.config
    model = build_alignment_model(cfg.model, cfg.mapper, dataset.config.video_dim, dataset.config.audio_dim,
                                  seed=cfg.seed)
    if untrained:
        logger.warning("Evaluating an untrained model with random mappers")
        return model
    checkpoint = load_checkpoint(_resolve(ctx, checkpoint_path, 'alignment', '*alignment*.simc'),
                                 ctx.arch_hash, ctx.force)
    if not any(name.startswith('mappers.') for name in checkpoint.tensors):
        raise StateError("checkpoint holds no mappers; pass an alignment checkpoint")
    load_module_tensors(model, checkpoint.tensors)
    return model


def cmd_eval(ctx, dataset_path=None, checkpoint_path=None, experiment=None, eval_seeds=None,
             untrained=False, video=None, audio=None):
    """
    Retrieval on the test split: model, ridge baseline, random embeddings and
    analytic chance, repeated over evaluation seeds, with Welch t-tests.

    Returns:
        dict: summary written to summary.json
    """
    cfg = ctx.config
    ev = cfg.eval
    experiment = Experiment(experiment or ev.experiment)
    seeds = [cfg.seed + s for s in range(eval_seeds or ev.eval_seeds)]
    dataset = load_run_dataset(ctx, dataset_path, video, audio)
    patching = _patching(ctx, dataset)
    split = split_experiment(dataset, experiment)
    model = load_alignment(ctx, dataset, checkpoint_path, untrained)

    pool = CandidatePool.from_ids(dataset, split.test)
    all_ids = dataset.metadata['triplet_id'].to_numpy()
    embeddings = compute_embeddings(model, dataset, split.test, patching, modalities=('f',))
    embeddings.update(compute_embeddings(model, dataset, all_ids, patching, modalities=('V', 'A')))
    dim = embeddings['f'].shape[1]
    random_tables = {s: {m: random_embeddings(len(dataset), dim, s, stream=i) for i, m in enumerate('fVA')}
                     for s in seeds}

    model_rows, ridge_rows, random_rows, chance, per_seed, ttests = [], [], [], [], [], []
    ridge_cache = {}
    for task in ev.tasks:
        direction = Direction(task.direction)
        key = dict(direction=direction.value, mode=task.mode.value, M=task.M)
        trials = {s: draw_trials(pool, task, s) for s in seeds}

        model_ranks, model_top1 = [], []
        for s in seeds:
            result = evaluate_retrieval(trials[s], embeddings, task)
            model_ranks.append(result.ranks)
            model_top1.append(result.top(1))
            per_seed.append({**key, 'seed': s, 'method': 'model', 'top1': result.top(1)})
        model_rows.extend(result_from_ranks(np.concatenate(model_ranks), task).rows())
        chance.extend(chance_rows(task))

        if ev.run_random:
            ranks = []
            for s in seeds:
                result = evaluate_retrieval(trials[s], random_tables[s], task)
                ranks.append(result.ranks)
                per_seed.append({**key, 'seed': s, 'method': 'random', 'top1': result.top(1)})
            random_rows.extend(result_from_ranks(np.concatenate(ranks), task).rows())

        if ev.run_ridge:
            if direction.value not in ridge_cache:
                ridge_cache[direction.value] = ridge_baseline(dataset, split, task, ev.ridge_lambdas, embeddings,
                                                              seed=cfg.seed)
            baseline = ridge_cache[direction.value]
            table = baseline.embeddings(embeddings)
            ranks, ridge_top1 = [], []
            for s in seeds:
                result = evaluate_retrieval(trials[s], table, task)
                ranks.append(result.ranks)
                ridge_top1.append(result.top(1))
                per_seed.append({**key, 'seed': s, 'method': 'ridge', 'top1': result.top(1)})
            ridge_rows.extend(result_from_ranks(np.concatenate(ranks), task).rows(lam=baseline.best_lambda))
            if len(seeds) >= 2:
                test = two_sample_ttest(model_top1, ridge_top1, num_comparisons=len(ev.tasks))
                ttests.append({'comparison': 'model_vs_ridge', **key, 'mean_a': float(np.mean(model_top1)),
                               'mean_b': float(np.mean(ridge_top1)), 't': test.t, 'p_raw': test.p_raw,
                               'p_bonferroni': test.p_bonferroni})
            else:
                logger.warning("t-tests need at least 2 evaluation seeds; skipped")

    outputs = {
        'retrieval': (pd.DataFrame(model_rows, columns=RESULT_COLUMNS), 'retrieval.csv'),
        'retrieval_chance': (pd.DataFrame(chance, columns=RESULT_COLUMNS), 'retrieval_chance.csv'),
        'per_seed_top1': (pd.DataFrame(per_seed, columns=['direction', 'mode', 'M', 'seed', 'method', 'top1']),
                          'per_seed_top1.csv'),
    }
    if random_rows:
        outputs['retrieval_random'] = (pd.DataFrame(random_rows, columns=RESULT_COLUMNS), 'retrieval_random.csv')
    if ridge_rows:
        outputs['retrieval_ridge'] = (pd.DataFrame(ridge_rows, columns=RESULT_COLUMNS + ['lam']),
                                      'retrieval_ridge.csv')
    if ttests:
        outputs['ttests'] = (pd.DataFrame(ttests, columns=TTEST_COLUMNS), 'ttests.csv')
    plot = outputs['per_seed_top1'][0].groupby(['direction', 'mode', 'M', 'method'], sort=False)['top1']
    outputs['plot_top1'] = (plot.agg(['mean', 'std']).reset_index(), 'plot_top1.csv')
    for name, (df, filename) in outputs.items():
        path = save_table(df, ctx.path(filename), ctx.config_hash)
        ctx.manifest.add_artifact(name, path, ctx.config_hash, kind='table')

    summary = {
        'experiment': experiment.value,
        'seeds': seeds,
        'test_triplets': len(split.test),
        'untrained': untrained,
        'top1': {f"{r['direction']} {r['mode']} M={r['M']}": r['mean'] for r in model_rows if r['K'] == 1},
        'ridge_lambda': {d: b.best_lambda for d, b in ridge_cache.items()},
    }
    save_summary(summary, ctx.path('summary.json'), ctx.config_hash)
    return summary


def cmd_attention(ctx, dataset_path=None, checkpoint_path=None, clip_ids=None, layer=-1,
                  references=None, labels_path=None):
    """
    CLS attention maps of test clips: per-head projections aggregated over all
    maps, per head and per subject, plus correlations against reference fields.

    Returns:
        dict: summary with the number of maps and any correlations
    """
    cfg = ctx.config
    dataset = load_run_dataset(ctx, dataset_path)
    patching = _patching(ctx, dataset)
    checkpoint_path = _encoder_checkpoint(ctx, checkpoint_path)
    checkpoint = load_checkpoint(checkpoint_path, ctx.arch_hash, ctx.force)
    encoder = build_encoder(cfg.model, seed=cfg.seed)
    load_module_tensors(encoder, checkpoint.subset('encoder'))

    if clip_ids is None:
        split = _split(ctx, dataset, None)
        clip_ids = split.test[:16]
    clip_ids = np.asarray(clip_ids, dtype=np.int64)
    if clip_ids.size == 0:
        raise ArgumentError("no clips selected for attention maps")
    if clip_ids.min() < 0 or clip_ids.max() >= len(dataset):
        raise ArgumentError(f"clip ids must lie in 0..{len(dataset) - 1}")

    maps = attention_maps(encoder, dataset, clip_ids, patching, layer=layer)
    out_dir = ctx.path('attention')
    overall = aggregate(maps)
    paths = export_aggregates(overall, out_dir, 'attention_all')
    paths += export_aggregates(aggregate(maps, 'head'), out_dir, 'attention_head')
    paths += export_aggregates(aggregate(maps, 'subject'), out_dir, 'attention_subject')
    for path in paths:
        ctx.manifest.add_artifact(os.path.relpath(path, ctx.run_dir), path, ctx.config_hash, kind='attention')

    rows = []
    labels = read_surface_field(labels_path) if labels_path else None
    for ref_path in references or []:
        reference = read_surface_field(ref_path)
        row = {'reference': os.path.basename(ref_path), 'r': correlate_fields(overall[0].mean, reference)}
        if labels is not None:
            row['r_parcellated'] = correlate_fields(overall[0].mean, reference, labels)
        rows.append(row)
    if rows:
        path = save_table(pd.DataFrame(rows), ctx.path('attention_correlations.csv'), ctx.config_hash)
        ctx.manifest.add_artifact('attention_correlations', path, ctx.config_hash, kind='table')

    summary = {'maps': len(maps), 'clips': clip_ids.tolist(), 'layer': maps[0].metadata['layer'],
               'checkpoint': os.path.relpath(checkpoint_path, ctx.run_dir), 'correlations': rows}
    save_summary(summary, ctx.path('attention_summary.json'), ctx.config_hash)
    return summary


def cmd_lag(ctx, dataset_path=None, lags=None, modality='V'):
    """
    Lag scan with a significance map at the best lag.

    Returns:
        dict: summary with the per-lag table and the best lag
    """
    cfg = ctx.config
    lag_config = cfg.lag if lags is None else cfg.lag.model_copy(update={'lags': [int(x) for x in lags]})
    dataset = load_run_dataset(ctx, dataset_path)
    result = lag_scan(dataset, lag_config, modality=modality, threads=cfg.threads)
    significance = lag_significance(result.subject_maps[result.best_lag], lag_config.alpha)

    table = save_table(result.table, ctx.path('lag_scan.csv'), ctx.config_hash)
    ctx.manifest.add_artifact('lag_scan', table, ctx.config_hash, kind='table')
    lags_sorted = sorted(result.maps)
    maps = np.stack([np.nan_to_num(result.maps[lag]) for lag in lags_sorted], axis=1)
    surface = SurfaceField(mesh_level=dataset.mesh_level, values=maps,
                           metadata={'lags': lags_sorted, 'holdout_movie': result.holdout_movie})
    path = write_surface_field(ctx.path('lag_maps.simf'), surface)
    ctx.manifest.add_artifact('lag_maps', path, ctx.config_hash, kind='surface')
    columns = {f"r_lag{lag}": result.maps[lag] for lag in lags_sorted}
    columns.update({'p_raw': significance.p_raw, 'p_bonferroni': significance.p_corrected})
    path = write_vertex_csv(ctx.path('lag_maps.csv'), columns)
    ctx.manifest.add_artifact('lag_maps_csv', path, ctx.config_hash, kind='table')

    summary = {'best_lag': result.best_lag, 'table': result.table, 'significant_vertices': significance.significant,
               'alpha': lag_config.alpha, 'holdout_movie': result.holdout_movie}
    save_summary(summary, ctx.path('lag_summary.json'), ctx.config_hash)
    return summary
