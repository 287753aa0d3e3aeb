"""
Command-line interface: one executable, one subcommand per pipeline stage.

    mesh       export an icosphere and print its vertex and face counts
    synth      generate the synthetic dataset container
    pretrain   vsMAE pretraining (optionally the masking-ratio sweep)
    align      contrastive alignment in the frozen, scratch or finetune regime
    eval       retrieval with ridge and random baselines and t-tests
    attention  CLS attention maps projected to the sphere
    lag        temporal lag scan

Failures print one ``ERROR {json}`` line to stderr and exit with status 2
(1 for unexpected exceptions).
"""
import os
import sys
import json
import logging
import argparse

from pydantic import ValidationError

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from config import LOG_FORMAT
from surfalign import services
from surfalign.errors import SurfAlignError
from surfalign.settings import Experiment, Modalities, Regime, load_run_config

logger = logging.getLogger(__name__)


def _common(parser):
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument("--out", help="run directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="master seed (SIM_SEED in the environment wins)")
    parser.add_argument("--threads", type=int, help="worker thread cap")
    parser.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="force deterministic kernels and reduction order")
    parser.add_argument("--force", action="store_true", help="load checkpoints despite a config hash mismatch")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--dataset", help="dataset container (default: the run's dataset)")


def build_parser():
    parser = argparse.ArgumentParser(prog="surfalign", description="Surface fMRI to stimulus alignment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="export an icosphere")
    p.add_argument("level", type=int)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    _common(p)

    p = sub.add_parser("pretrain", help="vsMAE pretraining")
    _common(p)
    p.add_argument("--ratio-sweep", action="store_true", help="also run the masking-ratio sweep")
    p.add_argument("--sweep-seeds", type=int, default=3)

    p = sub.add_parser("align", help="contrastive alignment")
    _common(p)
    p.add_argument("--checkpoint", help="vsMAE checkpoint (frozen and finetune regimes)")
    p.add_argument("--regime", choices=[r.value for r in Regime])
    p.add_argument("--modalities", choices=[m.value for m in Modalities])
    p.add_argument("--video-embeddings", help=".npy/.npz video embeddings replacing the dataset's")
    p.add_argument("--audio-embeddings", help=".npy/.npz audio embeddings replacing the dataset's")

    p = sub.add_parser("eval", help="retrieval evaluation")
    _common(p)
    p.add_argument("--checkpoint", help="alignment checkpoint")
    p.add_argument("--experiment", choices=[e.value for e in Experiment])
    p.add_argument("--eval-seeds", type=int)
    p.add_argument("--untrained", action="store_true", help="evaluate a randomly initialised model")
    p.add_argument("--video-embeddings")
    p.add_argument("--audio-embeddings")

    p = sub.add_parser("attention", help="CLS attention maps")
    _common(p)
    p.add_argument("--checkpoint", help="alignment or vsMAE checkpoint")
    p.add_argument("--clip-ids", type=int, nargs="+")
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--reference", action="append", help="SIMF reference field to correlate against")
    p.add_argument("--labels", help="SIMF region-label field for parcellated correlation")

    p = sub.add_parser("lag", help="temporal lag scan")
    _common(p)
    p.add_argument("--lags", type=int, nargs="+")
    p.add_argument("--modality", choices=["V", "A"], default="V")
    return parser


def _overrides(args):
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.deterministic is not None:
        overrides["deterministic"] = args.deterministic
    return overrides


def dispatch(args):
    if args.command == "mesh":
        return services.cmd_mesh(args.level, args.out)

    config = load_run_config(args.config, _overrides(args))
    params = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level", "force")}
    ctx = services.open_run(config, args.command, force=args.force, **params)
    if args.command == "synth":
        return services.cmd_synth(ctx)
    if args.command == "pretrain":
        return services.cmd_pretrain(ctx, args.dataset, args.ratio_sweep, args.sweep_seeds)
    if args.command == "align":
        return services.cmd_align(ctx, args.dataset, args.checkpoint, args.regime, args.modalities,
                                  args.video_embeddings, args.audio_embeddings)
    if args.command == "eval":
        return services.cmd_eval(ctx, args.dataset, args.checkpoint, args.experiment, args.eval_seeds,
                                 args.untrained, args.video_embeddings, args.audio_embeddings)
    if args.command == "attention":
        return services.cmd_attention(ctx, args.dataset, args.checkpoint, args.clip_ids, args.layer,
                                      args.reference, args.labels)
    if args.command == "lag":
        return services.cmd_lag(ctx, args.dataset, args.lags, args.modality)
    raise SurfAlignError(f"unknown command {args.command}")


def _error_line(payload):
    print(f"ERROR {json.dumps(payload, sort_keys=True)}", file=sys.stderr)


def run(argv=None):
    """
    Parse ``argv`` and run one command.

    Returns:
        int: process exit status
    """
    args = build_parser().parse_args(argv)
    logging.getLogger().setLevel(getattr(logging, args.log_level))
    try:
        dispatch(args)
    except SurfAlignError as e:
        logger.error(f"{args.command} failed: {e.message}")
        _error_line(e.to_dict())
        return 2
    except ValidationError as e:
        logger.error(f"{args.command} failed: invalid configuration")
        _error_line({"code": "config", "type": "ValidationError", "message": str(e)})
        return 2
    except FileNotFoundError as e:
        logger.error(f"{args.command} failed: {e}")
        _error_line({"code": "missing_file", "type": "FileNotFoundError", "message": str(e)})
        return 2
    except Exception as e:
        logger.exception(f"Unhandled exception in {args.command}: {str(e)}")
        _error_line({"code": "internal", "type": type(e).__name__, "message": str(e)})
        return 1
    return 0


def main():
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    sys.exit(run())


if __name__ == "__main__":
    main()
