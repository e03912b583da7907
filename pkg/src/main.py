import argparse
import sys
from typing import List, Optional

from DataUtil import IdxFormatError
from DetectorService import AttemptError
from DiffusionUtil import TrainingDivergedError
from ExperimentService import ExperimentService, ConfigError, ABLATION_AXES
from MaskUtil import MaskError
from Util import setup_logger
from masking import support_mask_variant
from metrics import DistanceError, support_metric_kind
from numerics import GraphError, NonFiniteGradientError, ShapeError

logger = setup_logger('main')

COMMAND_ERRORS = (ConfigError, IdxFormatError, AttemptError, TrainingDivergedError, MaskError, DistanceError,
                  GraphError, NonFiniteGradientError, ShapeError, NotImplementedError, ValueError, OSError)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='JSON or YAML config; a run.json replays an earlier run')
    parser.add_argument('--seed', type=int, help='global seed (non-negative)')
    parser.add_argument('--out', default='out', help='output directory')
    parser.add_argument('--workers', type=int, help='scoring threads')


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog='lmd', description='Lift, map, detect: diffusion-based OOD detection.')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='train the in-domain diffusion model')
    _common(train)
    train.add_argument('--epochs', type=int)

    score = commands.add_parser('score', help='score in-domain and out-of-domain test images')
    _common(score)
    score.add_argument('--checkpoint')
    score.add_argument('--attempts', type=int)
    score.add_argument('--mask', choices=support_mask_variant)
    score.add_argument('--grid-size', dest='grid_size', type=int)
    score.add_argument('--metric', choices=support_metric_kind)
    score.add_argument('--lift', choices=['inpaint', 'denoise'])

    evaluate = commands.add_parser('eval', help='ROC-AUC of two score CSVs')
    _common(evaluate)
    evaluate.add_argument('in_csv')
    evaluate.add_argument('out_csv')

    ablate = commands.add_parser('ablate', help='sweep one detector axis over a single checkpoint')
    _common(ablate)
    ablate.add_argument('--axis', choices=ABLATION_AXES)
    ablate.add_argument('--checkpoint')

    sample = commands.add_parser('sample', help='unconditional samples from a checkpoint')
    _common(sample)
    sample.add_argument('--checkpoint')

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    flags = {key: value for key, value in vars(args).items()
             if key not in ('command', 'config', 'out', 'in_csv', 'out_csv')}
    try:
        experiment = ExperimentService(args.config, flags)
        if args.command == 'train':
            experiment.cmd_train(args.out)
        elif args.command == 'score':
            experiment.cmd_score(args.out)
        elif args.command == 'eval':
            experiment.cmd_eval(args.in_csv, args.out_csv, args.out)
        elif args.command == 'ablate':
            experiment.cmd_ablate(args.out)
        elif args.command == 'sample':
            experiment.cmd_sample(args.out)
    except COMMAND_ERRORS as ex:
        logger.error(f"{args.command} failed: {ex}")
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
