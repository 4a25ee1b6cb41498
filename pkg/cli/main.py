import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

from core.ablation import ABLATIONS, run_ablation, run_sweep  # noqa: E402
from core.checkpoint import load_checkpoint  # noqa: E402
from core.config import RunConfig, load_run_config  # noqa: E402
from core.data import load_dataset  # noqa: E402
from core.errors import HarnessError, NumericError  # noqa: E402
from core.model import AnalyticSdf  # noqa: E402
from core.plotting import save_contour_figure  # noqa: E402
from core.trainer import (  # noqa: E402
    evaluate,
    generate_dataset,
    load_training_samples,
    model_from_checkpoint,
    select_split,
    semi_train,
    split_dataset,
    warmup_train,
)

LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")

logger = logging.getLogger(__name__)

# which phase budget --epochs overrides for each subcommand
_EPOCH_PHASE = {"warmup": "warmup", "semi": "semi", "ablate": "ablation"}


def _config(args: argparse.Namespace) -> RunConfig:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.dataset is not None:
        overrides["dataset"] = {"path": args.dataset}
    options = {}
    if getattr(args, "student_view", None):
        options["student_view"] = args.student_view
    if getattr(args, "ema_per_step", False):
        options["ema_per_step"] = True
    if options:
        overrides["options"] = options
    ema = {}
    if getattr(args, "raw_importance", False):
        ema["raw_importance"] = True
    if getattr(args, "controller_mode", None):
        ema["controller_mode"] = args.controller_mode
    if ema:
        overrides["ema_config"] = ema
    for key in ("n", "labeled_fraction"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.setdefault("dataset", {})[key] = value

    cfg = load_run_config(args.config, preset=args.preset, overrides=overrides)
    if args.epochs is not None and args.command in _EPOCH_PHASE:
        cfg = cfg.with_phase_epochs(_EPOCH_PHASE[args.command], args.epochs)
    return cfg


def cmd_gen_data(args, cfg: RunConfig) -> None:
    path = generate_dataset(cfg, strip_unlabeled_gt=args.strip_unlabeled_gt)
    print(f"dataset written to {path}")


def cmd_warmup(args, cfg: RunConfig) -> None:
    result = warmup_train(cfg)
    print(f"warm-up teacher written to {result.path}")


def _teacher(args, cfg: RunConfig):
    return load_checkpoint(args.teacher or cfg.out / "teacher_warmup.ckpt")


def cmd_semi(args, cfg: RunConfig) -> None:
    result = semi_train(cfg, _teacher(args, cfg), dump_importance_dir=args.dump_importance)
    print(f"best teacher from epoch {result.best_epoch} written to {cfg.out / 'teacher_best.ckpt'}")


def cmd_ablate(args, cfg: RunConfig) -> None:
    rows = run_ablation(cfg, _teacher(args, cfg), args.suite or list(ABLATIONS))
    for row in rows:
        print(f"{row['name']:<22} chamfer x100 {row['chamfer_x100']:.4f}  IoU {row['iou_pct']:.2f}")


def cmd_eval(args, cfg: RunConfig) -> None:
    _, samples = load_dataset(cfg.dataset_path, lock_unlabeled_gt=False)
    chosen = select_split(samples, args.split, cfg)
    if args.oracle:
        model_for = lambda s: AnalyticSdf(s.shape)  # noqa: E731
    else:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint or cfg.out / "teacher_best.ckpt"))
        model_for = lambda s: model  # noqa: E731
    result = evaluate(model_for, chosen, cfg.out / f"metrics_{args.split}.csv")
    m = result.mean
    print(f"{args.split}: chamfer x100 {m.chamfer_x100:.4f}  IoU {m.iou_pct:.2f}  "
          f"F {m.fscore_pct:.2f}  NC {m.normal_consistency:.4f}")


def cmd_plot(args, cfg: RunConfig) -> None:
    samples = load_training_samples(cfg)
    val = split_dataset(samples, cfg.options.val_fraction, cfg.seed).val[:args.n_samples]
    warm = load_checkpoint(args.warmup or cfg.out / "teacher_warmup.ckpt")
    semi = load_checkpoint(args.semi or cfg.out / "teacher_best.ckpt")
    path = save_contour_figure(args.out or cfg.out / "contours.png", val, warm, semi, cfg.dataset.grid)
    print(f"figure written to {path}")


def cmd_sweep(args, cfg: RunConfig) -> None:
    for row in run_sweep(cfg, args.fractions):
        print(f"fraction {row['labeled_fraction']:g}: chamfer x100 {row['warmup_chamfer_x100']:.4f} -> "
              f"{row['semi_chamfer_x100']:.4f}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "warmup": cmd_warmup,
    "semi": cmd_semi,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration layered over the preset")
    common.add_argument("--preset", default="toy", choices=["toy", "paper-scale"])
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int, help="epoch budget of this command's phase")
    common.add_argument("--output-dir")
    common.add_argument("--dataset", help="dataset .npz path (default: <output-dir>/dataset.npz)")

    parser = argparse.ArgumentParser(prog="sdf-semisup", description="Semi-supervised image-to-SDF training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the procedural dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--labeled-fraction", type=float)
    p.add_argument("--strip-unlabeled-gt", action="store_true", help="leave unlabeled ground truth out of the file")

    sub.add_parser("warmup", parents=[common], help="supervised warm-up of the teacher")

    p = sub.add_parser("semi", parents=[common], help="teacher-student training from the warm-up teacher")
    p.add_argument("--teacher", type=Path)
    p.add_argument("--dump-importance", type=Path, metavar="PATH",
                   help="directory that receives importance_epochNNN.csv for every epoch")
    p.add_argument("--raw-importance", action="store_true")
    p.add_argument("--ema-per-step", action="store_true")
    p.add_argument("--controller-mode", choices=["frozen", "fd"])
    p.add_argument("--student-view", choices=["strong", "weak"])

    p = sub.add_parser("ablate", parents=[common], help="run the component ablation suite")
    p.add_argument("--teacher", type=Path)
    p.add_argument("--suite", nargs="+", help=f"subset of {', '.join(ABLATIONS)}")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--split", default="val", choices=["val", "test"])
    p.add_argument("--oracle", action="store_true", help="score the analytic SDF instead of a network")

    p = sub.add_parser("plot", parents=[common], help="contour figure of warm-up vs semi-supervised teachers")
    p.add_argument("--warmup", type=Path)
    p.add_argument("--semi", type=Path)
    p.add_argument("--n-samples", type=int, default=4)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", parents=[common], help="warm-up and semi-supervised runs per labeled fraction")
    p.add_argument("--fractions", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=LOG_LEVEL.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except HarnessError as e:
        ctx = f"phase={e.phase or args.command}" + (f", epoch={e.epoch}" if e.epoch is not None else "")
        detail = e.message
        if isinstance(e, NumericError) and e.batch_index is not None:
            detail += f" (batch index {e.batch_index})"
        print(f"error [{ctx}]: {detail}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
