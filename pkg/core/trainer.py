"""Two-stage pipeline: supervised warm-up of the teacher, then the teacher-student loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from core.checkpoint import Checkpoint, make_checkpoint, save_checkpoint
from core.config import RunConfig
from core.data import DatasetHeader, Sample, gen_dataset, grid_points, load_dataset, save_dataset
from core.errors import ConfigurationError, HarnessError, PreconditionError
from core.importance import ImportanceMap, dump_importance, estimate_importance, normalize_importance
from core.meta_ema import (
    EmaConfig,
    MetaControllerState,
    MomentumDecision,
    decide_momentum,
    ema_update_fixed,
    ema_update_regularized,
    fd_controller_step,
    init_controller,
)
from core.metrics import MetricsReport, SdfGrid, score_grid
from core.model import EncodedImages, MlpSdf, SdfModel, split_rows
from core.nnet import CompositeLoss, EikonalFD, L1Loss, NetworkSpec, ParamVector, forward, forward_backward, \
    init_network, sgd_step
from core.pseudo_weight import assess_batch
from core.runlog import METRICS_COLUMNS, write_csv, write_runlog
from core.state import MetricsRow, RunLogRow

logger = logging.getLogger(__name__)

PHASE_WARMUP = "warmup"
PHASE_SEMI = "semi"

# independent RNG streams derived from the run seed
STREAM_SPLIT = 0
STREAM_WARMUP = 1
STREAM_SEMI = 2


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([seed, which])


@dataclass(frozen=True)
class DataSplit:
    train: list[Sample]
    val: list[Sample]
    unlabeled: list[Sample]


def split_dataset(samples: Sequence[Sample], val_fraction: float, seed: int) -> DataSplit:
    """Hold out a fixed share of the labeled samples for validation."""
    labeled = [s for s in samples if s.labeled]
    unlabeled = [s for s in samples if not s.labeled]
    if not labeled:
        raise ConfigurationError("dataset has no labeled samples")
    if len(labeled) < 2:
        logger.warning("Only one labeled sample; validating on the training sample")
        return DataSplit(labeled, labeled, unlabeled)
    n_val = min(max(1, int(round(val_fraction * len(labeled)))), len(labeled) - 1)
    order = stream(seed, STREAM_SPLIT).permutation(len(labeled))
    val_idx = set(order[:n_val].tolist())
    return DataSplit(
        train=[s for i, s in enumerate(labeled) if i not in val_idx],
        val=[s for i, s in enumerate(labeled) if i in val_idx],
        unlabeled=unlabeled,
    )


def generate_dataset(cfg: RunConfig, strip_unlabeled_gt: bool = False) -> Path:
    d = cfg.dataset
    samples = gen_dataset(d.n, d.labeled_fraction, cfg.seed, height=d.height, width=d.width, grid=d.grid,
                          n_queries=d.n_queries)
    header = DatasetHeader(n=d.n, labeled_fraction=d.labeled_fraction, seed=cfg.seed, H=d.height, W=d.width,
                           G=d.grid, n_queries=d.n_queries)
    return save_dataset(cfg.dataset_path, samples, header, strip_unlabeled_gt=strip_unlabeled_gt)


def load_training_samples(cfg: RunConfig) -> list[Sample]:
    _, samples = load_dataset(cfg.dataset_path, lock_unlabeled_gt=True)
    return samples


# -- evaluation ---------------------------------------------------------------


def _checked(report: MetricsReport, sample: Sample) -> MetricsReport:
    if report.empty_surface:
        logger.warning(f"Sample {sample.index}: predicted surface is empty, scoring the worst case")
    return report


def score_sample(model: SdfModel, sample: Sample) -> MetricsReport:
    occupancy = sample.occupancy
    grid = SdfGrid.from_model(model, sample.image, occupancy.shape[0])
    return _checked(score_grid(grid, sample.shape, occupancy), sample)


def score_samples(model_for: Callable[[Sample], SdfModel], samples: Sequence[Sample]) -> list[MetricsReport]:
    return [score_sample(model_for(s), s) for s in samples]


@dataclass(frozen=True, eq=False)
class ValidationSet:
    """Held-out labeled samples with their query and grid rows encoded once."""

    samples: list[Sample]
    rows: np.ndarray
    targets: np.ndarray
    grid_rows: np.ndarray
    resolution: int

    @classmethod
    def build(cls, samples: Sequence[Sample], cells: int) -> ValidationSet:
        if not samples:
            raise PreconditionError("validation needs at least one labeled sample")
        enc = EncodedImages.of(np.stack([s.image for s in samples]), cells)
        G = samples[0].occupancy.shape[0]
        return cls(
            samples=list(samples),
            rows=enc.rows([s.points for s in samples]),
            targets=np.concatenate([s.gt_sdf for s in samples]),
            grid_rows=enc.rows([grid_points(G)] * len(samples)),
            resolution=G,
        )

    def loss(self, params: ParamVector, spec: NetworkSpec) -> float:
        """Mean SDF-L1 over every query point."""
        return float(np.mean(np.abs(forward(params, spec, self.rows)[:, 0] - self.targets)))

    def score(self, params: ParamVector, spec: NetworkSpec) -> MetricsReport:
        G = self.resolution
        values = forward(params, spec, self.grid_rows)[:, 0].reshape(len(self.samples), G, G)
        return MetricsReport.mean([
            _checked(score_grid(SdfGrid(v), s.shape, s.occupancy), s) for v, s in zip(values, self.samples)
        ])


@dataclass(frozen=True)
class EvalResult:
    rows: list[MetricsRow]
    mean: MetricsReport


def _metrics_row(sample: str, report: MetricsReport) -> MetricsRow:
    return MetricsRow(sample=sample, chamfer_x100=report.chamfer_x100, iou_pct=report.iou_pct,
                      fscore_pct=report.fscore_pct, nc=report.normal_consistency,
                      empty_surface=report.empty_surface)


def evaluate(model_for: Callable[[Sample], SdfModel], samples: Sequence[Sample],
             out_path: str | Path | None = None) -> EvalResult:
    """Score every sample, append the mean row, optionally write the CSV."""
    if not samples:
        raise PreconditionError("nothing to evaluate")
    reports = score_samples(model_for, samples)
    mean = MetricsReport.mean(reports)
    rows = [_metrics_row(str(s.index), r) for s, r in zip(samples, reports)]
    rows.append(_metrics_row("mean", mean))
    if out_path is not None:
        write_csv(out_path, METRICS_COLUMNS, rows)
    logger.info(f"Evaluated {len(samples)} samples: chamfer x100 {mean.chamfer_x100:.4f}, IoU {mean.iou_pct:.2f}")
    return EvalResult(rows, mean)


def select_split(samples: Sequence[Sample], split: str, cfg: RunConfig) -> list[Sample]:
    """val: the held-out labeled samples; test: the unlabeled pool (needs its ground truth)."""
    if split == "val":
        return split_dataset(samples, cfg.options.val_fraction, cfg.seed).val
    if split == "test":
        pool = [s for s in samples if not s.labeled]
        if not pool:
            raise ConfigurationError("dataset has no unlabeled samples to test on")
        if not all(s.has_ground_truth for s in pool):
            raise ConfigurationError("unlabeled ground truth was stripped from this dataset; test split unavailable")
        return pool
    raise ConfigurationError(f"unknown split {split!r}; use val or test")


def model_from_checkpoint(ckpt: Checkpoint) -> MlpSdf:
    return MlpSdf(ckpt.params(), ckpt.spec, ckpt.meta.feature_cells)


# -- shared helpers -----------------------------------------------------------


def _metric_columns(report: MetricsReport | None) -> dict:
    if report is None:
        return {"chamfer_x100": None, "iou_pct": None, "fscore_pct": None, "nc": None}
    return {"chamfer_x100": report.chamfer_x100, "iou_pct": report.iou_pct,
            "fscore_pct": report.fscore_pct, "nc": report.normal_consistency}


def _scored(epoch: int, epochs: int, every: int) -> bool:
    return epoch == 0 or epoch == epochs or epoch % every == 0


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.5g}"


def _emit(row: RunLogRow) -> None:
    logger.info(
        f"[{row['phase']}] epoch {row['epoch']}: lr {_fmt(row['lr'])}, train {_fmt(row['train_loss'])}, "
        f"val teacher {_fmt(row['val_loss_teacher'])}, m {_fmt(row['m_effective'])}, "
        f"chamfer x100 {_fmt(row['chamfer_x100'])}"
    )


# -- warm-up ------------------------------------------------------------------


@dataclass(frozen=True)
class WarmupResult:
    checkpoint: Checkpoint
    rows: list[RunLogRow]
    path: Path


def warmup_train(cfg: RunConfig, samples: Sequence[Sample] | None = None) -> WarmupResult:
    """Supervised SDF-L1 training of the teacher on the labeled training samples."""
    samples = load_training_samples(cfg) if samples is None else list(samples)
    split = split_dataset(samples, cfg.options.val_fraction, cfg.seed)
    spec = cfg.spec()
    cells = cfg.network.feature_cells
    phase = cfg.warmup
    params = init_network(spec)
    rng = stream(cfg.seed, STREAM_WARMUP)
    rows: list[RunLogRow] = []
    logger.info(f"Warm-up: {len(split.train)} training / {len(split.val)} validation samples, {phase.epochs} epochs")

    train_points = [s.points for s in split.train]
    train_rows = split_rows(EncodedImages.of(np.stack([s.image for s in split.train]), cells).rows(train_points),
                            train_points)
    validation = ValidationSet.build(split.val, cells)

    for epoch in range(1, phase.epochs + 1):
        try:
            lr = phase.lr_at(epoch)
            order = rng.permutation(len(split.train))
            losses = []
            for b, start in enumerate(range(0, len(order), phase.batch_size)):
                batch = order[start:start + phase.batch_size]
                X = np.vstack([train_rows[i] for i in batch])
                y = np.concatenate([split.train[i].gt_sdf for i in batch])
                loss, grad = forward_backward(params, spec, X, L1Loss(y))
                params = sgd_step(params, grad, lr)
                losses.append(loss)
                logger.debug(f"[warmup] epoch {epoch} batch {b}: loss {loss:.5f}")
            v_loss = validation.loss(params, spec)
            report = validation.score(params, spec) if _scored(epoch, phase.epochs, phase.eval_every) else None
        except HarnessError as e:
            raise e.with_context(PHASE_WARMUP, epoch) from e
        row = RunLogRow(
            phase=PHASE_WARMUP, epoch=epoch, lr=lr, train_loss=float(np.mean(losses)),
            val_loss_teacher=v_loss, val_loss_student=None,
            mean_w_pseudo=None, min_w_pseudo=None, max_w_pseudo=None,
            m_base=None, m_effective=None, gamma=None, reset_flag=None,
            **_metric_columns(report),
        )
        rows.append(row)
        _emit(row)

    ckpt = make_checkpoint(params, spec, phase=PHASE_WARMUP, epoch=phase.epochs, seed=cfg.seed, feature_cells=cells)
    path = save_checkpoint(cfg.out / "teacher_warmup.ckpt", ckpt)
    write_runlog(cfg.out / "runlog.csv", PHASE_WARMUP, rows)
    return WarmupResult(ckpt, rows, path)


# -- semi-supervised ----------------------------------------------------------


def batch_composition(n_train: int, n_unlabeled: int, batch_size: int) -> tuple[int, int]:
    """(labeled, unlabeled) per mixed batch: at least one of each, batch_size in total."""
    if batch_size < 2:
        raise ConfigurationError(f"mixed batches need batch_size >= 2, got {batch_size}")
    ratio = n_train / (n_train + n_unlabeled)
    n_lab = min(max(1, int(round(batch_size * ratio))), batch_size - 1)
    return n_lab, batch_size - n_lab


def mixed_batches(train: Sequence[Sample], unlabeled: Sequence[Sample], batch_size: int,
                  rng: np.random.Generator) -> Iterator[tuple[list[Sample], list[Sample]]]:
    """One pass over the unlabeled pool; labeled samples fill each batch in the global ratio."""
    if not unlabeled:
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            yield [train[i] for i in order[start:start + batch_size]], []
        return
    n_lab, n_unl = batch_composition(len(train), len(unlabeled), batch_size)
    unl_order = rng.permutation(len(unlabeled))
    lab_order = rng.permutation(len(train))
    cursor = 0
    for start in range(0, len(unl_order), n_unl):
        picked = []
        for _ in range(n_lab):
            if cursor == len(lab_order):
                lab_order, cursor = rng.permutation(len(train)), 0
            picked.append(train[lab_order[cursor]])
            cursor += 1
        yield picked, [unlabeled[i] for i in unl_order[start:start + n_unl]]


def n_mixed_batches(n_train: int, n_unlabeled: int, batch_size: int) -> int:
    if n_unlabeled == 0:
        return math.ceil(n_train / batch_size)
    return math.ceil(n_unlabeled / batch_composition(n_train, n_unlabeled, batch_size)[1])


@dataclass
class _BatchStats:
    losses: list[float] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)


def _eikonal_rows(enc: EncodedImages, points: list[np.ndarray], h: float) -> np.ndarray:
    shifts = ((h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h))
    return np.vstack([enc.rows([p + np.array(shift) for p in points]) for shift in shifts])


def semi_step(student: ParamVector, teacher: ParamVector, spec: NetworkSpec, cells: int,
              labeled: Sequence[Sample], unlabeled: Sequence[Sample], cfg: RunConfig, lr: float,
              rng: np.random.Generator, stats: _BatchStats) -> ParamVector:
    """One student update on a mixed batch.

    Per unlabeled sample u the loss is (1 - lam w_u) L_sup + lam w_u L_unsup,u,
    averaged over the unlabeled samples of the batch, which becomes per-row L1
    weights over one stacked forward pass.
    """
    if not labeled:
        raise PreconditionError("a student update needs at least one labeled sample")
    opts = cfg.options
    lam = cfg.weight_params.lam

    images = [s.image for s in labeled]
    points = [s.points for s in labeled]
    targets = [s.gt_sdf for s in labeled]
    n_sup_rows = sum(len(p) for p in points)

    unsup_weights: list[float] = []
    if opts.weighting != "none" and lam > 0:
        teacher_model = MlpSdf(teacher, spec, cells)
        for u, a in zip(unlabeled, assess_batch(teacher_model, unlabeled, rng, cfg.weight_params)):
            w = a.weight if opts.weighting == "adaptive" else opts.fixed_weight
            unsup_weights.append(w)
            stats.weights.append(w)
            if opts.student_view == "strong":
                images.append(a.strong_image)
                points.append(u.points)
            else:
                images.append(a.weak_image)
                points.append(a.weak_points)
            targets.append(a.pseudo_labels)

    w_bar = float(np.mean(unsup_weights)) if unsup_weights else 0.0
    row_w = [np.full(n_sup_rows, (1.0 - lam * w_bar) / n_sup_rows)]
    for w, p in zip(unsup_weights, points[len(labeled):]):
        row_w.append(np.full(len(p), lam * w / (len(unsup_weights) * len(p))))
    enc = EncodedImages.of(np.stack(images), cells)
    X = enc.rows(points)
    regression = L1Loss(np.concatenate(targets), np.concatenate(row_w))
    if opts.grad_penalty > 0:
        n = len(X)
        eik = EikonalFD(opts.grad_penalty_step, np.full(n, opts.grad_penalty / n))
        X = np.vstack([X, _eikonal_rows(enc, points, opts.grad_penalty_step)])
        loss_fn = CompositeLoss(((regression, slice(0, n)), (eik, slice(n, 5 * n))))
    else:
        loss_fn = regression
    loss, grad = forward_backward(student, spec, X, loss_fn)
    stats.losses.append(loss)
    return sgd_step(student, grad, lr)


@dataclass
class _EmaState:
    cfg: EmaConfig
    ctrl: MetaControllerState
    last: MomentumDecision | None = None


def _ema_apply(teacher: ParamVector, student: ParamVector, m: float, omega: ImportanceMap | None,
               cfg: EmaConfig) -> ParamVector:
    if omega is not None:
        return ema_update_regularized(teacher, student, m, omega, cfg.eta)
    return ema_update_fixed(teacher, student, m)


def update_teacher(teacher: ParamVector, student: ParamVector, step: int, spec: NetworkSpec,
                   validation: ValidationSet, omega: ImportanceMap | None, state: _EmaState,
                   ema_enabled: bool) -> tuple[ParamVector, MomentumDecision | None]:
    """One teacher update: copy when EMA is off, fixed m0, or the meta-adaptive momentum."""
    if not ema_enabled:
        return student, None
    cfg = state.cfg
    if not cfg.use_dynamic:
        return _ema_apply(teacher, student, cfg.m0, omega, cfg), None
    t_loss = validation.loss(teacher, spec)
    s_loss = validation.loss(student, spec)
    decision = decide_momentum(cfg, state.ctrl, step, t_loss, s_loss)
    return _ema_apply(teacher, student, decision.m, omega, cfg), decision


def train_controller(teacher: ParamVector, student: ParamVector, step: int, spec: NetworkSpec,
                     validation: ValidationSet, omega: ImportanceMap | None,
                     state: _EmaState) -> MetaControllerState:
    """Finite-difference step on the controller against the updated teacher's validation loss."""
    t_loss = validation.loss(teacher, spec)
    s_loss = validation.loss(student, spec)
    cfg = state.cfg

    def objective(ctrl: MetaControllerState) -> float:
        m = decide_momentum(cfg, ctrl, step, t_loss, s_loss).m
        return validation.loss(_ema_apply(teacher, student, m, omega, cfg), spec)

    return fd_controller_step(state.ctrl, objective, cfg.controller_lr, cfg.controller_fd_step)


@dataclass(frozen=True)
class SemiResult:
    best_teacher: Checkpoint
    student: Checkpoint
    best_epoch: int
    rows: list[RunLogRow]
    final_teacher: Checkpoint


def semi_train(cfg: RunConfig, teacher_ckpt: Checkpoint, samples: Sequence[Sample] | None = None,
               dump_importance_dir: str | Path | None = None) -> SemiResult:
    """Teacher-student refinement starting from the warm-up teacher; the student starts as its copy."""
    samples = load_training_samples(cfg) if samples is None else list(samples)
    split = split_dataset(samples, cfg.options.val_fraction, cfg.seed)
    if not split.unlabeled:
        logger.warning("No unlabeled samples; the semi-supervised phase trains on labeled data only")
    spec = teacher_ckpt.spec
    cells = teacher_ckpt.meta.feature_cells
    phase = cfg.semi
    opts = cfg.options
    teacher = teacher_ckpt.params()
    student = teacher
    rng = stream(cfg.seed, STREAM_SEMI)
    validation = ValidationSet.build(split.val, cells)

    steps_per_epoch = n_mixed_batches(len(split.train), len(split.unlabeled), phase.batch_size)
    total = phase.epochs * (steps_per_epoch if opts.ema_per_step else 1)
    ema_cfg = cfg.ema_config.model_copy(update={"total_steps": max(total, 1)})
    state = _EmaState(ema_cfg, init_controller(ema_cfg.controller_hidden, ema_cfg.controller_seed))
    use_importance = opts.ema_enabled and ema_cfg.use_importance
    fd_controller = opts.ema_enabled and ema_cfg.use_dynamic and ema_cfg.controller_mode == "fd"

    start = validation.score(teacher, spec)
    start_loss = validation.loss(teacher, spec)
    rows: list[RunLogRow] = [RunLogRow(
        phase=PHASE_SEMI, epoch=0, lr=phase.lr_at(0), train_loss=None,
        val_loss_teacher=start_loss, val_loss_student=start_loss,
        mean_w_pseudo=None, min_w_pseudo=None, max_w_pseudo=None,
        m_base=None, m_effective=None, gamma=None, reset_flag=None,
        **_metric_columns(start),
    )]
    _emit(rows[0])
    best_chamfer, best_teacher, best_epoch = start.chamfer_x100, teacher, 0
    step = 0

    for epoch in range(1, phase.epochs + 1):
        try:
            lr = phase.lr_at(epoch)
            omega = None
            if use_importance and split.unlabeled:
                omega = estimate_importance(MlpSdf(teacher, spec, cells), split.unlabeled,
                                            cfg.importance.n_batches, cfg.importance.batch_size, rng)
                if not ema_cfg.raw_importance:
                    omega = normalize_importance(omega)
                if dump_importance_dir is not None:
                    dump_importance(Path(dump_importance_dir) / f"importance_epoch{epoch:03d}.csv", omega)

            stats = _BatchStats()
            decision = None
            fd_due = fd_controller and epoch % ema_cfg.controller_every == 0
            for b, (lab, unl) in enumerate(mixed_batches(split.train, split.unlabeled, phase.batch_size, rng)):
                student = semi_step(student, teacher, spec, cells, lab, unl, cfg, lr, rng, stats)
                logger.debug(f"[semi] epoch {epoch} batch {b}: loss {stats.losses[-1]:.5f}")
                if opts.ema_per_step:
                    step += 1
                    teacher, decision = update_teacher(teacher, student, step, spec, validation, omega,
                                                       state, opts.ema_enabled)
            if opts.ema_per_step:
                # the controller learns from the epoch's last teacher/student pair
                if fd_due:
                    state.ctrl = train_controller(teacher, student, step, spec, validation, omega, state)
            else:
                step = epoch
                if fd_due:
                    state.ctrl = train_controller(teacher, student, step, spec, validation, omega, state)
                teacher, decision = update_teacher(teacher, student, step, spec, validation, omega,
                                                   state, opts.ema_enabled)
            report = validation.score(teacher, spec) if _scored(epoch, phase.epochs, phase.eval_every) else None
            t_loss = validation.loss(teacher, spec)
            s_loss = validation.loss(student, spec)
        except HarnessError as e:
            raise e.with_context(PHASE_SEMI, epoch) from e

        w = stats.weights
        row = RunLogRow(
            phase=PHASE_SEMI, epoch=epoch, lr=lr, train_loss=float(np.mean(stats.losses)) if stats.losses else None,
            val_loss_teacher=t_loss,
            val_loss_student=s_loss,
            mean_w_pseudo=float(np.mean(w)) if w else None,
            min_w_pseudo=float(np.min(w)) if w else None,
            max_w_pseudo=float(np.max(w)) if w else None,
            m_base=decision.m_base if decision else None,
            m_effective=decision.m_effective if decision else (ema_cfg.m0 if opts.ema_enabled else None),
            gamma=decision.gamma if decision else None,
            reset_flag=decision.reset if decision else None,
            **_metric_columns(report),
        )
        rows.append(row)
        _emit(row)
        if report is not None and report.chamfer_x100 < best_chamfer:
            best_chamfer, best_teacher, best_epoch = report.chamfer_x100, teacher, epoch

    logger.info(f"Semi-supervised phase done: best teacher at epoch {best_epoch}, chamfer x100 {best_chamfer:.4f}")
    meta = dict(seed=cfg.seed, feature_cells=cells)
    best_ckpt = make_checkpoint(best_teacher, spec, phase=PHASE_SEMI, epoch=best_epoch, **meta)
    student_ckpt = make_checkpoint(student, spec, phase=PHASE_SEMI, epoch=phase.epochs, **meta)
    save_checkpoint(cfg.out / "teacher_best.ckpt", best_ckpt)
    save_checkpoint(cfg.out / "student_final.ckpt", student_ckpt)
    write_runlog(cfg.out / "runlog.csv", PHASE_SEMI, rows)
    final_ckpt = make_checkpoint(teacher, spec, phase=PHASE_SEMI, epoch=phase.epochs, **meta)
    return SemiResult(best_ckpt, student_ckpt, best_epoch, rows, final_ckpt)


def predict_grid(ckpt: Checkpoint, image: np.ndarray, resolution: int) -> np.ndarray:
    """SDF of a checkpointed network on the G x G cell centres."""
    return SdfGrid.from_model(model_from_checkpoint(ckpt), image, resolution).values
