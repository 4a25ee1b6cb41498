from typing import Optional, TypedDict


class RunLogRow(TypedDict):
    phase: str
    epoch: int
    lr: float
    train_loss: Optional[float]
    val_loss_teacher: float
    val_loss_student: Optional[float]
    mean_w_pseudo: Optional[float]
    min_w_pseudo: Optional[float]
    max_w_pseudo: Optional[float]
    m_base: Optional[float]
    m_effective: Optional[float]
    gamma: Optional[float]
    reset_flag: Optional[bool]
    chamfer_x100: Optional[float]  # None on epochs without surface metrics
    iou_pct: Optional[float]
    fscore_pct: Optional[float]
    nc: Optional[float]


class MetricsRow(TypedDict):
    sample: str  # sample index, or "mean" for the aggregate row
    chamfer_x100: float
    iou_pct: float
    fscore_pct: float
    nc: float
    empty_surface: bool
