"""Analytic training-compute accounting under the 6ND / 2ND model.

Training a model of N parameters on D tokens costs 6*N*D FLOPs; running a
frozen teacher forward over the same tokens adds 2*N_T*D. The cost ratio
of distillation-with-teacher over the teacher-free run is therefore
1 + N_T / (3 * N_S), independent of D.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

TRAIN_FLOPS_PER_PARAM_TOKEN = 6.0
FORWARD_FLOPS_PER_PARAM_TOKEN = 2.0

# Parameter counts back-solved from published totals via the 6ND/2ND model.
REFERENCE_SETTINGS = {
    "300M": {"student_params": 177.5e6, "teacher_params": 303.5e6, "tokens": 20e9},
    "1.1B": {"student_params": 606.7e6, "teacher_params": 1.11e9, "tokens": 20e9},
}


@dataclass
class CostReport:
    method: str  # "teacher_free" or "kd"
    student_params: float
    tokens: float
    train_flops: float
    teacher_forward_flops: float
    teacher_params: float = 0.0

    @property
    def total_flops(self) -> float:
        return self.train_flops + self.teacher_forward_flops

    @property
    def ratio_vs_teacher_free(self) -> float:
        return self.total_flops / self.train_flops


def estimate(method: str, student_params: float, tokens: float, teacher_params: float = 0.0) -> CostReport:
    """Analytic CostReport for one method at one scale."""
    if method not in ("teacher_free", "kd"):
        raise ValueError(f"unknown method {method!r}")
    if student_params <= 0 or tokens <= 0:
        raise ValueError("student_params and tokens must be positive")
    train = TRAIN_FLOPS_PER_PARAM_TOKEN * student_params * tokens
    teacher_forward = 0.0
    if method == "kd":
        if teacher_params <= 0:
            raise ValueError("kd estimate needs teacher_params")
        teacher_forward = FORWARD_FLOPS_PER_PARAM_TOKEN * teacher_params * tokens
    return CostReport(
        method=method,
        student_params=student_params,
        tokens=tokens,
        train_flops=train,
        teacher_forward_flops=teacher_forward,
        teacher_params=teacher_params if method == "kd" else 0.0,
    )


def kd_over_teacher_free_ratio(student_params: float, teacher_params: float) -> float:
    return 1.0 + teacher_params / (3.0 * student_params)


def measure(
    rows,
    base_params: int,
    per_layer_params: int,
    teacher_params: float = 0.0,
) -> float:
    """Integrate the 6N(t)D model over a metrics trace.

    ``rows`` are trace rows (dicts or TraceRow-likes) carrying ``tokens``
    and ``layers_live``. The segment after each row trains at that row's
    live layer count, so drops recorded in the trace change N exactly where
    they happened. ``teacher_params`` > 0 adds the 2*N_T forward term.
    """
    rows = list(rows)
    if len(rows) < 2:
        return 0.0

    def get(row, key):
        return row[key] if isinstance(row, dict) else getattr(row, key)

    total = 0.0
    for prev, cur in zip(rows, rows[1:]):
        span = float(get(cur, "tokens")) - float(get(prev, "tokens"))
        if span < 0:
            raise ValueError("trace tokens must be non-decreasing")
        n_live = base_params + int(get(prev, "layers_live")) * per_layer_params
        rate = TRAIN_FLOPS_PER_PARAM_TOKEN * n_live
        if teacher_params > 0:
            rate += FORWARD_FLOPS_PER_PARAM_TOKEN * teacher_params
        total += rate * span
    return total


def format_table(reports: list[CostReport]) -> str:
    """Aligned text table over CostReports; ratios are per matching-scale
    teacher_free rows when present, else per-report."""
    headers = ("method", "student_params", "teacher_params", "tokens", "train_flops", "teacher_fwd_flops", "total_flops", "ratio")
    rows = [headers]
    for r in reports:
        rows.append(
            (
                r.method,
                f"{r.student_params:.4g}",
                f"{r.teacher_params:.4g}" if r.teacher_params else "-",
                f"{r.tokens:.4g}",
                f"{r.train_flops:.4g}",
                f"{r.teacher_forward_flops:.4g}" if r.teacher_forward_flops else "-",
                f"{r.total_flops:.4g}",
                f"{r.ratio_vs_teacher_free:.3g}x",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)


def write_csv(path: str, reports: list[CostReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "student_params", "teacher_params", "tokens", "train_flops", "teacher_forward_flops", "total_flops", "ratio_vs_teacher_free"]
        )
        for r in reports:
            writer.writerow(
                [
                    r.method,
                    repr(r.student_params),
                    repr(r.teacher_params),
                    repr(r.tokens),
                    repr(r.train_flops),
                    repr(r.teacher_forward_flops),
                    repr(r.total_flops),
                    repr(r.ratio_vs_teacher_free),
                ]
            )
