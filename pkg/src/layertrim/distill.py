"""Truncation-initialized distillation and the vanilla KD baseline.

A RemovalPlan names which decoder layers leave the model (nine depth
layouts) and on what token schedule (all at once, or staggered by a fixed
gap). The teacher-free runner freezes doomed layers, trains through the
staggered drops on the plain LM objective, and emits the truncated student.
The KD runner trains the same truncated student against a frozen teacher
with a mixed cross-entropy / KL objective.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace

from .checkpoint import save_checkpoint
from .data import DataConfig
from .model import CausalLM, DecoderBlock, ModelConfig
from .tensor import Tensor
from .train import KdSettings, ResumeState, TraceRow, TrainSettings, run_training

logger = logging.getLogger(__name__)

LAYOUTS = (
    "max-gap",
    "input",
    "output",
    "both",
    "middle",
    "alt-input",
    "alt-output",
    "alt-both",
    "alt-middle",
)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fill_deficit(chosen: list[int], interior: range, k: int, from_low: bool) -> list[int]:
    pool = interior if from_low else reversed(interior)
    for idx in pool:
        if len(chosen) == k:
            break
        if idx not in chosen:
            chosen.append(idx)
    return chosen


def resolve_layout(layout: str, n_layers: int, k_remove: int) -> list[int]:
    """Deterministic layer indices to remove for a named depth layout.

    The first (0) and last (n_layers-1) layers are never removed. The
    alternating layouts stride by 2 from their side; when the stride runs
    out of interior positions the deficit is filled from the unused
    interior indices nearest that side.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {', '.join(LAYOUTS)}")
    interior = range(1, n_layers - 1)
    if k_remove < 0 or k_remove > len(interior):
        raise ValueError(f"k_remove={k_remove} not in [0, {len(interior)}] for n_layers={n_layers}")
    if k_remove == 0:
        return []

    last = n_layers - 2
    if layout == "input":
        chosen = list(range(1, 1 + k_remove))
    elif layout == "output":
        chosen = list(range(last - k_remove + 1, last + 1))
    elif layout == "middle":
        start = (n_layers - k_remove) // 2
        chosen = list(range(start, start + k_remove))
    elif layout == "both":
        head = (k_remove + 1) // 2
        tail = k_remove // 2
        chosen = list(range(1, 1 + head)) + list(range(last - tail + 1, last + 1))
    elif layout == "max-gap":
        chosen = []
        for j in range(k_remove):
            cand = _round_half_up((j + 1) * (n_layers - 1) / (k_remove + 1))
            cand = max(cand, 1)
            while cand in chosen and cand <= last:
                cand += 1
            if cand > last:
                continue  # deficit filled below
            chosen.append(cand)
        _fill_deficit(chosen, interior, k_remove, from_low=True)
    elif layout == "alt-input":
        chosen = list(range(1, last + 1, 2))[:k_remove]
        _fill_deficit(chosen, interior, k_remove, from_low=True)
    elif layout == "alt-output":
        chosen = list(range(last, 0, -2))[:k_remove]
        _fill_deficit(chosen, interior, k_remove, from_low=False)
    elif layout == "alt-both":
        head = (k_remove + 1) // 2
        tail = k_remove - head
        chosen = list(range(1, last + 1, 2))[:head]
        for idx in list(range(last, 0, -2))[:tail]:
            if idx not in chosen:
                chosen.append(idx)
        _fill_deficit(chosen, interior, k_remove, from_low=True)
    else:  # alt-middle
        start = max((n_layers - (2 * k_remove - 1)) // 2, 0)
        chosen = [i for i in range(start, last + 1, 2) if i >= 1][:k_remove]
        _fill_deficit(chosen, interior, k_remove, from_low=True)

    chosen = sorted(chosen)
    assert len(chosen) == k_remove and len(set(chosen)) == k_remove
    assert all(1 <= i <= last for i in chosen)
    return chosen


@dataclass
class RemovalPlan:
    layout: str
    k_remove: int
    n_layers: int
    drop_gap_tokens: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.layout not in LAYOUTS:
            out.append(f"plan.layout must be one of {', '.join(LAYOUTS)}, got {self.layout!r}")
        if self.k_remove < 0:
            out.append(f"plan.k_remove must be non-negative, got {self.k_remove}")
        elif self.n_layers >= 2 and self.k_remove > self.n_layers - 2:
            out.append(
                f"plan.k_remove={self.k_remove} exceeds interior size {self.n_layers - 2} for n_layers={self.n_layers}"
            )
        if self.drop_gap_tokens < 0:
            out.append(f"plan.drop_gap_tokens must be non-negative, got {self.drop_gap_tokens}")
        return out

    @property
    def resolved_indices(self) -> list[int]:
        return resolve_layout(self.layout, self.n_layers, self.k_remove)


def truncate_model(model: CausalLM, indices: list[int]) -> CausalLM:
    """New CausalLM with ``indices`` removed from the stack.

    Surviving layers keep bit-identical weights in their original relative
    order; embeddings and the final LayerNorm are copied untouched.
    """
    n = model.cfg.n_layers
    index_set = set(indices)
    if len(index_set) != len(indices):
        raise ValueError("duplicate removal indices")
    for i in index_set:
        if not (0 < i < n - 1):
            raise ValueError(f"removal index {i} outside interior (1..{n - 2})")
    kept = [i for i in range(n) if i not in index_set]

    cfg = replace(model.cfg, n_layers=len(kept))
    out = CausalLM(cfg, init=False, dtype=model.dtype)
    out.tok_emb = Tensor(model.tok_emb.data.copy(), requires_grad=True)
    out.pos_emb = Tensor(model.pos_emb.data.copy(), requires_grad=True)
    out.final_ln_gain = Tensor(model.final_ln_gain.data.copy(), requires_grad=True)
    out.final_ln_bias = Tensor(model.final_ln_bias.data.copy(), requires_grad=True)
    if model.head is not None:
        out.head = Tensor(model.head.data.copy(), requires_grad=True)
    for new_i, old_i in enumerate(kept):
        for part in DecoderBlock.PARTS:
            out.layers[new_i].params[part] = Tensor(
                model.layers[old_i].params[part].data.copy(), requires_grad=True
            )
    return out


@dataclass
class DistillRunConfig:
    plan: RemovalPlan
    pre_drop_tokens: int
    continue_tokens: int

    def violations(self) -> list[str]:
        out = self.plan.violations()
        if self.pre_drop_tokens < 0:
            out.append(f"distill.pre_drop_tokens must be non-negative, got {self.pre_drop_tokens}")
        if self.continue_tokens <= 0:
            out.append(f"distill.continue_tokens must be positive, got {self.continue_tokens}")
        elif self.continue_tokens <= self.plan.drop_gap_tokens * self.plan.k_remove:
            out.append(
                "distill.continue_tokens must exceed drop_gap_tokens * k_remove "
                f"({self.plan.drop_gap_tokens} * {self.plan.k_remove}) so every drop lands inside the run"
            )
        return out

    @property
    def total_tokens(self) -> int:
        return self.pre_drop_tokens + self.continue_tokens


def drop_schedule(cfg: DistillRunConfig) -> list[tuple[int, int]]:
    """(token_threshold, layer_index) pairs; layers leave input-side first."""
    gap = cfg.plan.drop_gap_tokens
    return [(cfg.pre_drop_tokens + j * gap, idx) for j, idx in enumerate(cfg.plan.resolved_indices)]


def run_teacher_free(
    model: CausalLM,
    run_cfg: DistillRunConfig,
    settings: TrainSettings,
    data_cfg: DataConfig,
    seed: int,
    out_dir: str | None = None,
    resume: ResumeState | None = None,
    manifest_sections: dict[str, dict[str, str]] | None = None,
) -> tuple[CausalLM, list[TraceRow]]:
    """Phase 1 trains the full model with doomed layers frozen; phase 2
    removes them on the drop schedule while continuing plain LM training.
    Returns the truncated student and the metrics trace."""
    problems = run_cfg.violations()
    if problems:
        raise ValueError("; ".join(problems))
    if settings.total_tokens != run_cfg.total_tokens:
        settings = replace(settings, total_tokens=run_cfg.total_tokens)
    indices = run_cfg.plan.resolved_indices
    rows = run_training(
        model,
        data_cfg,
        settings,
        seed,
        out_dir=out_dir,
        drops=drop_schedule(run_cfg),
        frozen=set(indices),
        resume=resume,
        manifest_sections=manifest_sections,
        save_final=False,
    )
    student = truncate_model(model, indices)
    if out_dir is not None:
        save_checkpoint(
            os.path.join(out_dir, "final"),
            student,
            clock_tokens=rows[-1].tokens if rows else 0,
            cumulative_flops=rows[-1].cumulative_flops if rows else 0.0,
        )
    return student, rows


def run_kd(
    teacher: CausalLM,
    plan: RemovalPlan,
    kd_cfg: KdSettings,
    settings: TrainSettings,
    data_cfg: DataConfig,
    seed: int,
    out_dir: str | None = None,
    student: CausalLM | None = None,
    resume: ResumeState | None = None,
    manifest_sections: dict[str, dict[str, str]] | None = None,
) -> tuple[CausalLM, list[TraceRow]]:
    """Vanilla KD: the student starts as the truncated teacher and trains
    on alpha * L_LM + (1 - alpha) * L_KL against frozen teacher logits.

    At alpha == 1 the KL weight is zero, so the teacher forward is skipped
    entirely and the run degenerates to the teacher-free objective.
    """
    problems = plan.violations() + kd_cfg.violations()
    if problems:
        raise ValueError("; ".join(problems))
    if student is None:
        student = truncate_model(teacher, plan.resolved_indices)
    for p in teacher.parameters():
        p.requires_grad = False
    rows = run_training(
        student,
        data_cfg,
        settings,
        seed,
        out_dir=out_dir,
        teacher=teacher,
        kd=kd_cfg,
        resume=resume,
        manifest_sections=manifest_sections,
    )
    return student, rows
