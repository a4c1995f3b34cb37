"""Single-stream training loop shared by pretraining, teacher-free
distillation, and the KD baseline.

All progress is denominated in tokens via TokenBudgetClock. The loop
handles staggered layer drops (live-set shrinking), frozen layers
(excluded from the optimizer but still executed forward), an optional
teacher for KD, periodic held-out perplexity rows, resumable checkpoints,
and exact FLOPs accumulation under the 6N/2N per-token model.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import flops as flopsmod
from . import tensor as T
from .data import DataConfig, TokenBudgetClock, stream_batches, val_batches
from .model import CausalLM, param_count
from .optim import Lion, LrSchedule

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["tokens", "lm_loss", "ppl", "kl_loss", "lr", "layers_live", "cumulative_flops"]


class NumericError(RuntimeError):
    """Non-finite loss encountered during training."""


@dataclass
class TraceRow:
    tokens: int
    lm_loss: float
    ppl: float
    kl_loss: float
    lr: float
    layers_live: int
    cumulative_flops: float


@dataclass
class TrainSettings:
    total_tokens: int
    peak_lr: float
    warmup_tokens: int = 0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    trace_every_steps: int = 50
    val_batch_count: int = 4
    checkpoint_every_steps: int = 0  # 0: only the final checkpoint is written

    def violations(self) -> list[str]:
        out = LrSchedule(self.peak_lr, self.warmup_tokens, self.total_tokens).violations()
        if self.weight_decay < 0:
            out.append(f"optim.weight_decay must be non-negative, got {self.weight_decay}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                out.append(f"optim.{name} must lie in [0, 1], got {v}")
        if self.trace_every_steps <= 0:
            out.append(f"run.trace_every_steps must be positive, got {self.trace_every_steps}")
        if self.val_batch_count <= 0:
            out.append(f"run.val_batch_count must be positive, got {self.val_batch_count}")
        return out


@dataclass
class KdSettings:
    temperature: float = 2.0
    alpha: float = 0.5

    def violations(self) -> list[str]:
        out = []
        if self.temperature <= 0:
            out.append(f"kd.temperature must be positive, got {self.temperature}")
        if not (0.0 <= self.alpha <= 1.0):
            out.append(f"kd.alpha must lie in [0, 1], got {self.alpha}")
        return out


@dataclass
class ResumeState:
    tokens: int
    cumulative_flops: float
    momentum: dict[str, np.ndarray] = field(default_factory=dict)


def write_trace(path: str, rows: list[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in rows:
            writer.writerow([r.tokens, repr(r.lm_loss), repr(r.ppl), repr(r.kl_loss), repr(r.lr), r.layers_live, repr(r.cumulative_flops)])


def read_trace(path: str) -> list[TraceRow]:
    rows = []
    with open(path, "r", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                TraceRow(
                    tokens=int(rec["tokens"]),
                    lm_loss=float(rec["lm_loss"]),
                    ppl=float(rec["ppl"]),
                    kl_loss=float(rec["kl_loss"]),
                    lr=float(rec["lr"]),
                    layers_live=int(rec["layers_live"]),
                    cumulative_flops=float(rec["cumulative_flops"]),
                )
            )
    return rows


def _val_loss(model: CausalLM, batches, live: list[int]) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for batch in batches:
            total += model.lm_loss(batch.ids, live=live).item()
            count += 1
    return total / count


def _write_manifest(out_dir: str, sections: dict[str, dict[str, str]]) -> None:
    cfgmod.write_sections(os.path.join(out_dir, "manifest.txt"), sections)


def run_training(
    model: CausalLM,
    data_cfg: DataConfig,
    settings: TrainSettings,
    seed: int,
    out_dir: str | None = None,
    live: list[int] | None = None,
    drops: list[tuple[int, int]] | None = None,
    frozen: set[int] | None = None,
    teacher: CausalLM | None = None,
    kd: KdSettings | None = None,
    resume: ResumeState | None = None,
    manifest_sections: dict[str, dict[str, str]] | None = None,
    save_final: bool = True,
) -> list[TraceRow]:
    """Train ``model`` until the token clock reaches settings.total_tokens.

    ``drops`` is a sorted list of (token_threshold, layer_index): each layer
    leaves the live set once that many tokens have been consumed. ``frozen``
    layers keep executing forward but receive no updates. A ``teacher``
    (with ``kd``) switches the objective to alpha*L_LM + (1-alpha)*L_KL.
    Returns the full metrics trace, including rows from before a resume.
    """
    live = sorted(range(model.cfg.n_layers)) if live is None else sorted(live)
    drops = sorted(drops or [])
    frozen = set(frozen or ())
    kd_active = teacher is not None
    if kd_active and kd is None:
        kd = KdSettings()

    for idx in frozen:
        model.set_layer_trainable(idx, False)
    trainable = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    lion = Lion(trainable, settings.beta1, settings.beta2, settings.weight_decay)
    schedule = LrSchedule(settings.peak_lr, settings.warmup_tokens, settings.total_tokens)

    counts = param_count(model.cfg)
    base_params = counts.total - model.cfg.n_layers * counts.per_layer
    teacher_total = float(param_count(teacher.cfg).total) if kd_active else 0.0

    start_tokens = 0
    cumulative_flops = 0.0
    if resume is not None:
        start_tokens = resume.tokens
        cumulative_flops = resume.cumulative_flops
        if resume.momentum:
            lion.load_state(resume.momentum)

    batch_tokens = data_cfg.batch_size * data_cfg.seq_len
    val_path = data_cfg.val_corpus or data_cfg.corpus
    val_set = val_batches(val_path, data_cfg, settings.val_batch_count)
    clock = TokenBudgetClock()

    # apply drops that are already due (immediate truncation, resume)
    while drops and drops[0][0] <= start_tokens:
        _, layer_idx = drops.pop(0)
        if layer_idx in live:
            live.remove(layer_idx)

    rows: list[TraceRow] = []
    trace_path = os.path.join(out_dir, "trace.csv") if out_dir else None
    if resume is not None and trace_path and os.path.exists(trace_path):
        rows = [r for r in read_trace(trace_path) if r.tokens <= start_tokens]

    def manifest(status: str, end_tokens: int) -> None:
        if out_dir is None:
            return
        sections = dict(manifest_sections or {})
        run_sec = dict(sections.get("run", {}))
        run_sec.update({"status": status, "start_tokens": str(start_tokens), "end_tokens": str(end_tokens)})
        sections["run"] = run_sec
        _write_manifest(out_dir, sections)

    def emit_row(tokens: int, lm_loss: float, kl_loss: float, lr: float) -> None:
        vloss = _val_loss(model, val_set, live)
        rows.append(
            TraceRow(
                tokens=tokens,
                lm_loss=lm_loss,
                ppl=float(np.exp(vloss)),
                kl_loss=kl_loss,
                lr=lr,
                layers_live=len(live),
                cumulative_flops=cumulative_flops,
            )
        )
        if trace_path:
            write_trace(trace_path, rows)

    def save_state(subdir: str) -> None:
        if out_dir is None:
            return
        ckpt.save_checkpoint(
            os.path.join(out_dir, subdir),
            model,
            clock_tokens=clock.tokens,
            cumulative_flops=cumulative_flops,
            extra_blobs=lion.named_state(),
        )

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    manifest("running", start_tokens)

    last_lm = float("nan")
    last_kl = 0.0
    try:
        if start_tokens == 0:
            emit_row(0, _val_loss(model, val_set, live), 0.0, schedule.lr_at(0))

        for batch in stream_batches(data_cfg.corpus, data_cfg, seed, clock=clock):
            if clock.tokens <= start_tokens:
                continue  # fast-forward a resumed stream
            pre_tokens = clock.tokens - batch.train_tokens

            dropped_now = False
            while drops and drops[0][0] <= pre_tokens:
                _, layer_idx = drops.pop(0)
                if layer_idx in live:
                    live.remove(layer_idx)
                    dropped_now = True
            if dropped_now:
                emit_row(pre_tokens, last_lm, last_kl, schedule.lr_at(pre_tokens))

            lr = schedule.lr_at(clock.tokens)
            if kd_active and kd.alpha < 1.0:
                inputs = batch.inputs
                targets = batch.targets.reshape(-1)
                with T.no_grad():
                    t_logits = teacher.forward_logits(inputs)
                    t_flat = T.reshape(t_logits, (-1, teacher.cfg.vocab_size))
                s_logits = model.forward_logits(inputs, live=live)
                s_flat = T.reshape(s_logits, (-1, model.cfg.vocab_size))
                lm_term = T.cross_entropy_lm(s_flat, targets)
                kl_term = T.kl_teacher_student(t_flat, s_flat, kd.temperature)
                loss = T.add(T.scale(lm_term, kd.alpha), T.scale(kl_term, 1.0 - kd.alpha))
                last_lm = lm_term.item()
                last_kl = kl_term.item()
            else:
                loss = model.lm_loss(batch.ids, live=live)
                last_lm = loss.item()
                last_kl = 0.0

            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite loss at {clock.tokens} tokens")

            T.backward(loss)
            lion.step(lr)
            lion.zero_grad()

            rate = flopsmod.TRAIN_FLOPS_PER_PARAM_TOKEN * (base_params + len(live) * counts.per_layer)
            if kd_active and kd.alpha < 1.0:
                rate += flopsmod.FORWARD_FLOPS_PER_PARAM_TOKEN * teacher_total
            cumulative_flops += rate * batch.train_tokens

            step = clock.tokens // batch_tokens
            if step % settings.trace_every_steps == 0:
                emit_row(clock.tokens, last_lm, last_kl, lr)
            if settings.checkpoint_every_steps and step % settings.checkpoint_every_steps == 0:
                save_state("last")

            if clock.tokens >= settings.total_tokens:
                break
    except BaseException:
        manifest("failed", clock.tokens)
        raise

    if not rows or rows[-1].tokens < clock.tokens:
        emit_row(clock.tokens, last_lm, last_kl, schedule.lr_at(clock.tokens))
    if save_final:
        save_state("final")
    manifest("complete", clock.tokens)
    return rows
