"""Command-line surface: pretrain, distill, kd, evaluate, flops, report.

Every run validates its configuration fully before any model memory is
allocated, writes a manifest alongside its outputs (flagged while running,
finalized on completion), and keys all progress to the token clock.

Exit codes: 0 success, 2 configuration error, 3 numeric error (NaN loss).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from . import flops as flopsmod
from . import harness, report
from .config import ConfigError, SectionReader, read_sections, REQUIRED
from .data import DataConfig
from .distill import LAYOUTS, DistillRunConfig, RemovalPlan, run_kd, run_teacher_free
from .model import CausalLM, ModelConfig
from .train import (
    KdSettings,
    NumericError,
    ResumeState,
    TrainSettings,
    run_training,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# ---------------------------------------------------------------------------
# Config parsing


def _parse_model(sections, violations) -> ModelConfig | None:
    sec = SectionReader(sections, "model", violations)
    cfg = ModelConfig(
        d_model=sec.get_int("d_model", REQUIRED) or 0,
        n_heads=sec.get_int("n_heads", REQUIRED) or 0,
        n_layers=sec.get_int("n_layers", REQUIRED) or 0,
        vocab_size=sec.get_int("vocab_size", 259) or 0,
        context_len=sec.get_int("context_len", REQUIRED) or 0,
        d_ff=sec.get_int("d_ff", 0) or 0,
        tie_embeddings=bool(sec.get_bool("tie_embeddings", True)),
    )
    sec.reject_unknown()
    if any(v <= 0 for v in (cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.context_len)):
        return None
    violations.extend(cfg.violations())
    return cfg


def _parse_data(sections, violations) -> DataConfig:
    sec = SectionReader(sections, "data", violations)
    cfg = DataConfig(
        corpus=sec.get_str("corpus", REQUIRED) or "",
        val_corpus=sec.get_str("val_corpus", "") or "",
        batch_size=sec.get_int("batch_size", 16) or 0,
        seq_len=sec.get_int("seq_len", 256) or 0,
    )
    sec.reject_unknown()
    violations.extend(cfg.violations())
    return cfg


def _parse_settings(sections, violations, total_required: bool) -> TrainSettings:
    optim = SectionReader(sections, "optim", violations)
    run = SectionReader(sections, "run", violations)
    settings = TrainSettings(
        total_tokens=run.get_int("total_tokens", REQUIRED if total_required else 0) or 0,
        peak_lr=optim.get_float("peak_lr", REQUIRED) or 0.0,
        warmup_tokens=optim.get_int("warmup_tokens", 0) or 0,
        weight_decay=_or(optim.get_float("weight_decay", 1e-4), 1e-4),
        beta1=_or(optim.get_float("beta1", 0.9), 0.9),
        beta2=_or(optim.get_float("beta2", 0.95), 0.95),
        trace_every_steps=run.get_int("trace_every_steps", 50) or 0,
        val_batch_count=run.get_int("val_batch_count", 4) or 0,
        checkpoint_every_steps=_or(run.get_int("checkpoint_every_steps", 0), 0),
    )
    optim.reject_unknown()
    run.reject_unknown()
    return settings


def _or(value, fallback):
    return fallback if value is None else value


def _parse_plan(sections, violations, n_layers: int) -> RemovalPlan:
    sec = SectionReader(sections, "plan", violations)
    plan = RemovalPlan(
        layout=sec.get_str("layout", "input") or "input",
        k_remove=_or(sec.get_int("k_remove", REQUIRED), 0),
        n_layers=n_layers,
        drop_gap_tokens=_or(sec.get_int("drop_gap_tokens", 0), 0),
    )
    sec.reject_unknown()
    violations.extend(plan.violations())
    return plan


def _parse_kd(sections, violations) -> KdSettings:
    sec = SectionReader(sections, "kd", violations)
    kd = KdSettings(
        temperature=_or(sec.get_float("temperature", 2.0), 2.0),
        alpha=_or(sec.get_float("alpha", 0.5), 0.5),
    )
    sec.reject_unknown()
    violations.extend(kd.violations())
    return kd


def _check(violations: list[str]) -> None:
    if violations:
        raise ConfigError(violations)


def _manifest_sections(command: str, seed: int, sections, extra_run: dict[str, str] | None = None):
    out = {name: dict(items) for name, items in sections.items()}
    run = out.setdefault("run", {})
    run["command"] = command
    run["seed"] = str(seed)
    run["code_version"] = __version__
    if extra_run:
        run.update(extra_run)
    return out


def _load_resume(resume_dir: str) -> tuple[CausalLM, ResumeState]:
    model, manifest = ckpt.load_checkpoint(resume_dir)
    blobs = ckpt.load_state_blobs(resume_dir, manifest)
    clock = manifest.get("clock", {})
    state = ResumeState(
        tokens=int(clock.get("tokens", "0")),
        cumulative_flops=float(clock.get("cumulative_flops", "0.0")),
        momentum=blobs,
    )
    return model, state


# ---------------------------------------------------------------------------
# Subcommands


def cmd_pretrain(args) -> int:
    sections = read_sections(args.config)
    violations: list[str] = []
    model_cfg = _parse_model(sections, violations)
    data_cfg = _parse_data(sections, violations)
    settings = _parse_settings(sections, violations, total_required=True)
    violations.extend(settings.violations())
    if model_cfg is not None and data_cfg.seq_len > model_cfg.context_len:
        violations.append(f"data.seq_len={data_cfg.seq_len} exceeds model.context_len={model_cfg.context_len}")
    _check(violations)

    resume = None
    if args.resume:
        model, resume = _load_resume(args.resume)
        if ckpt.model_config_section(model.cfg) != ckpt.model_config_section(model_cfg):
            raise ConfigError(["resume checkpoint model config does not match the run config"])
    else:
        model = CausalLM(model_cfg, seed=args.seed)
    manifest = _manifest_sections("pretrain", args.seed, sections)
    run_training(model, data_cfg, settings, args.seed, out_dir=args.out, resume=resume, manifest_sections=manifest)
    return EXIT_OK


def cmd_distill(args) -> int:
    sections = read_sections(args.config)
    violations: list[str] = []
    data_cfg = _parse_data(sections, violations)
    settings = _parse_settings(sections, violations, total_required=False)

    src_manifest = ckpt.read_manifest(args.checkpoint)
    model_cfg = ckpt.model_config_from_section(src_manifest["model"])
    plan = _parse_plan(sections, violations, model_cfg.n_layers)
    dsec = SectionReader(sections, "distill", violations)
    run_cfg = DistillRunConfig(
        plan=plan,
        pre_drop_tokens=_or(dsec.get_int("pre_drop_tokens", settings.warmup_tokens), 0),
        continue_tokens=_or(dsec.get_int("continue_tokens", REQUIRED), 0),
    )
    dsec.reject_unknown()
    violations.extend(run_cfg.violations())
    settings.total_tokens = run_cfg.total_tokens
    violations.extend(settings.violations())
    if data_cfg.seq_len > model_cfg.context_len:
        violations.append(f"data.seq_len={data_cfg.seq_len} exceeds checkpoint context_len={model_cfg.context_len}")
    _check(violations)

    resume = None
    if args.resume:
        model, resume = _load_resume(args.resume)
    else:
        model, _ = ckpt.load_checkpoint(args.checkpoint)
    manifest = _manifest_sections("distill", args.seed, sections, {"source_checkpoint": args.checkpoint})
    run_teacher_free(
        model, run_cfg, settings, data_cfg, args.seed, out_dir=args.out, resume=resume, manifest_sections=manifest
    )
    return EXIT_OK


def cmd_kd(args) -> int:
    sections = read_sections(args.config)
    violations: list[str] = []
    data_cfg = _parse_data(sections, violations)
    settings = _parse_settings(sections, violations, total_required=True)
    violations.extend(settings.violations())

    teacher_manifest = ckpt.read_manifest(args.teacher)
    teacher_cfg = ckpt.model_config_from_section(teacher_manifest["model"])
    plan = _parse_plan(sections, violations, teacher_cfg.n_layers)
    kd_cfg = _parse_kd(sections, violations)
    if data_cfg.seq_len > teacher_cfg.context_len:
        violations.append(f"data.seq_len={data_cfg.seq_len} exceeds teacher context_len={teacher_cfg.context_len}")
    _check(violations)

    teacher, _ = ckpt.load_checkpoint(args.teacher)
    student = resume = None
    if args.resume:
        student, resume = _load_resume(args.resume)
    manifest = _manifest_sections("kd", args.seed, sections, {"teacher_checkpoint": args.teacher})
    run_kd(
        teacher,
        plan,
        kd_cfg,
        settings,
        data_cfg,
        args.seed,
        out_dir=args.out,
        student=student,
        resume=resume,
        manifest_sections=manifest,
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tasks = harness.load_tasks(args.tasks)
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    results, suite_mean = harness.evaluate_suite(model, tasks)
    os.makedirs(args.out, exist_ok=True)
    harness.write_report(os.path.join(args.out, "eval_report.csv"), results, suite_mean)
    for r in results:
        print(f"{r.name:30s} {r.metric:12s} {r.value:.4f}  (n={r.n}, skipped={r.skipped})")
    print(f"{'suite_mean':30s} {'mean':12s} {suite_mean:.4f}")
    return EXIT_OK


def cmd_flops(args) -> int:
    reports = []
    if args.reference:
        for scale, ref in flopsmod.REFERENCE_SETTINGS.items():
            tf = flopsmod.estimate("teacher_free", ref["student_params"], ref["tokens"])
            kd = flopsmod.estimate("kd", ref["student_params"], ref["tokens"], ref["teacher_params"])
            tf.method = f"teacher_free_{scale}"
            kd.method = f"kd_{scale}"
            reports.extend([tf, kd])
    else:
        if args.student_params is None or args.tokens is None:
            raise ConfigError(["flops needs --student-params and --tokens (or --reference)"])
        try:
            reports.append(flopsmod.estimate(args.method, args.student_params, args.tokens, args.teacher_params or 0.0))
        except ValueError as exc:
            raise ConfigError([str(exc)]) from exc
    print(flopsmod.format_table(reports))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        flopsmod.write_csv(os.path.join(args.out, "flops.csv"), reports)
    return EXIT_OK


def cmd_report(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    summary = report.build_report(args.out, args.traces, labels=labels, baseline=args.baseline)
    for row in summary:
        print(
            f"{row['run']:28s} final_ppl={row['final_ppl']:.4f} "
            f"flops={row['cumulative_flops']:.3e} change={row['ppl_change_pct']:+.2f}%"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layertrim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"layertrim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory for manifest/trace/checkpoints")
        p.add_argument("--resume", default="", help="training checkpoint directory to resume from")

    p = sub.add_parser("pretrain", help="train a base model from scratch")
    add_run_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("distill", help="teacher-free truncation distillation from a checkpoint")
    add_run_flags(p)
    p.add_argument("--checkpoint", required=True, help="source model checkpoint directory")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("kd", help="vanilla KD baseline against a teacher checkpoint")
    add_run_flags(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint directory")
    p.set_defaults(func=cmd_kd)

    p = sub.add_parser("evaluate", help="zero-shot multiple-choice evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", required=True, help="JSONL task file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flops", help="analytic training-compute estimates")
    p.add_argument("--method", choices=["teacher_free", "kd"], default="teacher_free")
    p.add_argument("--student-params", type=float, default=None)
    p.add_argument("--teacher-params", type=float, default=None)
    p.add_argument("--tokens", type=float, default=None)
    p.add_argument("--reference", action="store_true", help="print the published-scale reference table")
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("report", help="merge run traces into tables and figures")
    p.add_argument("traces", nargs="+", help="trace.csv paths")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", default="", help="comma-separated run labels (default: parent directory names)")
    p.add_argument("--baseline", default=None, help="label of the baseline run for percentage changes")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
