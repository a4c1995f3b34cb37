"""Heavy acceptance-experiment builders with a disk cache.

Every builder writes a run directory under tests/_cache and returns it;
a directory whose manifest says status=complete is reused as-is, so the
expensive experiments (base pretrains, seeded distillation branches) run
once per checkout. Training is deterministic, so a cached run is
indistinguishable from a fresh one.
"""

from __future__ import annotations

import os
from pathlib import Path

from layertrim.checkpoint import load_checkpoint
from layertrim.config import read_sections
from layertrim.data import DataConfig
from layertrim.distill import DistillRunConfig, RemovalPlan, run_kd, run_teacher_free
from layertrim.model import CausalLM, ModelConfig
from layertrim.textgen import generate_corpus
from layertrim.train import KdSettings, TrainSettings, run_training

CACHE = Path(__file__).resolve().parent / "_cache"

# Recovery experiment scale (criterion-pinned: d_model 128, seq 256, 4 -> 2
# layers, ~20M base tokens, 5M continue tokens, 1/10 peak LR).
C7_MODEL = dict(d_model=128, n_heads=2, n_layers=4, vocab_size=259, context_len=256)
C7_BATCH = dict(batch_size=8, seq_len=256)
C7_BASE_TOKENS = 20_000_000
C7_BASE_SEED = 7
C7_CONTINUE_TOKENS = 5_000_000
C7_PEAK_LR = 3e-4
C7_SEEDS = (101, 102, 103)

# Matched-budget teacher-free vs KD comparison (budget is ours to choose).
C9_TOKENS = 2_000_000
C9_SEEDS = (301, 302, 303)

# Location ablation scale (6 layers leave room for distinct input/output sets).
C8_MODEL = dict(d_model=64, n_heads=2, n_layers=6, vocab_size=259, context_len=128)
C8_BATCH = dict(batch_size=8, seq_len=128)
C8_BASE_TOKENS = 6_000_000
C8_BASE_SEED = 17
C8_CONTINUE_TOKENS = 1_500_000
C8_SEEDS = (401, 402, 403)


def _complete(out_dir: Path) -> bool:
    manifest = out_dir / "manifest.txt"
    if not manifest.exists():
        return False
    try:
        sections = read_sections(str(manifest))
    except Exception:
        return False
    return sections.get("run", {}).get("status") == "complete"


def corpus_paths() -> tuple[str, str]:
    CACHE.mkdir(exist_ok=True)
    train = CACHE / "corpus_train.txt"
    val = CACHE / "corpus_val.txt"
    if not train.exists():
        generate_corpus(str(train), n_docs=12_000, seed=0)
    if not val.exists():
        generate_corpus(str(val), n_docs=1_200, seed=1)
    return str(train), str(val)


def _data_cfg(batch: dict) -> DataConfig:
    train, val = corpus_paths()
    return DataConfig(corpus=train, val_corpus=val, **batch)


def base4_dir() -> Path:
    """4-layer d=128 base model pretrained for ~20M tokens."""
    out = CACHE / "base4_d128_20m"
    if not _complete(out):
        model = CausalLM(ModelConfig(**C7_MODEL), seed=C7_BASE_SEED)
        settings = TrainSettings(
            total_tokens=C7_BASE_TOKENS,
            peak_lr=C7_PEAK_LR,
            warmup_tokens=400_000,
            trace_every_steps=250,
            val_batch_count=4,
        )
        run_training(model, _data_cfg(C7_BATCH), settings, seed=C7_BASE_SEED, out_dir=str(out))
    return out


def _continue_settings(total_tokens: int) -> TrainSettings:
    return TrainSettings(
        total_tokens=total_tokens,
        peak_lr=C7_PEAK_LR / 10.0,
        warmup_tokens=100_000,
        trace_every_steps=100,
        val_batch_count=4,
    )


def c7_distill_dir(seed: int) -> Path:
    out = CACHE / f"c7_distill_s{seed}"
    if not _complete(out):
        model, _ = load_checkpoint(str(base4_dir() / "final"))
        plan = RemovalPlan(layout="input", k_remove=2, n_layers=4)
        run_cfg = DistillRunConfig(plan=plan, pre_drop_tokens=0, continue_tokens=C7_CONTINUE_TOKENS)
        run_teacher_free(model, run_cfg, _continue_settings(C7_CONTINUE_TOKENS), _data_cfg(C7_BATCH), seed=seed, out_dir=str(out))
    return out


def c7_scratch_dir(seed: int) -> Path:
    out = CACHE / f"c7_scratch_s{seed}"
    if not _complete(out):
        cfg = dict(C7_MODEL)
        cfg["n_layers"] = 2
        model = CausalLM(ModelConfig(**cfg), seed=200 + seed)
        settings = TrainSettings(
            total_tokens=C7_CONTINUE_TOKENS,
            peak_lr=C7_PEAK_LR,
            warmup_tokens=100_000,
            trace_every_steps=100,
            val_batch_count=4,
        )
        run_training(model, _data_cfg(C7_BATCH), settings, seed=seed, out_dir=str(out))
    return out


def c9_teacher_free_dir(seed: int) -> Path:
    out = CACHE / f"c9_tf_s{seed}"
    if not _complete(out):
        model, _ = load_checkpoint(str(base4_dir() / "final"))
        plan = RemovalPlan(layout="input", k_remove=2, n_layers=4)
        run_cfg = DistillRunConfig(plan=plan, pre_drop_tokens=0, continue_tokens=C9_TOKENS)
        run_teacher_free(model, run_cfg, _continue_settings(C9_TOKENS), _data_cfg(C7_BATCH), seed=seed, out_dir=str(out))
    return out


def c9_kd_dir(seed: int) -> Path:
    out = CACHE / f"c9_kd_s{seed}"
    if not _complete(out):
        teacher, _ = load_checkpoint(str(base4_dir() / "final"))
        plan = RemovalPlan(layout="input", k_remove=2, n_layers=4)
        run_kd(
            teacher,
            plan,
            KdSettings(temperature=2.0, alpha=0.5),
            _continue_settings(C9_TOKENS),
            _data_cfg(C7_BATCH),
            seed=seed,
            out_dir=str(out),
        )
    return out


def base6_dir() -> Path:
    """6-layer d=64 base model for the removal-location ablation."""
    out = CACHE / "base6_d64_6m"
    if not _complete(out):
        model = CausalLM(ModelConfig(**C8_MODEL), seed=C8_BASE_SEED)
        settings = TrainSettings(
            total_tokens=C8_BASE_TOKENS,
            peak_lr=C7_PEAK_LR,
            warmup_tokens=120_000,
            trace_every_steps=250,
            val_batch_count=4,
        )
        run_training(model, _data_cfg(C8_BATCH), settings, seed=C8_BASE_SEED, out_dir=str(out))
    return out


def c8_layout_dir(layout: str, seed: int) -> Path:
    out = CACHE / f"c8_{layout}_s{seed}"
    if not _complete(out):
        model, _ = load_checkpoint(str(base6_dir() / "final"))
        plan = RemovalPlan(layout=layout, k_remove=2, n_layers=6)
        run_cfg = DistillRunConfig(plan=plan, pre_drop_tokens=0, continue_tokens=C8_CONTINUE_TOKENS)
        settings = TrainSettings(
            total_tokens=C8_CONTINUE_TOKENS,
            peak_lr=C7_PEAK_LR / 10.0,
            warmup_tokens=30_000,
            trace_every_steps=100,
            val_batch_count=4,
        )
        run_teacher_free(model, run_cfg, settings, _data_cfg(C8_BATCH), seed=seed, out_dir=str(out))
    return out


def build_everything(verbose: bool = True) -> None:
    """Populate the whole cache (used to prebuild before running pytest)."""
    stages = [("base4", base4_dir), ("base6", base6_dir)]
    stages += [(f"c7_distill_s{s}", lambda s=s: c7_distill_dir(s)) for s in C7_SEEDS]
    stages += [(f"c7_scratch_s{s}", lambda s=s: c7_scratch_dir(s)) for s in C7_SEEDS]
    stages += [(f"c9_tf_s{s}", lambda s=s: c9_teacher_free_dir(s)) for s in C9_SEEDS]
    stages += [(f"c9_kd_s{s}", lambda s=s: c9_kd_dir(s)) for s in C9_SEEDS]
    for layout in ("input", "output"):
        stages += [(f"c8_{layout}_s{s}", lambda l=layout, s=s: c8_layout_dir(l, s)) for s in C8_SEEDS]
    import time

    for name, fn in stages:
        t0 = time.time()
        fn()
        if verbose:
            print(f"[acceptance cache] {name} ready ({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    build_everything()
