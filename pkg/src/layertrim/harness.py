"""Zero-shot multiple-choice evaluation harness.

Each task instance pairs a prompt with candidate completions; every
completion is scored by the sum of its token log-probabilities under the
model (the prompt contributes context only). Selection follows the task
metric: raw log-probability, per-character normalization, or PMI against a
domain premise. Task files are JSONL, one task per line.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import BOS_ID, ByteTokenizer
from .model import CausalLM

logger = logging.getLogger(__name__)

METRICS = ("acc", "len_norm_acc", "pmi_dc", "f1")
DEFAULT_DOMAIN_PREMISE = "Answer:"


@dataclass
class EvalInstance:
    prompt: str
    completions: list[str]
    gold_index: int


@dataclass
class EvalTask:
    name: str
    metric: str
    instances: list[EvalInstance]
    domain_premise: str = DEFAULT_DOMAIN_PREMISE

    def violations(self) -> list[str]:
        out = []
        if self.metric not in METRICS:
            out.append(f"task {self.name}: metric must be one of {', '.join(METRICS)}, got {self.metric!r}")
        if not self.instances:
            out.append(f"task {self.name}: no instances")
        for i, inst in enumerate(self.instances):
            if len(inst.completions) < 2:
                out.append(f"task {self.name} instance {i}: needs >= 2 completions")
            if not (0 <= inst.gold_index < len(inst.completions)):
                out.append(f"task {self.name} instance {i}: gold_index {inst.gold_index} out of range")
            if any(len(c.encode("utf-8")) < 1 for c in inst.completions):
                out.append(f"task {self.name} instance {i}: empty completion")
        return out


@dataclass
class ChoiceScore:
    raw_logprob: float
    char_len: int
    domain_logprob: float = math.nan


@dataclass
class TaskResult:
    name: str
    metric: str
    value: float
    n: int
    skipped: int
    ties: int = 0


def load_tasks(path: str) -> list[EvalTask]:
    tasks = []
    problems: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"{path}:{lineno}: not valid JSON: {exc}")
                continue
            task = EvalTask(
                name=rec.get("name", f"task{lineno}"),
                metric=rec.get("metric", ""),
                domain_premise=rec.get("domain_premise", DEFAULT_DOMAIN_PREMISE),
                instances=[
                    EvalInstance(
                        prompt=inst.get("prompt", ""),
                        completions=list(inst.get("completions", [])),
                        gold_index=int(inst.get("gold_index", -1)),
                    )
                    for inst in rec.get("instances", [])
                ],
            )
            problems.extend(task.violations())
            tasks.append(task)
    if problems:
        raise ValueError("invalid task file:\n  " + "\n  ".join(problems))
    return tasks


def score_token_ids(
    model: CausalLM,
    prompt_ids: np.ndarray,
    completion_ids: np.ndarray,
    bos_id: int | None = None,
) -> float:
    """Sum of log p(completion token | BOS, prompt, earlier completion).

    With an empty prompt this is the unconditional sequence log-probability
    under the model's BOS-anchored factorization. ``bos_id`` overrides the
    byte tokenizer's BOS for models with a smaller vocabulary.
    """
    anchor = BOS_ID if bos_id is None else bos_id
    seq = np.concatenate([[anchor], np.asarray(prompt_ids), np.asarray(completion_ids)]).astype(np.int64)
    n_comp = len(completion_ids)
    if n_comp < 1:
        raise ValueError("completion must contain at least one token")
    if len(seq) - 1 > model.cfg.context_len:
        raise OverflowError(f"sequence of {len(seq) - 1} positions exceeds context {model.cfg.context_len}")
    with T.no_grad():
        logits = model.forward_logits(seq[None, :-1]).data[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    total = 0.0
    for j in range(len(seq) - n_comp, len(seq)):
        total += float(z[j - 1, seq[j]] - lse[j - 1])
    return total


def score_completion(
    model: CausalLM,
    tokenizer: ByteTokenizer,
    prompt: str,
    completion: str,
    domain_premise: str | None = None,
) -> ChoiceScore:
    """Score one completion; the completion is the exact byte continuation
    of the prompt (no separator is inserted)."""
    comp_ids = tokenizer.encode(completion)
    raw = score_token_ids(model, tokenizer.encode(prompt), comp_ids)
    domain = math.nan
    if domain_premise is not None:
        domain = score_token_ids(model, tokenizer.encode(domain_premise), comp_ids)
    return ChoiceScore(raw_logprob=raw, char_len=len(completion.encode("utf-8")), domain_logprob=domain)


def selection_key(score: ChoiceScore, metric: str) -> float:
    if metric == "len_norm_acc":
        return score.raw_logprob / score.char_len
    if metric == "pmi_dc":
        return score.raw_logprob - score.domain_logprob
    return score.raw_logprob  # acc and f1 select on raw likelihood


def select(scores: list[ChoiceScore], metric: str) -> tuple[int, bool]:
    """Predicted completion index; ties resolve to the lowest index."""
    keys = [selection_key(s, metric) for s in scores]
    best = max(keys)
    tie = keys.count(best) > 1
    return keys.index(best), tie


def evaluate_task(model: CausalLM, task: EvalTask, tokenizer: ByteTokenizer | None = None) -> TaskResult:
    tokenizer = tokenizer or ByteTokenizer()
    needs_domain = task.metric == "pmi_dc"
    premise = task.domain_premise if needs_domain else None
    golds, preds = [], []
    skipped = ties = 0
    for inst in task.instances:
        try:
            scores = [
                score_completion(model, tokenizer, inst.prompt, completion, premise)
                for completion in inst.completions
            ]
        except OverflowError:
            logger.warning("task %s: instance skipped (context overflow)", task.name)
            skipped += 1
            continue
        pred, tied = select(scores, task.metric)
        if tied:
            logger.warning("task %s: score tie, picking lowest index", task.name)
            ties += 1
        preds.append(pred)
        golds.append(inst.gold_index)
    if not preds:
        raise ValueError(f"task {task.name}: no scorable instances")
    value = _aggregate(task.metric, golds, preds)
    return TaskResult(task.name, task.metric, value, n=len(preds), skipped=skipped, ties=ties)


def _aggregate(metric: str, golds: list[int], preds: list[int]) -> float:
    if metric == "f1":
        tp = sum(1 for g, p in zip(golds, preds) if p == 1 and g == 1)
        fp = sum(1 for g, p in zip(golds, preds) if p == 1 and g != 1)
        fn = sum(1 for g, p in zip(golds, preds) if p != 1 and g == 1)
        denom = 2 * tp + fp + fn
        return 2 * tp / denom if denom else 0.0
    return sum(1 for g, p in zip(golds, preds) if g == p) / len(golds)


def evaluate_suite(model: CausalLM, tasks: list[EvalTask]) -> tuple[list[TaskResult], float]:
    results = [evaluate_task(model, task) for task in tasks]
    suite_mean = sum(r.value for r in results) / len(results)
    return results, suite_mean


def write_report(path: str, results: list[TaskResult], suite_mean: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "metric", "value", "n", "skipped"])
        for r in results:
            writer.writerow([r.name, r.metric, repr(r.value), r.n, r.skipped])
        writer.writerow(["suite_mean", "mean", repr(suite_mean), sum(r.n for r in results), sum(r.skipped for r in results)])
