"""Byte-level tokenization and deterministic packed-batch streaming.

Documents (one per line) are encoded as raw bytes, joined with EOS
separators in a seeded per-epoch order, and chunked into fixed [B, T+1]
batches GPT-style. Every schedule in the workbench is denominated in
training tokens, counted by TokenBudgetClock as B*T per step.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

logger = logging.getLogger(__name__)

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
VOCAB_SIZE = 259


class ByteTokenizer:
    """Bijective byte-string tokenizer: ids 0..255 are byte values, plus
    BOS/EOS/PAD specials that encode() never emits."""

    vocab_size = VOCAB_SIZE

    def encode(self, text: str | bytes) -> np.ndarray:
        raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        return np.frombuffer(raw, dtype=np.uint8).astype(np.int32)

    def decode(self, ids) -> bytes:
        arr = np.asarray(ids, dtype=np.int64).reshape(-1)
        if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
            raise ValueError(f"token id outside [0, {VOCAB_SIZE})")
        return bytes(arr[arr < 256].astype(np.uint8))


@dataclass
class TokenBudgetClock:
    """Monotone counter of consumed training tokens (B*T per step)."""

    tokens: int = 0

    def advance(self, n: int) -> int:
        if n < 0:
            raise ValueError("clock cannot move backwards")
        self.tokens += int(n)
        return self.tokens


@dataclass
class SequenceBatch:
    """[B, T+1] span of packed token ids; EOS ids mark document boundaries."""

    ids: np.ndarray

    @property
    def inputs(self) -> np.ndarray:
        return self.ids[:, :-1]

    @property
    def targets(self) -> np.ndarray:
        return self.ids[:, 1:]

    @property
    def doc_boundaries(self) -> np.ndarray:
        return self.ids == EOS_ID

    @property
    def train_tokens(self) -> int:
        return self.ids.shape[0] * (self.ids.shape[1] - 1)


@dataclass
class DataConfig:
    corpus: str
    val_corpus: str = ""
    batch_size: int = 16
    seq_len: int = 256

    def violations(self) -> list[str]:
        out = []
        if not self.corpus:
            out.append("data.corpus is required")
        if self.batch_size <= 0:
            out.append(f"data.batch_size must be positive, got {self.batch_size}")
        if self.seq_len <= 0:
            out.append(f"data.seq_len must be positive, got {self.seq_len}")
        return out


def resolve_corpus_path(path: str, env_var: str = "LAYERTRIM_CORPUS_ROOT") -> str:
    """Relative corpus paths resolve against $LAYERTRIM_CORPUS_ROOT if set."""
    root = os.environ.get(env_var, "")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def load_documents(path: str) -> list[bytes]:
    path = resolve_corpus_path(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FileNotFoundError(f"corpus not readable: {path}: {exc}") from exc
    docs = [line for line in raw.split(b"\n") if line]
    if not docs:
        raise ValueError(f"corpus has no documents: {path}")
    return docs


def _epoch_token_stream(docs: list[bytes], tokenizer: ByteTokenizer, order: np.ndarray) -> np.ndarray:
    parts = []
    for i in order:
        parts.append(tokenizer.encode(docs[int(i)]))
        parts.append(np.asarray([EOS_ID], dtype=np.int32))
    return np.concatenate(parts)


def stream_batches(
    path: str,
    cfg: DataConfig,
    seed: int,
    clock: TokenBudgetClock | None = None,
    shuffle: bool = True,
) -> Iterator[SequenceBatch]:
    """Endless deterministic batch stream for (path, cfg, seed).

    Chunks of length seq_len+1 are cut at stride seq_len+1 from the packed
    epoch stream; full chunks carry across epoch boundaries, only a final
    sub-chunk tail is dropped each epoch (size logged). The clock, when
    given, advances by B*T as each batch is produced.
    """
    docs = load_documents(path)
    tokenizer = ByteTokenizer()
    chunk_len = cfg.seq_len + 1
    pending: list[np.ndarray] = []
    epoch = 0
    while True:
        if shuffle:
            order = np.random.default_rng([seed, epoch]).permutation(len(docs))
        else:
            order = np.arange(len(docs))
        stream = _epoch_token_stream(docs, tokenizer, order)
        n_chunks = len(stream) // chunk_len
        if n_chunks == 0 and not pending:
            raise ValueError(f"corpus too small for one {chunk_len}-token chunk: {path}")
        tail = len(stream) - n_chunks * chunk_len
        if tail:
            logger.debug("epoch %d: dropping %d-token partial chunk", epoch, tail)
        for c in range(n_chunks):
            pending.append(stream[c * chunk_len : (c + 1) * chunk_len])
            if len(pending) == cfg.batch_size:
                batch = SequenceBatch(ids=np.stack(pending))
                pending = []
                if clock is not None:
                    clock.advance(batch.train_tokens)
                yield batch
        epoch += 1


def val_batches(path: str, cfg: DataConfig, n_batches: int) -> list[SequenceBatch]:
    """First n_batches of the unshuffled stream: a fixed held-out slice."""
    out = []
    for batch in stream_batches(path, cfg, seed=0, shuffle=False):
        out.append(batch)
        if len(out) == n_batches:
            return out
    return out
