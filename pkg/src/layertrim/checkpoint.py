"""Checkpoint serialization: a text manifest plus one raw little-endian
float32 blob per named tensor.

Tensor names follow ``layers.<i>.<part>`` for the decoder stack, so
truncation tooling can address layers individually. Saving a loaded
checkpoint reproduces it byte for byte.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from . import config as cfgmod
from .model import CausalLM, ModelConfig

FORMAT_VERSION = "1"


def _blob_path(directory: str, name: str) -> str:
    return os.path.join(directory, name + ".bin")


def _write_blob(path: str, arr: np.ndarray) -> None:
    arr.astype("<f4", copy=False).tofile(path)


def _read_blob(path: str, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise ValueError(f"blob {path} has {arr.size} floats, expected {expected}")
    return arr.reshape(shape)


def _shape_str(shape: tuple[int, ...]) -> str:
    return ",".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(s) for s in text.split(","))


def model_config_section(cfg: ModelConfig) -> dict[str, str]:
    return {
        "d_model": str(cfg.d_model),
        "n_heads": str(cfg.n_heads),
        "n_layers": str(cfg.n_layers),
        "d_ff": str(cfg.d_ff),
        "vocab_size": str(cfg.vocab_size),
        "context_len": str(cfg.context_len),
        "tie_embeddings": "true" if cfg.tie_embeddings else "false",
    }


def model_config_from_section(items: dict[str, str]) -> ModelConfig:
    return ModelConfig(
        d_model=int(items["d_model"]),
        n_heads=int(items["n_heads"]),
        n_layers=int(items["n_layers"]),
        d_ff=int(items["d_ff"]),
        vocab_size=int(items["vocab_size"]),
        context_len=int(items["context_len"]),
        tie_embeddings=items.get("tie_embeddings", "true") == "true",
    )


def save_checkpoint(
    directory: str,
    model: CausalLM,
    clock_tokens: int = 0,
    cumulative_flops: float = 0.0,
    extra_blobs: list[tuple[str, np.ndarray]] | None = None,
    extra_sections: dict[str, dict[str, str]] | None = None,
) -> None:
    """Write model (and optionally optimizer) tensors plus a manifest.

    ``extra_blobs`` rides along for training state (optimizer momentum);
    those names are listed in a separate [state_tensors] section.
    """
    os.makedirs(directory, exist_ok=True)
    tensors: dict[str, str] = {}
    for name, p in model.named_parameters():
        _write_blob(_blob_path(directory, name), p.data)
        tensors[name] = _shape_str(p.data.shape)
    sections: dict[str, dict[str, str]] = {
        "checkpoint": {"format_version": FORMAT_VERSION, "layer_count": str(len(model.layers))},
        "model": model_config_section(model.cfg),
        "clock": {"tokens": str(int(clock_tokens)), "cumulative_flops": repr(float(cumulative_flops))},
        "tensors": tensors,
    }
    if extra_blobs:
        state: dict[str, str] = {}
        for name, arr in extra_blobs:
            _write_blob(_blob_path(directory, name), arr)
            state[name] = _shape_str(arr.shape)
        sections["state_tensors"] = state
    if extra_sections:
        sections.update(extra_sections)
    cfgmod.write_sections(os.path.join(directory, "manifest.txt"), sections)


def read_manifest(directory: str) -> dict[str, dict[str, str]]:
    return cfgmod.read_sections(os.path.join(directory, "manifest.txt"))


def load_checkpoint(directory: str) -> tuple[CausalLM, dict[str, dict[str, str]]]:
    """Rebuild a CausalLM (float32) from a checkpoint directory."""
    manifest = read_manifest(directory)
    if manifest.get("checkpoint", {}).get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format in {directory}")
    cfg = model_config_from_section(manifest["model"])
    model = CausalLM(cfg, init=False)
    listed = manifest["tensors"]
    for name, p in model.named_parameters():
        if name not in listed:
            raise ValueError(f"checkpoint {directory} missing tensor {name}")
        p.data = _read_blob(_blob_path(directory, name), _parse_shape(listed[name])).astype(np.float32)
        if p.data.shape != _parse_shape(listed[name]):
            raise ValueError(f"tensor {name} shape mismatch")
    return model, manifest


def load_state_blobs(directory: str, manifest: dict[str, dict[str, str]]) -> dict[str, np.ndarray]:
    out = {}
    for name, shape_text in manifest.get("state_tensors", {}).items():
        out[name] = _read_blob(_blob_path(directory, name), _parse_shape(shape_text))
    return out


def tensor_fingerprint(model: CausalLM) -> str:
    """SHA-256 over every parameter blob, in parameter order."""
    digest = hashlib.sha256()
    for name, p in model.named_parameters():
        digest.update(name.encode())
        digest.update(p.data.astype("<f4", copy=False).tobytes())
    return digest.hexdigest()
