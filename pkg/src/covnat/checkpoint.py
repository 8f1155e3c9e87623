"""Checkpoints: a text manifest next to a raw little-endian float64 payload.

Layout of a checkpoint directory::

    manifest.txt   kind, config echo, lambda and one ``param`` line per tensor
    params.bin     the tensors back to back, in manifest order
    vocab.txt      the vocabulary the model was trained with

A manifest ``param`` line reads ``param <name> <d0>x<d1>... <byte offset>``.
"""

from __future__ import annotations

import hashlib
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import DataError
from .io_utils import atomic_write_bytes, atomic_write_text, read_lines
from .model import ModelConfig, NATModel
from .teacher import ATModel, TeacherConfig

FORMAT = "covnat-checkpoint-1"
_DTYPE = np.dtype("<f8")
_KINDS = {"nat": (NATModel, ModelConfig), "teacher": (ATModel, TeacherConfig)}


def _shape_text(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(d) for d in text.split("x"))


def save_checkpoint(model, vocab: Vocabulary, directory, extra: dict[str, str] | None = None) -> None:
    kind = "nat" if isinstance(model, NATModel) else "teacher"
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT}", f"kind = {kind}"]
    for f in fields(model.config):
        lines.append(f"config.{f.name} = {getattr(model.config, f.name)}")
    if kind == "nat" and model.config.use_tcir:
        lines.append(f"lambda = {float(model.top.lam.data[0])!r}")
    for key, value in (extra or {}).items():
        lines.append(f"meta.{key} = {value}")
    chunks, offset = [], 0
    for name, p in model.named_parameters().items():
        raw = np.ascontiguousarray(p.data, dtype=_DTYPE).tobytes()
        lines.append(f"param {name} {_shape_text(p.data.shape)} {offset}")
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    lines.append(f"payload_bytes = {offset}")
    lines.append(f"payload_sha256 = {hashlib.sha256(payload).hexdigest()}")
    atomic_write_bytes(directory / "params.bin", payload)
    vocab.save(directory / "vocab.txt")
    # the manifest goes last so a directory with a manifest is complete
    atomic_write_text(directory / "manifest.txt", "\n".join(lines) + "\n")


def read_manifest(directory) -> tuple[dict[str, str], list[tuple[str, tuple[int, ...], int]]]:
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    header: dict[str, str] = {}
    params = []
    for line in read_lines(path):
        if line.startswith("param "):
            _, name, shape, offset = line.split()
            params.append((name, _parse_shape(shape), int(offset)))
        elif line.strip():
            key, _, value = line.partition(" = ")
            header[key] = value
    if header.get("format") != FORMAT:
        raise DataError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    return header, params


def _config_from_header(cls, header: dict[str, str]):
    values = {}
    for f in fields(cls):
        raw = header.get(f"config.{f.name}")
        if raw is None:
            raise DataError(f"checkpoint manifest lacks config.{f.name}")
        default = f.default
        if isinstance(default, bool):
            values[f.name] = raw == "True"
        elif isinstance(default, int):
            values[f.name] = int(raw)
        elif isinstance(default, float):
            values[f.name] = float(raw)
        else:
            values[f.name] = raw
    return cls(**values)


def load_checkpoint(directory, expect: str | None = None):
    """Rebuild the model stored in ``directory``; returns (model, vocab, header)."""
    directory = Path(directory)
    header, params = read_manifest(directory)
    kind = header.get("kind")
    if kind not in _KINDS:
        raise DataError(f"{directory}: unknown checkpoint kind {kind!r}")
    if expect and kind != expect:
        raise DataError(f"{directory} holds a {kind} checkpoint, expected {expect}")
    model_cls, cfg_cls = _KINDS[kind]
    model = model_cls(_config_from_header(cfg_cls, header), seed=0)
    payload = (directory / "params.bin").read_bytes()
    if len(payload) != int(header.get("payload_bytes", -1)):
        raise DataError(f"{directory}: payload is {len(payload)} bytes, manifest says {header.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise DataError(f"{directory}: payload checksum mismatch")
    named = model.named_parameters()
    if {n for n, _, _ in params} != set(named):
        missing = set(named) - {n for n, _, _ in params}
        unexpected = {n for n, _, _ in params} - set(named)
        raise DataError(f"{directory}: parameter set mismatch (missing {sorted(missing)}, "
                        f"unexpected {sorted(unexpected)})")
    for name, shape, offset in params:
        p = named[name]
        if p.data.shape != shape:
            raise DataError(f"{directory}: {name} has shape {shape} in the checkpoint, "
                            f"model expects {p.data.shape}")
        count = int(np.prod(shape)) if shape else 1
        p.data[...] = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=offset).reshape(shape)
    vocab = Vocabulary.load(directory / "vocab.txt")
    if len(vocab) != model.config.vocab_size:
        raise DataError(f"{directory}: vocabulary has {len(vocab)} entries, model expects "
                        f"{model.config.vocab_size}")
    return model.eval(), vocab, header
