"""File formats: model container, vocab files, dataset files, results CSV.

Exact layouts are documented in docs/formats.md and round-trip tested.
Output files are written atomically (write to a temp file, then rename), so
readers never observe partial writes.
"""
from __future__ import annotations

import os
import struct
from contextlib import contextmanager

import numpy as np

from .model import EOS, Dims, ModelParams, Vocab, tensor_shapes
from .tasks import SequencePair

MODEL_MAGIC = b"NPADMDL\x01"
MODEL_VERSION = 1


class FormatError(ValueError):
    """A file does not match its documented schema."""


@contextmanager
def atomic_write(path: str, mode: str = "w"):
    """Write-then-rename; the target appears only after a complete write."""
    tmp = f"{path}.tmp{os.getpid()}"
    f = open(tmp, mode)
    try:
        yield f
        f.close()
        os.replace(tmp, path)
    except BaseException:
        f.close()
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_vocab(path: str, vocab: Vocab) -> None:
    with atomic_write(path) as f:
        for symbol in vocab.symbols:
            f.write(symbol + "\n")


def load_vocab(path: str) -> Vocab:
    with open(path, encoding="utf-8") as f:
        symbols = [line.rstrip("\n") for line in f]
    try:
        return Vocab(tuple(symbols))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def save_pairs(path: str, pairs: list[SequencePair], src_vocab: Vocab, tgt_vocab: Vocab) -> None:
    """One pair per line: source tokens, tab, target tokens (EOS implicit)."""
    with atomic_write(path) as f:
        for pair in pairs:
            src = " ".join(src_vocab.decode(pair.source))
            body = pair.target[:-1] if pair.target[-1] == EOS else pair.target
            f.write(src + "\t" + " ".join(tgt_vocab.decode(body)) + "\n")


def load_pairs(path: str, src_vocab: Vocab, tgt_vocab: Vocab) -> list[SequencePair]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise FormatError(f"{path}:{ln}: expected 'source<TAB>target'")
            src_text, tgt_text = line.split("\t", 1)
            source = tuple(src_vocab.encode(src_text.split()))
            target = tuple(tgt_vocab.encode(tgt_text.split())) + (EOS,)
            pairs.append(SequencePair(source, target))
    return pairs


def load_sources(path: str, src_vocab: Vocab) -> list[tuple[int, ...]]:
    """Sources only; accepts either pair files or one source per line."""
    sources = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            text = line.split("\t", 1)[0]
            sources.append(tuple(src_vocab.encode(text.split())))
    return sources


def save_model(path: str, params: ModelParams) -> None:
    d = params.dims
    with atomic_write(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<6I", MODEL_VERSION, d.n_src, d.n_tgt, d.d_emb, d.d_hid,
                            len(params.tensors)))
        for name, tensor in params.tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def _read(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated model file while reading {what}")
    return data


def load_model(path: str) -> ModelParams:
    with open(path, "rb") as f:
        if _read(f, 8, "magic") != MODEL_MAGIC:
            raise FormatError(f"{path}: not a model file (bad magic)")
        version, n_src, n_tgt, d_emb, d_hid, n_tensors = struct.unpack("<6I", _read(f, 24, "header"))
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        dims = Dims(d_emb=d_emb, d_hid=d_hid, n_src=n_src, n_tgt=n_tgt)
        expected = tensor_shapes(dims)
        tensors = {}
        for _ in range(n_tensors):
            name_len, = struct.unpack("<I", _read(f, 4, "tensor name length"))
            name = _read(f, name_len, "tensor name").decode("utf-8")
            ndim, = struct.unpack("<I", _read(f, 4, "tensor rank"))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "tensor shape"))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(_read(f, 8 * count, f"tensor {name}"), dtype="<f8")
            if name not in expected:
                raise FormatError(f"{path}: unexpected tensor {name!r}")
            tensors[name] = data.reshape(shape).astype(np.float64)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after last tensor")
    try:
        return ModelParams(dims, tensors)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
