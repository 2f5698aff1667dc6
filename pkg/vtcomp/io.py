"""Binary attention (ATND) and token (TOKD) dumps.

Both formats are little-endian: a fixed header padded to a multiple of 8
bytes, then a row-major float32 payload.

ATND header::

    4s  magic "ATND"
    u16 version
    u16 element type (1 = float32 probabilities)
    u32 layers, u32 heads, u32 frames, u32 question tokens
    u32 × layers   tokens per frame of each layer
    pad to 8 bytes

payload: for each layer, the ``heads × N_q × (frames · tokens_per_frame)``
question-to-video block.

TOKD header::

    4s magic "TOKD", u16 version, u16 element type, u32 frames,
    u32 tokens per frame, u32 width, pad to 8 bytes

payload: ``frames × tokens_per_frame × width`` embeddings.

Every dump is written next to a YAML manifest (``<name>.yaml``) mirroring the
header.
"""

import io
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .errors import ValidationError
from .scoring import QuestionAttention
from .utils import atomic_write_bytes, read_exact, write_yaml_atomic

ATTENTION_MAGIC = b"ATND"
TOKEN_MAGIC = b"TOKD"
FORMAT_VERSION = 1
FLOAT32_TAG = 1

_PAYLOAD_DTYPE = np.dtype("<f4")
_ATTENTION_FIXED = struct.Struct("<4sHHIIII")
_TOKEN_FIXED = struct.Struct("<4sHHIII")


def _pad(size: int) -> int:
    return (-size) % 8


@dataclass(frozen=True)
class AttentionDumpHeader:
    layers: int
    heads: int
    frames: int
    question_tokens: int
    tokens_per_frame: Tuple[int, ...]
    version: int = FORMAT_VERSION
    element_type: int = FLOAT32_TAG

    def payload_elements(self) -> int:
        return sum(self.heads * self.question_tokens * self.frames * n for n in self.tokens_per_frame)

    def manifest(self) -> dict:
        data = asdict(self)
        data["tokens_per_frame"] = list(self.tokens_per_frame)
        return {"format": "ATND", **data}


@dataclass(frozen=True)
class TokenDumpHeader:
    frames: int
    tokens_per_frame: int
    width: int
    version: int = FORMAT_VERSION
    element_type: int = FLOAT32_TAG

    def payload_elements(self) -> int:
        return self.frames * self.tokens_per_frame * self.width

    def manifest(self) -> dict:
        return {"format": "TOKD", **asdict(self)}


def _check_common(magic: bytes, expected: bytes, version: int, element_type: int) -> None:
    if magic != expected:
        raise ValidationError(f"magic: expected {expected!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise ValidationError(f"version: unsupported {version}, expected {FORMAT_VERSION}")
    if element_type != FLOAT32_TAG:
        raise ValidationError(f"element_type: unsupported tag {element_type}")


def _available(stream: BinaryIO) -> Optional[int]:
    """Bytes left in a seekable stream, None when the stream cannot tell."""
    try:
        if not stream.seekable():
            return None
        here = stream.tell()
        end = stream.seek(0, io.SEEK_END)
        stream.seek(here)
    except (AttributeError, OSError):
        return None
    return end - here


def _check_available(stream: BinaryIO, size: int, what: str) -> None:
    available = _available(stream)
    if available is not None and size > available:
        raise ValidationError(f"truncated {what}: header declares {size} bytes, {available} present")


def _read_payload(stream: BinaryIO, elements: int, what: str) -> np.ndarray:
    size = elements * _PAYLOAD_DTYPE.itemsize
    _check_available(stream, size, f"{what} payload")
    try:
        raw = read_exact(stream, size, what=f"{what} payload")
    except EOFError as exc:
        raise ValidationError(str(exc)) from exc
    if stream.read(1):
        raise ValidationError(f"{what} payload: trailing bytes after {elements} elements")
    return np.frombuffer(raw, dtype=_PAYLOAD_DTYPE).copy()


def _read_header(stream: BinaryIO, size: int, what: str) -> bytes:
    try:
        return read_exact(stream, size, what=f"{what} header")
    except EOFError as exc:
        raise ValidationError(str(exc)) from exc


def encode_attention_dump(attention: QuestionAttention) -> bytes:
    """Serialize ``attention`` to ATND bytes (float32)."""
    header = AttentionDumpHeader(
        attention.num_layers,
        attention.num_heads,
        attention.num_frames,
        attention.question_tokens,
        attention.tokens_per_frame,
    )
    fixed = _ATTENTION_FIXED.pack(
        ATTENTION_MAGIC, header.version, header.element_type,
        header.layers, header.heads, header.frames, header.question_tokens,
    )
    counts = struct.pack(f"<{header.layers}I", *header.tokens_per_frame)
    head = fixed + counts
    head += b"\x00" * _pad(len(head))
    payload = b"".join(np.ascontiguousarray(b, dtype=_PAYLOAD_DTYPE).tobytes() for b in attention.blocks)
    return head + payload


def decode_attention_dump(stream: BinaryIO) -> Tuple[AttentionDumpHeader, QuestionAttention]:
    """Parse an ATND stream.

    Raises:
        ValidationError: On a bad magic, version or element type, zero
            counts, a truncated or oversized payload, or attention rows that
            are negative or sum above the cap.
    """
    magic, version, element_type, layers, heads, frames, question = _ATTENTION_FIXED.unpack(
        _read_header(stream, _ATTENTION_FIXED.size, "ATND")
    )
    _check_common(magic, ATTENTION_MAGIC, version, element_type)
    for name, value in (("layers", layers), ("heads", heads), ("frames", frames), ("question_tokens", question)):
        if value < 1:
            raise ValidationError(f"{name}: must be >= 1, got {value}")
    _check_available(stream, 4 * layers, "ATND header")
    counts = struct.unpack(f"<{layers}I", _read_header(stream, 4 * layers, "ATND"))
    if min(counts) < 1:
        raise ValidationError(f"tokens_per_frame: must be >= 1, got {list(counts)}")
    _read_header(stream, _pad(_ATTENTION_FIXED.size + 4 * layers), "ATND")
    header = AttentionDumpHeader(layers, heads, frames, question, tuple(counts), version, element_type)

    values = _read_payload(stream, header.payload_elements(), "ATND")
    blocks = []
    offset = 0
    for n in counts:
        size = heads * question * frames * n
        blocks.append(values[offset:offset + size].reshape(heads, question, frames * n))
        offset += size
    return header, QuestionAttention(tuple(blocks), frames, tuple(counts))


def encode_token_dump(tokens: np.ndarray) -> bytes:
    """Serialize a ``frames × tokens_per_frame × width`` array to TOKD bytes."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 3 or min(tokens.shape) < 1:
        raise ValidationError(f"tokens must be a non-empty frames × tokens × width array, got {tokens.shape}")
    frames, per_frame, width = tokens.shape
    head = _TOKEN_FIXED.pack(TOKEN_MAGIC, FORMAT_VERSION, FLOAT32_TAG, frames, per_frame, width)
    head += b"\x00" * _pad(len(head))
    return head + np.ascontiguousarray(tokens, dtype=_PAYLOAD_DTYPE).tobytes()


def decode_token_dump(stream: BinaryIO) -> Tuple[TokenDumpHeader, np.ndarray]:
    """Parse a TOKD stream into its header and a float32 array."""
    magic, version, element_type, frames, per_frame, width = _TOKEN_FIXED.unpack(
        _read_header(stream, _TOKEN_FIXED.size, "TOKD")
    )
    _check_common(magic, TOKEN_MAGIC, version, element_type)
    for name, value in (("frames", frames), ("tokens_per_frame", per_frame), ("width", width)):
        if value < 1:
            raise ValidationError(f"{name}: must be >= 1, got {value}")
    _read_header(stream, _pad(_TOKEN_FIXED.size), "TOKD")
    header = TokenDumpHeader(frames, per_frame, width, version, element_type)
    values = _read_payload(stream, header.payload_elements(), "TOKD")
    return header, values.reshape(frames, per_frame, width)


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".yaml")


def write_attention_dump(path: Union[str, Path], attention: QuestionAttention, *, manifest: bool = True) -> Path:
    """Atomically write an ATND file and, optionally, its YAML manifest."""
    data = encode_attention_dump(attention)
    path = atomic_write_bytes(path, data)
    if manifest:
        header, _ = decode_attention_dump(io.BytesIO(data))
        write_yaml_atomic(manifest_path(path), header.manifest())
    logger.info(f"Wrote attention dump {path} ({attention.num_layers} layers, {attention.num_frames} frames)")
    return path


def read_attention_dump(path: Union[str, Path]) -> Tuple[AttentionDumpHeader, QuestionAttention]:
    with Path(path).open("rb") as stream:
        return decode_attention_dump(stream)


def write_token_dump(path: Union[str, Path], tokens: np.ndarray, *, manifest: bool = True) -> Path:
    """Atomically write a TOKD file and, optionally, its YAML manifest."""
    data = encode_token_dump(tokens)
    path = atomic_write_bytes(path, data)
    if manifest:
        frames, per_frame, width = np.shape(tokens)
        write_yaml_atomic(manifest_path(path), TokenDumpHeader(frames, per_frame, width).manifest())
    logger.info(f"Wrote token dump {path} with shape {np.shape(tokens)}")
    return path


def read_token_dump(path: Union[str, Path]) -> Tuple[TokenDumpHeader, np.ndarray]:
    with Path(path).open("rb") as stream:
        return decode_token_dump(stream)
