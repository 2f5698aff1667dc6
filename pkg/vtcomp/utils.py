import csv
import io
import os
import sys
from pathlib import Path
from typing import Any, BinaryIO, Dict, Iterable, Optional, Sequence, Union

import numpy as np
import yaml
from loguru import logger

CONFIG_ENV_VAR = "VTCOMP_CONFIG"
READ_CHUNK_BYTES = 1 << 20


def configure_logging(verbosity: Optional[int] = None) -> None:
    """Install a stderr sink matching the requested verbosity.

    With ``verbosity=None`` the function only quiets loguru's default DEBUG
    handler, and only when nobody has configured loguru yet, so that library
    users who already set up sinks keep them.

    Args:
        verbosity: ``0`` for WARNING, ``1`` for INFO, ``2`` or more for DEBUG.
    """
    if verbosity is None:
        try:
            handlers = logger._core.handlers  # no public API lists the installed sinks
            if len(handlers) == 1:
                handler = next(iter(handlers.values()))
                if getattr(handler, "_id", None) == 0:
                    logger.remove()
                    logger.add(sys.stderr, level="WARNING")
        except (KeyError, AttributeError, TypeError):
            return
        return

    logger.remove()
    if verbosity >= 2:
        logger.add(sys.stderr, level="DEBUG")
    elif verbosity == 1:
        logger.add(sys.stderr, level="INFO")
    else:
        logger.add(sys.stderr, level="WARNING")


def read_exact(stream: BinaryIO, size: int, *, what: str = "payload") -> bytes:
    """Read an exact number of bytes from a binary stream.

    Reads at most ``READ_CHUNK_BYTES`` per call.

    Args:
        stream: Open binary file object.
        size: Number of bytes expected.
        what: Name of the field being read, used in the error message.

    Returns:
        Raw bytes.

    Raises:
        EOFError: If the stream ends before ``size`` bytes were read.
    """
    chunks = []
    remaining = size
    while remaining > 0:
        chunk = stream.read(min(remaining, READ_CHUNK_BYTES))
        if not chunk:
            raise EOFError(
                f"truncated {what}: expected {size} bytes, got {size - remaining}"
            )
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def resolve_config_path(cli_path: Optional[Union[str, Path]]) -> Optional[Path]:
    """Compute the run-config path respected by the CLI.

    Priority: explicit ``--config`` > ``VTCOMP_CONFIG`` > no file (defaults).

    Args:
        cli_path: CLI argument path if provided.

    Returns:
        Path of the YAML config to load, or None for built-in defaults.
    """
    if cli_path:
        return Path(cli_path)
    env_path = os.environ.get(CONFIG_ENV_VAR)
    if env_path:
        logger.info(f"Loading config file provided at env var {CONFIG_ENV_VAR}: {env_path}")
        return Path(env_path)
    return None


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """Write bytes to ``path`` through a temporary file and rename.

    Args:
        path: Destination file.
        data: Content.

    Returns:
        The destination path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as f:
        f.write(data)
    tmp.replace(path)
    logger.debug(f"Wrote {len(data)} bytes to {path}")
    return path


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Text flavour of :func:`atomic_write_bytes` (UTF-8, no newline translation)."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_yaml_atomic(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    """Dump a mapping as YAML atomically.

    Args:
        path: Destination file.
        data: Plain mapping (lists, dicts, scalars).

    Returns:
        The destination path.
    """
    text = yaml.safe_dump(data, sort_keys=False)
    return atomic_write_text(path, text)


def format_number(value: Any) -> str:
    """Render a CSV cell: ints as ints, floats with 12 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Render rows as CSV text with ``\\n`` line endings.

    Args:
        header: Column names.
        rows: Row values; numbers are formatted with :func:`format_number`.

    Returns:
        CSV document as a string.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return buffer.getvalue()


def render_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Render rows as an aligned, human readable text table."""
    cells = [list(header)] + [[format_number(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
