"""File formats: JSON with 17-digit floats, CSV, PGM (P2/P5) and DOT."""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .errors import FormatError


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise FormatError(f"cannot serialize non-finite number {x!r}")
    s = format(x, ".17g")
    # keep a float marker so readers do not turn 1.0 into an int
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent: int | None, depth: int) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        items = [(json.dumps(str(k)), _encode(v, indent, depth + 1)) for k, v in obj.items()]
        if not items:
            return "{}"
        if indent is None:
            return "{" + ", ".join(f"{k}: {v}" for k, v in items) + "}"
        pad = " " * (indent * (depth + 1))
        body = (",\n").join(f"{pad}{k}: {v}" for k, v in items)
        return "{\n" + body + "\n" + " " * (indent * depth) + "}"
    if isinstance(obj, (list, tuple)):
        # numeric arrays stay on one line
        return "[" + ", ".join(_encode(v, None, depth + 1) for v in obj) + "]"
    raise FormatError(f"cannot serialize object of type {type(obj).__name__}")


def dumps(obj, indent: int | None = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj, indent, 0)


def loads(text: str, source: str = "<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{source}: line {e.lineno}, column {e.colno}: {e.msg}") from None


def read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise FormatError(f"{path}: {e.strerror}") from None
    return loads(text, str(path))


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# CSV


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header: list[str] | None, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows))


def write_matrix_csv(path, m: np.ndarray) -> None:
    write_csv(path, None, np.asarray(m, dtype=float).tolist())


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


# ---------------------------------------------------------------------------
# PGM


def _pgm_tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P2 or P5 image with maxval <= 255 into a uint8 array."""
    (magic,), pos = _pgm_tokens(data, 1, 0)
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported PGM magic {magic!r}")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, pos)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("non-integer PGM header field") from None
    if not 0 < maxval <= 255:
        raise FormatError(f"only maxval <= 255 is supported, got {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        raw = data[pos : pos + w * h]
        if len(raw) != w * h:
            raise FormatError("truncated P5 raster")
        img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    else:
        vals, _ = _pgm_tokens(data, w * h, pos)
        img = np.array([int(v) for v in vals], dtype=np.int64).reshape(h, w)
        if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
            raise FormatError("P2 sample outside [0, maxval]")
        img = img.astype(np.uint8)
    if img.max(initial=0) > maxval:
        raise FormatError("sample exceeds maxval")
    return img


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(img: np.ndarray, binary: bool = True) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError("PGM images are 2-D")
    if img.min(initial=0) < 0 or img.max(initial=0) > 255:
        raise FormatError("pixel values must lie in [0, 255]")
    img = img.astype(np.uint8)
    h, w = img.shape
    if binary:
        return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
    lines = [" ".join(str(int(v)) for v in row) for row in img]
    return (f"P2\n{w} {h}\n255\n" + "\n".join(lines) + "\n").encode()


def write_pgm(path, img: np.ndarray, binary: bool = True) -> None:
    Path(path).write_bytes(encode_pgm(img, binary))


# ---------------------------------------------------------------------------
# DOT


def dot_digraph(name: str, labels: list[str], edges) -> str:
    """Digraph with nodes ``n0..`` labelled by ``labels`` and the given edges."""
    out = [f"digraph {name} {{", "  rankdir=BT;"]
    for i, lab in enumerate(labels):
        out.append(f"  n{i} [label={json.dumps(lab)}];")
    for a, b in edges:
        out.append(f"  n{a} -> n{b};")
    out.append("}")
    return "\n".join(out) + "\n"
