"""PGM/PPM codecs, heat-map rendering and CSV persistence.

Every writer goes through a temporary file in the target directory and an
atomic rename, so a failed write never leaves a partial file behind.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import DisplacementSet, EnsembleField, Image, PosteriorField, ScalarField
from .errors import EnsembleRegError, InvalidArgumentError


class NetpbmError(EnsembleRegError, ValueError):
    """A PGM file could not be parsed; ``offset`` is the byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(NetpbmError):
    pass


class MalformedDataError(NetpbmError):
    pass


class TruncatedDataError(NetpbmError):
    pass


class UnsupportedFormatError(NetpbmError):
    pass


class CsvFormatError(EnsembleRegError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------


def atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Netpbm
# ---------------------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _next_token(data: bytes, pos: int):
    """Skip whitespace and comments; return ``(token, start, end)`` or None."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c in _WS:
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in b"\n\r":
                pos += 1
        else:
            break
    if pos >= n:
        return None
    start = pos
    while pos < n and data[pos:pos + 1] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], start, pos


def _header_int(data, pos, what):
    tok = _next_token(data, pos)
    if tok is None:
        raise MalformedHeaderError(f"header ends before {what}", len(data))
    text, start, end = tok
    if not text.isdigit():
        raise MalformedHeaderError(f"expected {what}, found {text[:16]!r}", start)
    return int(text), start, end


def parse_pgm(data: bytes) -> Image:
    """Parse P2 (ASCII) or P5 (binary) PGM bytes; values are kept as stored."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise UnsupportedFormatError(f"unsupported magic number {magic!r}", 0)
    if len(data) > 2 and data[2:3] not in _WS and data[2:3] != b"#":
        raise MalformedHeaderError("magic number not followed by whitespace", 2)
    width, w_at, pos = _header_int(data, 2, "width")
    height, h_at, pos = _header_int(data, pos, "height")
    maxval, m_at, pos = _header_int(data, pos, "maxval")
    if width < 1:
        raise MalformedHeaderError("width must be positive", w_at)
    if height < 1:
        raise MalformedHeaderError("height must be positive", h_at)
    if not 1 <= maxval <= 65535:
        raise UnsupportedFormatError(f"maxval {maxval} outside 1..65535", m_at)
    count = width * height

    if magic == b"P5":
        if pos >= len(data) or data[pos:pos + 1] not in _WS:
            raise MalformedHeaderError("missing whitespace after maxval", pos)
        pos += 1
        nbytes = count * (2 if maxval > 255 else 1)
        if len(data) - pos < nbytes:
            raise TruncatedDataError(
                f"expected {nbytes} bytes of pixel data, found {len(data) - pos}", len(data)
            )
        dtype = ">u2" if maxval > 255 else "u1"
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        if np.any(pixels > maxval):
            bad = int(np.argmax(pixels > maxval))
            raise MalformedDataError("sample exceeds maxval", pos + bad * pixels.itemsize)
        return Image(pixels.astype(np.float64).reshape(height, width))

    values = np.empty(count)
    for i in range(count):
        tok = _next_token(data, pos)
        if tok is None:
            raise TruncatedDataError(f"expected {count} samples, found {i}", len(data))
        text, start, pos = tok
        if not text.isdigit():
            raise MalformedDataError(f"invalid sample {text[:16]!r}", start)
        v = int(text)
        if v > maxval:
            raise MalformedDataError(f"sample {v} exceeds maxval {maxval}", start)
        values[i] = v
    return Image(values.reshape(height, width))


def read_image(path) -> Image:
    return parse_pgm(Path(path).read_bytes())


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def encode_pgm(img: Image) -> bytes:
    px = np.clip(_round_half_up(img.pixels), 0, 255).astype(np.uint8)
    return f"P5\n{img.width} {img.height}\n255\n".encode() + px.tobytes()


def write_image(img: Image, path):
    """Write an 8-bit binary PGM, clamping intensities to [0, 255]."""
    atomic_write(path, encode_pgm(img))


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def parse_ppm(data: bytes) -> np.ndarray:
    """Minimal P6 reader (8-bit), for checking rendered outputs."""
    if data[:2] != b"P6":
        raise UnsupportedFormatError(f"unsupported magic number {data[:2]!r}", 0)
    width, _, pos = _header_int(data, 2, "width")
    height, _, pos = _header_int(data, pos, "height")
    maxval, m_at, pos = _header_int(data, pos, "maxval")
    if maxval > 255:
        raise UnsupportedFormatError("only 8-bit PPM is supported", m_at)
    pos += 1
    n = width * height * 3
    if len(data) - pos < n:
        raise TruncatedDataError("short pixel data", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).reshape(height, width, 3)


# heat-map stops: t -> RGB
COLORMAP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
COLORMAP_RGB = np.array([
    (0, 0, 128),
    (0, 128, 255),
    (0, 255, 0),
    (255, 255, 0),
    (255, 0, 0),
], dtype=np.float64)


def colormap_rgb(values, lo: float, hi: float) -> np.ndarray:
    """Map values to 8-bit RGB with the fixed five-stop heat map."""
    if not hi > lo:
        raise InvalidArgumentError(f"colormap range needs hi > lo, got [{lo}, {hi}]")
    t = np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    channels = [np.interp(t, COLORMAP_STOPS, COLORMAP_RGB[:, c]) for c in range(3)]
    return _round_half_up(np.stack(channels, axis=-1)).astype(np.uint8)


def write_colormap(smap: ScalarField, path, lo: float, hi: float):
    atomic_write(path, encode_ppm(colormap_rgb(smap.values, lo, hi)))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def fmt_real(v) -> str:
    s = f"{float(v):.9f}"
    # avoid "-0.000000000"
    return s[1:] if s.startswith("-") and float(s) == 0.0 else s


def _fmt_value(kind, v) -> str:
    if kind == "vector":
        return f"{int(v[0])};{int(v[1])}"
    if kind == "label":
        return str(int(v))
    return fmt_real(v)


def encode_csv_field(obj) -> bytes:
    """CSV text for a ScalarField, PosteriorField or EnsembleField."""
    out = io.StringIO()
    if isinstance(obj, ScalarField):
        out.write("x,y,value\n")
        for y in range(obj.height):
            for x in range(obj.width):
                out.write(f"{x},{y},{fmt_real(obj.values[y, x])}\n")
    elif isinstance(obj, PosteriorField):
        out.write("x,y,k,p\n")
        for y in range(obj.height):
            for x in range(obj.width):
                row = obj.probs[y, x]
                for k in range(obj.K):
                    out.write(f"{x},{y},{k},{fmt_real(row[k])}\n")
    elif isinstance(obj, EnsembleField):
        out.write("x,y,value,weight\n")
        for y in range(obj.height):
            for x in range(obj.width):
                for v, w in obj.cell(x, y):
                    out.write(f"{x},{y},{_fmt_value(obj.kind, v)},{fmt_real(w)}\n")
    else:
        raise InvalidArgumentError(f"cannot serialize {type(obj).__name__} as a CSV field")
    return out.getvalue().encode()


def write_csv_field(obj, path):
    atomic_write(path, encode_csv_field(obj))


def write_rows(path, header, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, out.getvalue().encode())


def _read_table(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != list(header):
            raise CsvFormatError(f"{path}: expected header {','.join(header)!r}, got {first!r}")
        return [row for row in reader if row]


# probabilities are stored with 9 decimals, so reading renormalizes
_READ_TOL = 1e-6


def read_posterior_csv(path) -> PosteriorField:
    rows = _read_table(path, ("x", "y", "k", "p"))
    if not rows:
        raise CsvFormatError(f"{path}: no posterior rows")
    arr = np.array([[float(c) for c in r] for r in rows])
    xs, ys, ks = (arr[:, i].astype(np.int64) for i in range(3))
    W, H, K = xs.max() + 1, ys.max() + 1, ks.max() + 1
    if len(rows) != W * H * K:
        raise CsvFormatError(f"{path}: expected {W * H * K} rows for {W}x{H}x{K}, got {len(rows)}")
    probs = np.zeros((H, W, K))
    probs[ys, xs, ks] = np.clip(arr[:, 3], 0.0, None)
    sums = probs.sum(axis=2, keepdims=True)
    if np.any(np.abs(sums - 1.0) > _READ_TOL):
        raise CsvFormatError(f"{path}: posterior rows do not sum to 1")
    return PosteriorField(probs / sums)


def read_ensemble_csv(path) -> EnsembleField:
    rows = _read_table(path, ("x", "y", "value", "weight"))
    if not rows:
        raise CsvFormatError(f"{path}: no ensemble rows")
    if ";" in rows[0][2]:
        kind = "vector"
    elif all(r[2].lstrip("-").isdigit() for r in rows):
        kind = "label"
    else:
        kind = "scalar"
    W = max(int(r[0]) for r in rows) + 1
    H = max(int(r[1]) for r in rows) + 1
    cells = [[] for _ in range(W * H)]
    for x, y, v, w in rows:
        if kind == "vector":
            value = tuple(int(c) for c in v.split(";"))
        elif kind == "label":
            value = int(v)
        else:
            value = float(v)
        cells[int(y) * W + int(x)].append((value, float(w)))
    for i, cell in enumerate(cells):
        total = math.fsum(w for _, w in cell)
        if abs(total - 1.0) > _READ_TOL:
            raise CsvFormatError(f"{path}: weights of voxel {i % W},{i // W} sum to {total}")
        cells[i] = [(v, w / total) for v, w in cell]
    return EnsembleField.from_cells(W, H, kind, cells)


def write_displacements_csv(disps: DisplacementSet, path):
    write_rows(path, ("k", "dx", "dy"), [(k, int(d[0]), int(d[1])) for k, d in enumerate(disps.vectors)])


def read_displacements_csv(path) -> DisplacementSet:
    rows = _read_table(path, ("k", "dx", "dy"))
    rows.sort(key=lambda r: int(r[0]))
    return DisplacementSet(np.array([(int(r[1]), int(r[2])) for r in rows]))


def write_metrics_csv(metrics: dict, path):
    write_rows(path, ("metric", "value"), [(k, fmt_real(v)) for k, v in metrics.items()])
