"""Reading and writing the toolkit's lattice containers.

One self-describing format (magic ``RFLD``) stores the three payload
kinds the command line passes around: voxel masks, multi-subject
lattice samples, and fields evaluated on a refined grid. A plain-text
variant of the same structure exists so test fixtures can be written
by hand.

Binary layout, little-endian::

    magic    b"RFLD"
    version  u16 (currently 1)
    kind     u8  (0 mask, 1 sample, 2 field)
    D        u8  (1 to 3)
    dims     D x u32
    spacing  D x f64
    mask     prod(dims) x u8, row-major, last axis fastest
    kind 1:  n_subjects u32, then n_subjects x n_included f64
             (included voxels in row-major order)
    kind 2:  r u16, n_subjects u32 (0 for a plain scalar field),
             has_gradient u8, n_points u32, n_points f64 values,
             then n_points x D f64 gradients when flagged

The text variant starts with ``RFLD-TEXT 1 <kind>`` followed by fixed
header lines and whitespace-separated numbers; ``#`` starts a comment.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fields import LatticeSample, ScalarField
from .grid import Mask, refine
from .tstats import TField

MAGIC = b"RFLD"
TEXT_MAGIC = "RFLD-TEXT"
VERSION = 1

_KIND_NAMES = {0: "mask", 1: "sample", 2: "field"}
_KIND_CODES = {name: code for code, name in _KIND_NAMES.items()}


class _Cursor:
    """Byte reader that reports truncation instead of slicing short."""

    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, count: int) -> bytes:
        end = self.pos + count
        if end > len(self.raw):
            raise ValueError(
                f"container truncated: needed {count} bytes at offset "
                f"{self.pos}, file has {len(self.raw)}"
            )
        out = self.raw[self.pos : end]
        self.pos = end
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)

    def done(self) -> None:
        if self.pos != len(self.raw):
            raise ValueError(
                f"container has {len(self.raw) - self.pos} trailing bytes"
            )


def _mask_payload(cur: _Cursor, dims: tuple[int, ...], spacing) -> Mask:
    flat = np.frombuffer(cur.take(int(np.prod(dims))), dtype=np.uint8)
    if not np.isin(flat, (0, 1)).all():
        raise ValueError("mask payload must be 0 or 1")
    return Mask(flat.reshape(dims).astype(bool), spacing)


def _read_binary(raw: bytes):
    cur = _Cursor(raw)
    if cur.take(4) != MAGIC:
        raise ValueError("not an RFLD container")
    (version,) = cur.unpack("<H")
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    kind, ndim = cur.unpack("<BB")
    if kind not in _KIND_NAMES:
        raise ValueError(f"unknown container kind {kind}")
    if not 1 <= ndim <= 3:
        raise ValueError(f"dimension count must be 1 to 3, got {ndim}")
    dims = tuple(int(n) for n in cur.unpack(f"<{ndim}I"))
    spacing = cur.unpack(f"<{ndim}d")
    mask = _mask_payload(cur, dims, spacing)
    if kind == 0:
        cur.done()
        return mask
    if kind == 1:
        (n_subjects,) = cur.unpack("<I")
        if n_subjects == 0:
            raise ValueError("sample container has zero subjects")
        data = cur.floats(n_subjects * mask.n_voxels)
        cur.done()
        return LatticeSample(mask, data.reshape(n_subjects, mask.n_voxels))
    (r,) = cur.unpack("<H")
    (n_subjects,) = cur.unpack("<I")
    (has_gradient,) = cur.unpack("<B")
    if has_gradient not in (0, 1):
        raise ValueError(f"gradient flag must be 0 or 1, got {has_gradient}")
    (n_points,) = cur.unpack("<I")
    grid = refine(mask, r)
    if n_points != grid.n_points:
        raise ValueError(
            f"field container holds {n_points} points but the grid has "
            f"{grid.n_points}"
        )
    values = cur.floats(n_points)
    gradient = None
    if has_gradient:
        gradient = cur.floats(n_points * ndim).reshape(n_points, ndim)
    cur.done()
    if n_subjects == 0:
        return ScalarField(grid, values, gradient)
    return TField(grid, n_subjects, values, gradient)


def _header(kind: int, mask: Mask) -> bytes:
    ndim = mask.ndim
    parts = [
        MAGIC,
        struct.pack("<HBB", VERSION, kind, ndim),
        struct.pack(f"<{ndim}I", *mask.dims),
        struct.pack(f"<{ndim}d", *mask.spacing),
        mask.inclusion.astype(np.uint8).tobytes(),
    ]
    return b"".join(parts)


def _f64(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


# ---------------------------------------------------------------------------
# text variant


def _text_tokens(lines: list[str]):
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0]
        for token in body.split():
            yield lineno, token


def _text_header_line(stream, key: str):
    try:
        lineno, token = next(stream)
    except StopIteration:
        raise ValueError(f"text container ends before the '{key}' header")
    if token != key:
        raise ValueError(f"line {lineno}: expected '{key}', found '{token}'")
    return lineno


def _text_numbers(stream, key: str, count: int, lineno: int) -> list[float]:
    out = []
    while len(out) < count:
        try:
            lineno, token = next(stream)
        except StopIteration:
            raise ValueError(
                f"text container ends inside '{key}': expected {count} "
                f"values, found {len(out)}"
            )
        try:
            out.append(float(token))
        except ValueError:
            raise ValueError(f"line {lineno}: '{token}' is not a number")
    return out


def _text_field_value(stream, key: str) -> tuple[int, float]:
    lineno = _text_header_line(stream, key)
    return lineno, _text_numbers(stream, key, 1, lineno)[0]


def _read_text(text: str):
    lines = text.splitlines()
    stream = _text_tokens(lines)
    lineno = _text_header_line(stream, TEXT_MAGIC)
    try:
        lineno, token = next(stream)
    except StopIteration:
        raise ValueError("text container ends before the version field")
    if token != "1":
        raise ValueError(f"unsupported container version {token}")
    try:
        lineno, kind_name = next(stream)
    except StopIteration:
        raise ValueError("text container ends before the kind field")
    if kind_name not in _KIND_CODES:
        raise ValueError(f"unknown container kind '{kind_name}'")

    lineno = _text_header_line(stream, "dims")
    # dims length is unknown until spacing appears, so gather integers
    # until the next keyword.
    dims: list[int] = []
    while True:
        try:
            lineno, token = next(stream)
        except StopIteration:
            raise ValueError("text container ends before the 'spacing' header")
        if token == "spacing":
            break
        try:
            dims.append(int(token))
        except ValueError:
            raise ValueError(f"line {lineno}: expected 'spacing', found '{token}'")
    if not 1 <= len(dims) <= 3:
        raise ValueError(f"dimension count must be 1 to 3, got {len(dims)}")
    spacing = _text_numbers(stream, "spacing", len(dims), lineno)

    extras: dict[str, float] = {}
    keys = {"sample": ("subjects",), "field": ("r", "subjects", "gradient")}
    for key in keys.get(kind_name, ()):
        _, extras[key] = _text_field_value(stream, key)

    dims_t = tuple(dims)
    count = int(np.prod(dims_t))
    mask_vals = _text_numbers(stream, "mask values", count, lineno)
    flat = np.asarray(mask_vals)
    if not np.isin(flat, (0.0, 1.0)).all():
        raise ValueError("mask payload must be 0 or 1")
    mask = Mask(flat.reshape(dims_t).astype(bool), spacing)

    if kind_name == "mask":
        result = mask
    elif kind_name == "sample":
        n_subjects = int(extras["subjects"])
        if n_subjects <= 0:
            raise ValueError("sample container has zero subjects")
        data = _text_numbers(stream, "data", n_subjects * mask.n_voxels, lineno)
        result = LatticeSample(
            mask, np.asarray(data).reshape(n_subjects, mask.n_voxels)
        )
    else:
        grid = refine(mask, int(extras["r"]))
        n_subjects = int(extras["subjects"])
        has_gradient = int(extras["gradient"])
        if has_gradient not in (0, 1):
            raise ValueError(f"gradient flag must be 0 or 1, got {has_gradient}")
        values = np.asarray(
            _text_numbers(stream, "values", grid.n_points, lineno)
        )
        gradient = None
        if has_gradient:
            flat_g = _text_numbers(
                stream, "gradient", grid.n_points * grid.ndim, lineno
            )
            gradient = np.asarray(flat_g).reshape(grid.n_points, grid.ndim)
        if n_subjects == 0:
            result = ScalarField(grid, values, gradient)
        else:
            result = TField(grid, n_subjects, values, gradient)

    for lineno, token in stream:
        raise ValueError(f"line {lineno}: trailing data '{token}'")
    return result


def _wrap(tokens: list[str], per_line: int = 12) -> str:
    lines = [
        " ".join(tokens[i : i + per_line])
        for i in range(0, len(tokens), per_line)
    ]
    return "\n".join(lines)


def _text_header(kind_name: str, mask: Mask) -> list[str]:
    return [
        f"{TEXT_MAGIC} {VERSION} {kind_name}",
        "dims " + " ".join(str(n) for n in mask.dims),
        "spacing " + " ".join(repr(h) for h in mask.spacing),
    ]


def _mask_rows(mask: Mask) -> list[str]:
    rows = mask.inclusion.astype(int).reshape(-1, mask.dims[-1])
    return [" ".join(str(v) for v in row) for row in rows]


def _reprs(values: np.ndarray) -> list[str]:
    return [repr(float(v)) for v in np.asarray(values).ravel()]


# ---------------------------------------------------------------------------
# public API


def read_container(path) -> Mask | LatticeSample | ScalarField | TField:
    """Read any RFLD container, binary or text, and build its object."""
    raw = Path(path).read_bytes()
    if raw.lstrip().startswith(TEXT_MAGIC.encode()):
        return _read_text(raw.decode("utf-8"))
    return _read_binary(raw)


def _expect(obj, wanted: str, types: tuple):
    if isinstance(obj, types):
        return obj
    found = {
        Mask: "mask",
        LatticeSample: "sample",
        ScalarField: "field",
        TField: "field",
    }[type(obj)]
    raise ValueError(f"expected a {wanted} container, found a {found} container")


def read_mask(path) -> Mask:
    return _expect(read_container(path), "mask", (Mask,))


def read_sample(path) -> LatticeSample:
    return _expect(read_container(path), "sample", (LatticeSample,))


def read_field(path) -> ScalarField | TField:
    return _expect(read_container(path), "field", (ScalarField, TField))


def write_mask(mask: Mask, path, text: bool = False) -> None:
    if text:
        lines = _text_header("mask", mask) + _mask_rows(mask)
        Path(path).write_text("\n".join(lines) + "\n")
        return
    Path(path).write_bytes(_header(0, mask))


def write_sample(sample: LatticeSample, path, text: bool = False) -> None:
    if text:
        lines = _text_header("sample", sample.mask)
        lines.append(f"subjects {sample.n_subjects}")
        lines.extend(_mask_rows(sample.mask))
        for row in sample.data:
            lines.append(_wrap(_reprs(row)))
        Path(path).write_text("\n".join(lines) + "\n")
        return
    parts = [
        _header(1, sample.mask),
        struct.pack("<I", sample.n_subjects),
        _f64(sample.data),
    ]
    Path(path).write_bytes(b"".join(parts))


def write_field(field: ScalarField | TField, path, text: bool = False) -> None:
    grid = field.grid
    n_subjects = field.n_subjects if isinstance(field, TField) else 0
    has_gradient = int(field.gradient is not None)
    if text:
        lines = _text_header("field", grid.parent)
        lines.append(f"r {grid.r}")
        lines.append(f"subjects {n_subjects}")
        lines.append(f"gradient {has_gradient}")
        lines.extend(_mask_rows(grid.parent))
        lines.append(_wrap(_reprs(field.values)))
        if field.gradient is not None:
            lines.append(_wrap(_reprs(field.gradient)))
        Path(path).write_text("\n".join(lines) + "\n")
        return
    parts = [
        _header(2, grid.parent),
        struct.pack("<HIB", grid.r, n_subjects, has_gradient),
        struct.pack("<I", grid.n_points),
        _f64(field.values),
    ]
    if field.gradient is not None:
        parts.append(_f64(field.gradient))
    Path(path).write_bytes(b"".join(parts))
