"""On-disk formats: embedding matrices (text and binary), latent grids,
PGM masks, story JSON and CSV tables."""

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .story import StorySpec

TEXT_MAGIC = "EMB"
TEXT_VERSION = "v1"
BIN_MAGIC = b"EMBF"
BIN_VERSION = 1
_BIN_HEADER = struct.Struct("<4sBII")

FORMAT_VERSIONS = {
    "embedding_text": TEXT_VERSION,
    "embedding_binary": BIN_VERSION,
    "mask": "P5",
    "story": 1,
}


def _fmt(x):
    return repr(float(x))


def dumps_embeddings_text(values, labels=None):
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    lines = [f"{TEXT_MAGIC} {TEXT_VERSION} {rows} {cols}"]
    lines += [" ".join(_fmt(x) for x in row) for row in values]
    if labels is not None:
        lines.append("LABELS " + " ".join(str(int(bool(v))) for v in labels))
    return "\n".join(lines) + "\n"


def loads_embeddings_text(text, path=None):
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", path, "line 1")
    head = lines[0].split()
    if len(head) != 4 or head[0] != TEXT_MAGIC:
        raise ParseError(f"expected '{TEXT_MAGIC} {TEXT_VERSION} <rows> <cols>' header", path, "line 1")
    if head[1] != TEXT_VERSION:
        raise ParseError(f"unsupported version {head[1]!r}", path, "line 1")
    try:
        rows, cols = int(head[2]), int(head[3])
    except ValueError:
        raise ParseError("row/column counts must be integers", path, "line 1") from None
    if rows < 1 or cols < 1:
        raise ParseError("row/column counts must be positive", path, "line 1")
    if len(lines) < rows + 1:
        raise ParseError(f"expected {rows} data rows, found {len(lines) - 1}", path, f"line {len(lines) + 1}")
    values = np.empty((rows, cols))
    for r in range(rows):
        parts = lines[r + 1].split()
        if len(parts) != cols:
            raise ParseError(f"expected {cols} values, found {len(parts)}", path, f"line {r + 2}")
        try:
            values[r] = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(str(exc), path, f"line {r + 2}") from None
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite value", path)
    labels = None
    rest = [(i, ln) for i, ln in enumerate(lines[rows + 1:], start=rows + 2) if ln.strip()]
    if rest:
        lineno, line = rest[0]
        parts = line.split()
        if parts[0] != "LABELS" or len(rest) > 1:
            raise ParseError("unexpected trailing content", path, f"line {lineno}")
        labels = _parse_labels(parts[1:], rows, path, f"line {lineno}")
    return values, labels


def _parse_labels(parts, rows, path, where):
    if len(parts) != rows or any(p not in ("0", "1") for p in parts):
        raise ParseError(f"LABELS needs {rows} values of 0/1", path, where)
    return np.array([p == "1" for p in parts])


def dumps_embeddings_bin(values):
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    body = np.ascontiguousarray(values, dtype="<f4").tobytes()
    return _BIN_HEADER.pack(BIN_MAGIC, BIN_VERSION, rows, cols) + body


def loads_embeddings_bin(data, path=None):
    if len(data) < _BIN_HEADER.size:
        raise ParseError("truncated header", path, f"offset {len(data)}")
    magic, version, rows, cols = _BIN_HEADER.unpack_from(data)
    if magic != BIN_MAGIC:
        raise ParseError("bad magic bytes", path, "offset 0")
    if version != BIN_VERSION:
        raise ParseError(f"unsupported version {version}", path, "offset 4")
    if rows < 1 or cols < 1:
        raise ParseError("row/column counts must be positive", path, "offset 5")
    need = _BIN_HEADER.size + 4 * rows * cols
    if len(data) != need:
        raise ParseError(f"expected {need} bytes, got {len(data)}", path, f"offset {min(len(data), need)}")
    values = np.frombuffer(data, dtype="<f4", offset=_BIN_HEADER.size).reshape(rows, cols)
    values = values.astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite value", path)
    return values


def labels_sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".labels")


def write_embeddings(path, values, labels=None, fmt="text"):
    """Write a matrix. Binary files keep labels in a ``<name>.labels`` sidecar."""
    path = Path(path)
    if fmt == "text":
        path.write_text(dumps_embeddings_text(values, labels))
        return [path]
    if fmt != "bin":
        raise ValueError(f"unknown format {fmt!r}")
    path.write_bytes(dumps_embeddings_bin(values))
    written = [path]
    if labels is not None:
        side = labels_sidecar(path)
        side.write_text("LABELS " + " ".join(str(int(bool(v))) for v in labels) + "\n")
        written.append(side)
    return written


def read_embeddings(path):
    """Read either format (detected by magic bytes); returns ``(values, labels)``."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == BIN_MAGIC:
        values = loads_embeddings_bin(data, path)
        labels = None
        side = labels_sidecar(path)
        if side.exists():
            parts = side.read_text().split()
            if not parts or parts[0] != "LABELS":
                raise ParseError("expected LABELS line", side, "line 1")
            labels = _parse_labels(parts[1:], values.shape[0], side, "line 1")
        return values, labels
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("not UTF-8 text nor EMBF binary", path, f"offset {exc.start}") from None
    return loads_embeddings_text(text, path)


def write_latent(path, grid, fmt="bin"):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise ValueError("latent grids are square")
    return write_embeddings(path, grid, None, fmt)[0]


def read_latent(path):
    values, _ = read_embeddings(path)
    if values.shape[0] != values.shape[1]:
        raise ParseError(f"latent grid must be square, got {values.shape}", path)
    return values


def dumps_pgm(mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + (mask.astype(np.uint8) * 255).tobytes()


def loads_pgm(data, path=None):
    """Binary PGM with maxval 255; pixels >= 128 are set."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path, f"offset {pos}")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise ParseError("expected P5 magic", path, "offset 0")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ParseError("bad PGM header numbers", path, "offset 3") from None
    if maxval != 255:
        raise ParseError(f"maxval must be 255, got {maxval}", path)
    raster = data[pos:]
    if len(raster) != w * h:
        raise ParseError(f"expected {w * h} pixels, got {len(raster)}", path, f"offset {pos}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w) >= 128


def write_mask(path, mask):
    Path(path).write_bytes(dumps_pgm(mask))
    return Path(path)


def read_mask(path):
    return loads_pgm(Path(path).read_bytes(), path)


def read_story(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ParseError("story must be a JSON object", path)
    chars = doc.get("characters", [])
    prompts = doc.get("prompts")
    seed = doc.get("seed", 0)
    if not isinstance(chars, list) or not all(isinstance(c, str) for c in chars):
        raise ParseError("'characters' must be an array of strings", path)
    if not isinstance(prompts, list) or not all(isinstance(p, str) for p in prompts):
        raise ParseError("'prompts' must be an array of strings", path)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ParseError("'seed' must be an integer", path)
    return StorySpec(chars, prompts, seed)


def write_story(path, spec):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer, np.bool_)):
        return str(int(x))
    return str(x)


def dumps_csv(rows, columns=None):
    if not rows:
        raise ValueError("no rows to write")
    columns = columns or list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=None):
    Path(path).write_text(dumps_csv(rows, columns))
    return Path(path)


def read_csv(path):
    """Rows as dicts; numeric-looking cells become floats."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            parsed = {}
            for k, v in row.items():
                if k is None:
                    raise ParseError("row has more cells than the header", path, f"line {reader.line_num}")
                try:
                    parsed[k] = float(v)
                except (TypeError, ValueError):
                    parsed[k] = v
            rows.append(parsed)
    return rows
