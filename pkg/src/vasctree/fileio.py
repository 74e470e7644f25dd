"""File formats: binary/label PGM, a minimal NRRD subset, raw float grids.

2D masks are P5 PGM (maxval 255): 0 background, 255 foreground; artery/vein
label maps use 0/100/200/255 for background/artery/vein/crossing.  3D masks
are a detached-header NRRD subset (uint8, raw, little-endian).  Scalar
fields are raw little-endian float32 in C order next to a JSON sidecar
holding dims and spacing, which round-trips bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .murray import ExponentTable
from .raster import MaskGrid, ScalarField

_PGM_FROM_LABEL = {0: 0, 1: 100, 2: 200, 3: 255}
_LABEL_FROM_PGM = {0: 0, 100: 1, 200: 2, 255: 3}


def write_pgm(path, mask: MaskGrid):
    if mask.ndim != 2:
        raise DataError("PGM holds 2D masks only")
    labels = mask.labels
    if labels.max(initial=0) <= 1:
        data = (labels * 255).astype(np.uint8)
    else:
        lut = np.zeros(4, dtype=np.uint8)
        for k, v in _PGM_FROM_LABEL.items():
            lut[k] = v
        data = lut[labels]
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path, spacing: tuple[float, float] = (1.0, 1.0)) -> MaskGrid:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(b"P5"):
        raise DataError(f"{path}: not a binary (P5) PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: PGM maxval must be 255")
    data = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise DataError(f"{path}: truncated PGM payload")
    img = data.reshape(h, w)
    values = set(np.unique(img).tolist())
    if values <= {0, 255}:
        labels = (img == 255).astype(np.uint8)
    elif values <= set(_LABEL_FROM_PGM):
        lut = np.zeros(256, dtype=np.uint8)
        for k, v in _LABEL_FROM_PGM.items():
            lut[k] = v
        labels = lut[img]
    else:
        raise DataError(f"{path}: pixel values {sorted(values)[:6]} are not a "
                        "recognized mask encoding (0/255 or 0/100/200/255)")
    return MaskGrid(labels, spacing)


def write_nrrd(path, mask: MaskGrid):
    """Detached-header NRRD: <path> is the .nhdr, payload sits alongside."""
    if mask.ndim != 3:
        raise DataError("NRRD writer holds 3D masks only")
    path = Path(path)
    raw_name = path.with_suffix(".raw").name
    sizes = " ".join(str(s) for s in mask.dims[::-1])  # fastest axis first
    spacings = " ".join(repr(s) for s in mask.spacing[::-1])
    header = (
        "NRRD0004\n"
        "type: uint8\n"
        "dimension: 3\n"
        f"sizes: {sizes}\n"
        f"spacings: {spacings}\n"
        "encoding: raw\n"
        "endian: little\n"
        f"data file: {raw_name}\n"
    )
    path.write_text(header)
    path.with_suffix(".raw").write_bytes(mask.labels.tobytes())


def read_nrrd(path) -> MaskGrid:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith("NRRD"):
        raise DataError(f"{path}: missing NRRD magic")
    fields = {}
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataError(f"{path}: malformed header line {line!r}")
        key, val = line.split(":", 1)
        fields[key.strip()] = val.strip()
    for key, expect in (("type", "uint8"), ("dimension", "3"),
                        ("encoding", "raw"), ("endian", "little")):
        if fields.get(key) != expect:
            raise DataError(f"{path}: unsupported NRRD ({key}: {fields.get(key)})")
    try:
        sizes = [int(s) for s in fields["sizes"].split()]
        spacings = [float(s) for s in fields["spacings"].split()]
        data_file = fields["data file"]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed NRRD header: {exc}") from exc
    raw = (path.parent / data_file).read_bytes()
    n = sizes[0] * sizes[1] * sizes[2]
    if len(raw) != n:
        raise DataError(f"{path}: payload size {len(raw)} != {n}")
    labels = np.frombuffer(raw, dtype=np.uint8).reshape(sizes[::-1])
    return MaskGrid(labels, tuple(spacings[::-1]))


def read_mask(path, spacing=None) -> MaskGrid:
    """Dispatch on extension: .pgm -> 2D, .nhdr -> 3D."""
    p = Path(path)
    if p.suffix == ".pgm":
        return read_pgm(p, spacing or (1.0, 1.0))
    if p.suffix == ".nhdr":
        return read_nrrd(p)
    raise DataError(f"{path}: unknown mask format (expected .pgm or .nhdr)")


def write_mask(path, mask: MaskGrid):
    if Path(path).suffix == ".nhdr":
        write_nrrd(path, mask)
    else:
        write_pgm(path, mask)


def write_field(path, field: ScalarField):
    """Raw little-endian float32 grid plus a JSON sidecar."""
    values = field.values.astype("<f4")
    Path(path).write_bytes(values.tobytes())
    sidecar = {"dims": list(field.dims), "spacing": list(field.spacing)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))


def read_field(path) -> ScalarField:
    try:
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        dims = [int(d) for d in sidecar["dims"]]
        spacing = tuple(float(s) for s in sidecar["spacing"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: missing or malformed sidecar: {exc}") from exc
    raw = Path(path).read_bytes()
    n = int(np.prod(dims))
    if len(raw) != 4 * n:
        raise DataError(f"{path}: payload size {len(raw)} != {4 * n}")
    values = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
    return ScalarField(values, spacing)


def write_table(path, table: ExponentTable):
    """CSV of bins plus a JSON sidecar with the table's scalar metadata."""
    lines = ["width_um,alpha,count"]
    for w, a, c in zip(table.widths_um, table.alphas, table.counts):
        lines.append(f"{float(w)!r},{float(a)!r},{int(c)}")
    Path(path).write_text("\n".join(lines) + "\n")
    sidecar = {
        "sigma_log": table.sigma_log,
        "ci_low": table.ci[0] if table.ci else None,
        "ci_high": table.ci[1] if table.ci else None,
        "class": table.cls,
        "n_records": table.n_records,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))


def read_table(path) -> ExponentTable:
    try:
        lines = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != "width_um,alpha,count":
        raise DataError(f"{path}: expected header 'width_um,alpha,count'")
    widths, alphas, counts = [], [], []
    for line in lines[1:]:
        try:
            w, a, c = line.split(",")
            widths.append(float(w))
            alphas.append(float(a))
            counts.append(int(c))
        except ValueError as exc:
            raise DataError(f"{path}: malformed row {line!r}") from exc
    sidecar_path = Path(str(path) + ".json")
    sigma_log, ci, cls, n_records = 1.0, None, "single", 0
    if sidecar_path.exists():
        try:
            doc = json.loads(sidecar_path.read_text())
            sigma_log = float(doc["sigma_log"])
            if doc.get("ci_low") is not None:
                ci = (float(doc["ci_low"]), float(doc["ci_high"]))
            cls = doc.get("class", "single")
            n_records = int(doc.get("n_records", 0))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: malformed table sidecar: {exc}") from exc
    return ExponentTable(np.asarray(widths), np.asarray(alphas),
                         np.asarray(counts), sigma_log, cls, ci, n_records)
