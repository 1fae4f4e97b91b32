"""File formats: single-file NIfTI-1 subset, landmark CSV, JSON documents.

Only little-endian ``n+1`` files with uint8, int16 or float32 payloads are
handled. Displacement fields are stored as 5D images (``dim[4] == 1``,
``dim[5] == d``, intent code 1007) in voxel units; a comment extension says
so.
"""

import csv
import hashlib
import io as _io
import json
import math
import os
import struct
import tempfile
from importlib import resources

import jsonschema
import numpy as np

from .volume import DisplacementField, LabelVolume, LandmarkSet, ScalarVolume

__all__ = [
    "NiftiError", "InvalidHeaderError", "UnsupportedEndiannessError",
    "UnsupportedDatatypeError", "TruncatedDataError", "LandmarkParseError",
    "read_nifti", "write_nifti", "read_volume", "write_volume",
    "read_landmarks", "write_landmarks", "canonical_json", "write_json",
    "atomic_write", "load_schema", "validate_document", "load_config",
    "sha256_file",
]

HEADER_SIZE = 348
MAGIC = b"n+1\x00"
INTENT_VECTOR = 1007
DATATYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
DATATYPE_CODES = {np.dtype("uint8"): 2, np.dtype("int16"): 4,
                  np.dtype("float32"): 16}
UNITS_NOTE = b"regmod displacement units: voxel"


class NiftiError(ValueError):
    """Base class of NIfTI read errors; ``code`` names the failure."""

    code = "nifti_error"


class InvalidHeaderError(NiftiError):
    code = "invalid_header"


class UnsupportedEndiannessError(NiftiError):
    code = "unsupported_endianness"


class UnsupportedDatatypeError(NiftiError):
    code = "unsupported_datatype"


class TruncatedDataError(NiftiError):
    code = "truncated_data"


class LandmarkParseError(ValueError):
    code = "landmark_parse"


# ---------------------------------------------------------------------------
# Atomic writes and hashes
# ---------------------------------------------------------------------------

def atomic_write(path, payload):
    """Write bytes to ``path`` via a temporary file and ``os.replace``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def _pack_header(shape, datatype, pixdim, intent_code, descrip, vox_offset):
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 68, intent_code)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, DATATYPES[datatype].itemsize * 8)
    pd = [1.0] + list(pixdim) + [1.0] * (7 - len(pixdim))
    struct.pack_into("<8f", hdr, 76, *pd)
    struct.pack_into("<f", hdr, 108, float(vox_offset))
    struct.pack_into("<f", hdr, 112, 1.0)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    desc = descrip.encode("ascii", "replace")[:79]
    hdr[148:148 + len(desc)] = desc
    struct.pack_into("<h", hdr, 254, 0)
    hdr[344:348] = MAGIC
    return bytes(hdr)


def _extension(note):
    body = note + b"\x00"
    size = 8 + len(body)
    size += (-size) % 16
    return struct.pack("<ii", size, 6) + body.ljust(size - 8, b"\x00")


def write_nifti(path, data, spacing=None, intent_code=0, descrip="",
                note=None):
    """Write an array (Fortran order on disk) as single-file NIfTI-1."""
    data = np.asarray(data)
    if data.dtype not in DATATYPE_CODES:
        raise UnsupportedDatatypeError(f"cannot store dtype {data.dtype}")
    code = DATATYPE_CODES[data.dtype]
    if data.ndim > 7:
        raise ValueError("at most 7 dimensions")
    spacing = list(spacing) if spacing is not None else [1.0] * min(data.ndim, 3)
    ext = _extension(note) if note is not None else b""
    vox_offset = HEADER_SIZE + 4 + len(ext)
    vox_offset += (-vox_offset) % 16
    head = _pack_header(data.shape, code, spacing, intent_code, descrip,
                        vox_offset)
    flag = struct.pack("<4B", 1 if ext else 0, 0, 0, 0)
    pre = head + flag + ext
    pre = pre.ljust(vox_offset, b"\x00")
    payload = np.asarray(data, dtype=DATATYPES[code]).tobytes(order="F")
    atomic_write(path, pre + payload)


def read_nifti(path):
    """Read a NIfTI-1 file.

    Returns
    -------
    data : ndarray
        In the stored dtype, shaped ``dim[1:dim[0]+1]``.
    header : dict
        ``dim``, ``pixdim``, ``datatype``, ``intent_code``, ``vox_offset``,
        ``descrip``, ``extensions``.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError(f"{path}: file shorter than a NIfTI header")
    (size_le,) = struct.unpack_from("<i", raw, 0)
    if size_le != HEADER_SIZE:
        (size_be,) = struct.unpack_from(">i", raw, 0)
        if size_be == HEADER_SIZE:
            raise UnsupportedEndiannessError(
                f"{path}: big-endian NIfTI is not supported")
        raise InvalidHeaderError(f"{path}: sizeof_hdr is {size_le}, not 348")
    if raw[344:348] != MAGIC:
        raise InvalidHeaderError(
            f"{path}: magic {raw[344:348]!r} is not a single-file NIfTI-1")
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7 or any(n < 1 for n in dim[1:ndim + 1]):
        raise InvalidHeaderError(f"{path}: invalid dim field {dim}")
    (intent_code, datatype) = struct.unpack_from("<hh", raw, 68)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(
            f"{path}: datatype code {datatype} not in {sorted(DATATYPES)}")
    descrip = raw[148:228].split(b"\x00", 1)[0].decode("ascii", "replace")
    extensions = []
    pos = HEADER_SIZE + 4
    if len(raw) >= pos and raw[HEADER_SIZE] != 0:
        while pos + 8 <= int(vox_offset):
            esize, ecode = struct.unpack_from("<ii", raw, pos)
            if esize < 8:
                break
            extensions.append((ecode, raw[pos + 8:pos + esize].rstrip(b"\x00")))
            pos += esize
    shape = tuple(int(n) for n in dim[1:ndim + 1])
    dtype = DATATYPES[datatype]
    nbytes = int(np.prod(shape)) * dtype.itemsize
    start = int(vox_offset)
    if len(raw) < start + nbytes:
        raise TruncatedDataError(
            f"{path}: expected {nbytes} data bytes, found {max(len(raw) - start, 0)}")
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)),
                         offset=start).reshape(shape, order="F")
    header = {"dim": dim, "pixdim": pixdim, "datatype": datatype,
              "intent_code": intent_code, "vox_offset": vox_offset,
              "descrip": descrip, "extensions": extensions}
    return data, header


def write_volume(path, obj, descrip=""):
    """Write a :class:`ScalarVolume`, :class:`LabelVolume` or
    :class:`DisplacementField`."""
    if isinstance(obj, DisplacementField):
        d = obj.ndim
        comps = np.moveaxis(obj.data, 0, -1)
        spatial = obj.dims if d == 3 else obj.dims + (1,)
        arr = comps.reshape(spatial + (1, d)).astype(np.float32)
        write_nifti(path, arr, list(obj.spacing), INTENT_VECTOR, descrip,
                    UNITS_NOTE)
    elif isinstance(obj, LabelVolume):
        data = obj.data
        if data.size and data.max() > np.iinfo(np.int16).max:
            raise ValueError("label values exceed int16")
        dtype = np.uint8 if data.dtype == np.uint8 else np.int16
        write_nifti(path, data.astype(dtype), list(obj.spacing), 0, descrip)
    elif isinstance(obj, ScalarVolume):
        write_nifti(path, obj.data.astype(np.float32), list(obj.spacing), 0,
                    descrip)
    else:
        raise TypeError(f"cannot write {type(obj).__name__}")


def read_volume(path, kind=None):
    """Read a volume, a displacement field or a label map.

    ``kind`` is inferred when ``None``: 5D vector-intent files become
    :class:`DisplacementField`, integer datatypes :class:`LabelVolume`,
    float data :class:`ScalarVolume`.
    """
    data, hdr = read_nifti(path)
    dim = hdr["dim"]
    if kind is None:
        if dim[0] == 5 and hdr["intent_code"] == INTENT_VECTOR:
            kind = "displacement"
        elif np.issubdtype(data.dtype, np.integer):
            kind = "labels"
        else:
            kind = "scalar"
    if kind == "displacement":
        if dim[0] != 5 or dim[4] != 1 or dim[5] not in (2, 3):
            raise InvalidHeaderError(
                f"{path}: displacement files need dim[4]=1 and dim[5] in (2, 3)")
        d = dim[5]
        spatial = data.shape[:3]
        if d == 2:
            if spatial[2] != 1:
                raise InvalidHeaderError(f"{path}: 2D field with dim[3] != 1")
            spatial = spatial[:2]
        comps = np.moveaxis(data.reshape(spatial + (d,)), -1, 0)
        return DisplacementField(comps.astype(np.float64),
                                 hdr["pixdim"][1:d + 1])
    spatial = data.shape
    if len(spatial) not in (2, 3):
        raise InvalidHeaderError(f"{path}: expected a 2D or 3D image, got {spatial}")
    spacing = hdr["pixdim"][1:len(spatial) + 1]
    if kind == "labels":
        if not np.issubdtype(data.dtype, np.integer):
            raise UnsupportedDatatypeError(f"{path}: labels must be integer typed")
        return LabelVolume(np.array(data), spacing)
    if kind == "scalar":
        return ScalarVolume(data.astype(np.float64), spacing)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# Landmarks
# ---------------------------------------------------------------------------

def read_landmarks(path=None, text=None, dims=None):
    """Parse a landmark CSV with header ``x,y,z`` (or ``x,y``).

    Lines starting with ``#`` are ignored. A file without data rows yields
    an empty set.
    """
    if text is None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields_ = next(csv.reader([stripped]))
        fields_ = [f.strip() for f in fields_]
        if header is None:
            if fields_ not in (["x", "y", "z"], ["x", "y"]):
                raise LandmarkParseError(
                    f"line {lineno}: expected header 'x,y,z' or 'x,y', got {stripped!r}")
            header = fields_
            continue
        if len(fields_) != len(header):
            raise LandmarkParseError(
                f"line {lineno}: expected {len(header)} columns, got {len(fields_)}")
        try:
            rows.append([float(f) for f in fields_])
        except ValueError:
            raise LandmarkParseError(
                f"line {lineno}: non-numeric field in {stripped!r}") from None
    ndim = len(header) if header is not None else (len(dims) if dims else 3)
    pts = np.array(rows, dtype=np.float64).reshape(-1, ndim)
    return LandmarkSet(pts, dims=tuple(dims) if dims is not None else None)


def write_landmarks(path, points):
    pts = np.asarray(points, dtype=np.float64)
    buf = _io.StringIO()
    buf.write(",".join("xyz"[:pts.shape[1]]) + "\n")
    for p in pts:
        buf.write(",".join(repr(float(v)) for v in p) + "\n")
    atomic_write(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _round_sig(obj, digits):
    if isinstance(obj, dict):
        return {str(k): _round_sig(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_sig(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_round_sig(v, digits) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        if not math.isfinite(val):
            return None
        return float(f"{val:.{digits}g}")
    return obj


def canonical_json(obj, digits=6):
    """Sorted keys, floats rounded to ``digits`` significant digits."""
    return json.dumps(_round_sig(obj, digits), sort_keys=True, indent=2) + "\n"


def write_json(path, obj, digits=6):
    atomic_write(path, canonical_json(obj, digits).encode("utf-8"))


def load_schema(name):
    text = resources.files("regmod").joinpath("schemas", name).read_text()
    return json.loads(text)


def validate_document(doc, schema_name):
    """Validate against a bundled JSON schema; raise ``ValueError`` on failure."""
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"{schema_name}: {where}: {exc.message}") from None


def load_config(path):
    """Read and schema-check a JSON engine config; unknown keys are errors."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from None
    validate_document(doc, "config.schema.json")
    return doc
