"""Modulation-matrix files: binary ``UWAF`` and a lossless CSV export."""
import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionError
from .modem import as_modulation

FMATRIX_MAGIC = b"UWAF"
FMATRIX_VERSION = 1
_HEAD = struct.Struct("<4sII")


def fmatrix_to_bytes(f):
    f = np.asarray(f, dtype=np.complex128)
    n = f.shape[0]
    inter = np.empty((n * n, 2), dtype="<f8")
    inter[:, 0] = f.real.ravel()
    inter[:, 1] = f.imag.ravel()
    return _HEAD.pack(FMATRIX_MAGIC, FMATRIX_VERSION, n) + inter.tobytes()


def fmatrix_from_bytes(buf, check_unitary=True):
    """Parse a ``UWAF`` buffer.

    Raises :class:`FormatError` for malformed input and
    :class:`~uwamod.modem.NotUnitaryError` when ``check_unitary`` is set and
    the matrix is not unitary.
    """
    if len(buf) < _HEAD.size:
        raise FormatError("file shorter than header", len(buf))
    magic, version, n = _HEAD.unpack_from(buf, 0)
    if magic != FMATRIX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FMATRIX_MAGIC!r}", 0)
    if version != FMATRIX_VERSION:
        raise VersionError(f"unsupported modulation file version {version}", 4)
    need = n * n * 16
    if n < 1 or len(buf) - _HEAD.size != need:
        raise FormatError(
            f"body holds {len(buf) - _HEAD.size} bytes, expected {need} for N = {n}",
            _HEAD.size + min(need, max(len(buf) - _HEAD.size, 0)),
        )
    inter = np.frombuffer(buf, dtype="<f8", offset=_HEAD.size).reshape(n * n, 2)
    f = (inter[:, 0] + 1j * inter[:, 1]).reshape(n, n)
    if not np.all(np.isfinite(f)):
        raise FormatError("modulation file contains non-finite entries", _HEAD.size)
    return as_modulation(f) if check_unitary else f


def save_fmatrix(f, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(fmatrix_to_bytes(f))
    tmp.replace(path)


def load_fmatrix(path, check_unitary=True):
    return fmatrix_from_bytes(Path(path).read_bytes(), check_unitary)


def write_fmatrix_csv(f, path):
    """Rows ``row, col, re, im`` with 17 significant digits (round-trip exact)."""
    f = np.asarray(f, dtype=np.complex128)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "re", "im"])
        for (i, j), z in np.ndenumerate(f):
            w.writerow([i, j, f"{z.real:.17g}", f"{z.imag:.17g}"])


def read_fmatrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = int(round(np.sqrt(len(rows))))
    if n * n != len(rows) or n == 0:
        raise FormatError(f"CSV holds {len(rows)} entries, not a square count")
    f = np.zeros((n, n), dtype=np.complex128)
    for r in rows:
        f[int(r["row"]), int(r["col"])] = complex(float(r["re"]), float(r["im"]))
    return f
