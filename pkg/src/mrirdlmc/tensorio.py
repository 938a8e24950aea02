"""Binary tensor I/O (NDF files) and 16-bit PGM export.

NDF is a minimal self-describing container for the dense real/complex
tensors exchanged by the CLI tools:

* bytes 0-3   magic ``NDF1``
* byte 4      dtype tag: ``0x01`` real64, ``0x02`` complex128
* byte 5      number of dimensions (1..8)
* bytes 6..   ndim little-endian uint64 extents
* payload     row-major scalars, little endian; complex scalars are
              stored as (real, imag) float64 pairs.

All writes go through a temp-file + rename so that readers never see a
partially written file.
"""

import os
import struct
import tempfile

import numpy as np

MAGIC = b"NDF1"
MAX_NDIM = 8

_TAG_REAL64 = 0x01
_TAG_COMPLEX128 = 0x02
_DTYPES = {_TAG_REAL64: np.dtype("<f8"), _TAG_COMPLEX128: np.dtype("<c16")}


class NdfError(Exception):
    """Malformed or unserializable NDF content."""


class BadMagic(NdfError):
    """The file does not start with the NDF magic."""


class TruncatedFile(NdfError):
    """The file is shorter than its header promises."""


class UnsupportedDtype(NdfError):
    """Unknown dtype tag, or an array dtype outside {real64, complex128}."""


class IoFailure(NdfError):
    """The underlying filesystem operation failed."""


class WrongRank(ValueError):
    """A 2-D tensor was expected."""


def _atomic_write(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ndf-tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_ndf(t, path):
    """Serialize a real64/complex128 tensor to ``path`` in NDF format."""
    arr = np.asarray(t)
    if arr.dtype.kind == "f":
        tag = _TAG_REAL64
    elif arr.dtype.kind == "c":
        tag = _TAG_COMPLEX128
    else:
        raise UnsupportedDtype(f"cannot serialize dtype {arr.dtype}")
    if not 1 <= arr.ndim <= MAX_NDIM:
        raise NdfError(f"ndim must be in [1, {MAX_NDIM}], got {arr.ndim}")
    if any(n < 1 for n in arr.shape):
        raise NdfError(f"extents must be >= 1, got {arr.shape}")
    header = MAGIC + bytes((tag, arr.ndim))
    header += b"".join(struct.pack("<Q", n) for n in arr.shape)
    data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
    _atomic_write(path, header + data)


def read_ndf(path):
    """Parse an NDF file back into a numpy array (exact roundtrip)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: only {len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 6:
        raise TruncatedFile(f"{path}: header cut short")
    tag, ndim = raw[4], raw[5]
    if tag not in _DTYPES:
        raise UnsupportedDtype(f"{path}: unknown dtype tag 0x{tag:02x}")
    if not 1 <= ndim <= MAX_NDIM:
        raise NdfError(f"{path}: invalid ndim {ndim}")
    dims_end = 6 + 8 * ndim
    if len(raw) < dims_end:
        raise TruncatedFile(f"{path}: extents cut short")
    shape = struct.unpack(f"<{ndim}Q", raw[6:dims_end])
    if any(n < 1 for n in shape):
        raise NdfError(f"{path}: invalid extent in {shape}")
    dtype = _DTYPES[tag]
    count = int(np.prod(shape))
    expected = dims_end + count * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedFile(f"{path}: payload has {len(raw) - dims_end} of "
                            f"{count * dtype.itemsize} bytes")
    if len(raw) > expected:
        raise NdfError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return data.reshape(shape).copy()


def export_pgm(frame, path):
    """Export a 2-D tensor as a 16-bit binary PGM, min-max normalized.

    Complex input is reduced to its modulus. A constant frame maps to an
    all-zero image (the degenerate normalization case).
    """
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise WrongRank(f"expected a 2-D frame, got ndim={arr.ndim}")
    mag = np.abs(arr).astype(np.float64)
    lo = float(mag.min())
    hi = float(mag.max())
    if hi > lo:
        pix = np.round((mag - lo) * (65535.0 / (hi - lo)))
    else:
        pix = np.zeros_like(mag)
    rows, cols = pix.shape
    header = f"P5\n{cols} {rows}\n65535\n".encode("ascii")
    _atomic_write(path, header + pix.astype(">u2").tobytes())
