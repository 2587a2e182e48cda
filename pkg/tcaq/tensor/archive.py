"""Flat tensor archive used for every on-disk artifact.

Layout (little-endian throughout):

    b"TCAQTNSR" | version: u8 | record count: u32
    per record: name length: u32 | name: UTF-8 | dtype: u8 | ndim: u32 | dims: u32 * ndim | data

dtype 0 is f32 and 1 is f64. Version 1 files have no dtype byte and are all f32.
"""

import logging
import struct
from pathlib import Path
from typing import Collection, Mapping, Union

import numpy as np

from .core import TensorError

logger = logging.getLogger(__name__)

MAGIC = b"TCAQTNSR"
VERSION = 2
F32_ONLY_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {dtype: code for code, dtype in _DTYPES.items()}


class ArchiveError(TensorError):
    """Raised when an archive cannot be written or parsed."""
    pass


def save_archive(
    path: Union[str, Path],
    records: Mapping[str, np.ndarray],
    float64: Collection[str] = (),
) -> Path:
    """
    Write named arrays to an archive file.

    Args:
        path: Destination file; parent directories are created.
        records: Ordered name -> array mapping. Values are stored as float32.
        float64: Names of records stored as float64 instead.

    Returns:
        The written path.

    Raises:
        ArchiveError: If the path is unwritable, a record cannot be encoded,
            or a float64 name is not among the records.
    """
    path = Path(path)
    unknown = set(float64) - set(records)
    if unknown:
        raise ArchiveError(f"float64 names without a record: {sorted(unknown)}")

    chunks = [MAGIC, struct.pack("<BI", VERSION, len(records))]
    for name, value in records.items():
        dtype = _DTYPES[1] if name in float64 else _DTYPES[0]
        array = np.asarray(value, dtype=dtype)
        encoded = name.encode("utf-8")
        if any(dim >= 2 ** 32 for dim in array.shape):
            raise ArchiveError(f"Record '{name}' has a dimension too large for u32: {array.shape}")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", _DTYPE_CODES[dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
    except OSError as e:
        raise ArchiveError(f"Cannot write archive {path}: {e}") from e

    logger.debug("Wrote %d records to %s", len(records), path)
    return path


def load_archive(path: Union[str, Path]) -> dict[str, np.ndarray]:
    """
    Read every record of an archive file.

    Returns:
        Name -> array in file order, float32 or float64 as stored.

    Raises:
        FileNotFoundError: If the file does not exist.
        ArchiveError: On a bad header, truncation or duplicate names.
    """
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path} is not a tensor archive (bad magic)")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<BI", raw, offset)
        offset += struct.calcsize("<BI")
        if version not in (F32_ONLY_VERSION, VERSION):
            raise ArchiveError(f"{path}: unsupported archive version {version}")

        records: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            dtype = _DTYPES[0]
            if version != F32_ONLY_VERSION:
                (code,) = struct.unpack_from("<B", raw, offset)
                offset += 1
                if code not in _DTYPES:
                    raise ArchiveError(f"{path}: record '{name}' has unknown dtype code {code}")
                dtype = _DTYPES[code]
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            n_values = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype=dtype, count=n_values, offset=offset)
            offset += dtype.itemsize * n_values
            if name in records:
                raise ArchiveError(f"{path}: duplicate record '{name}'")
            records[name] = data.reshape(shape).astype(dtype.newbyteorder("="))
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise ArchiveError(f"{path}: truncated or corrupt archive ({e})") from e

    if offset != len(raw):
        raise ArchiveError(f"{path}: {len(raw) - offset} trailing bytes after last record")
    return records
