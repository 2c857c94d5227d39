"""
Read and write VQTA tensor files.

Layout, all integers little-endian:
    4 bytes   magic 'VQTA'
    u8        version, always 1
    u8        dtype, 0 = float32, 1 = float64
    u16       rank
    rank x u64 extents
    payload   row-major little-endian elements, element size x product(extents) bytes
"""

import math
import os
import struct

import numpy as np

MAGIC = b'VQTA'
VERSION = 1
HEADER = struct.Struct('<4sBBH')
EXTENT = struct.Struct('<Q')

DTYPES = {
    0: np.dtype('<f4'),
    1: np.dtype('<f8'),
}


class VQTAFormatException(Exception):
    pass


def dtype_code(dtype: np.dtype) -> int:
    for code, dt in DTYPES.items():
        if np.dtype(dtype).newbyteorder('<') == dt:
            return code
    raise VQTAFormatException(f'dtype {dtype} cannot be stored, use float32 or float64')


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = dtype_code(arr.dtype)
    if any(extent < 1 for extent in arr.shape):
        raise VQTAFormatException(f'extents must be positive, got {arr.shape}')

    header = HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    extents = b''.join(EXTENT.pack(extent) for extent in arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes(order='C')
    return header + extents + payload


def decode(buf: bytes, name: str = '<buffer>') -> np.ndarray:
    if len(buf) < HEADER.size:
        raise VQTAFormatException(f'{name}: truncated header ({len(buf)} bytes)')

    magic, version, code, rank = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise VQTAFormatException(f'{name}: bad magic {magic!r}, not a VQTA file')
    if version != VERSION:
        raise VQTAFormatException(f'{name}: unknown version {version}')
    if code not in DTYPES:
        raise VQTAFormatException(f'{name}: unknown dtype code {code}')

    offset = HEADER.size
    if len(buf) < offset + rank * EXTENT.size:
        raise VQTAFormatException(f'{name}: truncated extents')
    shape = []
    for _ in range(rank):
        (extent,) = EXTENT.unpack_from(buf, offset)
        offset += EXTENT.size
        if extent < 1:
            raise VQTAFormatException(f'{name}: extent {extent} is not positive')
        shape.append(extent)

    dtype = DTYPES[code]
    expected = dtype.itemsize * math.prod(shape)
    if len(buf) - offset != expected:
        raise VQTAFormatException(f'{name}: payload is {len(buf) - offset} bytes, header says {expected}')

    return np.frombuffer(buf, dtype=dtype, offset=offset).reshape(shape).copy()


def write_tensor(path: str, arr: np.ndarray):
    with open(path, 'wb') as f:
        f.write(encode(arr))


def read_tensor(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise VQTAFormatException(f'{path}: no such file')
    with open(path, 'rb') as f:
        return decode(f.read(), path)
