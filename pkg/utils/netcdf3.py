"""NetCDF classic (CDF-1) reader/writer.

Only fixed-size (non-record) variables are written; the time axis of every
file produced here has a known length. All header integers are big-endian
int32, names and character attributes are padded to 4-byte boundaries, and
each variable's `begin` points at its data in the file.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from framework.errors import BadMagic, GridTooLarge, TruncatedPayload

MAGIC = b"CDF\x01"
ABSENT = b"\x00\x00\x00\x00\x00\x00\x00\x00"
NC_DIMENSION = b"\x00\x00\x00\n"
NC_VARIABLE = b"\x00\x00\x00\x0b"
NC_ATTRIBUTE = b"\x00\x00\x00\x0c"

NC_BYTE, NC_CHAR, NC_SHORT, NC_INT, NC_FLOAT, NC_DOUBLE = range(1, 7)
TYPEMAP = {
    NC_BYTE: ">i1",
    NC_SHORT: ">i2",
    NC_INT: ">i4",
    NC_FLOAT: ">f4",
    NC_DOUBLE: ">f8",
}
REVERSE = {("i", 1): NC_BYTE, ("i", 2): NC_SHORT, ("i", 4): NC_INT, ("f", 4): NC_FLOAT, ("f", 8): NC_DOUBLE}
OFFSET_LIMIT = 2**31 - 1


@dataclass
class NcVariable:
    name: str
    dimensions: Tuple[str, ...]
    data: np.ndarray
    attributes: Dict[str, Any] = field(default_factory=dict)


@dataclass
class NcDataset:
    dimensions: Dict[str, int] = field(default_factory=dict)
    variables: Dict[str, NcVariable] = field(default_factory=dict)
    attributes: Dict[str, Any] = field(default_factory=dict)

    def add_variable(self, name: str, dimensions: Tuple[str, ...], data, **attributes) -> NcVariable:
        data = np.asarray(data)
        shape = tuple(self.dimensions[d] for d in dimensions)
        if data.shape != shape:
            raise ValueError(f"variable '{name}' has shape {data.shape}, dimensions imply {shape}")
        var = NcVariable(name, tuple(dimensions), data, dict(attributes))
        self.variables[name] = var
        return var


def _nc_type(values: np.ndarray) -> int:
    key = (values.dtype.kind if values.dtype.kind != "u" else "i", values.dtype.itemsize)
    try:
        return REVERSE[key]
    except KeyError as e:
        raise TypeError(f"dtype {values.dtype} has no classic NetCDF type") from e


class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def write(self, b: bytes) -> None:
        self.parts.append(b)

    def tell(self) -> int:
        return sum(len(p) for p in self.parts)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)

    def _pack_int(self, value: int) -> None:
        self.write(struct.pack(">i", value))

    def _pack_string(self, s: str) -> None:
        raw = s.encode("utf-8")
        self._pack_int(len(raw))
        self.write(raw)
        self.write(b"\x00" * (-len(raw) % 4))

    def _write_att_values(self, value: Any) -> None:
        if isinstance(value, str):
            raw = value.encode("utf-8")
            self._pack_int(NC_CHAR)
            self._pack_int(len(raw))
            self.write(raw + b"\x00" * (-len(raw) % 4))
            return
        if isinstance(value, bool) or isinstance(value, int):
            arr = np.asarray([int(value)], dtype=">i4")
        elif isinstance(value, float):
            arr = np.asarray([value], dtype=">f8")
        else:
            arr = np.asarray(value).reshape(-1)
            if arr.dtype.kind in "iu" and arr.dtype.itemsize == 8:
                arr = arr.astype(">i4")
        nc_type = _nc_type(arr)
        arr = arr.astype(TYPEMAP[nc_type])
        self._pack_int(nc_type)
        self._pack_int(arr.size)
        raw = arr.tobytes()
        self.write(raw + b"\x00" * (-len(raw) % 4))

    def _write_att_array(self, attributes: Dict[str, Any]) -> None:
        if not attributes:
            self.write(ABSENT)
            return
        self.write(NC_ATTRIBUTE)
        self._pack_int(len(attributes))
        for name, value in attributes.items():
            self._pack_string(name)
            self._write_att_values(value)


def _header(ds: NcDataset, begins: Dict[str, int]) -> bytes:
    w = _Writer()
    w.write(MAGIC)
    w._pack_int(0)  # numrecs
    if ds.dimensions:
        w.write(NC_DIMENSION)
        w._pack_int(len(ds.dimensions))
        for name, length in ds.dimensions.items():
            w._pack_string(name)
            w._pack_int(length)
    else:
        w.write(ABSENT)
    w._write_att_array(ds.attributes)
    if ds.variables:
        dim_ids = {name: k for k, name in enumerate(ds.dimensions)}
        w.write(NC_VARIABLE)
        w._pack_int(len(ds.variables))
        for var in ds.variables.values():
            w._pack_string(var.name)
            w._pack_int(len(var.dimensions))
            for d in var.dimensions:
                w._pack_int(dim_ids[d])
            w._write_att_array(var.attributes)
            w._pack_int(_nc_type(var.data))
            w._pack_int(_vsize(var))
            w._pack_int(begins.get(var.name, 0))
    else:
        w.write(ABSENT)
    return w.getvalue()


def _vsize(var: NcVariable) -> int:
    size = var.data.size * var.data.dtype.itemsize
    return size + (-size % 4)


def encode_netcdf3(ds: NcDataset) -> bytes:
    """Serialize a dataset to CDF-1 bytes."""
    header_len = len(_header(ds, {}))
    begins: Dict[str, int] = {}
    offset = header_len
    for var in ds.variables.values():
        if _vsize(var) > OFFSET_LIMIT - 3:
            raise GridTooLarge(f"variable '{var.name}' exceeds the CDF-1 size limit")
        begins[var.name] = offset
        offset += _vsize(var)
        if offset > OFFSET_LIMIT:
            raise GridTooLarge("file exceeds the CDF-1 2 GiB offset limit")
    w = _Writer()
    w.write(_header(ds, begins))
    for var in ds.variables.values():
        raw = np.ascontiguousarray(var.data).astype(TYPEMAP[_nc_type(var.data)]).tobytes()
        w.write(raw + b"\x00" * (_vsize(var) - len(raw)))
    return w.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedPayload(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def _unpack_int(self) -> int:
        return struct.unpack(">i", self.read(4))[0]

    def _unpack_string(self) -> str:
        count = self._unpack_int()
        s = self.read(count)
        self.read(-count % 4)
        return s.decode("utf-8")

    def _read_att_values(self) -> Any:
        nc_type = self._unpack_int()
        n = self._unpack_int()
        if nc_type == NC_CHAR:
            raw = self.read(n)
            self.read(-n % 4)
            return raw.decode("utf-8")
        if nc_type not in TYPEMAP:
            raise TruncatedPayload(f"unknown attribute type {nc_type}")
        dtype = np.dtype(TYPEMAP[nc_type])
        raw = self.read(n * dtype.itemsize)
        self.read(-(n * dtype.itemsize) % 4)
        values = np.frombuffer(raw, dtype=dtype)
        if n == 1:
            return values[0].item()
        return values.astype(dtype.newbyteorder("=")).copy()

    def _read_att_array(self) -> Dict[str, Any]:
        tag = self.read(4)
        count = self._unpack_int()
        if tag == b"\x00\x00\x00\x00":
            return {}
        if tag != NC_ATTRIBUTE:
            raise TruncatedPayload("unexpected attribute tag")
        return {self._unpack_string(): self._read_att_values() for _ in range(count)}


def decode_netcdf3(data: bytes) -> NcDataset:
    """Parse CDF-1 bytes; every variable's begin/vsize is checked against the file size."""
    if data[:4] != MAGIC:
        raise BadMagic(MAGIC, bytes(data[:4]))
    r = _Reader(data)
    r.read(4)
    r._unpack_int()  # numrecs; no record variables are written

    ds = NcDataset()
    tag = r.read(4)
    count = r._unpack_int()
    if tag == NC_DIMENSION:
        for _ in range(count):
            name = r._unpack_string()
            ds.dimensions[name] = r._unpack_int()
    dim_names = list(ds.dimensions)

    ds.attributes = r._read_att_array()

    tag = r.read(4)
    count = r._unpack_int()
    if tag == NC_VARIABLE:
        for _ in range(count):
            name = r._unpack_string()
            ndims = r._unpack_int()
            dims = tuple(dim_names[r._unpack_int()] for _ in range(ndims))
            attributes = r._read_att_array()
            nc_type = r._unpack_int()
            vsize = r._unpack_int()
            begin = r._unpack_int()
            if nc_type not in TYPEMAP:
                raise TruncatedPayload(f"variable '{name}' has unsupported type {nc_type}")
            dtype = np.dtype(TYPEMAP[nc_type])
            shape = tuple(ds.dimensions[d] for d in dims)
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if begin + vsize > len(data) or nbytes > vsize:
                raise TruncatedPayload(f"variable '{name}' extends past the end of the file")
            values = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=begin)
            ds.variables[name] = NcVariable(
                name=name,
                dimensions=dims,
                data=values.reshape(shape).astype(dtype.newbyteorder("=")),
                attributes=attributes,
            )
    return ds
