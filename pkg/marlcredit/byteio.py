"""Little-endian primitives for the policy checkpoint format."""

import struct

import numpy as np

from .exceptions import BufferExhaustedError


class ByteReader():
    def __init__(self, stream, endian="<"):
        self.stream = stream
        self.endian = endian

    def read(self, size=-1):
        data = self.stream.read(size)
        if size > -1 and len(data) != size:
            raise BufferExhaustedError(
                "Wanted {} bytes, only {} left".format(size, len(data)))

        return data

    def unpack(self, fmt):
        fmt = self.endian + fmt
        fmt_size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.read(fmt_size))

    def unpack_one(self, fmt):
        values = self.unpack(fmt)
        assert len(values) == 1
        return values[0]

    def read_uint16(self):
        return self.unpack_one("H")

    def read_uint32(self):
        return self.unpack_one("I")

    def read_uint64(self):
        return self.unpack_one("Q")

    def read_magic(self, size=4):
        return self.read(size)

    def read_doubles(self, count):
        """``count`` float64 values as a fresh numpy array."""
        data = self.read(8 * count)
        return np.frombuffer(data, dtype=self.endian + "f8").astype(
            np.float64)


class ByteWriter():
    def __init__(self, stream, endian="<"):
        self.stream = stream
        self.endian = endian

    def write(self, *args):
        return self.stream.write(*args)

    def pack(self, fmt, *values):
        fmt = self.endian + fmt
        return self.stream.write(struct.pack(fmt, *values))

    def write_uint16(self, val):
        return self.pack("H", val)

    def write_uint32(self, val):
        return self.pack("I", val)

    def write_uint64(self, val):
        return self.pack("Q", val)

    def write_doubles(self, values):
        array = np.ascontiguousarray(values, dtype=self.endian + "f8")
        return self.write(array.tobytes())
