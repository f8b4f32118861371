"""Bit/byte conversions. All serialization is LSB-first within octets."""

import numpy as np


def bytes_to_bits(data: bytes) -> np.ndarray:
    """Unpack bytes into a uint8 0/1 array, LSB of each octet first."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    return np.unpackbits(arr, bitorder="little")


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """Pack a 0/1 array (length multiple of 8) into bytes, LSB-first."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise ValueError(f"bit count {bits.size} not a multiple of 8")
    return np.packbits(bits, bitorder="little").tobytes()


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Little-endian bit expansion of an unsigned integer."""
    if value < 0 or value >= (1 << width):
        raise ValueError(f"value {value} does not fit in {width} bits")
    return np.array([(value >> i) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits: np.ndarray) -> int:
    """Inverse of int_to_bits."""
    out = 0
    for i, b in enumerate(np.asarray(bits, dtype=np.uint8)):
        out |= int(b) << i
    return out
