"""
Integer encodings for the checkpoint and index file formats.

Fixed-width fields are unsigned little-endian. Lengths, counts and array
dimensions use a prefix varint: values below 0xfd take one byte, larger
values a marker byte (0xfd, 0xfe, 0xff) followed by 2, 4 or 8 little-endian
bytes.

Float arrays are not handled here; ``src.utils.serialization`` writes them
through numpy with an explicit ``<f8`` / ``<f4`` dtype.
"""

from src.errors import FormatError

MAX_U64 = 2 ** 64 - 1

# marker byte -> payload width
_VARINT_WIDTHS = {0xfd: 2, 0xfe: 4, 0xff: 8}


def int_to_little_endian(value: int, length: int) -> bytes:
    """
    Example:
        >>> int_to_little_endian(1, 4)
        b'\\x01\\x00\\x00\\x00'

    Raises:
        FormatError: If *value* is negative or does not fit in *length* bytes.
    """
    try:
        return value.to_bytes(length, byteorder="little", signed=False)
    except OverflowError as exc:
        raise FormatError(f"{value} does not fit in {length} unsigned bytes") from exc


def little_endian_to_int(data: bytes) -> int:
    return int.from_bytes(data, byteorder="little", signed=False)


def encode_varint(value: int) -> bytes:
    """
    Example:
        >>> encode_varint(252).hex(), encode_varint(255).hex(), encode_varint(70000).hex()
        ('fc', 'fdff00', 'fe70110100')
    """
    if not 0 <= value <= MAX_U64:
        raise FormatError(f"varint out of range: {value}")
    if value < 0xfd:
        return bytes([value])
    for marker, width in _VARINT_WIDTHS.items():
        if value < 1 << (8 * width):
            return bytes([marker]) + int_to_little_endian(value, width)
    raise AssertionError("unreachable")


def decode_varint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """
    Decode the varint at *offset*; returns ``(value, bytes_consumed)``.

    Example:
        >>> decode_varint(b'\\x00\\xfd\\xff\\x00', offset=1)
        (255, 3)

    Raises:
        FormatError: If the buffer ends inside the varint.
    """
    if offset >= len(data):
        raise FormatError(f"varint expected at offset {offset}, buffer has {len(data)} bytes")
    marker = data[offset]
    width = _VARINT_WIDTHS.get(marker)
    if width is None:
        return marker, 1
    end = offset + 1 + width
    if end > len(data):
        raise FormatError(f"{width}-byte varint at offset {offset} runs past the end of the buffer")
    return little_endian_to_int(data[offset + 1:end]), 1 + width
