"""Pure-Python kernels, used when the compiled extension is unavailable."""

_POLY = 0xC96C5795D7870F42
_MASK = 0xFFFFFFFFFFFFFFFF


def _make_table():
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


_TABLE = _make_table()


def crc64(data, crc=0):
    """CRC-64/XZ of ``data``; pass a previous result as ``crc`` to continue it."""
    table = _TABLE
    c = ~crc & _MASK
    for b in memoryview(data).cast("B"):
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return ~c & _MASK
