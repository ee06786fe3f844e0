"""Heuristic recovery of message text from ``attributedBody`` blobs.

Messages stores written by recent macOS versions often leave ``message.text``
empty and keep the body only inside an NSAttributedString archived in Apple's
legacy ``typedstream`` format. A full typedstream parser is not needed to get
the plain text back: the string payload follows the ``NSString`` class marker
as a ``+`` (C string) field with a variable-width length prefix::

    ... NSString \\x01 \\x94 \\x84 \\x01 + <len> <utf-8 bytes> \\x86 ...

``<len>`` is a single byte below 0x80, or 0x81 followed by a little-endian
uint16, or 0x82 followed by a little-endian uint32.
"""

from __future__ import annotations

import struct
from typing import Optional

STRING_CLASS_MARKERS = (b"NSMutableString", b"NSString")
_FIELD_MARKER = b"\x84\x01+"

# Fixed framing around the string payload; used by encode_attributed_body to
# build fixtures in the same layout real stores use.
_PREAMBLE = (
    b"\x04\x0bstreamtyped\x81\xe8\x03\x84\x01@\x84\x84\x84"
    b"\x12NSAttributedString\x00\x84\x84\x08NSObject\x00\x85\x92"
    b"\x84\x84\x84\x08NSString\x01\x94\x84\x01+"
)
_TRAILER = (
    b"\x86\x84\x02iI\x01\x05\x92\x84\x84\x84\x0cNSDictionary\x00\x94\x84\x01i"
    b"\x01\x92\x84\x96\x96\x1d__kIMMessagePartAttributeName\x86\x92\x84\x84\x84"
    b"\x08NSNumber\x00\x84\x84\x07NSValue\x00\x94\x84\x01*\x84\x99\x99\x00\x86\x86\x86"
)


def _read_length(blob: bytes, pos: int) -> Optional[tuple[int, int]]:
    """Return ``(length, payload_start)`` for the length prefix at ``pos``."""
    if pos >= len(blob):
        return None
    head = blob[pos]
    if head < 0x80:
        return head, pos + 1
    if head == 0x81 and pos + 3 <= len(blob):
        return struct.unpack_from("<H", blob, pos + 1)[0], pos + 3
    if head == 0x82 and pos + 5 <= len(blob):
        return struct.unpack_from("<I", blob, pos + 1)[0], pos + 5
    return None


def _payload_after(blob: bytes, start: int) -> Optional[str]:
    field = blob.find(_FIELD_MARKER, start)
    if field < 0:
        # some writers omit the \x84\x01 type tag; fall back to the bare '+'
        field = blob.find(b"+", start)
        if field < 0:
            return None
        pos = field + 1
    else:
        pos = field + len(_FIELD_MARKER)
    parsed = _read_length(blob, pos)
    if parsed is None:
        return None
    length, begin = parsed
    end = begin + length
    if length == 0 or end > len(blob):
        return None
    try:
        return blob[begin:end].decode("utf-8")
    except UnicodeDecodeError:
        return None


def decode_attributed_body(blob: Optional[bytes]) -> Optional[str]:
    """Extract the human-readable string from an attributedBody blob.

    Returns None for empty, truncated or otherwise undecodable blobs; never
    raises.
    """
    if not blob:
        return None
    blob = bytes(blob)
    for marker in STRING_CLASS_MARKERS:
        idx = blob.find(marker)
        if idx >= 0:
            text = _payload_after(blob, idx + len(marker))
            if text is not None:
                return text
    return None


def encode_attributed_body(text: str) -> bytes:
    """Build a minimal typedstream attributedBody blob carrying ``text``."""
    payload = text.encode("utf-8")
    n = len(payload)
    if n < 0x80:
        prefix = bytes([n])
    elif n <= 0xFFFF:
        prefix = b"\x81" + struct.pack("<H", n)
    else:
        prefix = b"\x82" + struct.pack("<I", n)
    return _PREAMBLE + prefix + payload + _TRAILER
