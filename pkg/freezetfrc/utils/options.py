"""
Option area codec for the simulator's packet header.

Kinds below 32 are single bytes (0 is padding) and carry no meaning here.
Kinds from 32 up are two bytes, ``kind`` then ``length`` (always 2 for the
freeze options). Unknown kinds are skipped using their length byte.
"""
import logging
import struct
from typing import Iterable, List

from freezetfrc.errors import OptionDecodeError
from freezetfrc.models import OptionKind

logger = logging.getLogger(__name__)

SINGLE_BYTE_LIMIT = 32
OPTION_LENGTH = 2
_KNOWN = {kind.value: kind for kind in OptionKind}
_HEADER = struct.Struct('!BB')


def encode_options(options: Iterable[OptionKind]) -> bytes:
    """Serialize options in the order given."""
    return b''.join(_HEADER.pack(int(kind), OPTION_LENGTH) for kind in options)


def decode_options(data: bytes) -> List[OptionKind]:
    """
    Parse an option area.

    Raises:
        OptionDecodeError: If an option is truncated or declares a length
            shorter than its own header
    """
    options: List[OptionKind] = []
    offset = 0
    size = len(data)
    while offset < size:
        kind = data[offset]
        if kind < SINGLE_BYTE_LIMIT:
            offset += 1
            continue
        if offset + 1 >= size:
            raise OptionDecodeError(offset, f"option {kind} truncated before its length byte")
        length = data[offset + 1]
        if length < OPTION_LENGTH:
            raise OptionDecodeError(offset, f"option {kind} declares length {length}")
        if offset + length > size:
            raise OptionDecodeError(offset, f"option {kind} of length {length} runs past the end ({size} bytes)")
        if kind in _KNOWN:
            options.append(_KNOWN[kind])
        else:
            logger.debug(f"Skipping unknown option {kind} at offset {offset}")
        offset += length
    return options
