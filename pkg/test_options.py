"""
Tests for the packet option area codec.
"""
import pytest

from freezetfrc.errors import OptionDecodeError
from freezetfrc.models import OptionKind
from freezetfrc.utils.options import decode_options, encode_options


class TestOptionCodec:
    """Test encoding and decoding of the option area."""

    def test_empty(self):
        """Test an empty option area."""
        assert encode_options([]) == b''
        assert decode_options(b'') == []

    def test_byte_layout(self):
        """Test kind and length bytes of the freeze options."""
        assert encode_options([OptionKind.FREEZE, OptionKind.UNFROZEN]) == bytes([40, 2, 202, 2])

    def test_round_trip_keeps_order(self):
        """Test that options come back in the order written."""
        options = [OptionKind.UNFREEZE, OptionKind.RESTORING, OptionKind.FREEZE]
        assert decode_options(encode_options(options)) == options

    def test_padding_and_single_byte_kinds(self):
        """Test that kinds below 32 are skipped one byte at a time."""
        assert decode_options(bytes([0, 1, 2, 201, 2, 0])) == [OptionKind.PROBING]

    def test_unknown_kind_skipped(self):
        """Test that an unknown multi-byte option is skipped by its length."""
        data = bytes([99, 4, 0xAA, 0xBB, 41, 2])
        assert decode_options(data) == [OptionKind.UNFREEZE]

    def test_truncated_length_byte(self):
        """Test an option cut before its length."""
        with pytest.raises(OptionDecodeError) as exc:
            decode_options(bytes([40, 2, 200]))
        assert exc.value.offset == 2

    def test_length_past_end(self):
        """Test an option whose length runs past the area."""
        with pytest.raises(OptionDecodeError) as exc:
            decode_options(bytes([0, 99, 6, 1, 2]))
        assert exc.value.offset == 1

    def test_length_shorter_than_header(self):
        """Test a declared length below two."""
        with pytest.raises(OptionDecodeError) as exc:
            decode_options(bytes([202, 1]))
        assert exc.value.offset == 0
