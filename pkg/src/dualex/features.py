"""Fixed-width 438-bit instruction encoding.

Field layout, most significant field first::

    option(5) | prefix(9) | opcode(256, one-hot) | modrm(20) | sib(20) | disp(64) | imm(64)

Every field except ``opcode`` is written as an unsigned big-endian bit
string of its declared width.  ``opcode`` is the primary opcode byte and sets
exactly one of 256 bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import FEATURE_BITS

FIELD_WIDTHS: dict[str, int] = {
    "option": 5,
    "prefix": 9,
    "opcode": 256,
    "modrm": 20,
    "sib": 20,
    "displacement": 64,
    "immediate": 64,
}
assert sum(FIELD_WIDTHS.values()) == FEATURE_BITS

FIELD_OFFSETS: dict[str, int] = {}
_off = 0
for _name, _w in FIELD_WIDTHS.items():
    FIELD_OFFSETS[_name] = _off
    _off += _w
del _off, _name, _w


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class InstructionFields:
    option: int = 0
    prefix: int = 0
    opcode: int | None = None
    modrm: int = 0
    sib: int = 0
    displacement: int = 0
    immediate: int = 0


def _int_bits(value: int, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.uint8)
    for i in range(width):
        out[width - 1 - i] = (value >> i) & 1
    return out


def encode_instruction(f: InstructionFields) -> np.ndarray:
    """Encode one instruction as a 438-element 0/1 ``uint8`` vector.

    ``opcode=None`` leaves the opcode one-hot block empty (the all-zero case).
    Raises :class:`EncodingError` naming the first field that does not fit.
    """
    vec = np.zeros(FEATURE_BITS, dtype=np.uint8)
    for name, width in FIELD_WIDTHS.items():
        value = getattr(f, name)
        off = FIELD_OFFSETS[name]
        if name == "opcode":
            if value is None:
                continue
            if not 0 <= value < width:
                raise EncodingError(f"field 'opcode' value {value} is not a byte")
            vec[off + value] = 1
            continue
        if value < 0 or value >> width:
            raise EncodingError(f"field {name!r} value {value} overflows {width} bits")
        vec[off:off + width] = _int_bits(value, width)
    return vec


def node_feature(instrs: Sequence[InstructionFields]) -> np.ndarray:
    """Bitwise OR of the block's instruction encodings."""
    if not instrs:
        raise EncodingError("a basic block needs at least one instruction")
    out = np.zeros(FEATURE_BITS, dtype=np.uint8)
    for f in instrs:
        out |= encode_instruction(f)
    return out


def random_instruction(rng: np.random.Generator, opcodes: Sequence[int] | None = None) -> InstructionFields:
    """Draw an in-range instruction; sparse operand fields like real x86 code."""
    op = int(rng.choice(opcodes)) if opcodes is not None else int(rng.integers(0, 256))

    def maybe(width: int, p: float) -> int:
        if rng.random() >= p:
            return 0
        return int(rng.integers(0, 1 << min(width, 16)))

    return InstructionFields(
        option=int(rng.integers(0, 1 << 5)),
        prefix=maybe(9, 0.3),
        opcode=op,
        modrm=maybe(20, 0.6),
        sib=maybe(20, 0.2),
        displacement=maybe(64, 0.3),
        immediate=maybe(64, 0.4),
    )


def to_hex(bits: np.ndarray) -> str:
    """Pack a 438-bit vector MSB-first into 110 hex digits (2 zero pad bits)."""
    padded = np.zeros(FEATURE_BITS + 2, dtype=np.uint8)
    padded[:FEATURE_BITS] = bits
    return np.packbits(padded).tobytes().hex()


def from_hex(text: str) -> np.ndarray:
    if len(text) != (FEATURE_BITS + 2) // 4:
        raise EncodingError(
            f"feature hex has {len(text)} digits, expected {(FEATURE_BITS + 2) // 4} "
            f"for {FEATURE_BITS} bits")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise EncodingError(f"feature is not valid hex: {exc}") from None
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    if bits[FEATURE_BITS:].any():
        raise EncodingError("feature padding bits must be zero")
    return bits[:FEATURE_BITS].copy()
