"""Plate character alphabet and its mapping to the unit interval.

The 36-symbol alphabet (A..Z then 0..9, in that order) is shared by the
OCR stream and the evaluation kit. Each symbol is mapped to a unique
real number in [0, 1] by its position; string similarity is measured
per slot with a 0/1 step distance, so A-vs-B and A-vs-Z both count as
one full mismatch.
"""

import string

ALPHABET: str = string.ascii_uppercase + string.digits
ALPHABET_SIZE: int = len(ALPHABET)  # 36

_INDEX = {c: i for i, c in enumerate(ALPHABET)}

LETTERS = frozenset(string.ascii_uppercase)
DIGITS = frozenset(string.digits)


class UnknownSymbolError(ValueError):
    """Raised for characters outside the plate alphabet."""


def char_index(c: str) -> int:
    """Position of ``c`` in the alphabet (A=0 ... 9=35)."""
    try:
        return _INDEX[c]
    except KeyError:
        raise UnknownSymbolError(f"symbol {c!r} is not in the plate alphabet") from None


def map_char(c: str) -> float:
    """Map a symbol to i/(n-1), so 'A' -> 0.0 and '9' -> 1.0."""
    return char_index(c) / (ALPHABET_SIZE - 1)


def char_distance(ci: str, cj: str) -> int:
    """Step distance between two symbols: 0 iff equal, else 1."""
    return 0 if map_char(ci) == map_char(cj) else 1


def validate_plate_string(s: str) -> str:
    """Return ``s`` unchanged if every character is a plate symbol."""
    for c in s:
        if c not in _INDEX:
            raise UnknownSymbolError(f"symbol {c!r} in plate {s!r} is not in the plate alphabet")
    return s
