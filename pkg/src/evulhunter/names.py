"""EOSIO account/action name codec.

Account and action names on EOSIO are 64-bit integers packing up to 12
characters at 5 bits each, big-endian, over the alphabet
".12345abcdefghijklmnopqrstuvwxyz".  Matching constants such as
"eosio.token" inside bytecode requires the exact on-chain packing.
"""

from .errors import InvalidNameChar, NameTooLong

ALPHABET = ".12345abcdefghijklmnopqrstuvwxyz"
_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}

MAX_NAME_LEN = 12


def encode_name(name: str) -> int:
    """Pack a name string into its 64-bit integer form.

    Character i contributes its 5-bit alphabet index at bit position
    64 - 5*(i+1); unused trailing positions are zero.  13-character
    names (which would use a 4-bit tail) are rejected.
    """
    if len(name) > MAX_NAME_LEN:
        raise NameTooLong(f"name {name!r} is longer than {MAX_NAME_LEN} characters")
    value = 0
    for i, ch in enumerate(name):
        idx = _CHAR_INDEX.get(ch)
        if idx is None:
            raise InvalidNameChar(f"character {ch!r} at position {i} is not in {ALPHABET!r}")
        value |= idx << (64 - 5 * (i + 1))
    return value


def decode_name(value: int) -> str:
    """Unpack a 64-bit name to text, stripping trailing dots.

    Total function: any 64-bit value decodes (the low 4 bits, which
    would belong to a 13th character, are ignored).
    """
    chars = []
    for i in range(MAX_NAME_LEN):
        idx = (value >> (64 - 5 * (i + 1))) & 0x1F
        chars.append(ALPHABET[idx])
    return "".join(chars).rstrip(".")


def is_valid_name(name: str) -> bool:
    """True iff encode_name(name) would succeed."""
    return len(name) <= MAX_NAME_LEN and all(c in _CHAR_INDEX for c in name)


# Constants the detectors match against.
EOSIO_TOKEN = encode_name("eosio.token")
TRANSFER = encode_name("transfer")
