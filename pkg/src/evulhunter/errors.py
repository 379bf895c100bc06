"""Exception hierarchy shared across the analyzer."""


class EvulHunterError(Exception):
    """Base class for all analyzer errors."""


# --- name codec ---

class NameCodecError(EvulHunterError):
    pass


class InvalidNameChar(NameCodecError):
    pass


class NameTooLong(NameCodecError):
    pass


# --- binary parsing ---

class ParseError(EvulHunterError):
    pass


class BadMagic(ParseError):
    pass


class TruncatedSection(ParseError):
    pass


class MalformedLeb128(ParseError):
    pass


class UnknownOpcode(ParseError):
    pass


class IndexOutOfRange(ParseError):
    pass


# --- control flow / simulation ---

class UnbalancedControl(EvulHunterError):
    pass


class StackUnderflow(EvulHunterError):
    pass


class BadApplySignature(EvulHunterError):
    pass


# --- fixture generation ---

class NoGuardMarker(EvulHunterError):
    pass
