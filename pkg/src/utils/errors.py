from typing import Iterable, List, Tuple


class LedgerGuardError(Exception):
    """Base class for every error raised by the guard."""


class EncodingOverflow(LedgerGuardError):
    pass


class MalformedBlock(LedgerGuardError):
    pass


class UnknownOrdererError(LedgerGuardError):
    def __init__(self, orderer_id: bytes):
        super().__init__(f"orderer {orderer_id!r} is not in the trust store")
        self.orderer_id = orderer_id


class KeyFileError(LedgerGuardError):
    pass


class LedgerIOError(LedgerGuardError):
    pass


class UnreadableLayout(LedgerGuardError):
    pass


class ChainMismatch(LedgerGuardError):
    pass


class BadSignature(LedgerGuardError):
    pass


class BlockOutOfRange(LedgerGuardError):
    def __init__(self, number: int, height: int):
        super().__init__(f"block {number} is out of range (height {height})")
        self.number = number
        self.height = height


class NumberMismatch(LedgerGuardError):
    pass


class UnreadableTail(LedgerGuardError):
    def __init__(self, missing: Iterable[int]):
        self.missing: List[int] = sorted(missing)
        super().__init__(f"no readable copy for tail blocks {self.missing}")


class NumberGap(LedgerGuardError):
    pass


class MissingCheckpointEntry(LedgerGuardError):
    pass


class NoValidSource(LedgerGuardError):
    def __init__(self, number: int, reasons: List[Tuple[str, str]]):
        self.number = number
        self.reasons = reasons
        detail = "; ".join(f"{peer}: {why}" for peer, why in reasons) or "no peers"
        super().__init__(f"no valid copy of block {number} ({detail})")


class PeerTransportError(LedgerGuardError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class BindFailure(LedgerGuardError):
    pass


class CycleInProgress(LedgerGuardError):
    pass


class NonEmptyOutput(LedgerGuardError):
    pass


class InjectionError(LedgerGuardError):
    pass


class ConfigError(LedgerGuardError):
    pass
