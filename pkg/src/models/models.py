from datetime import datetime
from enum import Enum
from typing import Callable, Dict, List, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

DIGEST_SIZE = 32
ZERO_HASH = bytes(DIGEST_SIZE)


# --- block-model -------------------------------------------------------------


class Endorsement(BaseModel):
    model_config = ConfigDict(frozen=True)

    endorser_id: bytes
    signature: bytes


class Transaction(BaseModel):
    model_config = ConfigDict(frozen=True)

    payload: bytes = Field(min_length=1)
    endorsements: List[Endorsement] = []


class BlockHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    number: int = Field(ge=0, lt=2**64)
    previous_hash: bytes = Field(min_length=DIGEST_SIZE, max_length=DIGEST_SIZE)
    data_hash: bytes = Field(min_length=DIGEST_SIZE, max_length=DIGEST_SIZE)


class BlockMetadata(BaseModel):
    model_config = ConfigDict(frozen=True)

    orderer_id: bytes
    signature: bytes
    validity_flags: bytes = b""


class Block(BaseModel):
    model_config = ConfigDict(frozen=True)

    header: BlockHeader
    data: List[Transaction]
    metadata: BlockMetadata

    @model_validator(mode="after")
    def _flags_match_transactions(self):
        if len(self.metadata.validity_flags) != len(self.data):
            raise ValueError("one validity flag per transaction is required")
        if self.metadata.validity_flags.strip(b"\x00\x01"):
            raise ValueError("validity flags must be 0 or 1")
        return self


# --- crypto-identity ---------------------------------------------------------


class KeyPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    public_key: bytes = Field(min_length=32, max_length=32)
    private_key: bytes = Field(min_length=32, max_length=32)


# --- ledger-store ------------------------------------------------------------


class BlockLocation(BaseModel):
    model_config = ConfigDict(frozen=True)

    file_id: int = Field(ge=0, lt=2**32)
    offset: int = Field(ge=0, lt=2**64)
    length: int = Field(ge=0, lt=2**32)


class UnindexedRegion(BaseModel):
    """Tail of a block file that structural scanning could not frame."""

    file_id: int
    offset: int
    first_block: int
    last_block: int
    # False when nothing on disk confirms where the region ends
    bounded: bool = True


class FileLayout(BaseModel):
    file_id: int
    length: int
    first_block: int
    last_block: int
    gap: Optional[UnindexedRegion] = None


class ReplaceKind(str, Enum):
    IN_PLACE = "InPlace"
    TAIL_REWRITTEN = "TailRewritten"


class ReplaceOutcome(BaseModel):
    kind: ReplaceKind
    rewritten: int = 0


# --- validator ---------------------------------------------------------------


class BlockVerdict(str, Enum):
    VALID = "Valid"
    MALFORMED = "Malformed"
    DATA_HASH_MISMATCH = "DataHashMismatch"
    BAD_ORDERER_SIGNATURE = "BadOrdererSignature"
    UNKNOWN_ORDERER = "UnknownOrderer"


class FindingKind(str, Enum):
    MALFORMED = "Malformed"
    DATA_HASH_MISMATCH = "DataHashMismatch"
    BAD_ORDERER_SIGNATURE = "BadOrdererSignature"
    UNKNOWN_ORDERER = "UnknownOrderer"
    LINK_MISMATCH = "LinkMismatch"


FINDING_ORDER = {kind: position for position, kind in enumerate(FindingKind)}


class CorruptionFinding(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FindingKind
    blocks: List[int]

    @model_validator(mode="after")
    def _check_implicated(self):
        if self.kind == FindingKind.LINK_MISMATCH:
            if len(self.blocks) != 2 or self.blocks[1] != self.blocks[0] + 1:
                raise ValueError("a link mismatch implicates two adjacent blocks")
        elif len(self.blocks) != 1:
            raise ValueError("a block finding implicates exactly one block")
        return self

    def sort_key(self):
        return (self.blocks[0], self.blocks[-1], FINDING_ORDER[self.kind])


class ScanStats(BaseModel):
    blocks_read: int = 0
    data_hashes: int = 0
    signatures_verified: int = 0
    files_skipped: int = 0


class CorruptionReport(BaseModel):
    height: int
    findings: List[CorruptionFinding] = []
    verdicts: Dict[str, int] = {}
    stats: ScanStats = Field(default_factory=ScanStats)

    @property
    def clean(self) -> bool:
        return not self.findings

    def implicated(self) -> List[int]:
        return sorted({n for finding in self.findings for n in finding.blocks})


class CheckpointEntry(BaseModel):
    file_id: int
    length: int
    sha256_hex: str = Field(pattern=r"^[0-9a-f]{64}$")
    last_block: int


class CheckpointSet(BaseModel):
    height: int
    entries: List[CheckpointEntry] = []

    def entry_for(self, file_id: int) -> Optional[CheckpointEntry]:
        for entry in self.entries:
            if entry.file_id == file_id:
                return entry
        return None


# --- peer-sync ---------------------------------------------------------------


class PeerEndpoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    address: str
    ledger_id: bytes

    @field_validator("address")
    def _non_empty(cls, v):
        if not v:
            raise ValueError("peer address must not be empty")
        return v


class MessageType(int, Enum):
    REQ_BLOCK = 0x01
    RESP_BLOCK = 0x02


class ReplyStatus(int, Enum):
    OK = 0
    NOT_FOUND = 1
    ERROR = 2


class WireMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    msg_type: int = Field(ge=0, le=255)
    payload: bytes = b""


class BlockReply(BaseModel):
    status: ReplyStatus
    block: Optional[bytes] = None


# --- recovery ----------------------------------------------------------------


class ChainContext(BaseModel):
    predecessor: Optional[BlockHeader] = None
    successor: Optional[BlockHeader] = None


class PeerStats(BaseModel):
    served: int = 0
    invalid: int = 0
    not_found: int = 0
    unreachable: int = 0


class FailedBlock(BaseModel):
    block: int
    reason: str


class RecoveryOutcome(BaseModel):
    recovered: List[int] = []
    failed: List[FailedBlock] = []
    peer_stats: Dict[str, PeerStats] = {}
    blocks_per_second: float = 0.0
    elapsed_seconds: float = 0.0


# --- guard-service -----------------------------------------------------------


class GuardMode(str, Enum):
    PERIODIC = "periodic"
    CPU_TRIGGERED = "cpu_triggered"
    MANUAL = "manual"


class GuardConfig(BaseModel):
    mode: GuardMode = GuardMode.MANUAL
    interval_seconds: float = Field(default=3600.0, gt=0)
    cpu_threshold_percent: Optional[float] = Field(default=None, ge=0, le=100)
    consecutive_idle_samples: Optional[int] = Field(default=None, gt=0)
    use_checkpoints: bool = False
    checkpoint_dir: Optional[str] = None
    peers: List[str] = []
    auto_recover: bool = True
    ledger_dir: Optional[str] = None
    trust_file: Optional[str] = None
    ledger_id: str = "ledgerguard"
    fetch_timeout_seconds: float = Field(default=5.0, gt=0)
    control_listen: Optional[str] = None

    @field_validator("peers", mode="before")
    def _split_peers(cls, v):
        if isinstance(v, str):
            return [p.strip() for p in v.split(",") if p.strip()]
        return v

    @model_validator(mode="after")
    def _cpu_fields(self):
        cpu_set = (
            self.cpu_threshold_percent is not None
            or self.consecutive_idle_samples is not None
        )
        if self.mode == GuardMode.CPU_TRIGGERED:
            if (
                self.cpu_threshold_percent is None
                or self.consecutive_idle_samples is None
            ):
                raise ValueError(
                    "cpu_triggered mode needs cpu_threshold_percent and "
                    "consecutive_idle_samples"
                )
        elif cpu_set:
            raise ValueError("cpu fields are only valid in cpu_triggered mode")
        if self.use_checkpoints and not self.checkpoint_dir:
            raise ValueError("use_checkpoints requires checkpoint_dir")
        return self

    def endpoints(self) -> List[PeerEndpoint]:
        lid = self.ledger_id.encode()
        return [PeerEndpoint(address=p, ledger_id=lid) for p in self.peers]


class CycleResult(BaseModel):
    started_at: datetime
    finished_at: datetime
    report: CorruptionReport
    outcome: Optional[RecoveryOutcome] = None
    confirmation: Optional[CorruptionReport] = None

    @property
    def final_report(self) -> CorruptionReport:
        return self.confirmation or self.report


# --- testkit -----------------------------------------------------------------


class GenParams(BaseModel):
    num_blocks: int = Field(ge=1)
    txs_per_block: int = Field(default=50, ge=0)
    tx_size_bytes: int = Field(default=3072, ge=1)
    num_endorsers: int = Field(default=2, ge=0)
    rng_seed: int = 0
    orderer_id: str = "orderer0"
    ledger_id: str = "ledgerguard"
    max_file_size: int = Field(default=64 * 1024 * 1024, gt=0)
    blocks_per_file: Optional[int] = Field(default=None, gt=0)


class Region(str, Enum):
    HEADER = "header"
    DATA = "data"
    METADATA = "metadata"
    LENGTH_PREFIX = "length_prefix"


class InjectionMode(str, Enum):
    BITFLIP = "bitflip"
    TRUNCATE = "truncate"
    GROW = "grow"
    ZERO = "zero"


class Distribution(str, Enum):
    UNIFORM = "uniform"
    CLUSTERED = "clustered"


class ByteEdit(BaseModel):
    file_id: int
    offset: int
    before_hex: str
    after_hex: str


class InjectionRecord(BaseModel):
    block: int = Field(ge=0)
    region: Region
    mode: InjectionMode
    rng_seed: int = 0
    edits: List[ByteEdit] = []


# --- simulated network -------------------------------------------------------


class FaultKind(str, Enum):
    DROP = "drop"
    DELAY = "delay"
    TRUNCATE = "truncate"
    SUBSTITUTE = "substitute"
    UNREACHABLE = "unreachable"


class Fault(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: FaultKind
    seconds: float = 0.0
    keep_bytes: int = 0
    substitute: Optional[Callable[[int], WireMessage]] = None
