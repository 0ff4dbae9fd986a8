import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from apps.blocks.blockCodec import (
    HEADER_SIZE,
    decode_header,
    decode_with_sections,
    header_hash,
)
from apps.crypto.cryptoService import TrustStore, verify
from apps.ledger.ledgerRepository import LedgerStore
from apps.validator.checkpointRepository import CheckpointRepository
from models.models import (
    ZERO_HASH,
    BlockHeader,
    BlockVerdict,
    CheckpointEntry,
    CheckpointSet,
    CorruptionFinding,
    CorruptionReport,
    FileLayout,
    FindingKind,
    ScanStats,
)
from utils.errors import (
    ConfigError,
    MalformedBlock,
    MissingCheckpointEntry,
    NumberGap,
    UnknownOrdererError,
)

logger = logging.getLogger(__name__)

DIGEST_CHUNK = 1024 * 1024


def _inspect(
    raw: bytes, trust: TrustStore, stats: Optional[ScanStats]
) -> Tuple[BlockVerdict, Optional[BlockHeader]]:
    try:
        block, sections = decode_with_sections(raw)
    except MalformedBlock:
        try:
            return BlockVerdict.MALFORMED, decode_header(raw)
        except MalformedBlock:
            return BlockVerdict.MALFORMED, None
    header = block.header

    start, end = sections.data
    if stats is not None:
        stats.data_hashes += 1
    if hashlib.sha256(raw[start:end]).digest() != header.data_hash:
        return BlockVerdict.DATA_HASH_MISMATCH, header

    try:
        public_key = trust.lookup(block.metadata.orderer_id)
    except UnknownOrdererError:
        return BlockVerdict.UNKNOWN_ORDERER, header

    if stats is not None:
        stats.signatures_verified += 1
    if not verify(public_key, raw[4 : 4 + HEADER_SIZE], block.metadata.signature):
        return BlockVerdict.BAD_ORDERER_SIGNATURE, header
    return BlockVerdict.VALID, header


def validate_block(
    raw: bytes, trust: TrustStore, stats: Optional[ScanStats] = None
) -> BlockVerdict:
    """Structure, then data hash, then orderer lookup, then signature."""
    return _inspect(raw, trust, stats)[0]


def check_link(prev_header: BlockHeader, cur_header: BlockHeader) -> bool:
    if cur_header.number != prev_header.number + 1:
        raise NumberGap(
            f"block {cur_header.number} does not follow block {prev_header.number}"
        )
    return cur_header.previous_hash == header_hash(prev_header)


def _linked(prev: Optional[BlockHeader], cur: Optional[BlockHeader]) -> bool:
    # Positions are already consecutive; a wrong number field is reported
    # as Malformed on its own.
    if prev is None or cur is None:
        return True
    return cur.previous_hash == header_hash(prev)


def file_digest(path: Path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(DIGEST_CHUNK):
            sha.update(chunk)
    return sha.hexdigest()


def verify_file_checkpoint(
    file_id: int, store: LedgerStore, checkpoints: CheckpointSet
) -> bool:
    entry = checkpoints.entry_for(file_id)
    if entry is None:
        raise MissingCheckpointEntry(f"no checkpoint entry for file {file_id}")
    path = store.file_path(file_id)
    if not path.exists() or path.stat().st_size != entry.length:
        return False
    return file_digest(path) == entry.sha256_hex


def _skippable(
    layout: FileLayout, store: LedgerStore, checkpoints: Optional[CheckpointSet]
) -> bool:
    if checkpoints is None or layout.gap is not None:
        return False
    entry = checkpoints.entry_for(layout.file_id)
    if entry is None or entry.last_block != layout.last_block:
        return False
    return verify_file_checkpoint(layout.file_id, store, checkpoints)


class _Scan:
    """Accumulates verdicts and findings over one pass."""

    def __init__(self, height: int):
        self.height = height
        self.findings: List[CorruptionFinding] = []
        self.verdicts: Dict[str, int] = {v.value: 0 for v in BlockVerdict}
        self.stats = ScanStats()

    def verdict(self, n: int, verdict: BlockVerdict) -> None:
        self.verdicts[verdict.value] += 1
        if verdict != BlockVerdict.VALID:
            self.findings.append(
                CorruptionFinding(kind=FindingKind(verdict.value), blocks=[n])
            )

    def link(self, n: int, prev: Optional[BlockHeader], cur: Optional[BlockHeader]):
        if not _linked(prev, cur):
            self.findings.append(
                CorruptionFinding(kind=FindingKind.LINK_MISMATCH, blocks=[n - 1, n])
            )

    def report(self) -> CorruptionReport:
        return CorruptionReport(
            height=self.height,
            findings=sorted(self.findings, key=CorruptionFinding.sort_key),
            verdicts=self.verdicts,
            stats=self.stats,
        )


def scan_range(
    store: LedgerStore,
    trust: TrustStore,
    first: int,
    last: int,
    checkpoints: Optional[CheckpointSet] = None,
) -> CorruptionReport:
    """Validate blocks first..last, the links among them and into last+1."""
    height = store.height
    state = _Scan(height)
    last = min(last, height - 1)
    if first > last:
        return state.report()

    prev = store.read_header(first - 1) if first > 0 else None
    for layout in store.files():
        if layout.last_block < first or layout.first_block > last:
            continue

        whole = first <= layout.first_block and layout.last_block <= last
        if whole and _skippable(layout, store, checkpoints):
            head = store.read_header(layout.first_block)
            if layout.first_block > 0:
                state.link(layout.first_block, prev, head)
            for n in range(layout.first_block, layout.last_block + 1):
                state.verdict(n, BlockVerdict.VALID)
            state.stats.files_skipped += 1
            prev = store.read_header(layout.last_block)
            continue

        span = range(max(first, layout.first_block), min(last, layout.last_block) + 1)
        for n in span:
            if layout.gap is not None and n >= layout.gap.first_block:
                state.verdict(n, BlockVerdict.MALFORMED)
                prev = None
                continue
            raw = store.read_block_bytes(n)
            state.stats.blocks_read += 1
            verdict, header = _inspect(raw, trust, state.stats)
            if header is not None:
                genesis_bad = n == 0 and header.previous_hash != ZERO_HASH
                if header.number != n or genesis_bad:
                    verdict = BlockVerdict.MALFORMED
            if not store.frame_intact(n):
                verdict = BlockVerdict.MALFORMED
            state.verdict(n, verdict)
            if n > 0:
                state.link(n, prev, header)
            prev = header

    if last + 1 < height:
        state.link(last + 1, prev, store.read_header(last + 1))

    report = state.report()
    logger.info(
        "scanned blocks %d..%d of %s: %d finding(s), %d file(s) skipped",
        first,
        last,
        store.directory,
        len(report.findings),
        report.stats.files_skipped,
    )
    return report


def scan(
    store: LedgerStore,
    trust: TrustStore,
    checkpoints: Optional[CheckpointSet] = None,
) -> CorruptionReport:
    return scan_range(store, trust, 0, store.height - 1, checkpoints)


def checkpoints_from_report(
    store: LedgerStore, report: CorruptionReport
) -> CheckpointSet:
    """Digest the clean prefix of files; the last (growing) file never counts."""
    implicated = set(report.implicated())
    entries = []
    for layout in store.files()[:-1]:
        blocks = range(layout.first_block, layout.last_block + 1)
        if layout.gap is not None or any(n in implicated for n in blocks):
            break
        entries.append(
            CheckpointEntry(
                file_id=layout.file_id,
                length=layout.length,
                sha256_hex=file_digest(store.file_path(layout.file_id)),
                last_block=layout.last_block,
            )
        )
    return CheckpointSet(height=report.height, entries=entries)


def make_checkpoints(store: LedgerStore, trust: TrustStore) -> CheckpointSet:
    return checkpoints_from_report(store, scan(store, trust))


class ValidatorService:
    """Scans of one store, optionally through a checkpoint repository."""

    def __init__(
        self,
        store: LedgerStore,
        trust: TrustStore,
        checkpoints: Optional[CheckpointRepository] = None,
    ):
        self.store = store
        self.trust = trust
        self.repo = checkpoints

    def load_checkpoints(self) -> Optional[CheckpointSet]:
        return self.repo.load() if self.repo is not None else None

    def scan(self, use_checkpoints: bool = True) -> CorruptionReport:
        checkpoints = self.load_checkpoints() if use_checkpoints else None
        return scan(self.store, self.trust, checkpoints)

    def refresh_checkpoints(self, report: CorruptionReport) -> CheckpointSet:
        """Digest and save the clean prefix of files the report vouches for."""
        if self.repo is None:
            raise ConfigError("no checkpoint directory configured")
        checkpoints = checkpoints_from_report(self.store, report)
        self.repo.save(checkpoints)
        return checkpoints

    def checkpoint(self) -> CheckpointSet:
        return self.refresh_checkpoints(scan(self.store, self.trust))
