import logging
import time
from collections import defaultdict
from typing import Dict, List, Optional, Set

import anyio

from apps.blocks.blockCodec import decode_header, header_hash
from apps.crypto.cryptoService import TrustStore
from apps.ledger.ledgerRepository import LedgerStore
from apps.peers.peerClient import PeerClient
from apps.validator.validatorService import scan_range, validate_block
from models.models import (
    ZERO_HASH,
    BlockHeader,
    BlockVerdict,
    ChainContext,
    CorruptionReport,
    FailedBlock,
    FindingKind,
    PeerEndpoint,
    PeerStats,
    RecoveryOutcome,
    ReplaceKind,
    ReplyStatus,
)
from utils.errors import (
    LedgerGuardError,
    NoValidSource,
    PeerTransportError,
    UnreadableTail,
)

logger = logging.getLogger(__name__)


def candidate_problem(
    raw: bytes, n: int, trust: TrustStore, ctx: ChainContext
) -> Optional[str]:
    """Why a fetched copy of block n cannot be committed, None if it can."""
    verdict = validate_block(raw, trust)
    if verdict != BlockVerdict.VALID:
        return verdict.value
    header = decode_header(raw)
    if header.number != n:
        return f"carries block number {header.number}"
    if n == 0 and header.previous_hash != ZERO_HASH:
        return "genesis previous_hash is not zero"
    if ctx.predecessor is not None:
        if header.previous_hash != header_hash(ctx.predecessor):
            return "does not link to its predecessor"
    if ctx.successor is not None:
        if ctx.successor.previous_hash != header_hash(header):
            return "successor does not link to it"
    return None


async def fetch_valid_block(
    n: int,
    peers: List[PeerEndpoint],
    trust: TrustStore,
    ctx: ChainContext,
    client: PeerClient,
    peer_stats: Optional[Dict[str, PeerStats]] = None,
    start: int = 0,
) -> bytes:
    """Ask the peers in turn, beginning at `start`, for a committable copy of n."""
    if peer_stats is None:
        peer_stats = {}
    reasons = []
    for i in range(len(peers)):
        peer = peers[(start + i) % len(peers)]
        stats = peer_stats.setdefault(peer.address, PeerStats())
        try:
            reply = await client.request_block(peer, n)
        except PeerTransportError as exc:
            stats.unreachable += 1
            reasons.append((peer.address, exc.reason))
            logger.info("peer %s unreachable for block %d: %s", peer.address, n, exc)
            continue
        if reply.status != ReplyStatus.OK:
            stats.not_found += 1
            reasons.append((peer.address, reply.status.name))
            continue
        problem = candidate_problem(reply.block, n, trust, ctx)
        if problem is not None:
            stats.invalid += 1
            reasons.append((peer.address, problem))
            logger.warning(
                "peer %s served an invalid block %d: %s", peer.address, n, problem
            )
            continue
        stats.served += 1
        return reply.block
    raise NoValidSource(n, reasons)


class _Recovery:
    def __init__(
        self,
        store: LedgerStore,
        report: CorruptionReport,
        peers: List[PeerEndpoint],
        trust: TrustStore,
        client: PeerClient,
    ):
        self.store = store
        self.peers = peers
        self.trust = trust
        self.client = client
        self.height = store.height

        self.bad: Set[int] = set()
        self.pairs: Set[int] = set()  # n for each LinkMismatch (n, n+1)
        for finding in report.findings:
            if finding.kind == FindingKind.LINK_MISMATCH:
                self.pairs.add(finding.blocks[0])
            else:
                self.bad.add(finding.blocks[0])
        self.implicated = set(report.implicated())

        self.replacements: Dict[int, bytes] = {}
        self.innocent: Set[int] = set()
        self.failed: Dict[int, str] = {}
        self.peer_stats: Dict[str, PeerStats] = {p.address: PeerStats() for p in peers}
        self._turn = 0

    # --- chain context ---------------------------------------------------------

    def _trusted_header(self, m: int) -> Optional[BlockHeader]:
        if not 0 <= m < self.height:
            return None
        if m in self.replacements:
            return decode_header(self.replacements[m])
        if m in self.implicated and m not in self.innocent:
            return None
        return self.store.read_header(m)

    def _context(self, n: int) -> ChainContext:
        return ChainContext(
            predecessor=self._trusted_header(n - 1),
            successor=self._trusted_header(n + 1),
        )

    async def _fetch(self, n: int) -> Optional[bytes]:
        start = self._turn
        self._turn += 1
        try:
            return await fetch_valid_block(
                n,
                self.peers,
                self.trust,
                self._context(n),
                self.client,
                self.peer_stats,
                start,
            )
        except NoValidSource as exc:
            self.failed[n] = str(exc)
            return None

    # --- target resolution -----------------------------------------------------

    def _explained_by_predecessor(self, m: int) -> bool:
        """Link (m-1, m) is the only one implicating m and the new m-1 fixes it."""
        if m in self.pairs or m - 1 not in self.pairs:
            return False
        if m - 1 not in self.replacements:
            return False
        local = self.store.read_header(m)
        new_prev = decode_header(self.replacements[m - 1])
        return local is not None and local.previous_hash == header_hash(new_prev)

    def _local_bytes(self, m: int) -> Optional[bytes]:
        try:
            return self.store.read_block_bytes(m)
        except LedgerGuardError:
            return None

    async def resolve(self) -> None:
        for n in sorted(self.implicated):
            if n in self.replacements or n in self.failed:
                continue
            if n in self.bad:
                raw = await self._fetch(n)
                if raw is not None:
                    self.replacements[n] = raw
                continue
            if self._explained_by_predecessor(n):
                self.innocent.add(n)
                continue
            raw = await self._fetch(n)
            if raw is None:
                continue
            if raw == self._local_bytes(n):
                self.innocent.add(n)
            else:
                self.replacements[n] = raw

        for n in sorted(self.pairs):
            if {n, n + 1} <= self.innocent:
                self.innocent.discard(n + 1)
                self.failed[n + 1] = "link to predecessor unresolved"

    # --- splicing ----------------------------------------------------------------

    async def splice(self) -> Dict[int, int]:
        """Write replacements file by file; returns file_id -> lowest spliced block."""
        by_file: Dict[int, List[int]] = defaultdict(list)
        for n in sorted(self.replacements):
            by_file[self.store.file_of(n).file_id].append(n)

        touched: Dict[int, int] = {}
        for file_id, pending in sorted(by_file.items()):
            while pending:
                n = pending[0]
                tail = {m: self.replacements[m] for m in pending[1:]}
                try:
                    outcome = await anyio.to_thread.run_sync(
                        self.store.replace_block, n, self.replacements[n], tail
                    )
                except UnreadableTail as exc:
                    if not await self._pull_tail(exc.missing, pending):
                        self._abandon(n, f"tail blocks {exc.missing} unavailable")
                        pending.pop(0)
                    continue
                except LedgerGuardError as exc:
                    self._abandon(n, f"splice failed: {exc}")
                    pending.pop(0)
                    continue
                touched.setdefault(file_id, n)
                if outcome.kind == ReplaceKind.TAIL_REWRITTEN:
                    pending.clear()
                else:
                    pending.pop(0)
        return touched

    async def _pull_tail(self, missing: List[int], pending: List[int]) -> bool:
        for m in missing:
            if m in self.failed:
                return False
            raw = await self._fetch(m)
            if raw is None:
                return False
            self.replacements[m] = raw
            pending.append(m)
        pending.sort()
        return True

    def _abandon(self, n: int, reason: str) -> None:
        self.replacements.pop(n, None)
        self.failed[n] = reason

    # --- verification ------------------------------------------------------------

    async def verify(self, touched: Dict[int, int]) -> None:
        files = {f.file_id: f for f in self.store.files()}
        for file_id, first in sorted(touched.items()):
            report = await anyio.to_thread.run_sync(
                scan_range, self.store, self.trust, first, files[file_id].last_block
            )
            for finding in report.findings:
                for m in finding.blocks:
                    if m in self.replacements:
                        self.replacements.pop(m)
                        self.failed[m] = f"still {finding.kind.value} after splice"

    def outcome(self, elapsed: float) -> RecoveryOutcome:
        recovered = sorted(self.replacements)
        return RecoveryOutcome(
            recovered=recovered,
            failed=[
                FailedBlock(block=n, reason=why) for n, why in sorted(self.failed.items())
            ],
            peer_stats=self.peer_stats,
            blocks_per_second=len(recovered) / elapsed if elapsed > 0 else 0.0,
            elapsed_seconds=elapsed,
        )


async def recover(
    store: LedgerStore,
    report: CorruptionReport,
    peers: List[PeerEndpoint],
    trust: TrustStore,
    client: Optional[PeerClient] = None,
) -> RecoveryOutcome:
    """Replace every block the report implicates with a verified peer copy.

    The caller holds the store's write phase for the duration.
    """
    if report.clean:
        return RecoveryOutcome(peer_stats={p.address: PeerStats() for p in peers})
    started = time.perf_counter()
    own_client = client is None
    client = client or PeerClient()
    try:
        job = _Recovery(store, report, peers, trust, client)
        if not peers:
            for n in sorted(job.implicated):
                job.failed[n] = "no peers configured"
        else:
            await job.resolve()
            touched = await job.splice()
            await job.verify(touched)
    finally:
        if own_client:
            await client.aclose()
    outcome = job.outcome(time.perf_counter() - started)
    logger.info(
        "recovery finished: %d recovered, %d failed, %.2f blocks/s",
        len(outcome.recovered),
        len(outcome.failed),
        outcome.blocks_per_second,
    )
    return outcome


class RecoveryService:
    """Recovery of one store from a fixed set of peers."""

    def __init__(
        self,
        store: LedgerStore,
        trust: TrustStore,
        peers: List[PeerEndpoint],
        client: Optional[PeerClient] = None,
    ):
        self.store = store
        self.trust = trust
        self.peers = peers
        self.client = client

    async def recover(self, report: CorruptionReport) -> RecoveryOutcome:
        return await recover(self.store, report, self.peers, self.trust, self.client)
