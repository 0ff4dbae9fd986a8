import logging
import time
from pathlib import Path
from typing import List, Optional

import anyio
import psutil

from apps.crypto.cryptoService import TrustStore
from apps.ledger.ledgerRepository import LedgerStore
from apps.peers.peerClient import PeerClient
from apps.recovery.recoveryService import recover
from apps.testkit.injectorService import inject_many, plan_injections
from apps.validator.validatorService import scan
from models.models import CheckpointSet, Distribution, PeerEndpoint
from schemas.reports import BenchOut, RecoveryProfile, ScanProfile
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

RSS_SAMPLE_SECONDS = 0.05


class RssWatch:
    """High-water mark of this process's resident set size."""

    def __init__(self):
        self._process = psutil.Process()
        self.peak = 0
        self.sample()

    def sample(self) -> int:
        self.peak = max(self.peak, self._process.memory_info().rss)
        return self.peak

    @property
    def peak_mib(self) -> float:
        return self.peak / 2**20

    async def follow(self, done: anyio.Event) -> None:
        while not done.is_set():
            self.sample()
            with anyio.move_on_after(RSS_SAMPLE_SECONDS):
                await done.wait()


def profile_scan(
    store: LedgerStore,
    trust: TrustStore,
    checkpoints: Optional[CheckpointSet] = None,
    watch: Optional[RssWatch] = None,
) -> ScanProfile:
    watch = watch or RssWatch()
    wall, cpu = time.perf_counter(), time.process_time()
    report = scan(store, trust, checkpoints)
    wall, cpu = time.perf_counter() - wall, time.process_time() - cpu
    watch.sample()
    return ScanProfile(
        blocks=report.height,
        wall_seconds=round(wall, 4),
        cpu_seconds=round(cpu, 4),
        blocks_per_second=round(report.height / wall, 2) if wall > 0 else 0.0,
        peak_rss_mib=round(watch.peak_mib, 1),
        stats=report.stats,
    )


async def _profiled_scan(
    store: LedgerStore, trust: TrustStore, checkpoints: Optional[CheckpointSet]
) -> ScanProfile:
    watch, done = RssWatch(), anyio.Event()
    async with anyio.create_task_group() as tg:
        tg.start_soon(watch.follow, done)
        try:
            return await anyio.to_thread.run_sync(
                profile_scan, store, trust, checkpoints, watch
            )
        finally:
            done.set()


async def bench(
    ledger_dir: Path,
    trust: TrustStore,
    peers: Optional[List[PeerEndpoint]] = None,
    corrupt: int = 0,
    distribution: Distribution = Distribution.UNIFORM,
    seed: int = 0,
    checkpoints: Optional[CheckpointSet] = None,
    client: Optional[PeerClient] = None,
) -> BenchOut:
    """Time a full scan; with `corrupt`, damage the ledger and time its recovery."""
    if corrupt and not peers:
        raise ConfigError("corrupting the ledger for a benchmark needs --peers")
    store = LedgerStore.open(ledger_dir, trust=trust)
    validation = await _profiled_scan(store, trust, checkpoints)
    logger.info("scan of %d blocks took %.3fs", validation.blocks, validation.wall_seconds)
    if not corrupt:
        return BenchOut(validation=validation)

    plan = plan_injections(store.height, corrupt, distribution, seed=seed)
    inject_many(ledger_dir, plan)
    store = LedgerStore.open(ledger_dir, trust=trust)
    report = await anyio.to_thread.run_sync(scan, store, trust)
    outcome = await recover(store, report, peers, trust, client)
    post = await anyio.to_thread.run_sync(scan, store, trust)
    return BenchOut(
        validation=validation,
        recovery=RecoveryProfile(
            corrupted=corrupt,
            distribution=distribution,
            recovered=len(outcome.recovered),
            failed=len(outcome.failed),
            blocks_per_second=round(outcome.blocks_per_second, 3),
            post_scan_clean=post.clean,
        ),
    )
