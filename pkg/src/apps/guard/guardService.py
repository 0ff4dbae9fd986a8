import logging
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import anyio

from apps.crypto.cryptoService import TrustStore
from apps.guard.clock import Clock, MonotonicClock
from apps.guard.probes import PsutilProbe, ResourceProbe
from apps.ledger.ledgerRepository import LedgerStore
from apps.peers.peerClient import PeerClient
from apps.recovery.recoveryService import RecoveryService
from apps.validator.checkpointRepository import CheckpointRepository
from apps.validator.validatorService import ValidatorService
from models.models import CycleResult, GuardConfig, GuardMode
from utils.errors import CycleInProgress

logger = logging.getLogger(__name__)


class GuardService:
    """Detection plus optional recovery, never more than one cycle at a time."""

    def __init__(
        self,
        store: LedgerStore,
        trust: TrustStore,
        config: GuardConfig,
        client: Optional[PeerClient] = None,
        clock: Optional[Clock] = None,
        probe: Optional[ResourceProbe] = None,
    ):
        self.store = store
        self.trust = trust
        self.config = config
        self.client = client or PeerClient(timeout=config.fetch_timeout_seconds)
        self.clock = clock or MonotonicClock()
        self.probe = probe or PsutilProbe()
        self.checkpoints = (
            CheckpointRepository(Path(config.checkpoint_dir))
            if config.checkpoint_dir
            else None
        )
        self.validator = ValidatorService(store, trust, self.checkpoints)
        self.recovery = RecoveryService(store, trust, config.endpoints(), self.client)
        self._lock = threading.Lock()
        self.cycles_completed = 0
        self.cycles_skipped = 0
        self.last_cycle: Optional[CycleResult] = None

    @property
    def in_flight(self) -> bool:
        return self._lock.locked()

    async def run_cycle(self) -> CycleResult:
        if not self._lock.acquire(blocking=False):
            raise CycleInProgress("a guard cycle is already running")
        try:
            result = await self._cycle_body()
        finally:
            self._lock.release()
        self.cycles_completed += 1
        self.last_cycle = result
        return result

    async def _cycle_body(self) -> CycleResult:
        started_at = datetime.now(timezone.utc)
        logger.info("guard cycle started")
        use_checkpoints = self.config.use_checkpoints
        report = await anyio.to_thread.run_sync(self.validator.scan, use_checkpoints)
        outcome = confirmation = None
        if not report.clean and self.config.auto_recover:
            outcome = await self.recovery.recover(report)
            confirmation = await anyio.to_thread.run_sync(
                self.validator.scan, use_checkpoints
            )
        final = confirmation or report
        if use_checkpoints and final.clean and self.checkpoints:
            await anyio.to_thread.run_sync(self.validator.refresh_checkpoints, final)
        logger.info(
            "guard cycle finished: %d finding(s), final %s",
            len(report.findings),
            "clean" if final.clean else f"{len(final.findings)} finding(s)",
        )
        return CycleResult(
            started_at=started_at,
            finished_at=datetime.now(timezone.utc),
            report=report,
            outcome=outcome,
            confirmation=confirmation,
        )

    async def _triggered_cycle(self, trigger: str) -> None:
        try:
            await self.run_cycle()
        except CycleInProgress:
            self.cycles_skipped += 1
            logger.info("%s trigger skipped, a cycle is in flight", trigger)
        except Exception:
            logger.exception("%s guard cycle failed", trigger)

    async def run_periodic(self, duration: Optional[float] = None) -> None:
        """Cycle at start and every interval; overrun ticks are skipped."""
        interval = self.config.interval_seconds
        start = self.clock.now()
        next_tick = start
        while duration is None or next_tick <= start + duration:
            await self.clock.sleep(next_tick - self.clock.now())
            await self._triggered_cycle("periodic")
            next_tick += interval
            now = self.clock.now()
            while next_tick < now:
                logger.info("cycle overran the tick at %.1f, skipping it", next_tick)
                self.cycles_skipped += 1
                next_tick += interval

    async def run_cpu_triggered(self, duration: Optional[float] = None) -> None:
        """Cycle once enough consecutive samples fall under the threshold."""
        threshold = self.config.cpu_threshold_percent
        window = self.config.consecutive_idle_samples
        start = self.clock.now()
        idle = 0
        while duration is None or self.clock.now() - start <= duration:
            reading = await self.probe.sample()
            idle = idle + 1 if reading < threshold else 0
            if idle >= window:
                await self._triggered_cycle("cpu")
                idle = 0
            await self.clock.sleep(self.config.interval_seconds)

    async def run(self, duration: Optional[float] = None) -> None:
        if self.config.mode == GuardMode.PERIODIC:
            await self.run_periodic(duration)
        elif self.config.mode == GuardMode.CPU_TRIGGERED:
            await self.run_cpu_triggered(duration)
        else:
            await self.run_cycle()
