import logging
from typing import Iterable, List, Protocol

import psutil

logger = logging.getLogger(__name__)


class ResourceProbe(Protocol):
    async def sample(self) -> float:
        """System CPU utilization in percent, 0..100."""
        ...


class PsutilProbe:
    """System-wide CPU utilization since the previous sample.

    Never blocks: the window is whatever elapsed between two calls, so a
    probe sampled every `interval_seconds` reports over that interval.
    """

    def __init__(self):
        # the first reading after process start is meaningless
        psutil.cpu_percent(interval=None)

    async def sample(self) -> float:
        busy = psutil.cpu_percent(interval=None)
        logger.debug("cpu utilization %.1f%%", busy)
        return busy


class ScriptedProbe:
    """Replays fixed readings; the last one repeats once the script runs out."""

    def __init__(self, readings: Iterable[float]):
        self.readings: List[float] = list(readings)
        if not self.readings:
            raise ValueError("a scripted probe needs at least one reading")
        self.samples = 0

    async def sample(self) -> float:
        reading = self.readings[min(self.samples, len(self.readings) - 1)]
        self.samples += 1
        return reading
