import json
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict

from models.models import (
    CorruptionReport,
    Distribution,
    PeerStats,
    RecoveryOutcome,
    ScanStats,
)

REFERENCE_RECOVERY_BLOCKS_PER_SECOND = 8.5


class FindingOut(BaseModel):
    kind: str
    blocks: List[int]


class ReportOut(BaseModel):
    height: int
    findings: List[FindingOut]
    verdicts: Dict[str, int]

    @classmethod
    def from_report(cls, report: CorruptionReport) -> "ReportOut":
        return cls(
            height=report.height,
            findings=[
                FindingOut(kind=f.kind.value, blocks=f.blocks) for f in report.findings
            ],
            verdicts=report.verdicts,
        )


class FailedOut(BaseModel):
    block: int
    reason: str


class OutcomeOut(BaseModel):
    recovered: List[int]
    failed: List[FailedOut]
    peer_stats: Dict[str, PeerStats]
    blocks_per_second: float

    @classmethod
    def from_outcome(cls, outcome: RecoveryOutcome) -> "OutcomeOut":
        return cls(
            recovered=outcome.recovered,
            failed=[FailedOut(block=f.block, reason=f.reason) for f in outcome.failed],
            peer_stats=outcome.peer_stats,
            blocks_per_second=round(outcome.blocks_per_second, 3),
        )


class ScanProfile(BaseModel):
    blocks: int
    wall_seconds: float
    cpu_seconds: float
    blocks_per_second: float
    peak_rss_mib: float
    stats: ScanStats


class RecoveryProfile(BaseModel):
    model_config = ConfigDict(use_enum_values=True)

    corrupted: int
    distribution: Distribution
    recovered: int
    failed: int
    blocks_per_second: float
    post_scan_clean: bool
    reference_blocks_per_second: float = REFERENCE_RECOVERY_BLOCKS_PER_SECOND


class BenchOut(BaseModel):
    validation: ScanProfile
    recovery: Optional[RecoveryProfile] = None


def to_json(model: BaseModel) -> str:
    """Stable JSON: same model, same bytes."""
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, indent=2)
