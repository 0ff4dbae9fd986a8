from datetime import datetime
from typing import List, Optional

from pydantic import BaseModel

from models.models import BlockVerdict, CycleResult, FileLayout, GuardMode
from schemas.reports import OutcomeOut, ReportOut


class CycleOut(BaseModel):
    started_at: datetime
    finished_at: datetime
    report: ReportOut
    outcome: Optional[OutcomeOut] = None
    confirmation: Optional[ReportOut] = None

    @classmethod
    def from_cycle(cls, result: CycleResult) -> "CycleOut":
        return cls(
            started_at=result.started_at,
            finished_at=result.finished_at,
            report=ReportOut.from_report(result.report),
            outcome=OutcomeOut.from_outcome(result.outcome) if result.outcome else None,
            confirmation=(
                ReportOut.from_report(result.confirmation)
                if result.confirmation
                else None
            ),
        )


class GuardStatus(BaseModel):
    mode: GuardMode
    cycles_completed: int
    cycles_skipped: int
    in_flight: bool
    last_cycle: Optional[CycleOut] = None


class FileOut(BaseModel):
    file_id: int
    length: int
    first_block: int
    last_block: int
    unindexed_from: Optional[int] = None

    @classmethod
    def from_layout(cls, layout: FileLayout) -> "FileOut":
        return cls(
            file_id=layout.file_id,
            length=layout.length,
            first_block=layout.first_block,
            last_block=layout.last_block,
            unindexed_from=layout.gap.first_block if layout.gap else None,
        )


class LedgerOut(BaseModel):
    height: int
    files: List[FileOut]


class BlockOut(BaseModel):
    number: int
    file_id: int
    offset: Optional[int] = None
    length: Optional[int] = None
    verdict: BlockVerdict
