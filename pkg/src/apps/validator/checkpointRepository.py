import logging
import os
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from models.models import CheckpointSet

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoints.json"


class CheckpointRepository:
    """`checkpoints.json` kept outside the ledger directory."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    @property
    def path(self) -> Path:
        return self.directory / CHECKPOINT_FILE

    def load(self) -> Optional[CheckpointSet]:
        """Missing or unreadable checkpoints mean no checkpoints."""
        if not self.path.exists():
            return None
        try:
            return CheckpointSet.model_validate_json(self.path.read_text())
        except (OSError, ValidationError) as exc:
            logger.warning("ignoring checkpoints at %s: %s", self.path, exc)
            return None

    def save(self, checkpoints: CheckpointSet) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(checkpoints.model_dump_json(indent=2) + "\n")
        os.replace(tmp, self.path)
        logger.info(
            "wrote %d checkpoint entr(y/ies) to %s", len(checkpoints.entries), self.path
        )
        return self.path
