import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from models.models import GuardConfig
from utils.errors import ConfigError

load_dotenv()

LOG_LEVEL = os.getenv("LEDGERGUARD_LOG", "warn")
FETCH_TIMEOUT_SECONDS = float(os.getenv("LEDGERGUARD_FETCH_TIMEOUT", "5"))
MAX_FILE_SIZE = int(os.getenv("LEDGERGUARD_MAX_FILE_SIZE", str(64 * 1024 * 1024)))
DEFAULT_LEDGER_ID = os.getenv("LEDGERGUARD_LEDGER_ID", "ledgerguard")
CONTROL_LISTEN = os.getenv("LEDGERGUARD_CONTROL") or None


def load_guard_config(
    path: Optional[Path], overrides: Optional[Dict[str, Any]] = None
) -> GuardConfig:
    """Read a JSON guard config and apply CLI overrides on top of it.

    Overrides whose value is None are ignored so unset flags keep the
    file's value.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read guard config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"guard config {path} must be a JSON object")
    data.setdefault("ledger_id", DEFAULT_LEDGER_ID)
    data.setdefault("fetch_timeout_seconds", FETCH_TIMEOUT_SECONDS)
    if CONTROL_LISTEN:
        data.setdefault("control_listen", CONTROL_LISTEN)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return GuardConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
