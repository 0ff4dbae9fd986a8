import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, NoReturn, Optional

import anyio
import typer
import uvicorn

from apps.bench.benchService import bench
from apps.crypto.keysRepository import load_trust_store
from apps.guard.guardService import GuardService
from apps.ledger.ledgerRepository import LedgerStore
from apps.peers.peerClient import PeerClient
from apps.peers.peerServer import serve_forever, split_address
from apps.recovery.recoveryService import RecoveryService
from apps.testkit.generatorService import generate_ledger
from apps.testkit.injectorService import inject
from apps.validator.checkpointRepository import CheckpointRepository
from apps.validator.validatorService import ValidatorService
from models.models import (
    Distribution,
    GenParams,
    GuardMode,
    InjectionMode,
    InjectionRecord,
    PeerEndpoint,
    Region,
)
from schemas.guard import CycleOut, FileOut, LedgerOut
from schemas.reports import OutcomeOut, ReportOut, to_json
from utils.config import (
    DEFAULT_LEDGER_ID,
    FETCH_TIMEOUT_SECONDS,
    LOG_LEVEL,
    MAX_FILE_SIZE,
    load_guard_config,
)
from utils.errors import ConfigError, LedgerGuardError
from utils.logging_utils import configure_logging, stderr_console

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="ledgerguard",
    help="Detect and repair corrupted blocks in a file-backed ledger.",
    no_args_is_help=True,
    add_completion=False,
)

EXIT_OK, EXIT_FINDINGS, EXIT_ERROR = 0, 1, 2


def _fail(exc: BaseException) -> NoReturn:
    stderr_console.print(f"error: {exc}", markup=False, highlight=False)
    raise typer.Exit(code=EXIT_ERROR)


@contextmanager
def operational_errors() -> Iterator[None]:
    try:
        yield
    except (LedgerGuardError, OSError) as exc:
        _fail(exc)
    except ExceptionGroup as group:
        first = group.exceptions[0]
        if isinstance(first, (LedgerGuardError, OSError)):
            _fail(first)
        raise


def _peers(peers: Optional[str], ledger_id: str) -> List[PeerEndpoint]:
    addresses = [p.strip() for p in (peers or "").split(",") if p.strip()]
    return [PeerEndpoint(address=a, ledger_id=ledger_id.encode()) for a in addresses]


def _emit(text: str, report_path: Optional[Path] = None) -> None:
    typer.echo(text)
    if report_path is not None:
        report_path.write_text(text + "\n")


@app.callback()
def main(
    log_level: str = typer.Option(
        LOG_LEVEL, "--log", help="error|warn|info|debug (LEDGERGUARD_LOG)"
    ),
):
    configure_logging(log_level)


@app.command()
def generate(
    blocks: int = typer.Option(..., "--blocks", min=1),
    txs_per_block: int = typer.Option(50, "--txs-per-block", min=0),
    tx_size: int = typer.Option(3072, "--tx-size", min=1),
    seed: int = typer.Option(0, "--seed"),
    out: Path = typer.Option(..., "--out"),
    keys: Path = typer.Option(..., "--keys"),
    endorsers: int = typer.Option(2, "--endorsers", min=0),
    max_file_size: int = typer.Option(MAX_FILE_SIZE, "--max-file-size", min=1),
    blocks_per_file: Optional[int] = typer.Option(None, "--blocks-per-file", min=1),
    ledger_id: str = typer.Option(DEFAULT_LEDGER_ID, "--ledger-id"),
):
    """Write a seeded synthetic ledger, its keys and trust store."""
    params = GenParams(
        num_blocks=blocks,
        txs_per_block=txs_per_block,
        tx_size_bytes=tx_size,
        num_endorsers=endorsers,
        rng_seed=seed,
        ledger_id=ledger_id,
        max_file_size=max_file_size,
        blocks_per_file=blocks_per_file,
    )
    with operational_errors():
        store, _ = generate_ledger(params, out, keys)
    typer.echo(
        to_json(
            LedgerOut(
                height=store.height,
                files=[FileOut.from_layout(f) for f in store.files()],
            )
        )
    )


@app.command()
def validate(
    ledger: Path = typer.Option(..., "--ledger"),
    trust: Path = typer.Option(..., "--trust"),
    use_checkpoints: Optional[Path] = typer.Option(None, "--use-checkpoints"),
    report_path: Optional[Path] = typer.Option(None, "--report"),
):
    """Scan the ledger; exit 1 when anything is corrupted."""
    with operational_errors():
        trust_store = load_trust_store(trust)
        store = LedgerStore.open(ledger, trust=trust_store, read_only=True)
        repo = CheckpointRepository(use_checkpoints) if use_checkpoints else None
        report = ValidatorService(store, trust_store, repo).scan()
        _emit(to_json(ReportOut.from_report(report)), report_path)
    raise typer.Exit(code=EXIT_OK if report.clean else EXIT_FINDINGS)


@app.command()
def checkpoint(
    ledger: Path = typer.Option(..., "--ledger"),
    trust: Path = typer.Option(..., "--trust"),
    out: Path = typer.Option(..., "--out"),
):
    """Record whole-file digests for the clean prefix of block files."""
    with operational_errors():
        trust_store = load_trust_store(trust)
        store = LedgerStore.open(ledger, trust=trust_store, read_only=True)
        checkpoints = ValidatorService(
            store, trust_store, CheckpointRepository(out)
        ).checkpoint()
    typer.echo(checkpoints.model_dump_json(indent=2))


@app.command("recover")
def recover_command(
    ledger: Path = typer.Option(..., "--ledger"),
    trust: Path = typer.Option(..., "--trust"),
    peers: str = typer.Option(..., "--peers", help="host:port,host:port,..."),
    report_path: Optional[Path] = typer.Option(None, "--report"),
    ledger_id: str = typer.Option(DEFAULT_LEDGER_ID, "--ledger-id"),
    timeout: float = typer.Option(FETCH_TIMEOUT_SECONDS, "--timeout", min=0.01),
):
    """Scan, then replace corrupted blocks with verified peer copies."""
    endpoints = _peers(peers, ledger_id)
    if not endpoints:
        _fail(ConfigError("--peers lists no peer"))

    async def _run():
        trust_store = load_trust_store(trust)
        store = LedgerStore.open(ledger, trust=trust_store)
        validator = ValidatorService(store, trust_store)
        report = await anyio.to_thread.run_sync(validator.scan)
        if report_path is not None:
            report_path.write_text(to_json(ReportOut.from_report(report)) + "\n")
        async with PeerClient(timeout=timeout) as client:
            return await RecoveryService(store, trust_store, endpoints, client).recover(
                report
            )

    with operational_errors():
        outcome = anyio.run(_run)
    typer.echo(to_json(OutcomeOut.from_outcome(outcome)))
    raise typer.Exit(code=EXIT_FINDINGS if outcome.failed else EXIT_OK)


@app.command("serve")
def serve_command(
    ledger: Path = typer.Option(..., "--ledger"),
    listen: str = typer.Option(..., "--listen"),
    ledger_id: str = typer.Option(DEFAULT_LEDGER_ID, "--ledger-id"),
):
    """Answer block requests from other peers until interrupted."""
    with operational_errors():
        store = LedgerStore.open(ledger, read_only=True)
        anyio.run(serve_forever, store, listen, ledger_id.encode())


@app.command()
def corrupt(
    ledger: Path = typer.Option(..., "--ledger"),
    block: int = typer.Option(..., "--block", min=0),
    region: Region = typer.Option(..., "--region"),
    mode: InjectionMode = typer.Option(..., "--mode"),
    seed: int = typer.Option(0, "--seed"),
):
    """Damage one block and print the replayable injection record."""
    record = InjectionRecord(block=block, region=region, mode=mode, rng_seed=seed)
    with operational_errors():
        applied = inject(ledger, record)
    typer.echo(to_json(applied))


@app.command()
def guard(
    config: Optional[Path] = typer.Option(None, "--config"),
    ledger: Optional[Path] = typer.Option(None, "--ledger"),
    trust: Optional[Path] = typer.Option(None, "--trust"),
    mode: Optional[GuardMode] = typer.Option(None, "--mode"),
    interval: Optional[float] = typer.Option(None, "--interval"),
    cpu_threshold: Optional[float] = typer.Option(None, "--cpu-threshold"),
    idle_samples: Optional[int] = typer.Option(None, "--idle-samples"),
    peers: Optional[str] = typer.Option(None, "--peers"),
    auto_recover: Optional[bool] = typer.Option(
        None, "--auto-recover/--no-auto-recover"
    ),
    use_checkpoints: Optional[bool] = typer.Option(
        None, "--use-checkpoints/--no-use-checkpoints"
    ),
    checkpoint_dir: Optional[Path] = typer.Option(None, "--checkpoint-dir"),
    ledger_id: Optional[str] = typer.Option(None, "--ledger-id"),
    control: Optional[str] = typer.Option(None, "--control"),
):
    """Run the guard service (periodic, cpu_triggered or one manual cycle)."""
    with operational_errors():
        settings = load_guard_config(
            config,
            {
                "ledger_dir": str(ledger) if ledger else None,
                "trust_file": str(trust) if trust else None,
                "mode": mode,
                "interval_seconds": interval,
                "cpu_threshold_percent": cpu_threshold,
                "consecutive_idle_samples": idle_samples,
                "peers": peers,
                "auto_recover": auto_recover,
                "use_checkpoints": use_checkpoints,
                "checkpoint_dir": str(checkpoint_dir) if checkpoint_dir else None,
                "ledger_id": ledger_id,
                "control_listen": control,
            },
        )
        if not settings.ledger_dir or not settings.trust_file:
            raise ConfigError("the guard needs ledger_dir and trust_file")
        trust_store = load_trust_store(Path(settings.trust_file))
        store = LedgerStore.open(Path(settings.ledger_dir), trust=trust_store)
        service = GuardService(store, trust_store, settings)
        anyio.run(_run_guard, service)

    result = service.last_cycle
    if settings.mode == GuardMode.MANUAL and result is not None:
        typer.echo(to_json(CycleOut.from_cycle(result)))
        raise typer.Exit(code=EXIT_OK if result.final_report.clean else EXIT_FINDINGS)


async def _run_guard(service: GuardService) -> None:
    listen = service.config.control_listen
    if not listen:
        await service.run()
        return

    from main import app as control_app

    host, port = split_address(listen)
    control_app.state.guard = service
    level = LOG_LEVEL if LOG_LEVEL != "warn" else "warning"
    server = uvicorn.Server(
        uvicorn.Config(control_app, host=host, port=port, log_level=level)
    )
    async with anyio.create_task_group() as tg:
        tg.start_soon(server.serve)
        if service.config.mode == GuardMode.MANUAL:
            # cycles come from POST /guard/cycles
            await anyio.sleep_forever()
        await service.run()
        server.should_exit = True


@app.command("bench")
def bench_command(
    ledger: Path = typer.Option(..., "--ledger"),
    trust: Path = typer.Option(..., "--trust"),
    peers: Optional[str] = typer.Option(None, "--peers"),
    corrupt_blocks: int = typer.Option(0, "--corrupt", min=0),
    distribution: Distribution = typer.Option(Distribution.UNIFORM, "--distribution"),
    seed: int = typer.Option(0, "--seed"),
    ledger_id: str = typer.Option(DEFAULT_LEDGER_ID, "--ledger-id"),
    use_checkpoints: Optional[Path] = typer.Option(None, "--use-checkpoints"),
    timeout: float = typer.Option(FETCH_TIMEOUT_SECONDS, "--timeout", min=0.01),
):
    """Time a validation pass; with --corrupt and --peers also time recovery."""

    async def _run():
        trust_store = load_trust_store(trust)
        checkpoints = (
            CheckpointRepository(use_checkpoints).load() if use_checkpoints else None
        )
        async with PeerClient(timeout=timeout) as client:
            return await bench(
                ledger,
                trust_store,
                peers=_peers(peers, ledger_id),
                corrupt=corrupt_blocks,
                distribution=distribution,
                seed=seed,
                checkpoints=checkpoints,
                client=client,
            )

    with operational_errors():
        result = anyio.run(_run)
    typer.echo(to_json(result))
    failed = result.recovery is not None and not result.recovery.post_scan_clean
    raise typer.Exit(code=EXIT_FINDINGS if failed else EXIT_OK)


if __name__ == "__main__":
    app()
