import json
from datetime import datetime, timezone

import anyio
import anyio.lowlevel
import psutil
import pytest
from pydantic import ValidationError

from apps.guard.clock import ScriptedClock
from apps.guard.guardService import GuardService
from apps.guard.probes import ScriptedProbe
from models.models import CorruptionReport, CycleResult, GuardConfig, GuardMode
from utils.config import load_guard_config
from utils.errors import ConfigError, CycleInProgress

PAYLOAD_AT = 4 + 72 + 4 + 4 + 4


@pytest.fixture
def make_guard(ledger, client):
    store, trust = ledger

    def _make(clock=None, probe=None, **config):
        settings = {"peers": ["peer-a", "peer-b"], **config}
        return GuardService(
            store,
            trust,
            GuardConfig(**settings),
            client=client,
            clock=clock,
            probe=probe,
        )

    return _make


def _empty_result():
    now = datetime.now(timezone.utc)
    return CycleResult(started_at=now, finished_at=now, report=CorruptionReport(height=0))


def _recording(clock, starts, takes=0.0):
    async def body():
        starts.append(clock.now())
        clock.advance(takes)
        await anyio.lowlevel.checkpoint()
        return _empty_result()

    return body


async def test_manual_cycle_on_a_clean_ledger(make_guard):
    guard = make_guard()
    result = await guard.run_cycle()
    assert result.report.clean
    assert result.outcome is None and result.confirmation is None
    assert guard.cycles_completed == 1
    assert guard.last_cycle == result
    assert not guard.in_flight


async def test_cycle_recovers_and_confirms(make_guard, ledger, flip_byte):
    store, _ = ledger
    flip_byte(store, 5, PAYLOAD_AT)
    result = await make_guard().run_cycle()
    assert result.report.implicated() == [5]
    assert result.outcome.recovered == [5]
    assert result.confirmation.clean
    assert result.final_report.clean


async def test_detection_only_cycle(make_guard, ledger, flip_byte):
    store, _ = ledger
    flip_byte(store, 5, PAYLOAD_AT)
    result = await make_guard(auto_recover=False).run_cycle()
    assert result.outcome is None
    assert not result.final_report.clean


async def test_run_in_manual_mode_is_a_single_cycle(make_guard):
    guard = make_guard(mode=GuardMode.MANUAL)
    await guard.run()
    assert guard.cycles_completed == 1


async def test_at_most_one_cycle_in_flight(make_guard, monkeypatch):
    guard = make_guard()
    running = {"now": 0, "max": 0}
    rejected = []

    async def slow_body():
        running["now"] += 1
        running["max"] = max(running["max"], running["now"])
        await anyio.sleep(0.01)
        running["now"] -= 1
        return _empty_result()

    monkeypatch.setattr(guard, "_cycle_body", slow_body)

    async def trigger():
        try:
            await guard.run_cycle()
        except CycleInProgress:
            rejected.append(1)

    async with anyio.create_task_group() as tg:
        for _ in range(100):
            tg.start_soon(trigger)

    assert running["max"] == 1
    assert guard.cycles_completed + len(rejected) == 100
    assert guard.cycles_completed >= 1


async def test_periodic_cycles_start_on_every_tick(make_guard, monkeypatch):
    clock = ScriptedClock()
    guard = make_guard(clock=clock, mode=GuardMode.PERIODIC, interval_seconds=10)
    starts = []
    monkeypatch.setattr(guard, "_cycle_body", _recording(clock, starts))
    await guard.run_periodic(duration=30)
    assert starts == [0, 10, 20, 30]
    assert guard.cycles_skipped == 0


async def test_long_cycles_skip_overrun_ticks(make_guard, monkeypatch):
    clock = ScriptedClock()
    guard = make_guard(clock=clock, mode=GuardMode.PERIODIC, interval_seconds=10)
    starts = []
    monkeypatch.setattr(guard, "_cycle_body", _recording(clock, starts, takes=25))
    await guard.run_periodic(duration=30)
    assert starts == [0, 30]
    assert guard.cycles_skipped == 4


async def test_failing_cycle_does_not_stop_the_schedule(make_guard, monkeypatch):
    clock = ScriptedClock()
    guard = make_guard(clock=clock, mode=GuardMode.PERIODIC, interval_seconds=10)
    starts = []

    async def flaky():
        starts.append(clock.now())
        if len(starts) == 1:
            raise RuntimeError("disk went away")
        return _empty_result()

    monkeypatch.setattr(guard, "_cycle_body", flaky)
    await guard.run(duration=10)
    assert starts == [0, 10]
    assert guard.cycles_completed == 1
    assert not guard.in_flight


async def test_cpu_trigger_waits_for_idle_samples(make_guard, monkeypatch):
    clock = ScriptedClock()
    probe = ScriptedProbe([80, 25, 20, 10])
    guard = make_guard(
        clock=clock,
        probe=probe,
        mode=GuardMode.CPU_TRIGGERED,
        interval_seconds=1,
        cpu_threshold_percent=30,
        consecutive_idle_samples=3,
    )
    starts = []
    monkeypatch.setattr(guard, "_cycle_body", _recording(clock, starts))
    await guard.run(duration=3.5)
    assert starts == [3]
    assert probe.samples == 4


async def test_busy_machine_never_triggers(make_guard, monkeypatch):
    clock = ScriptedClock()
    guard = make_guard(
        clock=clock,
        probe=ScriptedProbe([25, 25, 90]),
        mode=GuardMode.CPU_TRIGGERED,
        interval_seconds=1,
        cpu_threshold_percent=30,
        consecutive_idle_samples=3,
    )
    starts = []
    monkeypatch.setattr(guard, "_cycle_body", _recording(clock, starts))
    await guard.run_cpu_triggered(duration=10)
    assert starts == []


async def test_clean_cycles_refresh_checkpoints(make_guard, tmp_path):
    guard = make_guard(use_checkpoints=True, checkpoint_dir=str(tmp_path / "secure"))
    first = await guard.run_cycle()
    second = await guard.run_cycle()
    assert first.report.stats.files_skipped == 0
    assert second.report.stats.files_skipped == 2
    assert second.report.clean


async def test_findings_withhold_checkpoint_refresh(
    make_guard, ledger, flip_byte, tmp_path
):
    store, _ = ledger
    flip_byte(store, 2, PAYLOAD_AT)
    guard = make_guard(
        auto_recover=False, use_checkpoints=True, checkpoint_dir=str(tmp_path / "secure")
    )
    await guard.run_cycle()
    assert guard.checkpoints.load() is None


async def test_cpu_load_is_read_without_blocking(make_guard, monkeypatch):
    calls = []

    def cpu_percent(interval=None):
        calls.append(interval)
        return 37.5

    monkeypatch.setattr(psutil, "cpu_percent", cpu_percent)
    guard = make_guard(
        clock=ScriptedClock(),
        mode=GuardMode.CPU_TRIGGERED,
        interval_seconds=10,
        cpu_threshold_percent=50,
        consecutive_idle_samples=1,
    )
    await guard.run_cpu_triggered(duration=0)
    # one priming read, then one per interval
    assert calls == [None, None]
    assert guard.cycles_completed == 1


async def test_cpu_samples_follow_the_interval(make_guard, monkeypatch):
    clock = ScriptedClock()
    seen = []

    def cpu_percent(interval=None):
        seen.append(clock.now())
        return 90.0

    monkeypatch.setattr(psutil, "cpu_percent", cpu_percent)
    guard = make_guard(
        clock=clock,
        mode=GuardMode.CPU_TRIGGERED,
        interval_seconds=10,
        cpu_threshold_percent=30,
        consecutive_idle_samples=2,
    )
    await guard.run_cpu_triggered(duration=30)
    assert seen == [0, 0, 10, 20, 30]
    assert guard.cycles_completed == 0


@pytest.mark.parametrize(
    "settings",
    [
        {"mode": "cpu_triggered"},
        {"mode": "cpu_triggered", "cpu_threshold_percent": 30},
        {"mode": "periodic", "consecutive_idle_samples": 2},
        {"mode": "manual", "cpu_threshold_percent": 101},
        {"use_checkpoints": True},
        {"interval_seconds": 0},
        {"mode": "hourly"},
    ],
)
def test_invalid_guard_configs(settings):
    with pytest.raises(ValidationError):
        GuardConfig(**settings)


def test_peers_may_be_a_comma_separated_string():
    config = GuardConfig(peers="a:1, b:2,", ledger_id="lg")
    assert config.peers == ["a:1", "b:2"]
    assert [e.ledger_id for e in config.endpoints()] == [b"lg", b"lg"]


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "guard.json"
    path.write_text(
        json.dumps({"mode": "periodic", "interval_seconds": 5, "peers": "x:1"})
    )
    config = load_guard_config(path, {"interval_seconds": 7, "auto_recover": None})
    assert config.mode == GuardMode.PERIODIC
    assert config.interval_seconds == 7
    assert config.auto_recover is True
    assert config.peers == ["x:1"]


@pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"interval_seconds": -1}'])
def test_unusable_config_files(tmp_path, content):
    path = tmp_path / "guard.json"
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_guard_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_guard_config(tmp_path / "absent.json")
