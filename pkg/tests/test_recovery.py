import pytest

from apps.ledger.ledgerRepository import INDEX_NAME, LedgerStore
from apps.peers.peerClient import PeerClient
from apps.peers.peerServer import PeerServer
from apps.peers.transports import SimulatedNetwork
from apps.peers.wireProtocol import encode_block_reply
from apps.recovery.recoveryService import (
    RecoveryService,
    candidate_problem,
    fetch_valid_block,
    recover,
)
from apps.testkit.injectorService import inject
from apps.validator.validatorService import scan
from models.models import (
    BlockReply,
    ChainContext,
    CorruptionFinding,
    CorruptionReport,
    Fault,
    FaultKind,
    FindingKind,
    InjectionMode,
    InjectionRecord,
    PeerEndpoint,
    PeerStats,
    Region,
    ReplyStatus,
)
from utils.errors import NoValidSource

LEDGER_ID = b"ledgerguard"
PREVIOUS_HASH_AT = 4 + 8
PAYLOAD_AT = 4 + 72 + 4 + 4 + 4


def _ok(raw):
    return encode_block_reply(BlockReply(status=ReplyStatus.OK, block=raw))


def _context(store, n):
    return ChainContext(
        predecessor=store.read_header(n - 1), successor=store.read_header(n + 1)
    )


def _pristine(network):
    return network.servers["peer-a"].store


async def test_first_honest_peer_answers_alone(ledger, network, endpoints, client):
    store, trust = ledger
    raw = await fetch_valid_block(5, endpoints, trust, _context(store, 5), client)
    assert raw == store.read_block_bytes(5)
    assert network.requests["peer-a"] == 1
    assert network.requests["peer-b"] == 0


async def test_wrong_number_is_rejected_and_next_peer_asked(
    ledger, network, endpoints, client
):
    store, trust = ledger
    peer = _pristine(network)
    network.script(
        "peer-a",
        [
            Fault(
                kind=FaultKind.SUBSTITUTE,
                substitute=lambda n: _ok(peer.read_block_bytes(n + 1)),
            )
        ],
    )
    stats = {}
    raw = await fetch_valid_block(5, endpoints, trust, _context(store, 5), client, stats)
    assert raw == store.read_block_bytes(5)
    assert stats["peer-a"] == PeerStats(invalid=1)
    assert stats["peer-b"] == PeerStats(served=1)


async def test_all_peers_unreachable(ledger, network, endpoints, client):
    store, trust = ledger
    for address in network.addresses():
        network.always(address, Fault(kind=FaultKind.UNREACHABLE))
    stats = {}
    with pytest.raises(NoValidSource) as exc:
        await fetch_valid_block(5, endpoints, trust, _context(store, 5), client, stats)
    assert exc.value.reasons == [("peer-a", "unreachable"), ("peer-b", "unreachable")]
    assert all(s.unreachable == 1 for s in stats.values())


async def test_missing_block_everywhere(ledger, endpoints, client):
    _, trust = ledger
    stats = {}
    with pytest.raises(NoValidSource):
        await fetch_valid_block(12, endpoints, trust, ChainContext(), client, stats)
    assert [s.not_found for s in stats.values()] == [1, 1]


def test_candidate_must_fit_its_neighbours(ledger):
    store, trust = ledger
    raw = store.read_block_bytes(5)
    assert candidate_problem(raw, 5, trust, _context(store, 5)) is None
    wrong_prev = ChainContext(predecessor=store.read_header(3))
    assert "predecessor" in candidate_problem(raw, 5, trust, wrong_prev)
    wrong_next = ChainContext(successor=store.read_header(7))
    assert "successor" in candidate_problem(raw, 5, trust, wrong_next)
    assert "number" in candidate_problem(raw, 6, trust, ChainContext())


async def test_payload_corruption_is_restored(
    ledger, network, endpoints, client, flip_byte, block_files
):
    store, trust = ledger
    flip_byte(store, 5, PAYLOAD_AT)
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == [5]
    assert outcome.failed == []
    assert outcome.peer_stats["peer-a"].served == 1
    assert scan(store, trust).clean
    assert block_files(store.directory) == block_files(_pristine(network).directory)


async def test_grown_block_rewrites_the_file_tail(
    ledger, network, endpoints, client, block_files
):
    store, trust = ledger
    inject(
        store.directory,
        InjectionRecord(block=5, region=Region.DATA, mode=InjectionMode.GROW, rng_seed=3),
    )
    store = LedgerStore.open(store.directory, trust=trust)
    report = scan(store, trust)
    assert report.implicated() == [5]
    outcome = await recover(store, report, endpoints, trust, client)
    assert outcome.recovered == [5]
    assert scan(LedgerStore.open(store.directory, trust=trust), trust).clean
    pristine = _pristine(network).directory
    assert block_files(store.directory) == block_files(pristine)
    assert (store.directory / INDEX_NAME).read_bytes() == (
        pristine / INDEX_NAME
    ).read_bytes()


async def test_broken_length_prefix_is_rewritten(
    ledger, network, endpoints, client, block_files
):
    store, trust = ledger
    inject(
        store.directory,
        InjectionRecord(block=5, region=Region.LENGTH_PREFIX, mode=InjectionMode.ZERO),
    )
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == [5]
    assert block_files(store.directory) == block_files(_pristine(network).directory)


async def test_unindexed_tail_is_fetched_and_respliced(
    ledger, network, endpoints, client, block_files
):
    store, trust = ledger
    inject(
        store.directory,
        InjectionRecord(block=5, region=Region.LENGTH_PREFIX, mode=InjectionMode.ZERO),
    )
    store = LedgerStore.open(store.directory, trust=trust)
    store.rebuild_index()
    report = scan(store, trust)
    assert report.implicated() == [5, 6, 7]
    outcome = await recover(store, report, endpoints, trust, client)
    assert outcome.recovered == [5, 6, 7]
    assert not store.has_gaps()
    assert block_files(store.directory) == block_files(_pristine(network).directory)


async def test_lost_index_keeps_the_blocks_behind_a_broken_frame(
    ledger, network, endpoints, client, block_files
):
    store, trust = ledger
    inject(
        store.directory,
        InjectionRecord(block=9, region=Region.LENGTH_PREFIX, mode=InjectionMode.ZERO),
    )
    (store.directory / INDEX_NAME).unlink()
    store = LedgerStore.open(store.directory, trust=trust)
    assert store.height == 12
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == [9, 10, 11]
    assert store.height == 12
    assert block_files(store.directory) == block_files(_pristine(network).directory)


async def test_unaccounted_bytes_are_never_truncated(
    ledger, endpoints, client, block_files
):
    store, trust = ledger
    for n in (11, 10, 9):
        inject(
            store.directory,
            InjectionRecord(block=n, region=Region.LENGTH_PREFIX, mode=InjectionMode.ZERO),
        )
    (store.directory / INDEX_NAME).unlink()
    before = block_files(store.directory)
    store = LedgerStore.open(store.directory, trust=trust)
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == []
    assert [f.block for f in outcome.failed] == [9]
    assert block_files(store.directory) == before


async def test_tail_blocks_missing_from_the_report_are_pulled(
    ledger, network, endpoints, client, block_files
):
    store, trust = ledger
    inject(
        store.directory,
        InjectionRecord(block=5, region=Region.LENGTH_PREFIX, mode=InjectionMode.ZERO),
    )
    store = LedgerStore.open(store.directory, trust=trust)
    store.rebuild_index()
    partial = CorruptionReport(
        height=12,
        findings=[CorruptionFinding(kind=FindingKind.MALFORMED, blocks=[5])],
    )
    outcome = await recover(store, partial, endpoints, trust, client)
    assert outcome.recovered == [5, 6, 7]
    assert block_files(store.directory) == block_files(_pristine(network).directory)


async def test_link_partners_are_not_replaced(
    ledger, network, endpoints, client, flip_byte, block_files
):
    store, trust = ledger
    flip_byte(store, 6, PREVIOUS_HASH_AT)
    report = scan(store, trust)
    assert report.implicated() == [5, 6, 7]
    outcome = await recover(store, report, endpoints, trust, client)
    assert outcome.recovered == [6]
    assert outcome.failed == []
    assert block_files(store.directory) == block_files(_pristine(network).directory)


async def test_clean_report_touches_nothing(ledger, network, endpoints, client, block_files):
    store, trust = ledger
    before = block_files(store.directory)
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == [] and outcome.failed == []
    assert sum(network.requests.values()) == 0
    assert block_files(store.directory) == before


async def test_second_recovery_has_nothing_to_do(ledger, endpoints, client, flip_byte):
    store, trust = ledger
    flip_byte(store, 9, PAYLOAD_AT)
    await recover(store, scan(store, trust), endpoints, trust, client)
    again = await recover(store, scan(store, trust), endpoints, trust, client)
    assert again.recovered == [] and again.failed == []


async def test_without_peers_every_block_fails(ledger, client, flip_byte, block_files):
    store, trust = ledger
    flip_byte(store, 5, PAYLOAD_AT)
    before = block_files(store.directory)
    outcome = await recover(store, scan(store, trust), [], trust, client)
    assert [(f.block, f.reason) for f in outcome.failed] == [(5, "no peers configured")]
    assert block_files(store.directory) == before


async def test_corrupt_everywhere_leaves_local_bytes(
    ledger, network, endpoints, client, flip_byte, block_files
):
    store, trust = ledger
    for peer in network.servers.values():
        flip_byte(peer.store, 5, PAYLOAD_AT)
    flip_byte(store, 5, PAYLOAD_AT, mask=0x02)
    before = block_files(store.directory)
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == []
    assert [f.block for f in outcome.failed] == [5]
    assert all(s.invalid == 1 for s in outcome.peer_stats.values())
    assert block_files(store.directory) == before


async def test_timed_out_peer_is_skipped(ledger, network, endpoints, client, flip_byte):
    store, trust = ledger
    network.always("peer-a", Fault(kind=FaultKind.DROP))
    flip_byte(store, 2, PAYLOAD_AT)
    outcome = await recover(store, scan(store, trust), endpoints, trust, client)
    assert outcome.recovered == [2]
    assert outcome.peer_stats["peer-a"].unreachable == 1
    assert outcome.peer_stats["peer-b"].served == 1


def _flipped(raw):
    out = bytearray(raw)
    out[PAYLOAD_AT] ^= 0x01
    return bytes(out)


@pytest.mark.parametrize("attack", ["wrong_number", "bit_flip", "truncated_frame"])
async def test_adversarial_peer_never_commits(make_ledger, flip_byte, block_files, attack):
    store, trust = make_ledger("local")
    evil, _ = make_ledger("evil")
    honest, _ = make_ledger("honest")
    network = SimulatedNetwork()
    network.register("evil", PeerServer(evil, LEDGER_ID))
    network.register("honest", PeerServer(honest, LEDGER_ID))
    if attack == "wrong_number":
        fault = Fault(
            kind=FaultKind.SUBSTITUTE,
            substitute=lambda n: _ok(evil.read_block_bytes((n + 1) % evil.height)),
        )
    elif attack == "bit_flip":
        fault = Fault(
            kind=FaultKind.SUBSTITUTE,
            substitute=lambda n: _ok(_flipped(evil.read_block_bytes(n))),
        )
    else:
        fault = Fault(kind=FaultKind.TRUNCATE, keep_bytes=3)
    network.always("evil", fault)
    peers = [
        PeerEndpoint(address="evil", ledger_id=LEDGER_ID),
        PeerEndpoint(address="honest", ledger_id=LEDGER_ID),
    ]
    for n in (2, 5, 9):
        flip_byte(store, n, PAYLOAD_AT)

    async with PeerClient(transport=network, timeout=0.5) as client:
        outcome = await recover(store, scan(store, trust), peers, trust, client)

    assert outcome.recovered == [2, 5, 9]
    assert outcome.peer_stats["evil"].served == 0
    rejected = outcome.peer_stats["evil"]
    assert rejected.invalid + rejected.unreachable >= 1
    assert block_files(store.directory) == block_files(honest.directory)


async def test_recovery_service_uses_its_peers(
    ledger, network, endpoints, client, flip_byte, block_files
):
    store, trust = ledger
    flip_byte(store, 6, PAYLOAD_AT)
    service = RecoveryService(store, trust, endpoints, client)
    outcome = await service.recover(scan(store, trust))
    assert outcome.recovered == [6]
    assert block_files(store.directory) == block_files(_pristine(network).directory)
    again = await service.recover(scan(store, trust))
    assert again.recovered == [] and again.failed == []
