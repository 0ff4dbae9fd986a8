from pathlib import Path

import pytest

from apps.ledger.ledgerRepository import LedgerStore
from apps.peers.peerClient import PeerClient
from apps.peers.peerServer import PeerServer
from apps.peers.transports import SimulatedNetwork
from apps.testkit.generatorService import TRUST_FILE, generate_ledger
from models.models import GenParams, PeerEndpoint
from utils.logging_utils import configure_logging

LEDGER_ID = b"ledgerguard"

# 12 blocks in three files of four; blocks 1.. carry three 64-byte transactions
SMALL_LEDGER = dict(
    num_blocks=12,
    txs_per_block=3,
    tx_size_bytes=64,
    num_endorsers=1,
    rng_seed=7,
    blocks_per_file=4,
)


@pytest.fixture(scope="session", autouse=True)
def logging_setup():
    configure_logging("info")


@pytest.fixture
def make_ledger(tmp_path):
    """Seeded ledger factory; equal parameters give byte-identical ledgers."""

    def _make(name="ledger", **overrides):
        params = GenParams(**{**SMALL_LEDGER, **overrides})
        return generate_ledger(params, tmp_path / name, tmp_path / f"{name}-keys")

    return _make


@pytest.fixture
def ledger(make_ledger):
    return make_ledger()


@pytest.fixture
def trust_file(ledger, tmp_path):
    return tmp_path / "ledger-keys" / TRUST_FILE


@pytest.fixture
def network(make_ledger):
    """Two honest in-process peers holding the same seeded ledger."""
    net = SimulatedNetwork()
    for name in ("peer-a", "peer-b"):
        store, _ = make_ledger(name)
        net.register(
            name,
            PeerServer(LedgerStore.open(store.directory, read_only=True), LEDGER_ID),
        )
    return net


@pytest.fixture
def endpoints(network):
    return [PeerEndpoint(address=a, ledger_id=LEDGER_ID) for a in network.addresses()]


@pytest.fixture
async def client(network):
    async with PeerClient(transport=network, timeout=0.5) as c:
        yield c


@pytest.fixture
def block_files():
    def _read(directory):
        return {
            p.name: p.read_bytes() for p in sorted(Path(directory).glob("blockfile_*"))
        }

    return _read


@pytest.fixture
def flip_byte():
    """XOR one byte of block n, `at` counted from the start of the block."""

    def _flip(store, n, at, mask=0x01):
        loc = store.location(n)
        with open(store.file_path(loc.file_id), "r+b") as f:
            f.seek(loc.offset + 4 + at)
            value = f.read(1)[0]
            f.seek(loc.offset + 4 + at)
            f.write(bytes([value ^ mask]))

    return _flip
