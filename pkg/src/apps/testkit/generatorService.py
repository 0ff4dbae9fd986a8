import json
import logging
import random
from pathlib import Path
from typing import List, Tuple

from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn

from apps.blocks.blockCodec import compute_data_hash, encode_header, header_hash
from apps.crypto.cryptoService import TrustStore, generate_keypair, sign
from apps.crypto.keysRepository import KeysRepository, save_trust_store
from apps.ledger.ledgerRepository import LedgerStore
from models.models import (
    ZERO_HASH,
    Block,
    BlockHeader,
    BlockMetadata,
    Endorsement,
    GenParams,
    KeyPair,
    Transaction,
)
from utils.errors import NonEmptyOutput
from utils.logging_utils import stderr_console

logger = logging.getLogger(__name__)

TRUST_FILE = "truststore.json"


def _config_transaction(params: GenParams, endorsers: List[str]) -> Transaction:
    config = {
        "ledger_id": params.ledger_id,
        "orderer": params.orderer_id,
        "endorsers": endorsers,
    }
    payload = json.dumps(config, sort_keys=True).encode()
    return Transaction(payload=payload)


def _transaction(
    rng: random.Random, size: int, endorsers: List[Tuple[bytes, KeyPair]]
) -> Transaction:
    payload = rng.randbytes(size)
    return Transaction(
        payload=payload,
        endorsements=[
            Endorsement(endorser_id=eid, signature=sign(kp, payload))
            for eid, kp in endorsers
        ],
    )


def generate_ledger(
    params: GenParams, out_dir: Path, keys_dir: Path
) -> Tuple[LedgerStore, TrustStore]:
    """Seeded synthetic ledger plus the keys and trust store that sign it."""
    out_dir, keys_dir = Path(out_dir), Path(keys_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise NonEmptyOutput(f"output directory {out_dir} is not empty")
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = random.Random(params.rng_seed)
    keys = KeysRepository(keys_dir)
    orderer = generate_keypair(rng.randbytes(32))
    keys.save_keypair(params.orderer_id, orderer)
    endorsers = []
    for i in range(params.num_endorsers):
        name = f"peer{i}"
        kp = generate_keypair(rng.randbytes(32))
        keys.save_keypair(name, kp)
        endorsers.append((name.encode(), kp))

    orderer_id = params.orderer_id.encode()
    trust = TrustStore({orderer_id: orderer.public_key})
    save_trust_store(keys_dir / TRUST_FILE, trust)

    store = LedgerStore.open(
        out_dir, max_file_size=params.max_file_size, trust=trust, fsync=False
    )
    previous = ZERO_HASH
    progress = Progress(
        TextColumn("generating"),
        BarColumn(),
        MofNCompleteColumn(),
        console=stderr_console,
        transient=True,
    )
    with progress:
        task = progress.add_task("blocks", total=params.num_blocks)
        for n in range(params.num_blocks):
            if n == 0:
                txs = [_config_transaction(params, [e.decode() for e, _ in endorsers])]
            else:
                txs = [
                    _transaction(rng, params.tx_size_bytes, endorsers)
                    for _ in range(params.txs_per_block)
                ]
            header = BlockHeader(
                number=n, previous_hash=previous, data_hash=compute_data_hash(txs)
            )
            block = Block(
                header=header,
                data=txs,
                metadata=BlockMetadata(
                    orderer_id=orderer_id,
                    signature=sign(orderer, encode_header(header)),
                    validity_flags=bytes(len(txs)),
                ),
            )
            if params.blocks_per_file and n and n % params.blocks_per_file == 0:
                store.seal_current_file()
            store.append_block(block)
            previous = header_hash(header)
            progress.advance(task)

    store.sync()
    store.fsync = True
    logger.info(
        "generated %d blocks in %d file(s) under %s",
        store.height,
        len(store.files()),
        out_dir,
    )
    return store, trust
