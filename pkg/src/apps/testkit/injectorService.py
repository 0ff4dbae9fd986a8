"""Recorded, reversible corruption of block files.

Regions inside one record (prefix + block):

    length_prefix  the 4-byte record prefix
    header         header_len field + 72-byte header
    data           data_len field + data section
    metadata       meta_len + oid_len + orderer_id + sig_len + signature

The validity flags at the end of the metadata section are covered by neither
the data hash nor the orderer signature; only their 0/1 range is checked, so
no region includes them.
"""

import logging
import random
import struct
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

from apps.ledger.ledgerRepository import LedgerStore, file_name
from models.models import (
    ByteEdit,
    Distribution,
    InjectionMode,
    InjectionRecord,
    Region,
)
from utils.errors import BlockOutOfRange, InjectionError

logger = logging.getLogger(__name__)

U32 = struct.Struct("<I")
MAX_RESIZE = 16


def region_span(record: bytes, region: Region) -> Tuple[int, int]:
    """[start, end) of a region, relative to the start of the record."""
    try:
        span = _span(record, region)
    except struct.error:
        span = None
    if span is None or span[1] > len(record):
        raise InjectionError(f"cannot locate the {region.value} region")
    return span


def _span(record: bytes, region: Region) -> Tuple[int, int]:
    if region == Region.LENGTH_PREFIX:
        return 0, 4
    (header_len,) = U32.unpack_from(record, 4)
    if region == Region.HEADER:
        return 4, 8 + header_len
    data_at = 8 + header_len
    (data_len,) = U32.unpack_from(record, data_at)
    if region == Region.DATA:
        return data_at, data_at + 4 + data_len
    meta_at = data_at + 4 + data_len
    (oid_len,) = U32.unpack_from(record, meta_at + 4)
    sig_at = meta_at + 8 + oid_len
    (sig_len,) = U32.unpack_from(record, sig_at)
    return meta_at, sig_at + 4 + sig_len


def _plan_edits(
    record: bytes, file_offset: int, rec: InjectionRecord
) -> List[ByteEdit]:
    rng = random.Random(rec.rng_seed)
    start, end = region_span(record, rec.region)
    if end <= start:
        raise InjectionError(f"{rec.region.value} region of block {rec.block} is empty")
    edits: List[Tuple[int, bytes, bytes]] = []
    resized = 0

    if rec.mode == InjectionMode.BITFLIP:
        pos = rng.randrange(start, end)
        flipped = record[pos] ^ (1 << rng.randrange(8))
        edits.append((pos, record[pos : pos + 1], bytes([flipped])))
    elif rec.mode == InjectionMode.ZERO:
        edits.append((start, record[start:end], bytes(end - start)))
    elif rec.mode == InjectionMode.TRUNCATE:
        k = rng.randint(1, min(MAX_RESIZE, end - start))
        edits.append((end - k, record[end - k : end], b""))
        resized = -k
    elif rec.mode == InjectionMode.GROW:
        k = rng.randint(1, MAX_RESIZE)
        pos = rng.randint(start, end)
        edits.append((pos, b"", rng.randbytes(k)))
        resized = k

    if resized and rec.region != Region.LENGTH_PREFIX:
        (length,) = U32.unpack_from(record, 0)
        edits.append((0, record[:4], U32.pack(length + resized)))

    return [
        ByteEdit(
            file_id=0,
            offset=file_offset + pos,
            before_hex=before.hex(),
            after_hex=after.hex(),
        )
        for pos, before, after in sorted(edits, key=lambda e: e[0], reverse=True)
    ]


def _apply(path: Path, edits: Sequence[ByteEdit], undo: bool = False) -> None:
    data = bytearray(path.read_bytes())
    for edit in edits:
        expect = bytes.fromhex(edit.after_hex if undo else edit.before_hex)
        put = bytes.fromhex(edit.before_hex if undo else edit.after_hex)
        if bytes(data[edit.offset : edit.offset + len(expect)]) != expect:
            raise InjectionError(f"{path.name} changed at byte {edit.offset}")
        data[edit.offset : edit.offset + len(expect)] = put
    path.write_bytes(bytes(data))


def inject(ledger_dir: Path, record: InjectionRecord) -> InjectionRecord:
    """Corrupt one block; the returned record carries the resolved byte edits."""
    store = LedgerStore.open(ledger_dir, read_only=True)
    if record.block >= store.height:
        raise BlockOutOfRange(record.block, store.height)
    loc = store.location(record.block)
    if loc is None:
        raise InjectionError(f"block {record.block} is not framed on disk")
    path = store.file_path(loc.file_id)
    with open(path, "rb") as f:
        f.seek(loc.offset)
        raw = f.read(4 + loc.length)
    edits = [
        edit.model_copy(update={"file_id": loc.file_id})
        for edit in _plan_edits(raw, loc.offset, record)
    ]
    _apply(path, edits)
    logger.info(
        "injected %s into the %s of block %d",
        record.mode.value,
        record.region.value,
        record.block,
    )
    return record.model_copy(update={"edits": edits})


def inject_many(
    ledger_dir: Path, records: Iterable[InjectionRecord]
) -> List[InjectionRecord]:
    """Highest block first so earlier edits never shift later targets."""
    applied = [
        inject(ledger_dir, rec)
        for rec in sorted(records, key=lambda r: r.block, reverse=True)
    ]
    return sorted(applied, key=lambda r: r.block)


def revert(ledger_dir: Path, record: InjectionRecord) -> None:
    if not record.edits:
        raise InjectionError("record has no resolved edits to revert")
    path = Path(ledger_dir) / file_name(record.edits[0].file_id)
    _apply(path, list(reversed(record.edits)), undo=True)


def plan_injections(
    height: int,
    count: int,
    distribution: Distribution = Distribution.UNIFORM,
    modes: Sequence[InjectionMode] = tuple(InjectionMode),
    regions: Sequence[Region] = tuple(Region),
    seed: int = 0,
) -> List[InjectionRecord]:
    if not 0 < count <= height:
        raise InjectionError(f"cannot corrupt {count} of {height} blocks")
    rng = random.Random(seed)
    if distribution == Distribution.CLUSTERED:
        first = rng.randrange(0, height - count + 1)
        blocks = list(range(first, first + count))
    else:
        blocks = sorted(rng.sample(range(height), count))
    return [
        InjectionRecord(
            block=n,
            region=rng.choice(list(regions)),
            mode=rng.choice(list(modes)),
            rng_seed=rng.randrange(2**32),
        )
        for n in blocks
    ]
