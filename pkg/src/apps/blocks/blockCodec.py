"""Canonical block encoding.

    block    := header_len:u32 | header | data_len:u32 | data | meta_len:u32 | meta
    header   := number:u64 | previous_hash:32B | data_hash:32B
    data     := tx_count:u32 | tx*
    tx       := payload_len:u32 | payload | endo_count:u32 | endo*
    endo     := id_len:u32 | endorser_id | sig_len:u32 | signature
    meta     := oid_len:u32 | orderer_id | sig_len:u32 | signature
                | flags_len:u32 | validity_flags

All integers are little-endian.
"""

import hashlib
import struct
from typing import List, NamedTuple, Optional, Tuple

from models.models import (
    Block,
    BlockHeader,
    BlockMetadata,
    Endorsement,
    Transaction,
)
from utils.errors import EncodingOverflow, MalformedBlock

HEADER_SIZE = 72
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
HEADER = struct.Struct("<Q32s32s")
U32_MAX = 2**32 - 1


def _u32(value: int) -> bytes:
    if value > U32_MAX:
        raise EncodingOverflow(f"length {value} does not fit in 32 bits")
    return U32.pack(value)


def _lp(value: bytes) -> bytes:
    return _u32(len(value)) + value


def encode_header(h: BlockHeader) -> bytes:
    return HEADER.pack(h.number, h.previous_hash, h.data_hash)


def encode_data(data: List[Transaction]) -> bytes:
    parts = [_u32(len(data))]
    for tx in data:
        parts.append(_lp(tx.payload))
        parts.append(_u32(len(tx.endorsements)))
        for endo in tx.endorsements:
            parts.append(_lp(endo.endorser_id))
            parts.append(_lp(endo.signature))
    return b"".join(parts)


def encode_metadata(meta: BlockMetadata) -> bytes:
    return (
        _lp(meta.orderer_id) + _lp(meta.signature) + _lp(meta.validity_flags)
    )


def encode_block(b: Block) -> bytes:
    return b"".join(
        (
            _lp(encode_header(b.header)),
            _lp(encode_data(b.data)),
            _lp(encode_metadata(b.metadata)),
        )
    )


def header_hash(h: BlockHeader) -> bytes:
    return hashlib.sha256(encode_header(h)).digest()


def compute_data_hash(data: List[Transaction]) -> bytes:
    return hashlib.sha256(encode_data(data)).digest()


class _Reader:
    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf: memoryview, start: int = 0, end: Optional[int] = None):
        self.buf = buf
        self.pos = start
        self.end = len(buf) if end is None else end

    def u32(self) -> int:
        if self.pos + 4 > self.end:
            raise MalformedBlock(f"truncated length field at byte {self.pos}")
        (value,) = U32.unpack_from(self.buf, self.pos)
        self.pos += 4
        return value

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MalformedBlock(
                f"field of {n} bytes at byte {self.pos} runs past its section"
            )
        chunk = bytes(self.buf[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def section(self) -> "_Reader":
        n = self.u32()
        if self.pos + n > self.end:
            raise MalformedBlock(f"section of {n} bytes runs past the block")
        sub = _Reader(self.buf, self.pos, self.pos + n)
        self.pos += n
        return sub

    def done(self, what: str) -> None:
        if self.pos != self.end:
            raise MalformedBlock(f"{self.end - self.pos} trailing bytes in {what}")


class Sections(NamedTuple):
    header: Tuple[int, int]
    data: Tuple[int, int]
    metadata: Tuple[int, int]


def decode_header(raw: bytes) -> BlockHeader:
    """Parse only the header of an encoded block."""
    r = _Reader(memoryview(raw))
    section = r.section()
    if section.end - section.pos != HEADER_SIZE:
        raise MalformedBlock("header section is not 72 bytes")
    number, previous_hash, data_hash = HEADER.unpack_from(section.buf, section.pos)
    return BlockHeader.model_construct(
        number=number, previous_hash=previous_hash, data_hash=data_hash
    )


def _decode(raw: bytes) -> Tuple[Block, Sections]:
    r = _Reader(memoryview(raw))

    head = r.section()
    if head.end - head.pos != HEADER_SIZE:
        raise MalformedBlock("header section is not 72 bytes")
    number, previous_hash, data_hash = HEADER.unpack_from(head.buf, head.pos)
    header = BlockHeader.model_construct(
        number=number, previous_hash=previous_hash, data_hash=data_hash
    )

    data = r.section()
    data_span = (data.pos, data.end)
    txs = []
    for _ in range(data.u32()):
        payload = data.take(data.u32())
        if not payload:
            raise MalformedBlock("empty transaction payload")
        endorsements = []
        for _ in range(data.u32()):
            endorser_id = data.take(data.u32())
            signature = data.take(data.u32())
            endorsements.append(
                Endorsement.model_construct(
                    endorser_id=endorser_id, signature=signature
                )
            )
        txs.append(
            Transaction.model_construct(payload=payload, endorsements=endorsements)
        )
    data.done("data section")

    meta = r.section()
    meta_span = (meta.pos, meta.end)
    orderer_id = meta.take(meta.u32())
    signature = meta.take(meta.u32())
    flags = meta.take(meta.u32())
    meta.done("metadata section")
    if len(flags) != len(txs):
        raise MalformedBlock(
            f"{len(flags)} validity flags for {len(txs)} transactions"
        )
    if flags.strip(b"\x00\x01"):
        raise MalformedBlock("validity flags must be 0 or 1")
    r.done("block")

    block = Block.model_construct(
        header=header,
        data=txs,
        metadata=BlockMetadata.model_construct(
            orderer_id=orderer_id, signature=signature, validity_flags=flags
        ),
    )
    return block, Sections((4, 4 + HEADER_SIZE), data_span, meta_span)


def decode_block(raw: bytes) -> Block:
    return _decode(raw)[0]


def decode_with_sections(raw: bytes) -> Tuple[Block, Sections]:
    """Decode and also return the byte spans of the three sections."""
    return _decode(raw)
