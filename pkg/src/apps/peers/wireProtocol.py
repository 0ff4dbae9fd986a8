"""Block-fetch wire protocol.

    frame      := msg_type:u8 | payload_len:u32 | payload
    REQ_BLOCK  := lid_len:u32 | ledger_id | number:u64
    RESP_BLOCK := status:u8 | block bytes (only when status is OK)
"""

import struct
from typing import Awaitable, Callable, Optional, Tuple

from models.models import BlockReply, MessageType, ReplyStatus, WireMessage
from utils.errors import PeerTransportError

FRAME_HEADER = struct.Struct("<BI")
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
MAX_REQUEST_FRAME = 64 * 1024

RecvExactly = Callable[[int], Awaitable[bytes]]


def encode_frame(msg: WireMessage) -> bytes:
    if len(msg.payload) >= 2**32:
        raise PeerTransportError("payload does not fit a frame")
    return FRAME_HEADER.pack(msg.msg_type, len(msg.payload)) + msg.payload


def decode_frame(raw: bytes) -> WireMessage:
    if len(raw) < FRAME_HEADER.size:
        raise PeerTransportError("truncated frame")
    msg_type, length = FRAME_HEADER.unpack_from(raw)
    payload = raw[FRAME_HEADER.size :]
    if len(payload) != length:
        raise PeerTransportError("truncated frame")
    return WireMessage(msg_type=msg_type, payload=payload)


async def read_frame(
    recv_exactly: RecvExactly, max_payload: Optional[int] = None
) -> WireMessage:
    msg_type, length = FRAME_HEADER.unpack(await recv_exactly(FRAME_HEADER.size))
    if max_payload is not None and length > max_payload:
        raise PeerTransportError(f"frame of {length} bytes exceeds {max_payload}")
    payload = await recv_exactly(length) if length else b""
    return WireMessage(msg_type=msg_type, payload=payload)


def encode_block_request(ledger_id: bytes, n: int) -> WireMessage:
    payload = U32.pack(len(ledger_id)) + ledger_id + U64.pack(n)
    return WireMessage(msg_type=MessageType.REQ_BLOCK, payload=payload)


def decode_block_request(payload: bytes) -> Tuple[bytes, int]:
    if len(payload) < U32.size:
        raise PeerTransportError("malformed block request")
    (lid_len,) = U32.unpack_from(payload)
    if len(payload) != U32.size + lid_len + U64.size:
        raise PeerTransportError("malformed block request")
    ledger_id = payload[U32.size : U32.size + lid_len]
    (number,) = U64.unpack_from(payload, U32.size + lid_len)
    return ledger_id, number


def encode_block_reply(reply: BlockReply) -> WireMessage:
    payload = bytes([reply.status])
    if reply.status == ReplyStatus.OK:
        payload += reply.block or b""
    return WireMessage(msg_type=MessageType.RESP_BLOCK, payload=payload)


def decode_block_reply(msg: WireMessage) -> BlockReply:
    if msg.msg_type != MessageType.RESP_BLOCK or not msg.payload:
        raise PeerTransportError("unexpected reply frame")
    try:
        status = ReplyStatus(msg.payload[0])
    except ValueError:
        raise PeerTransportError(f"unknown reply status {msg.payload[0]}") from None
    if status == ReplyStatus.OK:
        return BlockReply(status=status, block=msg.payload[1:])
    return BlockReply(status=status)
