import logging
from contextlib import asynccontextmanager
from typing import AsyncIterator, NamedTuple, Optional

import anyio
from anyio.abc import ByteStream, SocketAttribute
from anyio.streams.buffered import BufferedByteReceiveStream

from apps.ledger.ledgerRepository import LedgerStore
from apps.peers.wireProtocol import (
    FRAME_HEADER,
    MAX_REQUEST_FRAME,
    decode_block_request,
    encode_block_reply,
    encode_frame,
)
from models.models import BlockReply, MessageType, ReplyStatus, WireMessage
from utils.errors import (
    BindFailure,
    BlockOutOfRange,
    LedgerIOError,
    PeerTransportError,
    UnreadableLayout,
)

logger = logging.getLogger(__name__)

_CLOSED = (
    anyio.IncompleteRead,
    anyio.EndOfStream,
    anyio.BrokenResourceError,
    anyio.ClosedResourceError,
)


def _reply(status: ReplyStatus, block: Optional[bytes] = None) -> WireMessage:
    return encode_block_reply(BlockReply(status=status, block=block))


class PeerServer:
    """Answers REQ_BLOCK with the locally stored bytes, valid or not."""

    def __init__(self, store: LedgerStore, ledger_id: bytes):
        self.store = store
        self.ledger_id = ledger_id

    def handle_message(self, msg: WireMessage) -> WireMessage:
        if msg.msg_type != MessageType.REQ_BLOCK:
            return _reply(ReplyStatus.ERROR)
        try:
            ledger_id, n = decode_block_request(msg.payload)
        except PeerTransportError:
            return _reply(ReplyStatus.ERROR)
        if ledger_id != self.ledger_id:
            return _reply(ReplyStatus.NOT_FOUND)
        try:
            return _reply(ReplyStatus.OK, self.store.read_block_bytes(n))
        except (BlockOutOfRange, UnreadableLayout):
            return _reply(ReplyStatus.NOT_FOUND)
        except LedgerIOError as exc:
            logger.warning("cannot serve block %d: %s", n, exc)
            return _reply(ReplyStatus.ERROR)

    async def serve_connection(self, stream: ByteStream) -> None:
        buffered = BufferedByteReceiveStream(stream)
        async with stream:
            while True:
                try:
                    header = await buffered.receive_exactly(FRAME_HEADER.size)
                    msg_type, length = FRAME_HEADER.unpack(header)
                    if length > MAX_REQUEST_FRAME:
                        await stream.send(encode_frame(_reply(ReplyStatus.ERROR)))
                        return
                    payload = await buffered.receive_exactly(length) if length else b""
                    msg = WireMessage(msg_type=msg_type, payload=payload)
                    reply = await anyio.to_thread.run_sync(self.handle_message, msg)
                    await stream.send(encode_frame(reply))
                except _CLOSED:
                    return


class ServerHandle(NamedTuple):
    host: str
    port: int

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"


def split_address(address: str):
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise BindFailure(f"listen address {address!r} is not host:port")
    return host, int(port)


@asynccontextmanager
async def serve(
    store: LedgerStore, listen_address: str, ledger_id: bytes
) -> AsyncIterator[ServerHandle]:
    """Serve blocks until the context exits; port 0 picks a free port."""
    host, port = split_address(listen_address)
    try:
        listener = await anyio.create_tcp_listener(local_host=host, local_port=port)
    except OSError as exc:
        raise BindFailure(f"cannot listen on {listen_address}: {exc}") from exc

    server = PeerServer(store, ledger_id)
    handle = ServerHandle(host, listener.extra(SocketAttribute.local_port))
    async with listener, anyio.create_task_group() as tg:
        tg.start_soon(listener.serve, server.serve_connection)
        logger.info("serving %s on %s", store.directory, handle.address)
        try:
            yield handle
        finally:
            tg.cancel_scope.cancel()


async def serve_forever(store: LedgerStore, listen_address: str, ledger_id: bytes):
    async with serve(store, listen_address, ledger_id):
        await anyio.sleep_forever()
