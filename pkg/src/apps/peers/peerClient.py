import logging
from typing import Dict, Optional

import anyio

from apps.peers.transports import Connection, TcpTransport, Transport
from apps.peers.wireProtocol import (
    decode_block_reply,
    encode_block_request,
    encode_frame,
    read_frame,
)
from models.models import BlockReply, PeerEndpoint
from utils.config import FETCH_TIMEOUT_SECONDS
from utils.errors import PeerTransportError

logger = logging.getLogger(__name__)


class PeerClient:
    """One outstanding request per connection; connections are reused."""

    def __init__(
        self,
        transport: Optional[Transport] = None,
        timeout: float = FETCH_TIMEOUT_SECONDS,
    ):
        self.transport = transport or TcpTransport()
        self.timeout = timeout
        self._connections: Dict[str, Connection] = {}

    async def request_block(self, endpoint: PeerEndpoint, n: int) -> BlockReply:
        """The reply bytes are returned unvalidated."""
        try:
            with anyio.fail_after(self.timeout):
                return await self._exchange(endpoint, n)
        except TimeoutError:
            await self._drop(endpoint.address)
            raise PeerTransportError("timeout") from None
        except PeerTransportError:
            await self._drop(endpoint.address)
            raise

    async def _exchange(self, endpoint: PeerEndpoint, n: int) -> BlockReply:
        conn = self._connections.get(endpoint.address)
        if conn is None:
            conn = await self.transport.connect(endpoint.address)
            self._connections[endpoint.address] = conn
        await conn.send(encode_frame(encode_block_request(endpoint.ledger_id, n)))
        return decode_block_reply(await read_frame(conn.receive_exactly))

    async def _drop(self, address: str) -> None:
        conn = self._connections.pop(address, None)
        if conn is not None:
            with anyio.CancelScope(shield=True):
                try:
                    await conn.aclose()
                except Exception:
                    logger.debug("closing connection to %s failed", address)

    async def aclose(self) -> None:
        for address in list(self._connections):
            await self._drop(address)

    async def __aenter__(self) -> "PeerClient":
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.aclose()
