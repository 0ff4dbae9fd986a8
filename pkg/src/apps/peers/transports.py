import logging
from collections import defaultdict, deque
from typing import Deque, Dict, Iterable, List, Optional, Protocol

import anyio
from anyio.abc import SocketStream
from anyio.streams.buffered import BufferedByteReceiveStream

from apps.peers.peerServer import PeerServer
from apps.peers.wireProtocol import (
    decode_block_request,
    decode_frame,
    encode_frame,
)
from models.models import Fault, FaultKind
from utils.errors import PeerTransportError

logger = logging.getLogger(__name__)


class Connection(Protocol):
    async def send(self, data: bytes) -> None: ...

    async def receive_exactly(self, n: int) -> bytes: ...

    async def aclose(self) -> None: ...


class Transport(Protocol):
    async def connect(self, address: str) -> Connection: ...


# --- TCP ---------------------------------------------------------------------


class TcpConnection:
    def __init__(self, stream: SocketStream):
        self._stream = stream
        self._buffered = BufferedByteReceiveStream(stream)

    async def send(self, data: bytes) -> None:
        try:
            await self._stream.send(data)
        except (anyio.BrokenResourceError, anyio.ClosedResourceError, OSError):
            raise PeerTransportError("connection lost") from None

    async def receive_exactly(self, n: int) -> bytes:
        try:
            return await self._buffered.receive_exactly(n)
        except (
            anyio.IncompleteRead,
            anyio.EndOfStream,
            anyio.BrokenResourceError,
            anyio.ClosedResourceError,
            OSError,
        ):
            raise PeerTransportError("truncated frame") from None

    async def aclose(self) -> None:
        await self._stream.aclose()


class TcpTransport:
    async def connect(self, address: str) -> Connection:
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise PeerTransportError(f"bad address {address!r}")
        try:
            stream = await anyio.connect_tcp(host, int(port))
        except OSError as exc:
            raise PeerTransportError(f"connect failed: {exc.strerror or exc}") from exc
        return TcpConnection(stream)


# --- in-process network with scripted faults -----------------------------------


class SimulatedConnection:
    """Feeds each request frame straight to a PeerServer, then applies a fault."""

    def __init__(self, network: "SimulatedNetwork", address: str):
        self._network = network
        self._address = address
        self._inbox = bytearray()
        self._eof = False
        self._delay = 0.0
        self._closed = False

    async def send(self, data: bytes) -> None:
        if self._closed:
            raise PeerTransportError("connection lost")
        fault = self._network.next_fault(self._address)
        if fault is not None and fault.kind == FaultKind.UNREACHABLE:
            raise PeerTransportError("unreachable")
        server = self._network.servers[self._address]
        request = decode_frame(data)
        reply = encode_frame(server.handle_message(request))
        self._network.requests[self._address] += 1

        if fault is None:
            self._inbox += reply
        elif fault.kind == FaultKind.DELAY:
            self._delay = fault.seconds
            self._inbox += reply
        elif fault.kind == FaultKind.TRUNCATE:
            self._inbox += reply[: fault.keep_bytes]
            self._eof = True
        elif fault.kind == FaultKind.SUBSTITUTE:
            _, n = decode_block_request(request.payload)
            self._inbox += encode_frame(fault.substitute(n))
        # DROP: the reply never arrives

    async def receive_exactly(self, n: int) -> bytes:
        if self._delay:
            delay, self._delay = self._delay, 0.0
            await anyio.sleep(delay)
        if len(self._inbox) >= n:
            chunk = bytes(self._inbox[:n])
            del self._inbox[:n]
            return chunk
        if self._eof or self._closed:
            raise PeerTransportError("truncated frame")
        await anyio.sleep_forever()

    async def aclose(self) -> None:
        self._closed = True


class SimulatedNetwork:
    """Deterministic stand-in for TCP; addresses are arbitrary strings."""

    def __init__(self):
        self.servers: Dict[str, PeerServer] = {}
        self.requests: Dict[str, int] = defaultdict(int)
        self._scripts: Dict[str, Deque[Optional[Fault]]] = {}
        self._standing: Dict[str, Fault] = {}

    def register(self, address: str, server: PeerServer) -> None:
        self.servers[address] = server

    def script(self, address: str, faults: Iterable[Optional[Fault]]) -> None:
        """Faults applied to the next requests in order, None meaning honest."""
        self._scripts[address] = deque(faults)

    def always(self, address: str, fault: Optional[Fault]) -> None:
        if fault is None:
            self._standing.pop(address, None)
        else:
            self._standing[address] = fault

    def next_fault(self, address: str) -> Optional[Fault]:
        script = self._scripts.get(address)
        if script:
            return script.popleft()
        return self._standing.get(address)

    async def connect(self, address: str) -> Connection:
        if address not in self.servers:
            raise PeerTransportError("unreachable")
        standing = self._standing.get(address)
        if standing is not None and standing.kind == FaultKind.UNREACHABLE:
            raise PeerTransportError("unreachable")
        return SimulatedConnection(self, address)

    def addresses(self) -> List[str]:
        return list(self.servers)
