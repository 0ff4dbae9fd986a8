import logging
import os
import re
import struct
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

from apps.blocks.blockCodec import (
    HEADER_SIZE,
    decode_block,
    decode_header,
    encode_block,
    encode_header,
    header_hash,
)
from apps.crypto.cryptoService import TrustStore
from models.models import (
    ZERO_HASH,
    Block,
    BlockHeader,
    BlockLocation,
    FileLayout,
    ReplaceKind,
    ReplaceOutcome,
    UnindexedRegion,
)
from utils.config import MAX_FILE_SIZE
from utils.errors import (
    BadSignature,
    BlockOutOfRange,
    ChainMismatch,
    LedgerGuardError,
    LedgerIOError,
    MalformedBlock,
    NumberMismatch,
    UnknownOrdererError,
    UnreadableLayout,
    UnreadableTail,
)

logger = logging.getLogger(__name__)

FILE_PREFIX = "blockfile_"
FILE_PATTERN = re.compile(r"^blockfile_(\d{6})$")
INDEX_NAME = "blockindex"
PREFIX = struct.Struct("<I")
INDEX_RECORD = struct.Struct("<QIQI")
# prefix + header_len + block number
PEEK_SIZE = 4 + 4 + 8
HEADER_LEN_FIELD = PREFIX.pack(HEADER_SIZE)
# prefix + header_len + header + data_len + meta_len
MIN_RECORD = 4 + 4 + HEADER_SIZE + 4 + 4


def file_name(file_id: int) -> str:
    return f"{FILE_PREFIX}{file_id:06d}"


class _ReadWriteLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    @contextmanager
    def reading(self) -> Iterator[None]:
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def writing(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


@contextmanager
def _io(what: str) -> Iterator[None]:
    try:
        yield
    except OSError as exc:
        raise LedgerIOError(f"{what}: {exc}") from exc


class LedgerStore:
    """Directory of length-prefixed block files plus the `blockindex` cache.

    Blocks are never validated here beyond framing; a corrupt block is
    stored, indexed and served like any other.
    """

    def __init__(
        self,
        directory: Path,
        max_file_size: int = MAX_FILE_SIZE,
        trust: Optional[TrustStore] = None,
        read_only: bool = False,
        fsync: bool = True,
    ):
        self.directory = Path(directory)
        self.max_file_size = max_file_size
        self.trust = trust
        self.read_only = read_only
        self.fsync = fsync
        self._lock = _ReadWriteLock()
        self._index: Dict[int, BlockLocation] = {}
        self._layout: List[FileLayout] = []
        self._height = 0
        self._tip: Optional[BlockHeader] = None
        self._sealed = False

    # --- opening ---------------------------------------------------------

    @classmethod
    def open(
        cls,
        directory: Path,
        *,
        max_file_size: Optional[int] = None,
        trust: Optional[TrustStore] = None,
        read_only: bool = False,
        fsync: bool = True,
        strict: bool = False,
    ) -> "LedgerStore":
        directory = Path(directory)
        if not directory.is_dir():
            raise LedgerIOError(f"ledger directory {directory} does not exist")
        store = cls(
            directory,
            max_file_size=max_file_size or MAX_FILE_SIZE,
            trust=trust,
            read_only=read_only,
            fsync=fsync,
        )
        with _io(f"opening ledger {directory}"):
            store._load()
        if store.has_gaps():
            regions = [f.gap for f in store._layout if f.gap]
            logger.warning(
                "ledger %s has %d unindexed region(s): %s",
                directory,
                len(regions),
                ", ".join(
                    f"file {g.file_id} from byte {g.offset} "
                    f"(blocks {g.first_block}..{g.last_block})"
                    for g in regions
                ),
            )
            if strict:
                raise UnreadableLayout(f"ledger {directory} has unindexed regions")
        return store

    def _load(self) -> None:
        lengths = self._file_lengths()
        records = self._read_index_file()
        if records is not None and self._consistent(records, lengths):
            self._load_records(records, lengths)
            logger.info("loaded index of %s (height %d)", self.directory, self._height)
        else:
            logger.info("rebuilding index of %s", self.directory)
            self._rebuild(lengths, records)
        self._tip = self._header_or_none(self._height - 1)

    def _file_lengths(self) -> Dict[int, int]:
        lengths = {}
        for entry in self.directory.iterdir():
            match = FILE_PATTERN.match(entry.name)
            if match and entry.is_file():
                lengths[int(match.group(1))] = entry.stat().st_size
        return dict(sorted(lengths.items()))

    def _read_index_file(self) -> Optional[List[Tuple[int, BlockLocation]]]:
        path = self.directory / INDEX_NAME
        if not path.exists():
            return None
        raw = path.read_bytes()
        records = []
        usable = len(raw) - len(raw) % INDEX_RECORD.size
        for number, file_id, offset, length in INDEX_RECORD.iter_unpack(raw[:usable]):
            records.append(
                (
                    number,
                    BlockLocation.model_construct(
                        file_id=file_id, offset=offset, length=length
                    ),
                )
            )
        return records

    @staticmethod
    def _consistent(
        records: List[Tuple[int, BlockLocation]], lengths: Dict[int, int]
    ) -> bool:
        ends: Dict[int, int] = {}
        last_file = -1
        for expected, (number, loc) in enumerate(records):
            if number != expected or loc.length == 0:
                return False
            if loc.file_id != last_file:
                if loc.file_id < last_file or loc.file_id in ends:
                    return False
                ends[loc.file_id] = 0
                last_file = loc.file_id
            if loc.offset != ends[loc.file_id]:
                return False
            ends[loc.file_id] = loc.offset + 4 + loc.length
        non_empty = {fid: size for fid, size in lengths.items() if size > 0}
        return ends == non_empty

    def _load_records(
        self, records: List[Tuple[int, BlockLocation]], lengths: Dict[int, int]
    ) -> None:
        self._index = {number: loc for number, loc in records}
        self._layout = []
        for number, loc in records:
            if not self._layout or self._layout[-1].file_id != loc.file_id:
                self._layout.append(
                    FileLayout(
                        file_id=loc.file_id,
                        length=lengths[loc.file_id],
                        first_block=number,
                        last_block=number,
                    )
                )
            else:
                self._layout[-1].last_block = number
        self._height = len(records)

    # --- structural scanning -------------------------------------------------

    def rebuild_index(self) -> Dict[int, BlockLocation]:
        """Re-derive the index from the block files alone."""
        with self._lock.writing():
            with _io(f"rebuilding index of {self.directory}"):
                self._rebuild(self._file_lengths(), self._read_index_file())
                self._tip = self._header_or_none(self._height - 1)
            return dict(self._index)

    def _rebuild(
        self,
        lengths: Dict[int, int],
        hints: Optional[List[Tuple[int, BlockLocation]]],
    ) -> None:
        hint_first: Dict[int, int] = {}
        hint_height = 0
        for number, loc in hints or []:
            hint_first.setdefault(loc.file_id, number)
            hint_height = max(hint_height, number + 1)

        index: Dict[int, BlockLocation] = {}
        layout: List[FileLayout] = []
        expected = 0
        pending: Optional[UnindexedRegion] = None

        for file_id, length in lengths.items():
            if length == 0:
                continue
            path = self.directory / file_name(file_id)
            if pending is not None:
                start = self._next_file_start(path, file_id, pending, hint_first)
                pending.last_block = start - 1
                layout[-1].last_block = start - 1
                expected = start
                pending = None

            first = expected
            gap = None
            offset = 0
            with open(path, "rb") as f:
                while offset < length:
                    f.seek(offset)
                    peek = f.read(PEEK_SIZE)
                    size = self._framed_size(peek, offset, length, expected)
                    if size is None:
                        gap = UnindexedRegion(
                            file_id=file_id,
                            offset=offset,
                            first_block=expected,
                            last_block=expected,
                        )
                        break
                    index[expected] = BlockLocation(
                        file_id=file_id, offset=offset, length=size
                    )
                    expected += 1
                    offset += 4 + size

            layout.append(
                FileLayout(
                    file_id=file_id,
                    length=length,
                    first_block=first,
                    last_block=gap.last_block if gap else expected - 1,
                    gap=gap,
                )
            )
            if gap is not None:
                pending = gap
                expected = gap.first_block + 1

        if pending is not None:
            last = hint_height - 1
            if last <= pending.first_block:
                found = self._resync(
                    self.directory / file_name(pending.file_id),
                    pending,
                    lengths[pending.file_id],
                )
                last = found if found is not None else pending.first_block
                pending.bounded = found is not None
            pending.last_block = last
            layout[-1].last_block = last

        self._index = index
        self._layout = layout
        self._height = layout[-1].last_block + 1 if layout else 0
        if not self.read_only and not self.has_gaps():
            self._write_index()

    @staticmethod
    def _framed_size(peek: bytes, offset: int, length: int, expected: int):
        if len(peek) < PEEK_SIZE:
            return None
        (size,) = PREFIX.unpack_from(peek, 0)
        if size < 4 + HEADER_SIZE or offset + 4 + size > length:
            return None
        header_len, number = struct.unpack_from("<IQ", peek, 4)
        if header_len != HEADER_SIZE or number != expected:
            return None
        return size

    @staticmethod
    def _next_file_start(
        path: Path,
        file_id: int,
        gap: UnindexedRegion,
        hint_first: Dict[int, int],
    ) -> int:
        hinted = hint_first.get(file_id)
        if hinted is not None and hinted > gap.first_block:
            return hinted
        with open(path, "rb") as f:
            peek = f.read(PEEK_SIZE)
        if len(peek) == PEEK_SIZE:
            header_len, number = struct.unpack_from("<IQ", peek, 4)
            if header_len == HEADER_SIZE and gap.first_block < number < 2**63:
                return number
        return gap.first_block + 1

    @staticmethod
    def _resync(path: Path, gap: UnindexedRegion, length: int) -> Optional[int]:
        """Highest block number still framed somewhere after the start of gap."""
        with open(path, "rb") as f:
            f.seek(gap.offset)
            data = f.read(length - gap.offset)
        ceiling = gap.first_block + len(data) // MIN_RECORD
        highest = None
        at = data.find(HEADER_LEN_FIELD, 5)
        while at != -1:
            start = at - 4
            if start + PEEK_SIZE <= len(data):
                (size,) = PREFIX.unpack_from(data, start)
                (number,) = struct.unpack_from("<Q", data, at + 4)
                if (
                    size >= 4 + HEADER_SIZE
                    and start + 4 + size <= len(data)
                    and gap.first_block < number <= ceiling
                ):
                    highest = number if highest is None else max(highest, number)
            at = data.find(HEADER_LEN_FIELD, at + 1)
        return highest

    def _write_index(self) -> None:
        path = self.directory / INDEX_NAME
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as f:
            for number in sorted(self._index):
                loc = self._index[number]
                f.write(INDEX_RECORD.pack(number, loc.file_id, loc.offset, loc.length))
            self._flush(f)
        os.replace(tmp, path)

    def _append_index_record(self, number: int, loc: BlockLocation) -> None:
        with open(self.directory / INDEX_NAME, "ab") as f:
            f.write(INDEX_RECORD.pack(number, loc.file_id, loc.offset, loc.length))
            self._flush(f)

    def _flush(self, f) -> None:
        f.flush()
        if self.fsync:
            os.fsync(f.fileno())

    def sync(self) -> None:
        """Force every block file and the index to disk."""
        with self._lock.reading():
            with _io(f"syncing {self.directory}"):
                paths = [self.file_path(f.file_id) for f in self._layout]
                index = self.directory / INDEX_NAME
                if index.exists():
                    paths.append(index)
                for path in paths:
                    with open(path, "rb+") as f:
                        os.fsync(f.fileno())

    # --- queries -------------------------------------------------------------

    @property
    def height(self) -> int:
        return self._height

    def has_gaps(self) -> bool:
        return any(f.gap is not None for f in self._layout)

    def files(self) -> List[FileLayout]:
        with self._lock.reading():
            return [f.model_copy(deep=True) for f in self._layout]

    def file_path(self, file_id: int) -> Path:
        return self.directory / file_name(file_id)

    def file_of(self, n: int) -> FileLayout:
        self._check_range(n)
        for layout in self._layout:
            if layout.first_block <= n <= layout.last_block:
                return layout.model_copy(deep=True)
        raise BlockOutOfRange(n, self._height)

    def location(self, n: int) -> Optional[BlockLocation]:
        return self._index.get(n)

    def index(self) -> Dict[int, BlockLocation]:
        with self._lock.reading():
            return dict(self._index)

    def read_block_bytes(self, n: int) -> bytes:
        with self._lock.reading():
            self._check_range(n)
            loc = self._index.get(n)
            if loc is None:
                raise UnreadableLayout(f"block {n} lies in an unindexed region")
            with _io(f"reading block {n}"):
                return self._read(loc.file_id, loc.offset + 4, loc.length)

    def frame_intact(self, n: int) -> bool:
        """True if the stored length prefix of n agrees with the index."""
        with self._lock.reading():
            loc = self._index.get(n)
            if loc is None:
                return False
            with _io(f"reading frame of block {n}"):
                raw = self._read(loc.file_id, loc.offset, 4)
            return len(raw) == 4 and PREFIX.unpack(raw)[0] == loc.length

    def read_header(self, n: int) -> Optional[BlockHeader]:
        """Header of n parsed from the stored bytes, None if unreadable."""
        with self._lock.reading():
            return self._header_or_none(n)

    def _header_or_none(self, n: int) -> Optional[BlockHeader]:
        loc = self._index.get(n)
        if loc is None:
            return None
        raw = self._read(loc.file_id, loc.offset + 4, min(loc.length, 4 + HEADER_SIZE))
        try:
            return decode_header(raw)
        except MalformedBlock:
            return None

    def _read(self, file_id: int, offset: int, length: int) -> bytes:
        with open(self.file_path(file_id), "rb") as f:
            f.seek(offset)
            return f.read(length)

    def _check_range(self, n: int) -> None:
        if not 0 <= n < self._height:
            raise BlockOutOfRange(n, self._height)

    # --- writes --------------------------------------------------------------

    def _writable(self) -> None:
        if self.read_only:
            raise LedgerGuardError(f"ledger {self.directory} is opened read-only")

    def seal_current_file(self) -> None:
        """Make the next append start a new block file."""
        self._sealed = True

    def append_block(self, b: Block) -> BlockLocation:
        self._writable()
        with self._lock.writing():
            if b.header.number != self._height:
                raise ChainMismatch(
                    f"block {b.header.number} cannot follow height {self._height}"
                )
            if self._height == 0:
                if b.header.previous_hash != ZERO_HASH:
                    raise ChainMismatch("genesis previous_hash must be all zero")
            elif self._tip is None or b.header.previous_hash != header_hash(self._tip):
                raise ChainMismatch(
                    f"block {b.header.number} does not point at the current tip"
                )
            if self.trust is None:
                raise BadSignature("no trust store to check the orderer signature")
            try:
                signed = self.trust.verify(
                    b.metadata.orderer_id,
                    encode_header(b.header),
                    b.metadata.signature,
                )
            except UnknownOrdererError as exc:
                raise BadSignature(str(exc)) from exc
            if not signed:
                raise BadSignature(f"block {b.header.number} orderer signature")

            raw = encode_block(b)
            current = self._layout[-1] if self._layout else None
            if (
                current is None
                or self._sealed
                or current.gap is not None
                or (
                    current.length > 0
                    and current.length + 4 + len(raw) > self.max_file_size
                )
            ):
                existing = list(self._file_lengths())
                file_id = max(existing) + 1 if existing else 0
                current = FileLayout(
                    file_id=file_id,
                    length=0,
                    first_block=self._height,
                    last_block=self._height - 1,
                )
                self._layout.append(current)
                self._sealed = False

            loc = BlockLocation(
                file_id=current.file_id, offset=current.length, length=len(raw)
            )
            with _io(f"appending block {b.header.number}"):
                with open(self.file_path(current.file_id), "ab") as f:
                    f.write(PREFIX.pack(len(raw)) + raw)
                    self._flush(f)
                if not self.has_gaps():
                    self._append_index_record(b.header.number, loc)
            current.length += 4 + len(raw)
            current.last_block = b.header.number
            self._index[b.header.number] = loc
            self._height += 1
            self._tip = b.header
            return loc

    def replace_block(
        self,
        n: int,
        replacement: bytes,
        tail: Optional[Mapping[int, bytes]] = None,
    ) -> ReplaceOutcome:
        """Splice `replacement` in as block n.

        Same size: the record is overwritten in place. Otherwise the file is
        truncated at n and n plus every later block of that file is written
        again, later blocks coming from `tail` or from their stored copies.
        """
        self._writable()
        tail = dict(tail or {})
        with self._lock.writing():
            self._check_range(n)
            for number, raw in [(n, replacement), *tail.items()]:
                if decode_block(raw).header.number != number:
                    raise NumberMismatch(f"replacement bytes are not block {number}")

            layout = next(
                f for f in self._layout if f.first_block <= n <= f.last_block
            )
            loc = self._index.get(n)
            path = self.file_path(layout.file_id)

            if loc is not None and loc.length == len(replacement):
                with _io(f"overwriting block {n}"):
                    with open(path, "r+b") as f:
                        f.seek(loc.offset)
                        f.write(PREFIX.pack(len(replacement)) + replacement)
                        self._flush(f)
                if n == self._height - 1:
                    self._tip = decode_header(replacement)
                logger.info("block %d overwritten in place", n)
                return ReplaceOutcome(kind=ReplaceKind.IN_PLACE)

            if loc is not None:
                start_block, start_offset = n, loc.offset
            else:
                start_block, start_offset = layout.gap.first_block, layout.gap.offset

            records: List[Tuple[int, bytes]] = []
            missing = []
            with _io(f"reading tail of file {layout.file_id}"):
                for m in range(start_block, layout.last_block + 1):
                    if m == n:
                        records.append((m, replacement))
                    elif m in tail:
                        records.append((m, tail[m]))
                    elif m in self._index:
                        stored = self._index[m]
                        records.append(
                            (m, self._read(stored.file_id, stored.offset + 4, stored.length))
                        )
                    else:
                        missing.append(m)
            if missing:
                raise UnreadableTail(missing)
            if loc is None and not layout.gap.bounded:
                written = sum(4 + len(raw) for _, raw in records)
                surplus = layout.length - start_offset - written
                if surplus >= MIN_RECORD:
                    raise UnreadableLayout(
                        f"file {layout.file_id} holds {surplus} unaccounted byte(s) "
                        f"after block {layout.last_block}; refusing to truncate it"
                    )

            offset = start_offset
            with _io(f"rewriting file {layout.file_id}"):
                with open(path, "r+b") as f:
                    f.truncate(start_offset)
                    f.seek(start_offset)
                    for m, raw in records:
                        f.write(PREFIX.pack(len(raw)) + raw)
                        self._index[m] = BlockLocation(
                            file_id=layout.file_id, offset=offset, length=len(raw)
                        )
                        offset += 4 + len(raw)
                    self._flush(f)
                layout.length = offset
                layout.gap = None
                if not self.has_gaps() and not self.read_only:
                    self._write_index()
            if layout.last_block == self._height - 1:
                self._tip = decode_header(records[-1][1])
            rewritten = sum(1 for m, _ in records if m > n)
            logger.info(
                "block %d spliced into file %d, %d later block(s) rewritten",
                n,
                layout.file_id,
                rewritten,
            )
            return ReplaceOutcome(kind=ReplaceKind.TAIL_REWRITTEN, rewritten=rewritten)
