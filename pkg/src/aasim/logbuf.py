"""Access-log ring buffers and the system fault log.

Each logging domain (IUID) owns one power-of-two ring in host memory. The
producer side reserves space per transaction and may complete reservations
out of order; a committed-head pointer publishes only the hole-free prefix,
so consumers never observe a partially filled record. Offsets are virtual
(monotonic) and wrap at byte granularity on the ring.
"""

import struct
from dataclasses import dataclass

from .engine import Signal

HEADER = struct.Struct("<BHHQHBQ")
HEADER_BYTES = HEADER.size  # 24

OP_PUT = 0
OP_GET = 1

FLAG_DATA = 0x01
FLAG_BLOCKED = 0x02


class LogError(Exception):
    pass


class WouldBlock(Exception):
    """Reservation cannot fit until the consumer frees space."""


def pad8(n):
    return (n + 7) & ~7


def record_size(length, with_data):
    return HEADER_BYTES + (pad8(length) if with_data else 0)


@dataclass
class LogRecord:
    op_kind: int
    device_id: int
    iuid: int
    dev_addr: int
    length: int
    flags: int
    seq_no: int
    payload: bytes = None

    @property
    def data_present(self):
        return bool(self.flags & FLAG_DATA)

    @property
    def blocked(self):
        return bool(self.flags & FLAG_BLOCKED)

    def pack_header(self):
        return HEADER.pack(
            self.op_kind,
            self.device_id,
            self.iuid,
            self.dev_addr,
            self.length,
            self.flags,
            self.seq_no,
        )

    @classmethod
    def unpack_header(cls, buf):
        op_kind, device_id, iuid, dev_addr, length, flags, seq_no = HEADER.unpack(buf)
        return cls(op_kind, device_id, iuid, dev_addr, length, flags, seq_no)

    @property
    def size(self):
        return record_size(self.length, self.data_present)


class AccessLog:
    """One domain's ring. Never drops; producers stall via WouldBlock."""

    def __init__(self, engine, memory, iuid, base, size):
        if size <= 0 or size & (size - 1):
            raise LogError("log size %d not a power of two" % size)
        self.engine = engine
        self.memory = memory
        self.iuid = iuid
        self.base = base
        self.size = size
        self.head = 0  # producer reservation frontier (virtual)
        self.committed_head = 0  # hole-free prefix boundary
        self.tail = 0  # consumer frontier
        self._pending = []  # reservations in order: [offset, nbytes, done]
        self._by_offset = {}
        self.next_seq = 0
        self.space_freed = Signal(engine)
        self.commit_hooks = []
        self.records_committed = 0
        self.records_consumed = 0
        self.reserve_failures = 0

    @property
    def free_bytes(self):
        return self.size - (self.head - self.tail)

    @property
    def committed_bytes(self):
        return self.committed_head - self.tail

    @property
    def pending_records(self):
        return self.records_committed - self.records_consumed

    def drained(self):
        return self.head == self.tail and not self._pending

    def take_seq(self):
        seq = self.next_seq
        self.next_seq += 1
        return seq

    def reserve(self, nbytes):
        """Claim nbytes at the head; returns the virtual offset.

        Raises WouldBlock when the ring is too full; a record that could
        never fit is a configuration error.
        """
        if nbytes > self.size:
            raise LogError(
                "record of %d bytes can never fit log of %d" % (nbytes, self.size)
            )
        if nbytes > self.free_bytes:
            self.reserve_failures += 1
            raise WouldBlock()
        offset = self.head
        self.head += nbytes
        entry = [offset, nbytes, False]
        self._pending.append(entry)
        self._by_offset[offset] = entry
        return offset

    def ring_write(self, voffset, payload):
        pos = self.base + voffset % self.size
        first = min(len(payload), self.base + self.size - pos)
        self.memory.write(pos, payload[:first])
        if first < len(payload):
            self.memory.write(self.base, payload[first:])

    def ring_read(self, voffset, nbytes):
        pos = self.base + voffset % self.size
        first = min(nbytes, self.base + self.size - pos)
        out = self.memory.read(pos, first)
        if first < nbytes:
            out += self.memory.read(self.base, nbytes - first)
        return out

    def mark_done(self, offset):
        entry = self._by_offset.get(offset)
        if entry is None or entry[2]:
            raise LogError("bad completion for reservation at %d" % offset)
        entry[2] = True
        return self.commit_holes()

    def commit_holes(self):
        """Advance committed_head over the done prefix; returns records published."""
        published = 0
        while self._pending and self._pending[0][2]:
            offset, nbytes, _ = self._pending.pop(0)
            del self._by_offset[offset]
            self.committed_head = offset + nbytes
            published += 1
        if published:
            self.records_committed += published
            for hook in self.commit_hooks:
                hook(self)
        return published

    def read_record(self):
        """Parse the record at the tail; returns (LogRecord, size) or None."""
        if self.committed_bytes < HEADER_BYTES:
            return None
        rec = LogRecord.unpack_header(self.ring_read(self.tail, HEADER_BYTES))
        size = rec.size
        if self.committed_bytes < size:
            raise LogError("committed prefix ends inside a record")
        if rec.data_present:
            rec.payload = self.ring_read(self.tail + HEADER_BYTES, rec.length)
        return rec, size

    def advance_tail(self, nbytes):
        if self.tail + nbytes > self.committed_head:
            raise LogError("tail advance past committed head")
        self.tail += nbytes
        self.records_consumed += 1
        self.space_freed.fire()


class AccessLogTable:
    def __init__(self):
        self._logs = {}

    def register(self, log):
        if log.iuid in self._logs:
            raise LogError("iuid %d already has a log" % log.iuid)
        self._logs[log.iuid] = log

    def get(self, iuid):
        log = self._logs.get(iuid)
        if log is None:
            raise LogError("no access log registered for iuid %d" % iuid)
        return log

    def __iter__(self):
        return iter(self._logs.values())

    def __contains__(self, iuid):
        return iuid in self._logs


class FaultLog:
    """System-wide metadata ring; overflow drops (and counts) entries."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.entries = []
        self.drops = 0

    def append(self, record):
        if record.data_present:
            raise LogError("fault log holds metadata only")
        if len(self.entries) >= self.capacity:
            self.drops += 1
            return False
        self.entries.append(record)
        return True
