"""Packetized interconnect with credit-based flow control.

Transactions up to 4 KiB are split into TLPs of at most max_payload bytes.
Each target has one ingress wire shared by all source devices: packets from
one device stay in order, packets from different devices interleave in a
seeded arbitrary order, and a packet departs only when the receiving bridge
has a free credit. Nothing is ever dropped; senders stall.
"""

from dataclasses import dataclass, field

MAX_TXN_BYTES = 4096
COMPLETION_ADDR_BITS = 7  # read completions carry only the low address bits

POSTED_WRITE = "pw"
READ_REQUEST = "rd"
READ_COMPLETION = "cpl"


class LinkError(Exception):
    pass


class OversizeError(LinkError):
    """Transaction larger than the 4 KiB cap."""


@dataclass
class AtomicDesc:
    op: str  # 'cas' | 'sum' | 'replace'
    operand: int
    compare: int = 0


@dataclass
class Tlp:
    kind: str
    requester_id: tuple
    tag: int
    address: int
    length: int
    payload: bytes = None
    txn_id: int = 0
    seq_in_txn: int = 0
    txn_total: int = 0  # total data bytes of the transaction
    atomic: AtomicDesc = None
    status: str = "ok"  # completions: 'ok' | 'blocked'
    on_done: object = field(default=None, repr=False)  # sim-side completion hook

    def wire_bytes(self, header_bytes):
        return header_bytes + (len(self.payload) if self.payload else 0)


def split_put(address, payload, requester_id, tag, txn_id, max_payload):
    """Split one write transaction into ordered posted-write TLPs."""
    total = len(payload)
    if total == 0:
        raise LinkError("empty put")
    if total > MAX_TXN_BYTES:
        raise OversizeError("put of %d bytes exceeds %d" % (total, MAX_TXN_BYTES))
    pkts = []
    seq = 0
    for off in range(0, total, max_payload):
        chunk = payload[off : off + max_payload]
        pkts.append(
            Tlp(
                kind=POSTED_WRITE,
                requester_id=requester_id,
                tag=tag,
                address=address + off,
                length=len(chunk),
                payload=bytes(chunk),
                txn_id=txn_id,
                seq_in_txn=seq,
                txn_total=total,
            )
        )
        seq += 1
    return pkts


def split_get(address, length, requester_id, tag, txn_id, max_payload):
    """Build the read request for a get; returns (request, completion count)."""
    if length <= 0:
        raise LinkError("empty get")
    if length > MAX_TXN_BYTES:
        raise OversizeError("get of %d bytes exceeds %d" % (length, MAX_TXN_BYTES))
    req = Tlp(
        kind=READ_REQUEST,
        requester_id=requester_id,
        tag=tag,
        address=address,
        length=length,
        txn_id=txn_id,
        seq_in_txn=0,
        txn_total=length,
    )
    n_cpl = -(-length // max_payload)
    return req, n_cpl


def make_completions(request, data, max_payload):
    """Slice fetched data into completions for one read request.

    Completions keep the requester/tag pair and only the low 7 bits of the
    address, so reassembly must go through the requester's tag state.
    """
    if len(data) != request.length:
        raise LinkError("completion data length mismatch")
    out = []
    seq = 0
    for off in range(0, len(data), max_payload):
        chunk = data[off : off + max_payload]
        addr = (request.address + off) & ((1 << COMPLETION_ADDR_BITS) - 1)
        out.append(
            Tlp(
                kind=READ_COMPLETION,
                requester_id=request.requester_id,
                tag=request.tag,
                address=addr,
                length=len(chunk),
                payload=bytes(chunk),
                txn_id=request.txn_id,
                seq_in_txn=seq,
                txn_total=request.length,
            )
        )
        seq += 1
    return out


def blocked_completion(request):
    cpl = Tlp(
        kind=READ_COMPLETION,
        requester_id=request.requester_id,
        tag=request.tag,
        address=request.address & ((1 << COMPLETION_ADDR_BITS) - 1),
        length=0,
        payload=b"",
        txn_id=request.txn_id,
        seq_in_txn=0,
        txn_total=0,
        status="blocked",
    )
    return cpl


class Link:
    """Ingress wire of one target bridge.

    Per-device FIFO queues feed a single serialized wire; the arbiter picks
    the next device with its own RNG stream so cross-device interleaving is
    arbitrary but reproducible. One credit is consumed per departed packet
    and returned by the bridge once the packet has been processed.
    """

    def __init__(self, engine, sink, cfg, rng, metrics):
        self.engine = engine
        self.sink = sink  # callable(tlp), invoked at arrival time
        self.latency = cfg.link_latency_ns
        self.bw = cfg.link_bw_bytes_per_ns
        self.header_bytes = cfg.wire_header_bytes
        self.credits = cfg.credit_capacity
        self.capacity = cfg.credit_capacity
        self.rng = rng
        self.metrics = metrics
        self._queues = {}
        self._wire_free_at = 0.0
        self.stalled_polls = 0

    def send(self, tlp):
        self._queues.setdefault(tlp.requester_id, []).append(tlp)
        self._pump()

    def release_credit(self):
        if self.credits >= self.capacity:
            raise LinkError("credit over-release")
        self.credits += 1
        self._pump()

    def _pump(self):
        while self.credits > 0:
            ready = [d for d, q in self._queues.items() if q]
            if not ready:
                return
            dev = ready[self.rng.randrange(len(ready))] if len(ready) > 1 else ready[0]
            tlp = self._queues[dev].pop(0)
            self.credits -= 1
            size = tlp.wire_bytes(self.header_bytes)
            start = max(self.engine.now, self._wire_free_at)
            tx = size / self.bw
            self._wire_free_at = start + tx
            if self.metrics is not None:
                self.metrics.count_wire(tlp, self.header_bytes)
            self.engine.schedule(start + tx + self.latency - self.engine.now, self.sink, tlp)
        if any(q for q in self._queues.values()):
            self.stalled_polls += 1

    @property
    def queued(self):
        return sum(len(q) for q in self._queues.values())

    @property
    def in_flight(self):
        return self.capacity - self.credits

    def idle(self):
        return self.queued == 0 and self.credits == self.capacity


class BackChannel:
    """Return wire for completions (target back to one source); no credits."""

    def __init__(self, engine, sink, cfg, metrics):
        self.engine = engine
        self.sink = sink
        self.latency = cfg.link_latency_ns
        self.bw = cfg.link_bw_bytes_per_ns
        self.header_bytes = cfg.wire_header_bytes
        self.metrics = metrics
        self._wire_free_at = 0.0
        self.outstanding = 0

    def deliver(self, tlp):
        size = tlp.wire_bytes(self.header_bytes)
        start = max(self.engine.now, self._wire_free_at)
        tx = size / self.bw
        self._wire_free_at = start + tx
        if self.metrics is not None:
            self.metrics.count_wire(tlp, self.header_bytes)
        self.outstanding += 1
        self.engine.schedule(start + tx + self.latency - self.engine.now, self._arrive, tlp)

    def _arrive(self, tlp):
        self.outstanding -= 1
        self.sink(tlp)
