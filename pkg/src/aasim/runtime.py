"""Host-side runtime of one rank.

A Proc owns its node's memory, bridge, and core, and exposes the operation
set applications program against: nonblocking put/get with completion
handles, blocking atomics, page association with handler binding, flushes,
and the log-consumer loop with its three notification modes.
"""

from collections import deque

from . import link as lnk
from .engine import Signal
from .logbuf import AccessLog
from .memory import PAGE_SIZE
from .paging import IUID_LIMIT, Pte


class NodeError(Exception):
    pass


class OpHandle:
    """Completion token for a nonblocking operation."""

    def __init__(self, engine):
        self.done = False
        self.status = None
        self.data = None
        self._signal = Signal(engine)

    def fire(self, status, data=None):
        self.done = True
        self.status = status
        self.data = data
        self._signal.fire()

    def wait(self):
        while not self.done:
            yield self._signal
        return self


class _GetState:
    __slots__ = ("handle", "buf", "remaining", "tag")

    def __init__(self, handle, length, tag):
        self.handle = handle
        self.buf = bytearray(length)
        self.remaining = length
        self.tag = tag


class HandlerCtx:
    """Passed to a record handler; memory helpers charge consumer CPU time."""

    def __init__(self, proc, record):
        self.proc = proc
        self.record = record
        self.cost_ns = 0.0
        self.replies = []

    def _charge(self, accesses=1):
        self.cost_ns += accesses * self.proc.cfg.mem_access_ns

    def read_word(self, addr):
        self._charge()
        return self.proc.memory.read_word(addr)

    def write_word(self, addr, value):
        self._charge()
        self.proc.memory.write_word(addr, value)

    def read(self, addr, length):
        self._charge()
        return self.proc.memory.read(addr, length)

    def write(self, addr, payload):
        self._charge()
        self.proc.memory.write(addr, payload)

    def touch(self, accesses=1):
        self._charge(accesses)

    def reply(self, payload):
        """Queue an active put back to the record's source rank."""
        if self.record is None:
            raise NodeError("reply outside a record handler")
        self.replies.append((self.record.device_id, bytes(payload)))


class _Binding:
    __slots__ = ("log", "handler", "flush_addr")

    def __init__(self, log, handler, flush_addr):
        self.log = log
        self.handler = handler
        self.flush_addr = flush_addr


class Proc:
    def __init__(self, sim, rank, cfg, engine, metrics, memory, translator, iommu, cpu):
        self.sim = sim
        self.rank = rank
        self.cfg = cfg
        self.engine = engine
        self.metrics = metrics
        self.memory = memory
        self.translator = translator
        self.iommu = iommu
        self.cpu = cpu
        self._next_iuid = 1  # iuid 0 is reserved for fault-log records
        self._tag_cursor = 0
        self._tags_in_use = set()
        self._tag_freed = Signal(engine)
        self._gets = {}
        self.outstanding_puts = {}
        self._handlers = {}
        self._wake = Signal(engine)
        self._int_armed = False
        self.live_ops = 0
        self.inbox = deque()
        self.inbox_addr = None
        self.am_handler = None
        self.reply_page = None
        self._reply_queue = []
        self.sysflush_addr = None
        iommu.on_flush_armed = self._on_flush_armed

    # -- setup -------------------------------------------------------------

    def setup_sysflush(self):
        """Null-get target used by rma_flush; a plain readable page."""
        base = self.memory.reserve_region("sysflush", PAGE_SIZE)
        self.map_plain(base, r=True)
        self.sysflush_addr = base

    def register_handler(self, handler, log_size=None):
        """Bind a handler to a fresh logging domain; returns its id (iuid)."""
        if self._next_iuid >= IUID_LIMIT:
            raise NodeError("out of logging domains (iuid space exhausted)")
        iuid = self._next_iuid
        self._next_iuid += 1
        size = log_size if log_size is not None else self.cfg.access_log_size
        base = self.memory.reserve_region("log%d" % iuid, size)
        log = AccessLog(self.engine, self.memory, iuid, base, size)
        self.iommu.register_log(log)
        log.commit_hooks.append(self._on_commit)
        flush_base = self.memory.reserve_region("flush%d" % iuid, PAGE_SIZE)
        self.iommu.register_flush_page(flush_base, iuid)
        self._handlers[iuid] = _Binding(log, handler, flush_base)
        return iuid

    def assoc_page(self, vaddr, hlr_id=0, **bits):
        """Install extended mapping bits for one page this rank owns."""
        if vaddr % PAGE_SIZE:
            raise NodeError("page address %d not aligned" % vaddr)
        if self.memory.region_of(vaddr) is None:
            raise NodeError("cannot assoc unowned page at %d" % vaddr)
        logging_bits = any(bits.get(b) for b in ("wl", "wld", "rl", "rld"))
        if logging_bits and bits.get("e") and hlr_id not in self._handlers:
            raise NodeError("no handler/log registered for id %d" % hlr_id)
        pte = Pte(frame=vaddr >> 12, iuid=hlr_id, **bits)
        self.translator.map_page(vaddr, pte)

    def map_plain(self, vaddr, w=False, r=False):
        self.assoc_page(vaddr, 0, w=w, r=r)

    def setup_inbox(self, handler):
        """AM receive side: a writable page whose writes land in a queue."""
        base = self.memory.reserve_region("inbox", PAGE_SIZE)
        self.map_plain(base, w=True)
        self.inbox_addr = base
        self.am_handler = handler
        self.iommu.add_write_hook(
            base, PAGE_SIZE, lambda src, payload: self.inbox.append((src, payload))
        )

    def enable_reply(self, handler, log_size=None):
        iuid = self.register_handler(handler, log_size)
        base = self.memory.reserve_region("replypage", PAGE_SIZE)
        self.assoc_page(base, iuid, wl=True, wld=True, e=True)
        self.reply_page = base
        return iuid

    def flush_pages(self):
        return [(iuid, b.flush_addr) for iuid, b in sorted(self._handlers.items())]

    def log_of(self, iuid):
        return self._handlers[iuid].log

    # -- tags --------------------------------------------------------------

    def _alloc_tag(self):
        while True:
            for _ in range(256):
                tag = self._tag_cursor
                self._tag_cursor = (self._tag_cursor + 1) % 256
                if tag not in self._tags_in_use:
                    self._tags_in_use.add(tag)
                    return tag
            yield self._tag_freed

    def _free_tag(self, tag):
        self._tags_in_use.discard(tag)
        self._tag_freed.fire()

    @staticmethod
    def _check_span(address, length):
        if length <= 0:
            raise NodeError("empty transfer")
        if (address % PAGE_SIZE) + length > PAGE_SIZE:
            raise NodeError("transfer [%d, +%d) straddles a page" % (address, length))

    # -- data movement -----------------------------------------------------

    def put(self, target, address, payload):
        """Nonblocking write of payload to target's address; returns a handle."""
        if len(payload) > lnk.MAX_TXN_BYTES:
            raise lnk.OversizeError("put of %d bytes exceeds %d" % (len(payload), lnk.MAX_TXN_BYTES))
        self._check_span(address, len(payload))
        # Count the op as live before any yield so quiescence detection never
        # races the issue path.
        self.live_ops += 1
        self.metrics.remote_ops += 1
        yield from self.cpu.busy(self.cfg.issue_cost_ns)
        tag = yield from self._alloc_tag()
        handle = OpHandle(self.engine)
        pkts = lnk.split_put(
            address, payload, self.rank, tag, self.sim.next_txn_id(), self.cfg.max_payload
        )
        self.outstanding_puts[target] = self.outstanding_puts.get(target, 0) + 1

        def done(status, _tag=tag, _target=target, _handle=handle):
            self._free_tag(_tag)
            self.outstanding_puts[_target] -= 1
            self.live_ops -= 1
            _handle.fire(status)
            self.engine.note_activity()

        pkts[-1].on_done = done
        wire = self.sim.ingress_of(target)
        for pkt in pkts:
            wire.send(pkt)
        return handle

    def get(self, target, address, length, atomic=None):
        """Nonblocking read; the handle carries the data when it completes."""
        self._check_span(address, length)
        self.live_ops += 1
        self.metrics.remote_ops += 1
        yield from self.cpu.busy(self.cfg.issue_cost_ns)
        tag = yield from self._alloc_tag()
        handle = OpHandle(self.engine)
        req, _ = lnk.split_get(
            address, length, self.rank, tag, self.sim.next_txn_id(), self.cfg.max_payload
        )
        req.atomic = atomic
        self._gets[tag] = _GetState(handle, length, tag)
        self.sim.ingress_of(target).send(req)
        return handle

    def on_completion(self, tlp):
        state = self._gets.get(tlp.tag)
        if state is None:
            raise NodeError("completion for unknown tag %d at rank %d" % (tlp.tag, self.rank))
        if tlp.status == "blocked":
            del self._gets[tlp.tag]
            self._free_tag(tlp.tag)
            self.live_ops -= 1
            state.handle.fire("blocked")
        else:
            off = tlp.seq_in_txn * self.cfg.max_payload
            state.buf[off : off + tlp.length] = tlp.payload
            state.remaining -= tlp.length
            if state.remaining == 0:
                del self._gets[tlp.tag]
                self._free_tag(tlp.tag)
                self.live_ops -= 1
                state.handle.fire("ok", bytes(state.buf))
        self.engine.note_activity()

    # -- atomics (blocking) ------------------------------------------------

    def cas(self, target, address, compare, swap):
        handle = yield from self.get(
            target, address, 8, atomic=lnk.AtomicDesc("cas", swap, compare)
        )
        yield from handle.wait()
        return int.from_bytes(handle.data, "little")

    def fao(self, target, op, operand, address):
        if op not in ("sum", "replace"):
            raise NodeError("unknown fetch-and-op %r" % op)
        handle = yield from self.get(target, address, 8, atomic=lnk.AtomicDesc(op, operand))
        yield from handle.wait()
        return int.from_bytes(handle.data, "little")

    # -- plain-RMA aliases and flushes ------------------------------------

    def rma_put(self, target, address, payload):
        return self.put(target, address, payload)

    def rma_get(self, target, address, length):
        return self.get(target, address, length)

    def rma_flush(self, target):
        """Order point: returns once all our puts to target are done there."""
        peer = self.sim.procs[target]
        if peer.sysflush_addr is None:
            raise NodeError("target %d has no flush target page" % target)
        handle = yield from self.get(target, peer.sysflush_addr, 8)
        yield from handle.wait()
        if self.outstanding_puts.get(target, 0) != 0:
            raise NodeError("puts still outstanding after rma_flush")

    def flush(self, target):
        """Consumption barrier: every record our prior puts/gets produced at
        target is handled before this returns."""
        peer = self.sim.procs[target]
        handles = []
        for _iuid, flush_addr in peer.flush_pages():
            handle = yield from self.get(target, flush_addr, 8)
            handles.append(handle)
        for handle in handles:
            yield from handle.wait()

    def am_send(self, target, payload):
        peer = self.sim.procs[target]
        if peer.inbox_addr is None:
            raise NodeError("target %d has no inbox" % target)
        self.metrics.am_messages += 1
        handle = yield from self.put(target, peer.inbox_addr, payload)
        return handle

    # -- notification and consumption -------------------------------------

    def _on_commit(self, log):
        mode = self.cfg.resolved_notification()
        if mode == "sp":
            self.engine.schedule(self.cfg.scratchpad_ns, self._wake.fire)
        elif mode == "int":
            pending = sum(b.log.pending_records for b in self._handlers.values())
            if pending >= self.cfg.interrupt_batch:
                self._arm_interrupt()

    def _on_flush_armed(self, log):
        mode = self.cfg.resolved_notification()
        if mode == "sp":
            self.engine.schedule(self.cfg.scratchpad_ns, self._wake.fire)
        elif mode == "int":
            self._arm_interrupt()

    def _arm_interrupt(self):
        if self._int_armed:
            return
        self._int_armed = True

        def fire():
            self._int_armed = False
            self.metrics.interrupts += 1
            self._wake.fire()

        self.engine.schedule(self.cfg.interrupt_ns, fire)

    def _has_committed(self):
        return any(b.log.committed_bytes > 0 for b in self._handlers.values())

    def consumer(self):
        """Log-consumer loop; shares the core with the application thread."""
        mode = self.cfg.resolved_notification()
        while True:
            if mode == "poll":
                yield self.cfg.poll_interval_ns
            elif mode == "sp":
                if not self._has_committed() and not self.sim.stopping:
                    yield self._wake
            else:
                if not self.sim.stopping:
                    yield self._wake
            if self.sim.stopping:
                return
            yield from self.poll_step()

    def poll_step(self):
        """One consumption pass over all owned logs; returns records handled.

        The pointer check costs a memory access, or the scratchpad latency
        when the committed-head mirror lives in the core's scratchpad.
        """
        mode = self.cfg.resolved_notification()
        check = self.cfg.scratchpad_ns if mode == "sp" else self.cfg.mem_access_ns
        yield from self.cpu.busy(check)
        consumed = 0
        for _iuid, binding in sorted(self._handlers.items()):
            log = binding.log
            while True:
                out = log.read_record()
                if out is None:
                    break
                record, size = out
                yield from self.cpu.busy(self.cfg.mem_access_ns)  # record fetch
                ctx = HandlerCtx(self, record)
                binding.handler(ctx, record)
                yield from self.cpu.busy(self.cfg.handler_cost_ns + ctx.cost_ns)
                if ctx.replies:
                    self._reply_queue.extend(ctx.replies)
                log.advance_tail(size)
                self.metrics.handler_invocations += 1
                consumed += 1
                self.engine.note_activity()
                self.iommu.check_flushes(log)
                if len(self._reply_queue) >= self.cfg.reply_batch:
                    yield from self._send_replies()
        if self._reply_queue:
            yield from self._send_replies()
        return consumed

    def _send_replies(self):
        batch, self._reply_queue = self._reply_queue, []
        handles = []
        for src, payload in batch:
            peer = self.sim.procs[src]
            if peer.reply_page is None:
                raise NodeError("no reply page registered at source %d" % src)
            handles.append((yield from self.put(src, peer.reply_page, payload)))
        return handles

    def am_consumer(self):
        """AM receive loop: poll the inbox, run the bound handler inline."""
        while True:
            yield self.cfg.poll_interval_ns
            yield from self.cpu.busy(self.cfg.mem_access_ns)  # inbox pointer
            while self.inbox:
                src, payload = self.inbox.popleft()
                yield from self.cpu.busy(2 * self.cfg.mem_access_ns)  # dequeue
                ctx = HandlerCtx(self, None)
                self.am_handler(ctx, src, payload)
                yield from self.cpu.busy(self.cfg.handler_cost_ns + ctx.cost_ns)
                self.metrics.handler_invocations += 1
                self.engine.note_activity()
            if self.sim.stopping:
                return

    # -- quiescence --------------------------------------------------------

    def drained(self):
        return (
            self.live_ops == 0
            and not self.inbox
            and not self._reply_queue
            and all(b.log.drained() for b in self._handlers.values())
        )
