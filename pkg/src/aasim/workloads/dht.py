"""The distributed hash table workload in all scheme variants.

Every rank owns a volume: a bucket table plus an overflow heap, both arrays
of 16-byte cells {elem, ptr}, with a next-free-cell word and per-bucket
last-element pointers beside them. The traditional variant runs the insert
as a remote atomic sequence; the active variants ship one put and let the
owner's handler do the same steps locally; the message-passing variant sends
the element to the owner's inbox. All variants share local_insert and
local_delete so their final contents can be compared cell for cell.
"""

from collections import Counter

from ..engine import Signal
from ..memory import PAGE_SIZE
from ..sim import Simulation
from . import keys as K

CELL = 16
EMPTY = 0


class DhtOverflow(RuntimeError):
    """The overflow heap ran out of cells; a real store would resize here."""


def word(value):
    return int(value).to_bytes(8, "little")


class VolumeLayout:
    """Address arithmetic for one rank's volume."""

    def __init__(self, base, meta_base, vol_size, table_size):
        self.base = base
        self.meta_base = meta_base
        self.vol_size = vol_size
        self.table_size = table_size

    def elem_addr(self, index):
        return self.base + CELL * index

    def ptr_addr(self, index):
        return self.base + CELL * index + 8

    @property
    def next_free_addr(self):
        return self.meta_base

    def last_ptr_addr(self, bucket):
        return self.meta_base + 8 + 8 * bucket

    @property
    def table_bytes(self):
        return self.table_size * CELL

    @property
    def volume_bytes(self):
        return self.vol_size * CELL

    @property
    def meta_bytes(self):
        raw = 8 + 8 * self.table_size
        return (raw + PAGE_SIZE - 1) // PAGE_SIZE * PAGE_SIZE


def build_volume(proc, vol_size, table_size):
    layout = VolumeLayout(0, 0, vol_size, table_size)
    layout.base = proc.memory.reserve_region("volume", layout.volume_bytes)
    layout.meta_base = proc.memory.reserve_region("volmeta", layout.meta_bytes)
    proc.memory.write_word(layout.next_free_addr, table_size)
    return layout


# -- the shared local core (handler side and oracle side) -------------------


def local_insert(rw, layout, elem):
    """Single-consumer insert over read/write words; mirrors the remote
    atomic sequence step for step."""
    pos = K.bucket_of(K.hash64(elem), layout.table_size)
    if rw.read_word(layout.elem_addr(pos)) == EMPTY:
        rw.write_word(layout.elem_addr(pos), elem)
        return
    free_cell = rw.read_word(layout.next_free_addr)
    rw.write_word(layout.next_free_addr, free_cell + 1)
    if free_cell >= layout.vol_size:
        raise DhtOverflow("volume full (%d cells); needs a resize" % layout.vol_size)
    rw.write_word(layout.elem_addr(free_cell), elem)
    prev_ptr = rw.read_word(layout.last_ptr_addr(pos))
    rw.write_word(layout.last_ptr_addr(pos), free_cell)
    if rw.read_word(layout.ptr_addr(pos)) == EMPTY:
        rw.write_word(layout.ptr_addr(pos), free_cell)
    else:
        rw.write_word(layout.ptr_addr(prev_ptr), free_cell)


def local_delete(rw, layout, key):
    """Clear every cell in key's bucket chain holding key; chain stays."""
    pos = K.bucket_of(K.hash64(key), layout.table_size)
    if rw.read_word(layout.elem_addr(pos)) == key:
        rw.write_word(layout.elem_addr(pos), EMPTY)
    ptr = rw.read_word(layout.ptr_addr(pos))
    hops = 0
    while ptr != EMPTY and hops <= layout.vol_size:
        if rw.read_word(layout.elem_addr(ptr)) == key:
            rw.write_word(layout.elem_addr(ptr), EMPTY)
        ptr = rw.read_word(layout.ptr_addr(ptr))
        hops += 1


def extract_contents(memory, layout):
    """Multiset of stored elements, position independent."""
    found = Counter()
    for i in range(layout.vol_size):
        elem = memory.read_word(layout.elem_addr(i))
        if elem != EMPTY:
            found[elem] += 1
    return found


# -- remote insert and delete paths -----------------------------------------


def insert_rma(proc, owner, layout, elem):
    """The six-to-eight remote-op insert sequence."""
    pos = K.bucket_of(K.hash64(elem), layout.table_size)
    old = yield from proc.cas(owner, layout.elem_addr(pos), EMPTY, elem)
    if old != EMPTY:
        free_cell = yield from proc.fao(owner, "sum", 1, layout.next_free_addr)
        if free_cell >= layout.vol_size:
            raise DhtOverflow("volume at rank %d full; needs a resize" % owner)
        yield from proc.rma_put(owner, layout.elem_addr(free_cell), word(elem))
        yield from proc.rma_flush(owner)
        prev_ptr = yield from proc.fao(owner, "replace", free_cell, layout.last_ptr_addr(pos))
        old_ptr = yield from proc.cas(owner, layout.ptr_addr(pos), EMPTY, free_cell)
        if old_ptr != EMPTY:
            yield from proc.rma_put(owner, layout.ptr_addr(prev_ptr), word(free_cell))
            yield from proc.rma_flush(owner)


def insert_aa(proc, owner, layout, elem):
    pos = K.bucket_of(K.hash64(elem), layout.table_size)
    yield from proc.put(owner, layout.elem_addr(pos), word(elem))


def delete_rma(proc, owner, layout, key):
    """Walk the bucket chain remotely, swapping out every matching cell."""
    pos = K.bucket_of(K.hash64(key), layout.table_size)
    handle = yield from proc.rma_get(owner, layout.elem_addr(pos), CELL)
    yield from handle.wait()
    elem = int.from_bytes(handle.data[0:8], "little")
    ptr = int.from_bytes(handle.data[8:16], "little")
    if elem == key:
        yield from proc.cas(owner, layout.elem_addr(pos), key, EMPTY)
    hops = 0
    while ptr != EMPTY and hops <= layout.vol_size:
        handle = yield from proc.rma_get(owner, layout.elem_addr(ptr), CELL)
        yield from handle.wait()
        elem = int.from_bytes(handle.data[0:8], "little")
        if elem == key:
            yield from proc.cas(owner, layout.elem_addr(ptr), key, EMPTY)
        ptr = int.from_bytes(handle.data[8:16], "little")
        hops += 1


def lookup(proc, owner, layout, key):
    """One get of the bucket cell; chain chasing is out of scope."""
    pos = K.bucket_of(K.hash64(key), layout.table_size)
    handle = yield from proc.rma_get(owner, layout.elem_addr(pos), 8)
    yield from handle.wait()
    return int.from_bytes(handle.data, "little")


# -- oracle ------------------------------------------------------------------


class SequentialOracle:
    """Reference semantics: a per-owner multiset with remove-all deletes."""

    def __init__(self, procs, table_size):
        self.procs = procs
        self.table_size = table_size
        self.tables = [Counter() for _ in range(procs)]

    def insert(self, key):
        owner, _ = K.placement(key, self.procs, self.table_size)
        self.tables[owner][key] += 1

    def delete(self, key):
        owner, _ = K.placement(key, self.procs, self.table_size)
        self.tables[owner][key] = 0

    def contents(self, rank):
        return Counter({k: n for k, n in self.tables[rank].items() if n > 0})


# -- benchmark assembly ------------------------------------------------------


class PhaseBarrier:
    def __init__(self, engine, parties):
        self.signal = Signal(engine)
        self.parties = parties
        self.count = 0

    def arrive(self):
        self.count += 1
        if self.count == self.parties:
            self.count = 0
            self.signal.fire()
        else:
            yield self.signal


class DhtNode:
    """Owner-side state for the active schemes."""

    def __init__(self, bench, proc, layout):
        self.bench = bench
        self.proc = proc
        self.layout = layout
        self.inserts_handled = 0
        self.deletes_handled = 0

    def insert_handler(self, ctx, record):
        elem = int.from_bytes(record.payload[:8], "little")
        local_insert(ctx, self.layout, elem)
        self.inserts_handled += 1

    def delete_handler(self, ctx, record):
        key = int.from_bytes(record.payload[:8], "little")
        local_delete(ctx, self.layout, key)
        self.deletes_handled += 1

    def am_handler(self, ctx, src, payload):
        elem = int.from_bytes(payload[:8], "little")
        local_insert(ctx, self.layout, elem)
        self.inserts_handled += 1


class DhtBench:
    """Builds one simulation running the configured scheme over shared
    deterministic key streams, with an optional delete phase."""

    WARMUP_OPS = 16

    def __init__(
        self,
        cfg,
        delete_fraction=0.0,
        key_mode="collision",
        skew=1.1,
        page_stride=1,
        sources=None,
        record_ops=False,
    ):
        cfg.validate()
        self.cfg = cfg
        self.scheme = cfg.scheme
        self.delete_fraction = delete_fraction
        self.key_mode = key_mode
        self.skew = skew
        self.page_stride = page_stride
        self.sources = sources
        self.record_ops = record_ops
        self.op_log = []  # (rank, kind, key, remote_ops_used) when recording
        self.sim = Simulation(cfg)
        self.table_size = cfg.resolved_table_size()
        self.nodes = []
        self.layouts = []
        self.delete_pages = []
        self.oracle = SequentialOracle(cfg.num_procs, self.table_size)
        self.plan = []  # per rank: list of ("insert"|"delete", key)
        self._build_nodes()
        self._build_plan()

    # -- construction ----------------------------------------------------

    def _build_nodes(self):
        cfg = self.cfg
        active = self.scheme.startswith("aa")
        for proc in self.sim.procs:
            layout = build_volume(proc, cfg.vol_size, self.table_size)
            node = DhtNode(self, proc, layout)
            self.layouts.append(layout)
            self.nodes.append(node)
            if active:
                ins_id = proc.register_handler(node.insert_handler)
                del_id = proc.register_handler(node.delete_handler)
                for addr in range(layout.base, layout.base + layout.table_bytes, PAGE_SIZE):
                    proc.assoc_page(addr, ins_id, wl=True, wld=True, e=True, r=True)
                for addr in range(
                    layout.base + layout.table_bytes,
                    layout.base + layout.volume_bytes,
                    PAGE_SIZE,
                ):
                    proc.map_plain(addr, r=True)
                dpage = proc.memory.reserve_region("delpage", PAGE_SIZE)
                proc.assoc_page(dpage, del_id, wl=True, wld=True, e=True)
                self.delete_pages.append(dpage)
            else:
                for addr in range(layout.base, layout.base + layout.volume_bytes, PAGE_SIZE):
                    proc.map_plain(addr, w=True, r=True)
                for addr in range(
                    layout.meta_base, layout.meta_base + layout.meta_bytes, PAGE_SIZE
                ):
                    proc.map_plain(addr, w=True, r=True)
                self.delete_pages.append(None)
                if self.scheme == "am":
                    proc.setup_inbox(self.nodes[proc.rank].am_handler)

    def _keys_for_rank(self, rank, count):
        rng = self.sim.rng_for(3, rank)
        if self.key_mode == "collision":
            stream = K.KeyStream(rng, self.cfg.num_procs, self.table_size, self.cfg.r_cols)
            self.streams.append(stream)
            return stream.take(count)
        if self.key_mode == "forced":
            return K.forced_collision_keys(
                rng,
                count,
                owner=(rank + 1) % self.cfg.num_procs,
                bucket=7,
                procs=self.cfg.num_procs,
                table_size=self.table_size,
            )
        if self.key_mode == "skewed":
            return K.skewed_bucket_keys(
                rng,
                count,
                0,
                self.cfg.num_procs,
                self.table_size,
                self.skew,
                self.page_stride,
            )
        raise ValueError("unknown key mode %r" % self.key_mode)

    def _build_plan(self):
        cfg = self.cfg
        self.streams = []
        for rank in range(cfg.num_procs):
            if not self._is_source(rank):
                self.plan.append([])
                continue
            inserts = self._keys_for_rank(rank, cfg.ops_per_proc)
            ops = [("insert", k) for k in inserts]
            if self.delete_fraction > 0.0:
                step = max(1, int(round(1.0 / self.delete_fraction)))
                victims = inserts[::step]
                ops.extend(("delete", k) for k in victims)
            self.plan.append(ops)
        for rank, ops in enumerate(self.plan):
            for kind, key in ops:
                if kind == "insert":
                    self.oracle.insert(key)
        for rank, ops in enumerate(self.plan):
            for kind, key in ops:
                if kind == "delete":
                    self.oracle.delete(key)

    def _is_source(self, rank):
        if self.sources is not None:
            return rank in self.sources
        if self.key_mode == "skewed":
            return rank != 0  # rank 0 is the single hot owner
        return True

    # -- execution -------------------------------------------------------

    def _issue(self, proc, kind, key):
        owner, _ = K.placement(key, self.cfg.num_procs, self.table_size)
        layout = self.layouts[owner]
        if kind == "insert":
            if self.scheme == "rma":
                yield from insert_rma(proc, owner, layout, key)
            elif self.scheme == "am":
                yield from proc.am_send(owner, word(key))
            else:
                yield from insert_aa(proc, owner, layout, key)
        else:
            if self.scheme == "rma":
                yield from delete_rma(proc, owner, layout, key)
            elif self.scheme == "am":
                raise ValueError("message scheme has no delete path")
            else:
                yield from proc.put(owner, self.delete_pages[owner], word(key))

    def _compute_gap(self, mean_ns):
        r = self.cfg.r_comp
        return r / (1.0 - r) * mean_ns if r > 0.0 else 0.0

    def _app(self, rank, barrier):
        proc = self.sim.procs[rank]
        ops = self.plan[rank]
        inserts = [op for op in ops if op[0] == "insert"]
        deletes = [op for op in ops if op[0] == "delete"]
        engine = self.sim.engine
        gap = 0.0
        started = engine.now
        for i, (kind, key) in enumerate(inserts):
            if gap:
                yield from proc.cpu.busy(gap)
            yield from self._timed_issue(proc, kind, key)
            if i + 1 == self.WARMUP_OPS and self.cfg.r_comp > 0.0:
                gap = self._compute_gap((engine.now - started) / self.WARMUP_OPS)
        if deletes:
            yield from self._fence(proc)
            yield from barrier.arrive()
            for kind, key in deletes:
                yield from self._timed_issue(proc, kind, key)
        yield from self._fence(proc)

    def _timed_issue(self, proc, kind, key):
        before = self.sim.metrics.remote_ops
        yield from self._issue(proc, kind, key)
        self.sim.metrics.ops += 1
        if self.record_ops:
            self.op_log.append((proc.rank, kind, key, self.sim.metrics.remote_ops - before))

    def _fence(self, proc):
        """Consumption barrier towards every owner this scheme needs one for."""
        if self.scheme.startswith("aa"):
            for owner in range(self.cfg.num_procs):
                if owner != proc.rank:
                    yield from proc.flush(owner)
        elif self.scheme == "rma":
            for owner in range(self.cfg.num_procs):
                if owner != proc.rank:
                    yield from proc.rma_flush(owner)

    def run(self, max_events=None):
        sources = [r for r in range(self.cfg.num_procs) if self.plan[r]]
        barrier = PhaseBarrier(self.sim.engine, len(sources))
        for rank in sources:
            self.sim.add_app(rank, self._app(rank, barrier))
        kw = {"max_events": max_events} if max_events else {}
        metrics = self.sim.run(**kw)
        metrics.collisions = sum(s.collisions for s in self.streams)
        return metrics

    # -- inspection ------------------------------------------------------

    def contents(self, rank):
        return extract_contents(self.sim.procs[rank].memory, self.layouts[rank])

    def oracle_contents(self, rank):
        return self.oracle.contents(rank)

    def measured_r_cols(self):
        issued = sum(s.issued for s in self.streams)
        return sum(s.collisions for s in self.streams) / issued if issued else 0.0


def run_scheme(cfg, **bench_kw):
    bench = DhtBench(cfg, **bench_kw)
    metrics = bench.run()
    return bench, metrics
