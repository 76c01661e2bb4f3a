"""System assembly: nodes, wires, and the run loop with quiescence detection.

Every rank is one node (memory, bridge, core, ingress wire). Remote ranks
appear at a node as source devices sharing the node's page table. The run
loop executes the application coroutines plus per-node consumer loops and a
sweeper that declares quiescence once every queue, log, and handle has
drained; a drained event heap with pending work, or a long stretch without
progress, raises a diagnostic deadlock error instead of hanging.
"""

import random

from .engine import Cpu, Engine
from .iommu import Iommu
from .link import BackChannel, Link
from .logbuf import FaultLog
from .memory import PhysMemory
from .metrics import Metrics
from .paging import AddressTranslator, IotlbCache, PageTable
from .runtime import Proc

_STREAM_LINK = 1
_STREAM_IOTLB = 2
_STREAM_KEYS = 3
_STREAM_MISC = 4

SWEEP_INTERVAL_NS = 1000.0
DEFAULT_EVENT_BUDGET = 50_000_000


class DeadlockError(RuntimeError):
    pass


class Simulation:
    def __init__(self, cfg):
        cfg.validate()
        self.cfg = cfg
        self.engine = Engine()
        self.metrics = Metrics()
        self.stopping = False
        self._ran = False
        self._txn_counter = 0
        self._apps = []
        self._apps_done = 0
        self.procs = []
        self.links = []
        self._backchannels = []
        for rank in range(cfg.num_procs):
            memory = PhysMemory(rank)
            iotlb = IotlbCache(
                cfg.iotlb_size, cfg.iotlb_assoc, cfg.iotlb_policy, self.rng_for(_STREAM_IOTLB, rank)
            )
            translator = AddressTranslator(PageTable(), iotlb)
            fault_log = FaultLog(cfg.fault_log_entries)
            iommu = Iommu(self.engine, cfg, memory, translator, fault_log, self.metrics, rank)
            cpu = Cpu(self.engine)
            proc = Proc(self, rank, cfg, self.engine, self.metrics, memory, translator, iommu, cpu)
            link = Link(self.engine, iommu.on_arrival, cfg, self.rng_for(_STREAM_LINK, rank), self.metrics)
            iommu.link = link
            self.procs.append(proc)
            self.links.append(link)
        for proc in self.procs:
            for src in self.procs:
                proc.translator.register_device(src.rank)
                channel = BackChannel(self.engine, src.on_completion, cfg, self.metrics)
                proc.iommu.backchannels[src.rank] = channel
                self._backchannels.append(channel)
            proc.setup_sysflush()

    # -- plumbing ----------------------------------------------------------

    def rng_for(self, stream, idx=0):
        return random.Random(self.cfg.seed * 0x9E3779B1 + stream * 65537 + idx)

    def next_txn_id(self):
        self._txn_counter += 1
        return self._txn_counter

    def ingress_of(self, target):
        return self.links[target]

    def add_app(self, rank, gen):
        self._apps.append((rank, gen))

    # -- run loop ----------------------------------------------------------

    def _wrap_app(self, gen):
        yield from gen
        self._apps_done += 1
        self.engine.note_activity()

    def _sweeper(self):
        while True:
            yield SWEEP_INTERVAL_NS
            if self._apps_done == len(self._apps):
                if self.drained():
                    self.stopping = True
                    for proc in self.procs:
                        proc._wake.fire()
                    return
                # Nudge parked consumers at sub-batch leftovers.
                for proc in self.procs:
                    proc._wake.fire()
            if self.engine.now - self.engine.last_activity > self.cfg.stall_limit_ns:
                raise DeadlockError(self.diagnose())

    def drained(self):
        if any(not p.drained() for p in self.procs):
            return False
        if any(not l.idle() for l in self.links):
            return False
        if any(c.outstanding for c in self._backchannels):
            return False
        for proc in self.procs:
            iommu = proc.iommu
            if iommu.ingress or iommu.tag_buffer or not iommu.flush_states_idle():
                return False
        return True

    def run(self, max_events=DEFAULT_EVENT_BUDGET):
        if self._ran:
            raise RuntimeError("simulation already ran")
        self._ran = True
        for proc in self.procs:
            if proc._handlers:
                self.engine.spawn(proc.consumer())
            if proc.inbox_addr is not None:
                self.engine.spawn(proc.am_consumer())
        for _rank, gen in self._apps:
            self.engine.spawn(self._wrap_app(gen))
        self.engine.spawn(self._sweeper())
        self.engine.run(max_events=max_events)
        if not self.stopping and self._apps:
            raise DeadlockError("event heap drained without quiescence\n" + self.diagnose())
        self._aggregate()
        return self.metrics

    def _aggregate(self):
        for proc in self.procs:
            iotlb = proc.translator.iotlb
            self.metrics.iotlb_hits += iotlb.hits
            self.metrics.iotlb_misses += iotlb.misses
            for log in proc.iommu.alogs:
                self.metrics.records_committed += log.records_committed
                self.metrics.records_consumed += log.records_consumed
            self.metrics.fault_entries += len(proc.iommu.fault_log.entries)
            self.metrics.fault_drops += proc.iommu.fault_log.drops
        self.metrics.finalize(self.cfg, self.engine)

    def diagnose(self):
        lines = ["deadlock diagnostics at t=%.0f ns:" % self.engine.now]
        lines.append("  apps done: %d/%d" % (self._apps_done, len(self._apps)))
        for proc in self.procs:
            iommu = proc.iommu
            link = self.links[proc.rank]
            bits = []
            if link.queued or link.in_flight:
                bits.append("link queued=%d in_flight=%d" % (link.queued, link.in_flight))
            if iommu.ingress:
                bits.append("ingress=%d" % len(iommu.ingress))
            if iommu.tag_buffer:
                bits.append("open txns=%d" % len(iommu.tag_buffer))
            if proc.live_ops:
                bits.append("live ops=%d" % proc.live_ops)
            if proc.inbox:
                bits.append("inbox=%d" % len(proc.inbox))
            for iuid, binding in sorted(proc._handlers.items()):
                log = binding.log
                if not log.drained():
                    bits.append(
                        "log%d head=%d committed=%d tail=%d"
                        % (iuid, log.head, log.committed_head, log.tail)
                    )
            for addr, state in sorted(iommu.flush_pages.items()):
                if not state.idle():
                    bits.append("flush@%d waiting=%d" % (addr, (1 if state.active else 0) + len(state.queue)))
            if bits:
                lines.append("  rank %d: %s" % (proc.rank, "; ".join(bits)))
        return "\n".join(lines)
