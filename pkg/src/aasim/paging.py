"""Extended page tables, the translation cache, and access classification.

Page-table entries carry, besides the usual write/read protection bits, the
logging controls that turn a device access into a log record: WL/WLD for
writes, RL/RLD for reads, the E bit selecting the access-log vs the fault-log
destination, and a 10-bit domain id (IUID) naming the per-domain log.
"""

from collections import OrderedDict
from dataclasses import dataclass

from .memory import PAGE_SHIFT

IUID_BITS = 10
IUID_LIMIT = 1 << IUID_BITS
FRAME_BITS = 40

# Packed 64-bit layout: flag bits low, frame in 12..51, IUID in 52..61.
_FLAG_PRESENT = 1 << 0
_FLAG_W = 1 << 1
_FLAG_R = 1 << 2
_FLAG_WL = 1 << 3
_FLAG_WLD = 1 << 4
_FLAG_RL = 1 << 5
_FLAG_RLD = 1 << 6
_FLAG_E = 1 << 7
IUID_SHIFT = 52

PUT = "put"
GET = "get"

# Radix tree geometry: 4 levels of 9 bits over a 36-bit page-number space.
LEVELS = 4
LEVEL_BITS = 9
LEVEL_MASK = (1 << LEVEL_BITS) - 1
CONTEXT_WALK_ACCESSES = 2


class PagingError(Exception):
    pass


@dataclass
class Pte:
    frame: int
    w: bool = False
    r: bool = False
    wl: bool = False
    wld: bool = False
    rl: bool = False
    rld: bool = False
    e: bool = False
    iuid: int = 0

    def __post_init__(self):
        if not (0 <= self.iuid < IUID_LIMIT):
            raise PagingError("iuid %d outside [0, %d)" % (self.iuid, IUID_LIMIT))
        if not (0 <= self.frame < (1 << FRAME_BITS)):
            raise PagingError("frame %d out of range" % self.frame)

    def normalized(self):
        """Data-logging implies logging: fold wld into wl and rld into rl."""
        return Pte(
            frame=self.frame,
            w=self.w,
            r=self.r,
            wl=self.wl or self.wld,
            wld=self.wld,
            rl=self.rl or self.rld,
            rld=self.rld,
            e=self.e,
            iuid=self.iuid,
        )

    def to_bits(self):
        bits = _FLAG_PRESENT
        for flag, mask in (
            (self.w, _FLAG_W),
            (self.r, _FLAG_R),
            (self.wl, _FLAG_WL),
            (self.wld, _FLAG_WLD),
            (self.rl, _FLAG_RL),
            (self.rld, _FLAG_RLD),
            (self.e, _FLAG_E),
        ):
            if flag:
                bits |= mask
        bits |= self.frame << PAGE_SHIFT
        bits |= self.iuid << IUID_SHIFT
        return bits

    @classmethod
    def from_bits(cls, bits):
        if not bits & _FLAG_PRESENT:
            raise PagingError("entry not present")
        return cls(
            frame=(bits >> PAGE_SHIFT) & ((1 << FRAME_BITS) - 1),
            w=bool(bits & _FLAG_W),
            r=bool(bits & _FLAG_R),
            wl=bool(bits & _FLAG_WL),
            wld=bool(bits & _FLAG_WLD),
            rl=bool(bits & _FLAG_RL),
            rld=bool(bits & _FLAG_RLD),
            e=bool(bits & _FLAG_E),
            iuid=(bits >> IUID_SHIFT) & (IUID_LIMIT - 1),
        )


@dataclass
class ActionSet:
    """What the bridge must do for one transaction against one page."""

    memory_effect: bool
    log_meta: bool
    log_data: bool
    to_access_log: bool  # False => fault log, when any logging happens
    iuid: int
    blocked: bool

    @property
    def logged(self):
        return self.log_meta or self.log_data


def classify(pte, kind):
    """Total classification of an access against a (possibly raw) PTE.

    A set data-logging bit implies logging even if the meta bit was left
    clear; blocked gets never log data because there is no returned value to
    copy.
    """
    if kind == PUT:
        memory_effect = pte.w
        log_meta = pte.wl or pte.wld
        log_data = pte.wld
    elif kind == GET:
        memory_effect = pte.r
        log_meta = pte.rl or pte.rld
        log_data = pte.rld and pte.r
    else:
        raise PagingError("unknown access kind %r" % (kind,))
    return ActionSet(
        memory_effect=memory_effect,
        log_meta=log_meta,
        log_data=log_data,
        to_access_log=bool(pte.e),
        iuid=pte.iuid,
        blocked=not memory_effect,
    )


class PageTable:
    """Four-level radix tree keyed by the 36-bit virtual page number."""

    def __init__(self):
        self._root = {}

    @staticmethod
    def _indices(vpn):
        out = []
        for level in range(LEVELS):
            shift = (LEVELS - 1 - level) * LEVEL_BITS
            out.append((vpn >> shift) & LEVEL_MASK)
        return out

    def map_page(self, vaddr, pte):
        if vaddr % (1 << PAGE_SHIFT):
            raise PagingError("map address %d not page aligned" % vaddr)
        node = self._root
        idx = self._indices(vaddr >> PAGE_SHIFT)
        for i in idx[:-1]:
            node = node.setdefault(i, {})
        node[idx[-1]] = pte.normalized()

    def unmap_page(self, vaddr):
        node = self._root
        idx = self._indices(vaddr >> PAGE_SHIFT)
        for i in idx[:-1]:
            node = node.get(i)
            if node is None:
                return
        node.pop(idx[-1], None)

    def lookup(self, vpn):
        """Returns (pte or None, memory accesses spent walking)."""
        node = self._root
        idx = self._indices(vpn)
        for depth, i in enumerate(idx[:-1]):
            nxt = node.get(i)
            if nxt is None:
                return None, depth + 1
            node = nxt
        pte = node.get(idx[-1])
        if pte is None:
            return None, LEVELS
        return pte, LEVELS


class IotlbCache:
    """Set-associative translation cache over page numbers.

    Associativity is 1, 2, 4, or 'full'; replacement is per-set LRU or
    seeded-random. The set index is page mod set_count.
    """

    def __init__(self, capacity, assoc, policy, rng):
        if capacity <= 0:
            raise PagingError("iotlb capacity must be positive")
        if policy not in ("lru", "rnd"):
            raise PagingError("unknown iotlb policy %r" % (policy,))
        if assoc == "full":
            ways = capacity
        else:
            ways = int(assoc)
            if ways not in (1, 2, 4):
                raise PagingError("unsupported associativity %r" % (assoc,))
        if capacity % ways:
            raise PagingError("capacity %d not divisible by %d ways" % (capacity, ways))
        self.capacity = capacity
        self.ways = ways
        self.set_count = capacity // ways
        self.policy = policy
        self.rng = rng
        self._sets = [OrderedDict() for _ in range(self.set_count)]
        self.hits = 0
        self.misses = 0

    def _set_for(self, page):
        return self._sets[page % self.set_count]

    def lookup(self, page):
        s = self._set_for(page)
        pte = s.get(page)
        if pte is None:
            self.misses += 1
            return None
        self.hits += 1
        if self.policy == "lru":
            s.move_to_end(page)
        return pte

    def insert(self, page, pte):
        s = self._set_for(page)
        if page in s:
            s[page] = pte
            if self.policy == "lru":
                s.move_to_end(page)
            return
        if len(s) >= self.ways:
            if self.policy == "lru":
                s.popitem(last=False)
            else:
                victim = self.rng.randrange(len(s))
                del s[list(s.keys())[victim]]
        s[page] = pte

    def invalidate(self, page):
        self._set_for(page).pop(page, None)

    def flush(self):
        for s in self._sets:
            s.clear()

    @property
    def hit_rate(self):
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


@dataclass
class WalkResult:
    pte: object  # Pte or None on fault
    phys: int
    mem_accesses: int
    fault: bool


class AddressTranslator:
    """Translation front end of one bridge: context cache + IOTLB + table.

    All devices behind one bridge share a single page table here, so the
    IOTLB is tagged by page number alone; the context cache charges its walk
    cost once per device.
    """

    def __init__(self, page_table, iotlb):
        self.page_table = page_table
        self.iotlb = iotlb
        self._devices = set()
        self._ctx_seen = set()
        self.walks = 0
        self.walk_accesses = 0

    def register_device(self, device_id):
        self._devices.add(device_id)

    def map_page(self, vaddr, pte):
        self.page_table.map_page(vaddr, pte)
        self.iotlb.invalidate(vaddr >> PAGE_SHIFT)

    def walk(self, device_id, addr):
        if device_id not in self._devices:
            raise PagingError("unregistered device %r" % (device_id,))
        cost = 0
        if device_id not in self._ctx_seen:
            self._ctx_seen.add(device_id)
            cost += CONTEXT_WALK_ACCESSES
        page = addr >> PAGE_SHIFT
        pte = self.iotlb.lookup(page)
        if pte is None:
            pte, accesses = self.page_table.lookup(page)
            cost += accesses
            self.walks += 1
            self.walk_accesses += accesses
            if pte is None:
                return WalkResult(None, 0, cost, True)
            self.iotlb.insert(page, pte)
        phys = (pte.frame << PAGE_SHIFT) | (addr & ((1 << PAGE_SHIFT) - 1))
        return WalkResult(pte, phys, cost, False)
