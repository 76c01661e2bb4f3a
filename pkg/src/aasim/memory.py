"""Per-node physical memory: a flat byte store with a page-aligned bump allocator."""

PAGE_SIZE = 4096
PAGE_SHIFT = 12


class MemoryError_(Exception):
    """Out-of-bounds or misaligned physical access."""


class PhysMemory:
    def __init__(self, node_id, size=0):
        self.node_id = node_id
        self.data = bytearray(size)
        self._regions = {}
        self._bump = 0

    @property
    def size(self):
        return len(self.data)

    def reserve_region(self, name, size):
        """Allocate a page-aligned region, growing the store if needed.

        Regions never overlap by construction (bump allocation) and each name
        is unique; returns the base address.
        """
        if name in self._regions:
            raise MemoryError_("region %r already reserved" % name)
        if size <= 0:
            raise MemoryError_("region size must be positive")
        base = self._bump
        span = -(-size // PAGE_SIZE) * PAGE_SIZE
        self._bump = base + span
        if self._bump > len(self.data):
            self.data.extend(bytearray(self._bump - len(self.data)))
        self._regions[name] = (base, span)
        return base

    def region(self, name):
        return self._regions[name]

    def region_of(self, addr):
        for name, (base, span) in self._regions.items():
            if base <= addr < base + span:
                return name
        return None

    def _check(self, addr, length):
        if addr < 0 or length < 0 or addr + length > len(self.data):
            raise MemoryError_(
                "access [%d, %d) outside memory of node %s (size %d)"
                % (addr, addr + length, self.node_id, len(self.data))
            )

    def read(self, addr, length):
        self._check(addr, length)
        return bytes(self.data[addr : addr + length])

    def write(self, addr, payload):
        self._check(addr, len(payload))
        self.data[addr : addr + len(payload)] = payload

    def read_word(self, addr):
        if addr % 8:
            raise MemoryError_("unaligned word read at %d" % addr)
        return int.from_bytes(self.read(addr, 8), "little")

    def write_word(self, addr, value):
        if addr % 8:
            raise MemoryError_("unaligned word write at %d" % addr)
        self.write(addr, (value & (2**64 - 1)).to_bytes(8, "little"))
