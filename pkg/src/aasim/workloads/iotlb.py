"""Translation-cache sweeps: hit rates on a replayed trace, and end-to-end
insert rates with different cache shapes.

The replay path drives a standalone cache with the page trace a hot-bucket
hash-table run produces, looped several times, across sizes, associativities
and both replacement policies. The end-to-end path runs the actual insert
workload against one hot owner, with the issue cost turned down far enough
that the owner bridge (and so its translation cache) is the bottleneck.
"""

import random

from ..paging import IotlbCache
from . import keys as K
from .dht import DhtBench

SIZES = (4, 8, 16, 32)
ASSOCS = (1, 2, 4, "full")
POLICIES = ("lru", "rnd")


def dht_page_trace(rng, table_pages=64, count=2000, skew=1.1, loops=3):
    """Page visits of a skewed bucket stream, replayed loops times."""
    return K.zipf_page_trace(rng, table_pages, count, skew, loops)


def replay_hit_rate(trace, size, assoc, policy, seed):
    cache = IotlbCache(size, assoc, policy, random.Random(seed))
    for page in trace:
        if cache.lookup(page) is None:
            cache.insert(page, object())
    total = cache.hits + cache.misses
    return cache.hits / total if total else 0.0


def sweep_hit_rates(seed=1, sizes=SIZES, assocs=ASSOCS, table_pages=64, count=2000):
    """Rows of (size, assoc, policy, hit_rate) over the replayed trace."""
    trace = dht_page_trace(random.Random(seed * 65537), table_pages, count)
    rows = []
    for size in sizes:
        for assoc in assocs:
            if assoc != "full" and size % int(assoc):
                continue
            for policy in POLICIES:
                rate = replay_hit_rate(trace, size, assoc, policy, seed)
                rows.append((size, assoc, policy, rate))
    return rows


def insert_rate(cfg, assoc, ops=300, skew=1.1, page_stride=2):
    """Hot-owner insert throughput with the given cache shape at the owner.

    The low issue cost keeps sources well ahead of the owner bridge and the
    cheap handler keeps the consumer ahead of it too, so the run time tracks
    the bridge's walk stalls and with them the cache misses.
    """
    run_cfg = cfg.replace(
        scheme="aa-sp",
        iotlb_assoc=assoc,
        iotlb_policy="lru",
        issue_cost_ns=300.0,
        handler_cost_ns=10.0,
        ops_per_proc=ops,
    )
    bench = DhtBench(run_cfg, key_mode="skewed", skew=skew, page_stride=page_stride)
    metrics = bench.run()
    return metrics.throughput_ops_per_s, metrics
