import itertools
import random

import pytest

from aasim.paging import (
    GET,
    PUT,
    AddressTranslator,
    IotlbCache,
    PageTable,
    PagingError,
    Pte,
    classify,
)


def bits_pte(w=0, r=0, wl=0, wld=0, rl=0, rld=0, e=0, iuid=0, frame=1):
    return Pte(
        frame=frame,
        w=bool(w),
        r=bool(r),
        wl=bool(wl),
        wld=bool(wld),
        rl=bool(rl),
        rld=bool(rld),
        e=bool(e),
        iuid=iuid,
    )


# -- classification -------------------------------------------------------


def test_active_put_page():
    acts = classify(bits_pte(w=0, wl=1, wld=1, e=1, iuid=7), PUT)
    assert not acts.memory_effect
    assert acts.log_meta and acts.log_data
    assert acts.to_access_log and acts.iuid == 7
    assert acts.blocked


def test_legacy_fault_page():
    acts = classify(bits_pte(w=0, wl=1, wld=0, e=0), PUT)
    assert not acts.memory_effect
    assert acts.log_meta and not acts.log_data
    assert not acts.to_access_log


def test_statistics_page():
    acts = classify(bits_pte(w=1, wl=1, e=1), PUT)
    assert acts.memory_effect and acts.log_meta and not acts.log_data
    assert not acts.blocked


def test_get_logging_page():
    acts = classify(bits_pte(r=1, rl=1, rld=1, e=1), GET)
    assert acts.memory_effect and acts.log_meta and acts.log_data


def test_blocked_get_never_logs_data():
    acts = classify(bits_pte(r=0, rl=1, rld=1, e=1), GET)
    assert acts.blocked
    assert acts.log_meta
    assert not acts.log_data


def test_plain_pages():
    assert not classify(bits_pte(w=1), PUT).logged
    assert not classify(bits_pte(r=1), GET).logged
    assert classify(bits_pte(), PUT).blocked


def test_classify_total_and_consistent():
    # every raw bit combination classifies without error and obeys the
    # structural rules
    for combo in itertools.product((0, 1), repeat=7):
        w, r, wl, wld, rl, rld, e = combo
        pte = bits_pte(w, r, wl, wld, rl, rld, e)
        for kind in (PUT, GET):
            acts = classify(pte, kind)
            assert acts.blocked == (not acts.memory_effect)
            if acts.log_data:
                assert acts.log_meta
            if kind == GET and acts.log_data:
                assert acts.memory_effect
            if acts.logged:
                assert acts.to_access_log == bool(e)


def test_classify_rejects_unknown_kind():
    with pytest.raises(PagingError):
        classify(bits_pte(w=1), "swizzle")


# -- pte encoding ---------------------------------------------------------


def test_pte_roundtrip_and_iuid_field_position():
    pte = bits_pte(w=1, wl=1, wld=1, e=1, iuid=0x2A5, frame=0x123)
    packed = pte.to_bits()
    assert (packed >> 52) & 0x3FF == 0x2A5
    assert Pte.from_bits(packed) == pte.normalized()


def test_pte_normalization_implies_meta_bits():
    pte = bits_pte(wld=1, rld=1).normalized()
    assert pte.wl and pte.rl


def test_iuid_range_checked():
    with pytest.raises(PagingError):
        bits_pte(iuid=1024)
    bits_pte(iuid=1023)


# -- page table -----------------------------------------------------------


def test_walk_cost_is_four_levels():
    table = PageTable()
    table.map_page(0x5000, bits_pte(w=1, frame=5))
    pte, cost = table.lookup(5)
    assert pte.frame == 5
    assert cost == 4


def test_unmapped_cost_counts_levels_visited():
    table = PageTable()
    assert table.lookup(5) == (None, 1)
    table.map_page(0x5000, bits_pte(w=1, frame=5))
    # same leaf table, different slot: all four levels visited
    assert table.lookup(6) == (None, 4)


def test_map_requires_alignment():
    with pytest.raises(PagingError):
        PageTable().map_page(0x5001, bits_pte(w=1))


# -- iotlb ----------------------------------------------------------------


def test_iotlb_hit_miss_counters():
    tlb = IotlbCache(4, "full", "lru", random.Random(1))
    assert tlb.lookup(3) is None
    tlb.insert(3, bits_pte(w=1, frame=3))
    assert tlb.lookup(3).frame == 3
    assert (tlb.hits, tlb.misses) == (1, 1)


def test_iotlb_lru_evicts_least_recent():
    tlb = IotlbCache(2, "full", "lru", random.Random(1))
    tlb.insert(1, bits_pte(frame=1))
    tlb.insert(2, bits_pte(frame=2))
    tlb.lookup(1)  # 2 is now least recent
    tlb.insert(3, bits_pte(frame=3))
    assert tlb.lookup(2) is None
    assert tlb.lookup(1) is not None
    assert tlb.lookup(3) is not None


def test_iotlb_set_index_is_page_mod_sets():
    tlb = IotlbCache(4, 1, "lru", random.Random(1))  # 4 direct-mapped sets
    tlb.insert(0, bits_pte(frame=10))
    tlb.insert(4, bits_pte(frame=14))  # same set, evicts page 0
    tlb.insert(1, bits_pte(frame=11))  # different set, untouched
    assert tlb.lookup(0) is None
    assert tlb.lookup(4).frame == 14
    assert tlb.lookup(1).frame == 11


def test_iotlb_cyclic_trace_defeats_lru_but_not_rnd():
    # capacity+1 pages looped: LRU evicts exactly the next page needed
    def run(policy, seed):
        tlb = IotlbCache(4, "full", policy, random.Random(seed))
        for _ in range(40):
            for page in range(5):
                if tlb.lookup(page) is None:
                    tlb.insert(page, bits_pte(frame=page))
        return tlb.hits

    assert run("lru", 0) == 0
    assert run("rnd", 0) > 0


def test_iotlb_invalid_config_rejected():
    with pytest.raises(PagingError):
        IotlbCache(4, 3, "lru", random.Random(1))
    with pytest.raises(PagingError):
        IotlbCache(6, 4, "lru", random.Random(1))
    with pytest.raises(PagingError):
        IotlbCache(4, "full", "mru", random.Random(1))


# -- translator -----------------------------------------------------------


def build_translator(capacity=8):
    table = PageTable()
    tlb = IotlbCache(capacity, "full", "lru", random.Random(3))
    tr = AddressTranslator(table, tlb)
    tr.register_device(0)
    return tr


def test_translator_costs_and_caching():
    tr = build_translator()
    tr.map_page(0x3000, bits_pte(w=1, frame=3))
    first = tr.walk(0, 0x3008)
    # context walk (2) + four-level table walk (4)
    assert first.mem_accesses == 6
    assert first.phys == 0x3008
    second = tr.walk(0, 0x3010)
    assert second.mem_accesses == 0
    assert second.phys == 0x3010


def test_translator_fault_on_unmapped():
    tr = build_translator()
    res = tr.walk(0, 0x9000)
    assert res.fault and res.pte is None


def test_remap_invalidates_cached_translation():
    tr = build_translator()
    tr.map_page(0x3000, bits_pte(w=1, frame=3))
    tr.walk(0, 0x3000)
    tr.map_page(0x3000, bits_pte(w=1, frame=9))
    res = tr.walk(0, 0x3004)
    assert res.mem_accesses == 4  # re-walk, context already cached
    assert res.pte.frame == 9
    assert res.phys == 0x9004


def test_cache_transparency_on_random_traces():
    # cached and uncached translators agree on every result
    rng = random.Random(42)
    cached = build_translator(capacity=4)
    plain = PageTable()
    pages = list(range(16))
    for page in pages:
        pte = bits_pte(w=1, frame=page + 100)
        cached.map_page(page * 4096, pte)
        plain.map_page(page * 4096, pte)
    for _ in range(500):
        page = rng.choice(pages)
        if rng.random() < 0.1:
            newpte = bits_pte(w=1, frame=rng.randrange(1000))
            cached.map_page(page * 4096, newpte)
            plain.map_page(page * 4096, newpte)
            continue
        got = cached.walk(0, page * 4096 + 8)
        want, _ = plain.lookup(page)
        assert got.pte.frame == want.frame
        assert got.phys == (want.frame << 12) + 8
