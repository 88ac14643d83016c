import pytest
from hypothesis import given, strategies as st

from ccaccel.memsim import (AccessRequest, InvalidRegion, LatencyConfig, LineNotDirty, MemKind, MemorySystem,
                            Op, Origin, RegionOverlap, TokenBucket, UnmappedAddress)
from ccaccel.simcore import Engine

GiB = 1 << 30


def dma_write(m, addr, size, tph=None):
    return m.access(AccessRequest(addr, size, Op.WRITE, Origin.DMA, tph))


def test_register_first_region_gets_id_zero(mem):
    assert mem.register_region(0x0, GiB, MemKind.DRAM, tph_on_write=True) == 0


def test_overlapping_region_rejected(mem):
    mem.register_region(0x0, 4096)
    with pytest.raises(RegionOverlap):
        mem.register_region(2048, 4096)


def test_tph_on_nvm_rejected(mem):
    with pytest.raises(InvalidRegion, match="TPH must not target NVM"):
        mem.register_region(0x0, 4096, MemKind.NVM, tph_on_write=True)


def test_access_must_fit_in_one_region(mem):
    mem.register_region(0x0, 4096)
    mem.register_region(4096, 4096)
    with pytest.raises(UnmappedAddress):
        mem.access(AccessRequest(4000, 200, Op.READ, Origin.CPU))
    with pytest.raises(ValueError):
        AccessRequest(0, 0, Op.READ, Origin.CPU)


def test_dma_write_both_off_goes_to_memory(mem):
    mem.register_region(0x0, GiB)
    dma_write(mem, 0, 64)
    c = mem.read_counters()
    assert c["mem_write_bytes"] == 64 and c["llc_write_bytes"] == 0


def test_dma_write_tph_on_goes_to_llc(mem):
    mem.register_region(0x0, GiB, tph_on_write=True)
    dma_write(mem, 0, 64)
    c = mem.read_counters()
    assert c["llc_write_bytes"] == 64 and c["mem_write_bytes"] == 0


def test_ddio_on_tph_off_goes_to_llc(mem):
    mem.register_region(0x0, GiB)
    mem.set_ddio(True)
    dma_write(mem, 0, 64)
    assert mem.read_counters()["llc_write_bytes"] == 64


def test_accel_dram_miss_latency_is_190(mem):
    mem.register_region(0x0, GiB)
    assert mem.access(AccessRequest(0, 64, Op.READ, Origin.ACCEL)) == 2 * 50 + 90


def test_accel_read_of_cpu_cached_line_hits_llc(mem):
    mem.register_region(0x0, GiB)
    mem.access(AccessRequest(0, 64, Op.WRITE, Origin.CPU))
    assert mem.access(AccessRequest(0, 64, Op.READ, Origin.ACCEL)) == 2 * 50 + 20


def test_accel_read_does_not_fill_llc(mem):
    mem.register_region(0x0, GiB)
    a = AccessRequest(0, 64, Op.READ, Origin.ACCEL)
    assert mem.access(a) == mem.access(a) == 190


def test_single_dirty_nvm_line_costs_a_full_unit(mem):
    mem.register_region(0x0, GiB, MemKind.NVM)
    mem.access(AccessRequest(64, 64, Op.WRITE, Origin.CPU))
    assert mem.evict(64) == 256
    assert mem.read_counters()["nvm_media_write_bytes"] == 256


def test_four_dirty_lines_in_a_unit_are_co_evicted(mem):
    mem.register_region(0x0, GiB, MemKind.NVM)
    mem.access(AccessRequest(0, 256, Op.WRITE, Origin.CPU))
    assert mem.evict(0) == 256
    assert mem.dirty_lines() == []
    with pytest.raises(LineNotDirty):
        mem.evict(64)
    assert mem.read_counters()["nvm_media_write_bytes"] == 256


def test_dirty_dram_line_costs_one_line(mem):
    mem.register_region(0x0, GiB)
    mem.access(AccessRequest(0, 64, Op.WRITE, Origin.CPU))
    assert mem.evict(0) == 64


def test_ddio_default_off_and_toggle_keeps_counters(engine):
    m = MemorySystem(engine)
    assert m.ddio_enabled is False
    m.register_region(0x0, GiB)
    dma_write(m, 0, 128)
    before = m.read_counters()
    m.set_ddio(True)
    assert m.read_counters() == before
    dma_write(m, 4096, 64)
    after = m.read_counters()
    assert after["mem_write_bytes"] == before["mem_write_bytes"] and after["llc_write_bytes"] == 64


def test_fresh_counters_are_zero(mem):
    c = mem.read_counters()
    for k in ("mem_read_bytes", "mem_write_bytes", "llc_write_bytes", "nvm_media_write_bytes",
              "cc_link_bytes", "pcie_bytes"):
        assert c[k] == 0


@pytest.mark.parametrize("tph", [False, True])
def test_n_dma_bytes_land_where_expected(mem, tph):
    mem.register_region(0x0, GiB, tph_on_write=tph)
    n = 0
    for i in range(100):
        dma_write(mem, i * 4096, 1000)
        n += 1000
    c = mem.read_counters()
    assert c["llc_write_bytes" if tph else "mem_write_bytes"] == n
    assert c["mem_write_bytes" if tph else "llc_write_bytes"] == 0


def test_flush_cleans_lines_and_writes_units(mem):
    mem.register_region(0x0, GiB, MemKind.NVM)
    mem.access(AccessRequest(0, 512, Op.WRITE, Origin.CPU))
    assert mem.flush(0, 512) > 0
    assert mem.dirty_lines() == []
    assert mem.read_counters()["nvm_media_write_bytes"] == 512
    assert mem.flush(0, 512) == 0


def test_nvm_amplification_ratio_is_four(mem):
    mem.register_region(0x0, GiB, MemKind.NVM)
    rng = mem.engine.register_stream("t.units")
    units = set()
    while len(units) < 2000:
        units.add(rng.below(GiB // 256))
    for u in units:
        a = u * 256 + 64 * rng.below(4)
        mem.access(AccessRequest(a, 64, Op.WRITE, Origin.CPU))
        mem.evict(a)
    c = mem.read_counters()
    assert c["nvm_media_write_bytes"] / c["nvm_logical_write_bytes"] == 4.0


def test_both_off_never_writes_llc_from_dma(mem):
    mem.register_region(0x0, GiB)
    mem.register_region(GiB, GiB, MemKind.NVM)
    for i in range(200):
        dma_write(mem, (i % 2) * GiB + i * 8192, 512)
    assert mem.read_counters()["llc_write_bytes"] == 0


@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.sampled_from(["DRAM", "NVM"]),
                          st.integers(0, 1000), st.integers(1, 4096)), min_size=1, max_size=40))
def test_dma_destination_trichotomy(writes):
    m = MemorySystem(Engine(1))
    m.register_region(0, 64 << 20, MemKind.DRAM)
    m.register_region(64 << 20, 64 << 20, MemKind.NVM)
    for ddio, tph, kind, slot, size in writes:
        m.set_ddio(ddio)
        tph = tph and kind == "DRAM"
        addr = (0 if kind == "DRAM" else 64 << 20) + slot * 8192
        before = m.read_counters()
        dma_write(m, addr, size, tph)
        after = m.read_counters()
        d = {k: after.get(k, 0) - before.get(k, 0) for k in after}
        wb = d.get("llc_evictions_dirty", 0)
        to_llc = d["llc_write_bytes"]
        to_mem = d.get("dram_media_write_bytes", 0) + d.get("nvm_logical_write_bytes", 0)
        assert wb == 0
        assert (to_llc, to_mem) in ((size, 0), (0, size))
        assert (to_llc == size) == (ddio or tph)


def test_latency_is_deterministic_without_evictions():
    def run():
        m = MemorySystem(Engine(5))
        m.register_region(0, 1 << 24)
        return [m.access(AccessRequest(i * 64, 64, op, o)) for i in range(50)
                for op, o in ((Op.WRITE, Origin.CPU), (Op.READ, Origin.ACCEL), (Op.WRITE, Origin.DMA))]
    assert run() == run()


def test_gather_and_batch_reads(mem):
    r1 = mem.alloc_region(4096)
    r2 = mem.alloc_region(4096, attached="accel")
    mem.write(r1.base + 64, b"a" * 8)
    mem.write(r2.base + 128, b"b" * 8)
    got = mem.gather([r1.base + 64, r2.base + 128], 8)
    assert bytes(got[0]) == b"a" * 8 and bytes(got[1]) == b"b" * 8
    lat = mem.accel_read_batch([r1.base + 64, r2.base + 128], 8)
    assert lat[0] == 190 and lat[1] == mem.cfg.accel_mem_access_ns


def test_large_region_storage_round_trip(mem):
    r = mem.alloc_region(256 << 20)
    mem.write(r.base + (200 << 20) - 3, b"xyzxyz")
    assert mem.read(r.base + (200 << 20) - 3, 6) == b"xyzxyz"
    assert mem.read(r.base, 4) == bytes(4)


def test_latency_config_validation():
    with pytest.raises(ValueError):
        LatencyConfig(nvm_write_granularity_bytes=100)
    with pytest.raises(ValueError):
        LatencyConfig(dram_access_ns=-1)


@given(st.floats(0.5, 100.0), st.lists(st.integers(1, 10_000), min_size=1, max_size=100))
def test_token_bucket_holds_the_sustained_rate(rate, sizes):
    tb = TokenBucket(rate, 4096)
    done = 0
    for n in sizes:
        done = max(done, tb.reserve(0, n))
    total = sum(sizes)
    # everything past the burst is paced at `rate`
    assert done >= (total - 4096) / rate - 1
    assert done <= total / rate + 1
