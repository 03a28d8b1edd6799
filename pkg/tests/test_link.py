import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbsfnsim import link
from mbsfnsim.channel import ChannelSnapshot
from mbsfnsim.link import (CqiRangeError, bler, cqi_efficiency,
                           cqi_threshold_db, decode_success, effective_sinr,
                           sinr_multicast, sinr_to_cqi, sinr_unicast)


def _snapshot(h_per_cell, noise_variance):
    h = np.asarray(h_per_cell, dtype=complex).reshape(1, -1, 1)
    return ChannelSnapshot(h=h, tti=0, noise_variance=noise_variance)


class TestSinrFormulas:
    def test_multicast_unit_case(self):
        snap = _snapshot([1.0], noise_variance=1.0)
        assert sinr_multicast(snap, {0}, 0, 0) == pytest.approx(1.0)

    def test_multicast_destructive_sum(self):
        snap = _snapshot([1.0, -1.0], noise_variance=1.0)
        assert sinr_multicast(snap, {0, 1}, 0, 0) == pytest.approx(0.0)

    def test_multicast_against_brute_force(self):
        rng = np.random.default_rng(5)
        h = rng.normal(size=19) + 1j * rng.normal(size=19)
        noise = 0.37
        area = set(range(7))
        snap = _snapshot(h, noise)
        got = sinr_multicast(snap, area, 0, 0)
        # independent term-by-term evaluation
        sig = abs(sum(h[j] for j in range(19) if j in area)) ** 2
        intf = sum(abs(h[l]) ** 2 for l in range(19) if l not in area)
        assert got == pytest.approx(sig / (noise + intf))

    def test_unicast_direct_substitution(self):
        snap = _snapshot([1.0], noise_variance=0.5)
        assert sinr_unicast(snap, 0, 0, 0) == pytest.approx(2.0)

    def test_unicast_symmetric_interference(self):
        g = 0.8
        snap = _snapshot([g] * 19, noise_variance=0.0)
        assert sinr_unicast(snap, 4, 0, 0) == pytest.approx(1.0 / 18.0)

    def test_interference_shrinks_under_multicast(self):
        # For a user served by an area cell the multicast denominator can
        # only lose terms relative to the unicast one, per realization.
        rng = np.random.default_rng(11)
        area = set(range(7))
        for _ in range(200):
            h = rng.normal(size=19) + 1j * rng.normal(size=19)
            intf_mc = sum(abs(h[l]) ** 2 for l in range(19) if l not in area)
            serving = int(rng.integers(0, 7))
            intf_uc = sum(abs(h[l]) ** 2 for l in range(19) if l != serving)
            assert intf_mc <= intf_uc + 1e-12

    def test_multicast_beats_unicast_in_distribution(self):
        rng = np.random.default_rng(17)
        n = 1200
        h = rng.normal(size=(n, 19)) + 1j * rng.normal(size=(n, 19))
        # weaker outer ring, as geometry would give
        h[:, 7:] *= 0.6
        noise = 1e-3
        area = set(range(7))
        mc, uc = [], []
        for k in range(n):
            snap = _snapshot(h[k], noise)
            mc.append(sinr_multicast(snap, area, 0, 0))
            uc.append(sinr_unicast(snap, 0, 0, 0))
        assert np.median(mc) > np.median(uc)

    def test_grid_helpers_match_scalar_ops(self):
        rng = np.random.default_rng(23)
        h = rng.normal(size=(3, 19, 4)) + 1j * rng.normal(size=(3, 19, 4))
        noise = 0.21
        mask = np.zeros(19, dtype=bool)
        mask[:7] = True
        snap = ChannelSnapshot(h=h, tti=0, noise_variance=noise)
        mc = link.multicast_sinr_grid(h, mask, noise)
        uc = link.unicast_sinr_grid(h, np.array([0, 3, 12]), noise)
        for u in range(3):
            for n in range(4):
                assert mc[u, n] == pytest.approx(
                    sinr_multicast(snap, set(range(7)), u, n))
        for u, cell in enumerate((0, 3, 12)):
            for n in range(4):
                assert uc[u, n] == pytest.approx(
                    sinr_unicast(snap, cell, u, n))


class TestCqiMapping:
    def test_floor_of_table(self):
        assert sinr_to_cqi([10 ** (-1.0)] * 4) == 1

    def test_boundary_inclusive(self):
        thr = cqi_threshold_db(7)
        assert sinr_to_cqi([10 ** (thr / 10.0)] * 6) == 7

    def test_mixed_rbs_against_oracle(self):
        sinrs = [10 ** 0.0, 10 ** 1.0]  # 0 dB and 10 dB
        got = sinr_to_cqi(sinrs)
        # explicit mutual-information average, then a linear table scan
        mi = np.mean([math.log2(1 + s) for s in sinrs])
        eff_db = 10 * math.log10(2 ** mi - 1)
        expected = 1
        for entry in link.CQI_TABLE:
            if entry.sinr_threshold_db <= eff_db:
                expected = entry.index
        assert got == expected

    @given(st.lists(st.floats(1e-4, 1e4), min_size=1, max_size=8),
           st.floats(1.0, 100.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_under_uniform_scaling(self, sinrs, scale):
        base = sinr_to_cqi(sinrs)
        scaled = sinr_to_cqi([s * scale for s in sinrs])
        assert scaled >= base

    def test_effective_sinr_of_equal_rbs(self):
        assert effective_sinr([2.5, 2.5, 2.5]) == pytest.approx(2.5)

    def test_effective_sinr_empty_error(self):
        with pytest.raises(ValueError):
            effective_sinr([])


class TestEfficiencyTable:
    def test_anchor_cqi3(self):
        assert cqi_efficiency(3) == pytest.approx(0.377, abs=1e-4)

    def test_top_entry(self):
        assert cqi_efficiency(15) == pytest.approx(6 * 948 / 1024, abs=1e-4)

    def test_strictly_increasing(self):
        for k in range(1, 15):
            assert cqi_efficiency(k + 1) > cqi_efficiency(k)
            assert cqi_threshold_db(k + 1) > cqi_threshold_db(k)

    def test_out_of_range(self):
        for bad in (0, 16, -1):
            with pytest.raises(CqiRangeError):
                cqi_efficiency(bad)

    def test_replacement_table(self, tmp_path):
        path = tmp_path / "table.csv"
        with open(path, "w") as fh:
            fh.write("index,modulation,efficiency,sinr_threshold_db\n")
            for e in link.CQI_TABLE:
                fh.write(f"{e.index},{e.modulation},{e.efficiency * 2},"
                         f"{e.sinr_threshold_db + 1.0}\n")
        entries = link.load_cqi_table(path)
        previous = link.apply_cqi_table(entries)
        try:
            assert cqi_efficiency(3) == pytest.approx(0.754, abs=1e-4)
            assert cqi_threshold_db(3) == pytest.approx(-1.3)
        finally:
            link.apply_cqi_table(previous)
        assert cqi_efficiency(3) == pytest.approx(0.377, abs=1e-4)

    def test_invalid_replacement_rejected(self):
        entries = list(link.CQI_TABLE)
        entries[5] = link.CqiEntry(6, "QPSK", entries[4].efficiency,
                                   entries[5].sinr_threshold_db)
        with pytest.raises(ValueError):
            link.validate_cqi_table(entries)
        with pytest.raises(ValueError):
            link.validate_cqi_table(entries[:-1])


class TestDecoding:
    def test_far_above_threshold(self):
        thr = cqi_threshold_db(5)
        assert bler(thr + 30.0, 5) < 1e-3
        rng = np.random.default_rng(1)
        assert all(decode_success(thr + 30.0, 5, rng) for _ in range(1000))

    def test_far_below_threshold(self):
        thr = cqi_threshold_db(5)
        assert bler(thr - 20.0, 5) > 0.999
        rng = np.random.default_rng(2)
        assert not any(decode_success(thr - 20.0, 5, rng) for _ in range(1000))

    def test_error_rate_at_threshold(self):
        thr = cqi_threshold_db(8)
        rng = np.random.default_rng(3)
        n = 10_000
        errors = sum(not decode_success(thr, 8, rng) for _ in range(n))
        assert errors / n == pytest.approx(0.1, abs=0.02)

    def test_bler_monotone_decreasing(self):
        grid = np.linspace(-20.0, 30.0, 101)
        values = bler(grid, 6)
        assert np.all(np.diff(values) <= 0)
        # strictly decreasing where the curve is not saturated
        active = np.linspace(cqi_threshold_db(6) - 4.0,
                             cqi_threshold_db(6) + 4.0, 41)
        assert np.all(np.diff(bler(active, 6)) < 0)

    def test_bler_exact_at_anchor(self):
        for cqi in (1, 7, 15):
            assert bler(cqi_threshold_db(cqi), cqi) == pytest.approx(0.1)
