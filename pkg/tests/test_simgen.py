import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clickhomodyne.model import PS_PER_S, DetectorModel, TimeTagStream, paper_like_config
from clickhomodyne.simgen import (
    RngSpec,
    apply_dead_time,
    beamsplitter_split,
    generate_poisson_stream,
    merge_streams,
    nonparalyzable_rate,
    simulate_detector_pair,
    thin_stream,
)
from clickhomodyne.timetag import bin_counts

MS = 10**9  # ps


def dead_time_oracle(tags, tau):
    """Plain loop over the tags, independent of the compiled filter."""
    kept = []
    for t in tags:
        if not kept or t - kept[-1] >= tau:
            kept.append(int(t))
    return kept


sorted_tags = st.lists(st.integers(0, 10**6 - 1), max_size=300, unique=True).map(sorted)


def test_rng_spec_determinism_and_independence():
    a = RngSpec(5, "lo").generator().random(8)
    assert np.array_equal(a, RngSpec(5, "lo").generator().random(8))
    assert not np.array_equal(a, RngSpec(5, "dark_a").generator().random(8))
    assert not np.array_equal(a, RngSpec(6, "lo").generator().random(8))


def test_poisson_zero_rate_is_empty():
    s = generate_poisson_stream(0.0, PS_PER_S, RngSpec(1, "x"))
    assert len(s) == 0 and s.duration_ps == PS_PER_S


def test_poisson_rejects_bad_rate():
    with pytest.raises(ValueError):
        generate_poisson_stream(float("inf"), PS_PER_S, RngSpec(1, "x"))
    with pytest.raises(ValueError):
        generate_poisson_stream(-1.0, PS_PER_S, RngSpec(1, "x"))


def test_poisson_deterministic():
    a = generate_poisson_stream(1e5, PS_PER_S, RngSpec(42, "lo"))
    b = generate_poisson_stream(1e5, PS_PER_S, RngSpec(42, "lo"))
    assert a == b


def test_poisson_count_within_four_sigma():
    # P(|N - 1e6| >= 4000) ~ 6e-5 per seed for a Poisson(1e6) count
    counts = [len(generate_poisson_stream(1e6, PS_PER_S, RngSpec(s, "lo"))) for s in range(100)]
    assert all(abs(n - 1e6) < 4 * math.sqrt(1e6) for n in counts)


def test_poisson_counts_are_poisson_dispersed():
    # 400 windows of 1 ms at 1e5 Hz: mean 100, variance 100
    counts = [len(generate_poisson_stream(1e5, MS, RngSpec(s, "lo"))) for s in range(400)]
    mean, var = np.mean(counts), np.var(counts, ddof=1)
    assert abs(mean - 100) < 4 * math.sqrt(100 / 400)
    assert abs(var / 100 - 1) < 4 * math.sqrt(2 / 399)


def test_poisson_interarrivals_exponential():
    rate = 2e6
    t = generate_poisson_stream(rate, PS_PER_S // 10, RngSpec(3, "lo")).tags
    gaps = np.diff(t) / PS_PER_S
    # exponential: mean 1/rate, coefficient of variation 1, P(gap > 1/rate) = e^-1
    assert gaps.mean() == pytest.approx(1 / rate, rel=4 / math.sqrt(gaps.size))
    assert gaps.std() / gaps.mean() == pytest.approx(1.0, abs=0.01)
    frac = np.mean(gaps > 1 / rate)
    assert abs(frac - math.exp(-1)) < 4 * math.sqrt(math.exp(-1) * (1 - math.exp(-1)) / gaps.size)


def test_poisson_high_rate_collisions_resolved():
    # 1e12 Hz gives about one arrival per ps: forces many collisions
    s = generate_poisson_stream(1e12, 10**5, RngSpec(0, "x"))
    assert np.all(np.diff(s.tags) > 0) and s.tags[-1] < 10**5


def test_split_extremes():
    s = generate_poisson_stream(1e5, MS, RngSpec(1, "lo"))
    a, b = beamsplitter_split(s, 1.0, RngSpec(1, "split"))
    assert np.array_equal(a.tags, s.tags) and len(b) == 0
    a, b = beamsplitter_split(s, 0.0, RngSpec(1, "split"))
    assert len(a) == 0 and np.array_equal(b.tags, s.tags)


@settings(max_examples=50, deadline=None)
@given(sorted_tags, st.floats(0, 1), st.integers(0, 2**32))
def test_split_partitions_input(tags, ratio, seed):
    s = TimeTagStream(0, 10**6, tags)
    a, b = beamsplitter_split(s, ratio, RngSpec(seed, "split"))
    assert len(a) + len(b) == len(s)
    assert not set(a.tags.tolist()) & set(b.tags.tolist())
    assert set(a.tags.tolist()) | set(b.tags.tolist()) == set(tags)


def test_balanced_split_binomial():
    s = TimeTagStream(0, 10**7, np.arange(10**6, dtype=np.int64) * 10)
    a, _ = beamsplitter_split(s, 0.5, RngSpec(9, "split"))
    assert abs(len(a) - 5e5) < 4 * math.sqrt(2.5e5)


def test_thin_extremes_and_order():
    s = generate_poisson_stream(1e5, MS, RngSpec(1, "lo"))
    assert thin_stream(s, 1.0, RngSpec(1, "t")) == s
    assert len(thin_stream(s, 0.0, RngSpec(1, "t"))) == 0
    kept = thin_stream(s, 0.3, RngSpec(1, "t"))
    assert np.all(np.diff(kept.tags) > 0)
    assert set(kept.tags.tolist()) <= set(s.tags.tolist())


def test_thinning_theorem_over_seeds():
    lam, p, T = 1e5, 0.37, 10 * MS
    rates = [thin_stream(generate_poisson_stream(lam, T, RngSpec(s, "lo")), p,
                         RngSpec(s, "t")).rate_hz for s in range(100)]
    se = math.sqrt(p * lam * T / PS_PER_S) / (T / PS_PER_S) / math.sqrt(100)
    assert abs(np.mean(rates) - p * lam) < 4 * se


def test_superposition_over_seeds():
    l1, l2, T = 3e4, 7e4, 10 * MS
    rates = [merge_streams(generate_poisson_stream(l1, T, RngSpec(s, "a")),
                           generate_poisson_stream(l2, T, RngSpec(s, "b"))).rate_hz
             for s in range(100)]
    se = math.sqrt((l1 + l2) * T / PS_PER_S) / (T / PS_PER_S) / math.sqrt(100)
    assert abs(np.mean(rates) - (l1 + l2)) < 4 * se


def test_merge_identity_and_duration_check():
    x = generate_poisson_stream(1e5, MS, RngSpec(1, "lo"))
    empty = TimeTagStream(0, MS, [])
    assert merge_streams(x, empty) == x
    with pytest.raises(ValueError, match="durations"):
        merge_streams(x, TimeTagStream(0, MS + 1, []))


@settings(max_examples=50, deadline=None)
@given(sorted_tags, sorted_tags)
def test_merge_sorted_union(ta, tb):
    a, b = TimeTagStream(1, 10**6 + 10, ta), TimeTagStream(1, 10**6 + 10, tb)
    m = merge_streams(a, b)
    assert np.all(np.diff(m.tags) > 0)
    # every collision is nudged by +1 ps, the window has room for all of them
    assert len(m) == len(a) + len(b)
    if not set(ta) & set(tb):
        assert m.tags.tolist() == sorted(ta + tb)


def test_merge_collision_nudged():
    m = merge_streams(TimeTagStream(0, 100, [5, 9]), TimeTagStream(0, 100, [5, 6]))
    assert m.tags.tolist() == [5, 6, 7, 9]


def test_dead_time_examples():
    s = TimeTagStream(0, 10**6, [0, 50_000, 120_000])
    assert apply_dead_time(s, 100_000).tags.tolist() == [0, 120_000]
    assert apply_dead_time(s, 0) == s
    # boundary: exactly one dead time later is kept
    s = TimeTagStream(0, 10**6, [0, 100_000, 199_999, 200_000])
    assert apply_dead_time(s, 100_000).tags.tolist() == [0, 100_000, 200_000]


@settings(max_examples=100, deadline=None)
@given(sorted_tags, st.integers(0, 50_000))
def test_dead_time_matches_loop_oracle(tags, tau):
    s = TimeTagStream(0, 10**6, tags)
    assert apply_dead_time(s, tau).tags.tolist() == dead_time_oracle(tags, tau)


@settings(max_examples=60, deadline=None)
@given(sorted_tags, st.integers(0, 50_000), st.integers(0, 50_000))
def test_dead_time_monotone(tags, t1, t2):
    t1, t2 = sorted((t1, t2))
    s = TimeTagStream(0, 10**6, tags)
    assert len(apply_dead_time(s, t1)) >= len(apply_dead_time(s, t2))


@pytest.mark.parametrize("lam_tau", [0.01, 0.1, 0.5])
def test_dead_time_rate_oracle(lam_tau):
    tau_ps = 100_000
    lam = lam_tau / (tau_ps * 1e-12)
    T = PS_PER_S // 4
    out = apply_dead_time(generate_poisson_stream(lam, T, RngSpec(11, "lo")), tau_ps)
    expected = nonparalyzable_rate(lam, tau_ps * 1e-12)
    # counting variance of the dead-time-filtered renewal process
    n_exp = expected * T / PS_PER_S
    se = math.sqrt(n_exp / (1 + lam_tau) ** 2) / (T / PS_PER_S)
    assert abs(out.rate_hz - expected) < 4 * se


def test_dead_time_paper_point():
    # 2e6 Hz behind 100 ns: 2e6 / 1.2 = 1.667e6 Hz
    assert nonparalyzable_rate(2e6, 100e-9) == pytest.approx(1.6667e6, rel=1e-4)
    out = apply_dead_time(generate_poisson_stream(2e6, PS_PER_S // 2, RngSpec(2, "lo")), 100_000)
    se = math.sqrt(1.6667e6 * 0.5 / 1.2**2) / 0.5
    assert abs(out.rate_hz - 2e6 / 1.2) < 4 * se


def test_dead_time_sub_poissonian_counts():
    # lambda*tau = 0.2: Fano factor of long windows is 1/(1+0.2)^2
    tau_ps, lam = 100_000, 2e6
    out = apply_dead_time(generate_poisson_stream(lam, 2 * PS_PER_S, RngSpec(4, "lo")), tau_ps)
    c = bin_counts(out, MS).counts
    fano = c.var(ddof=1) / c.mean()
    assert fano < 1
    assert abs(fano - 1 / 1.2**2) < 4 * (1 / 1.2**2) * math.sqrt(2 / (c.size - 1))


def test_pair_dark_only():
    cfg = paper_like_config(0.0, seed=17)
    a, b = simulate_detector_pair(cfg)
    for s in (a, b):
        assert abs(len(s) - 45) < 4 * math.sqrt(45)
    assert (a.channel_id, b.channel_id) == (1, 2)


def test_pair_operating_point_rate():
    # detected total 7.3e5 Hz -> 3.65e5 Hz per channel before dead time
    lo = 7.3e5 / 0.93
    cfg = paper_like_config(lo, seed=5, duration_ps=PS_PER_S // 2, dead_time_ps=0)
    a, b = simulate_detector_pair(cfg)
    for s in (a, b):
        assert abs(s.rate_hz - 3.65e5 - 9) < 4 * math.sqrt(3.65e5 * 0.5) / 0.5

    cfg = replace(cfg, detector_a=DetectorModel(1.0, 9.0, 100_000),
                  detector_b=DetectorModel(1.0, 9.0, 100_000))
    a, b = simulate_detector_pair(cfg)
    lam = 3.65e5 + 9
    expected = nonparalyzable_rate(lam, 1e-7)
    for s in (a, b):
        assert abs(s.rate_hz - expected) < 4 * math.sqrt(expected * 0.5) / 0.5


def test_pair_deterministic():
    cfg = paper_like_config(1e5, seed=99, duration_ps=PS_PER_S // 10)
    assert simulate_detector_pair(cfg) == simulate_detector_pair(cfg)


def test_changing_one_detector_leaves_other_channel():
    cfg = paper_like_config(1e5, seed=99, duration_ps=PS_PER_S // 10)
    a1, b1 = simulate_detector_pair(cfg)
    cfg2 = replace(cfg, detector_a=DetectorModel(0.5, 200.0, 50_000))
    a2, b2 = simulate_detector_pair(cfg2)
    assert b1 == b2
    assert a1 != a2
