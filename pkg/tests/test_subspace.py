import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import unit_vectors
from proxybdpt.proxy import ProxyConfig, dropout_batch
from proxybdpt.scene import load_shipped
from proxybdpt.subspace import (
    NULL_CONTROL,
    GammaMatrix,
    SubspaceMapper,
    SubspaceStats,
    learn_gamma,
    pretrace_statistics,
    sample_specular_subspace,
    select_in_subspace,
    update_stats,
)
from proxybdpt.transport import PathVertex
from proxybdpt.transport.paths import trace_light_batch
from proxybdpt.transport.subpath import DIFFUSE, SPECULAR


def unit_box():
    return SubspaceMapper((0, 0, 0), (1, 1, 1))


def vert(pos, nrm, flag=SPECULAR):
    return PathVertex(np.asarray(pos, float), np.asarray(nrm, float), 0, None, flag, 1.0, np.ones(3), 0)


# ---------------------------------------------------------------------------
# classification


def test_defaults():
    m = unit_box()
    assert (m.S_count, m.C_count, m.T_count) == (100, 10, 32)


def test_classify_specular_deterministic():
    m = unit_box()
    v = vert([0.3, 0.4, 0.5], [0, 1, 0])
    assert m.classify_specular(v) == m.classify_specular(v)
    assert 0 <= m.classify_specular(v) < 100


def test_same_cell_same_octant_same_label():
    m = unit_box()
    a = vert([0.1, 0.1, 0.1], [0.2, 0.9, 0.1])
    b = vert([0.4, 0.3, 0.2], [0.5, 0.5, 0.7])
    assert m.classify_specular(a) == m.classify_specular(b)


def test_opposite_corners_differ():
    m = unit_box()
    n = [0, 1, 0]
    assert m.classify_specular(vert([0.01, 0.01, 0.01], n)) != m.classify_specular(vert([0.99, 0.99, 0.99], n))


def test_classify_specular_rejects_diffuse():
    with pytest.raises(ValueError):
        unit_box().classify_specular(vert([0.5, 0.5, 0.5], [0, 1, 0], flag=DIFFUSE))


def test_null_control_is_reserved():
    m = unit_box()
    assert m.classify_control(None, None) == NULL_CONTROL == 0


def test_control_direction_changes_label():
    m = unit_box()
    h = vert([0.5, 0.99, 0.5], [0, -1, 0], flag=DIFFUSE)
    with_dir = m.classify_control(h, [0.3, -0.9, 0.3])
    without = m.classify_control(h, None)
    assert with_dir != without
    assert 1 <= with_dir < 10 and 1 <= without < 10


def test_bad_mapper_config():
    with pytest.raises(ValueError):
        SubspaceMapper((0, 0, 0), (1, 1, 1), grid=1)
    with pytest.raises(ValueError):
        SubspaceMapper((0, 0, 0), (1, 1, 1), C_count=1)


def test_classification_purity_on_random_vertices():
    m = unit_box()
    rng = np.random.default_rng(0)
    pos = rng.random((10_000, 3))
    nrm = unit_vectors(rng, 10_000)
    first = m.specular_labels(pos, nrm)
    for _ in range(3):
        assert np.array_equal(m.specular_labels(pos.copy(), nrm.copy()), first)
    scalar = [m.classify_specular(vert(p, n)) for p, n in zip(pos[:200], nrm[:200])]
    assert scalar == list(first[:200])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_control_labels_in_range(p, d):
    m = unit_box()
    lab = m.control_labels(np.array(p), np.array(d), True)
    assert 1 <= lab < m.C_count


# ---------------------------------------------------------------------------
# statistics


def test_running_max():
    s = SubspaceStats()
    for r in (1.0, 5.0, 3.0):
        update_stats(s, (1, 0, 0), r, None)
    assert s.entries[(1, 0, 0)].max_ratio == 5.0
    assert s.bound((1, 0, 0)) == 10.0


def test_mean_of_squares():
    s = SubspaceStats()
    update_stats(s, (1, 0, 0), None, 1.0)
    update_stats(s, (1, 0, 0), None, 3.0)
    assert s.entries[(1, 0, 0)].mean_inv_sq == 5.0


def test_nonfinite_rejected():
    s = SubspaceStats()
    with pytest.raises(ValueError):
        s.update((1, 0, 0), np.inf, None)
    with pytest.raises(ValueError):
        s.update((1, 0, 0), None, np.nan)


def test_kappa_falls_back_before_min_samples():
    s = SubspaceStats()
    s.update((1, 0, 0), None, np.arange(1.0, 16.0))
    assert s.kappa((1, 0, 0)) == 1.0
    s.update((1, 0, 0), None, [16.0])
    x = np.arange(1.0, 17.0)
    assert s.kappa((1, 0, 0)) == pytest.approx(np.mean(x * x) / np.mean(x) ** 2)


records = st.lists(
    st.tuples(st.integers(1, 2), st.integers(0, 3), st.floats(0, 100), st.floats(0.01, 100)),
    min_size=1, max_size=40,
)


def feed(stats, recs):
    for u, c, r, x in recs:
        stats.update((u, c, 0), r, x)
    return stats


@settings(max_examples=100, deadline=None)
@given(records, st.integers(0, 40))
def test_merge_equals_single_stream(recs, cut):
    cut = min(cut, len(recs))
    whole = feed(SubspaceStats(), recs)
    a = feed(SubspaceStats(), recs[:cut])
    b = feed(SubspaceStats(), recs[cut:])
    for merged in (a.merge(b), b.merge(a)):
        assert merged.entries.keys() == whole.entries.keys()
        for k, e in whole.entries.items():
            m = merged.entries[k]
            assert m.n == e.n and m.max_ratio == e.max_ratio
            assert m.sum_inv == pytest.approx(e.sum_inv) and m.sum_inv_sq == pytest.approx(e.sum_inv_sq)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=30))
def test_running_max_monotone(values):
    s = SubspaceStats()
    prev = 0.0
    for v in values:
        s.update((1, 0, 0), v, None)
        cur = s.entries[(1, 0, 0)].max_ratio
        assert cur >= prev
        prev = cur


def test_pretrace_without_specular_is_empty():
    scene = load_shipped("diffuse_box")
    stats = pretrace_statistics(scene, 2000, np.random.default_rng(0))
    assert len(stats) == 0


def test_pretrace_rejects_small_counts(mirror_box):
    with pytest.raises(ValueError):
        pretrace_statistics(mirror_box, 999, np.random.default_rng(0))


def test_pretrace_populates_u1_bucket(mirror_box):
    stats = pretrace_statistics(mirror_box, 100_000, np.random.default_rng(1))
    u1 = [k for k, e in stats.entries.items() if k[0] == 1 and e.n > 0 and e.max_ratio > 0]
    assert u1
    for k in u1:
        assert stats.bound(k) == 2 * stats.entries[k].max_ratio


def test_pretrace_is_deterministic(mirror_box):
    a = pretrace_statistics(mirror_box, 4000, np.random.default_rng(2))
    b = pretrace_statistics(mirror_box, 4000, np.random.default_rng(2))
    assert a.entries == b.entries


# ---------------------------------------------------------------------------
# Γ matrix


def test_gamma_uniform_rows():
    g = GammaMatrix(T_count=4, S_count=10)
    rng = np.random.default_rng(3)
    S, p = g.sample(np.zeros(1000, dtype=int), rng)
    assert np.all(p == 0.1)
    assert set(np.unique(S)) <= set(range(10))


def test_gamma_concentrated_row():
    g = GammaMatrix(T_count=4, S_count=10)
    g.learn([0], [3], [1.0])
    rng = np.random.default_rng(4)
    draws = [sample_specular_subspace(0, g, rng) for _ in range(10_000)]
    S = np.array([d[0] for d in draws])
    assert np.mean(S == 3) >= 0.85
    for s, p in draws[:50]:
        assert p == g.table[0, s]


def test_gamma_all_zero_gives_uniform():
    g = GammaMatrix(T_count=3, S_count=5)
    learn_gamma(g, [(0, 1, 0.0), (2, 4, 0.0)], 0)
    assert np.allclose(g.table, 0.2)


def test_gamma_single_record_floor():
    g = GammaMatrix(T_count=3, S_count=5)
    learn_gamma(g, [(0, 3, 2.5)], 0)
    eps = g.eps
    expect = np.full(5, eps)
    expect[3] = 1 - 5 * eps + eps
    assert np.allclose(g.table[0], expect)
    assert np.allclose(g.table[1], 0.2)


def test_gamma_frozen_after_40():
    g = GammaMatrix(T_count=2, S_count=4)
    for it in range(40):
        learn_gamma(g, [(0, it % 4, 1.0 + it)], it)
    assert not g.learning
    before = g.table.copy()
    learn_gamma(g, [(0, 0, 1e6)], 40)
    learn_gamma(g, [(1, 2, 1e6)], 57)
    assert np.array_equal(g.table, before)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 7), st.floats(0, 1e9)), max_size=50))
def test_gamma_rows_stay_pmfs(recs):
    g = GammaMatrix(T_count=4, S_count=8)
    learn_gamma(g, recs, 0)
    assert np.allclose(g.table.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(g.table >= g.eps * (1 - 1e-12))


def test_gamma_subnormal_contribution_stays_normalized():
    g = GammaMatrix(T_count=1, S_count=8)
    learn_gamma(g, [(0, 0, 5e-324)], 0)
    assert g.table[0].sum() == pytest.approx(1.0, abs=1e-12)
    assert g.table[0, 0] == pytest.approx(1 - 7 * g.eps)


def test_gamma_restricted_sampling_renormalizes():
    g = GammaMatrix(T_count=1, S_count=4)
    allowed = np.array([False, True, False, True])
    S, p = g.sample(np.zeros(2000, dtype=int), np.random.default_rng(5), allowed)
    assert set(np.unique(S)) == {1, 3}
    assert np.allclose(p, 0.5)


def test_gamma_rejects_negative_contribution():
    with pytest.raises(ValueError):
        GammaMatrix(2, 2).learn([0], [0], [-1.0])


# ---------------------------------------------------------------------------
# second stage: uniform member within the chosen subspace


def test_uniform_within_subspace():
    labels = np.array([0, 2, 2, 1, 2, 0, 2, 2])
    rng = np.random.default_rng(6)
    n = 50_000
    m, count = select_in_subspace(labels, np.full(n, 2), 3, rng)
    assert np.all(labels[m] == 2) and np.all(count == 5)
    obs = np.bincount(m, minlength=len(labels))[labels == 2]
    assert chisquare(obs).pvalue > 0.01


def test_uniform_within_subspace_on_real_pool(mirror_box):
    light = trace_light_batch(mirror_box, 20_000, 5, np.random.default_rng(7))
    pool = dropout_batch(mirror_box, light, 5).label(ProxyConfig().mapper(mirror_box))
    counts = np.bincount(pool.S, minlength=100)
    S = int(np.argmax(counts))
    assert counts[S] >= 5
    n = 200 * counts[S]
    m, _ = select_in_subspace(pool.S, np.full(n, S), 100, np.random.default_rng(8))
    obs = np.bincount(m, minlength=len(pool))[pool.S == S]
    assert chisquare(obs).pvalue > 0.01


def test_empty_subspace_raises():
    with pytest.raises(ValueError):
        select_in_subspace(np.array([0, 0]), np.array([1]), 2, np.random.default_rng(0))
