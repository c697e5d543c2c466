import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxybdpt.reciprocal import ReciprocalConfig
from proxybdpt.smis import (
    F_A,
    F_B,
    F_ONE,
    BenchConfig,
    SegmentedTechniqueSpace,
    conditional_pdf,
    cost_of,
    marginal_pdf,
    recip_cmis_batch,
    recip_cmis_estimate,
    run_benchmark,
    sample_technique,
    smis_batch,
    smis_estimate,
    write_rows,
)

T1 = SegmentedTechniqueSpace(0.1, 4.6)
T2 = SegmentedTechniqueSpace(0.01, 4.96)


def test_conditional_pdf_examples():
    assert conditional_pdf(0.1, 0, T1) == 4.6
    assert conditional_pdf(0.1, 3, T1) == 0.1
    uni = SegmentedTechniqueSpace(1.0, 1.0)
    assert np.all(conditional_pdf(np.linspace(0, 1, 11), 2, uni) == 1.0)


def test_domain_errors():
    with pytest.raises(ValueError):
        conditional_pdf(1.5, 0, T1)
    with pytest.raises(ValueError):
        conditional_pdf(0.5, 5, T1)
    with pytest.raises(ValueError):
        SegmentedTechniqueSpace(0.1, 4.0)


@pytest.mark.parametrize("space", [T1, T2, SegmentedTechniqueSpace(0.0, 5.0)])
def test_marginal_is_one(space):
    x = np.random.default_rng(0).random(1000)
    assert np.allclose(marginal_pdf(x, space), 1.0, atol=1e-12)
    # direct sum over techniques agrees
    direct = sum(conditional_pdf(x, t, space) for t in range(space.K)) / space.K
    assert np.allclose(direct, 1.0, atol=1e-12)


@given(st.floats(min_value=0.0, max_value=1.2))
def test_normalization_property(alpha):
    space = SegmentedTechniqueSpace.from_alpha(alpha)
    grid = (np.arange(5000) + 0.5) / 5000
    for t in range(space.K):
        assert conditional_pdf(grid, t, space).mean() == pytest.approx(1.0, abs=1e-9)


def test_sample_technique_histogram():
    rng = np.random.default_rng(1)
    t = np.full(200_000, 2)
    x = sample_technique(t, T1, rng)
    counts = np.bincount(T1.segment(x), minlength=5) / len(x)
    expected = np.array([0.1, 0.1, 4.6, 0.1, 0.1]) / 5
    assert np.allclose(counts, expected, atol=0.004)


def test_smis1_is_single_technique_is():
    rng_a = np.random.default_rng(4)
    rng_b = np.random.default_rng(4)
    est, draws, pdfs = smis_batch(1, F_A, T1, 1000, rng_a)
    t = rng_b.integers(0, 5, (1000, 1))
    x = sample_technique(t, T1, rng_b)
    direct = F_A.eval(x[:, 0]) / conditional_pdf(x[:, 0], t[:, 0], T1)
    assert np.allclose(est, direct)
    assert np.all(draws == 1) and np.all(pdfs == 1)


def test_smis1_alpha0_bias_closed_form():
    space = SegmentedTechniqueSpace(0.0, 5.0)
    est, _, _ = smis_batch(1, F_ONE, space, 10_000, np.random.default_rng(0))
    assert np.all(est == pytest.approx(0.2))


@pytest.mark.parametrize("n", [1, 2, 4, 16])
def test_smis_unbiased_alpha_positive(n):
    est, _, _ = smis_batch(n, F_B, T1, 100_000, np.random.default_rng(n))
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - F_B.integral) < 4 * se


def test_smis_cost_model():
    _, d, p = smis_batch(8, F_A, T1, 10, np.random.default_rng(0))
    assert np.all(d == 8) and np.all(p == 64)
    assert cost_of(8, 64, pdf_cost=1.0) == 72


def test_recip_uniform_space_is_exact():
    uni = SegmentedTechniqueSpace(1.0, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = rng.bit_generator.state
        est = recip_cmis_estimate(F_A, uni, ReciprocalConfig(B=1.0), rng)
        # x is the first draw after choosing t, reciprocal is exactly 1
        rng2 = np.random.default_rng()
        rng2.bit_generator.state = state
        t0 = rng2.integers(0, 5, 1)
        x = sample_technique(t0, uni, rng2)
        assert est == pytest.approx(float(F_A.eval(x)[0]))


def test_recip_unbiased():
    est, d, p = recip_cmis_batch(F_ONE, T1, ReciprocalConfig(B=4.6), 200_000, np.random.default_rng(3))
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - 1.0) < 4 * se
    assert np.all(d == 1) and np.all(p >= 1)


def test_recip_requires_alpha_positive():
    with pytest.raises(ValueError):
        recip_cmis_batch(F_ONE, SegmentedTechniqueSpace(0.0, 5.0), ReciprocalConfig(B=5.0), 10, np.random.default_rng(0))


def test_smis_estimate_scalar():
    v = smis_estimate(4, F_A, T1, np.random.default_rng(0))
    assert np.isfinite(v) and v > 0


def test_run_benchmark_rows_and_csv(tmp_path):
    cfg = BenchConfig(pairs=[(0.1, 4.6), (0.0, 5.0)], methods=("SMIS1", "SMIS2", "recip"),
                      integrands=("f_one",), trials=20_000)
    rows = run_benchmark(cfg)
    methods = [(r.alpha, r.method) for r in rows]
    assert (0.0, "recip") not in methods
    assert (0.1, "recip") in methods
    smis1_a0 = [r for r in rows if r.alpha == 0.0 and r.method == "SMIS1"][0]
    assert smis1_a0.bias == pytest.approx(-0.8)
    out = tmp_path / "bench.csv"
    write_rows(rows, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "method,alpha,beta,integrand,variance,mean_cost,bias"
    assert len(lines) == len(rows) + 1


def test_table_orderings_small():
    cfg = BenchConfig(methods=("SMIS16", "recip"), trials=100_000, seed=1)
    rows = {(r.alpha, r.integrand, r.method): r.variance for r in run_benchmark(cfg)}
    for f in ("f_A", "f_B"):
        assert rows[(0.1, f, "SMIS16")] < rows[(0.1, f, "recip")]
        assert rows[(0.01, f, "SMIS16")] > rows[(0.01, f, "recip")]
