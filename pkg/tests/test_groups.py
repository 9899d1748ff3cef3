import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ggm_knockoff.errors import (
    AllFeaturesFiltered,
    NonPositiveAfterPseudocount,
    SubsampleTooLarge,
    TooFewPairs,
    UserInputError,
)
from ggm_knockoff.estimator import SelectionResult
from ggm_knockoff.groups import (
    AbundanceTable,
    aggregate_selections,
    analyze_groups,
    clr_transform,
    multi_fdr_aggregate,
    prevalence_filter,
    read_abundance_csv,
    subsample_index,
    wilcoxon_signed_rank,
)
from ggm_knockoff.rng import RngStream


def table(values, groups=None):
    values = np.asarray(values, dtype=float)
    return AbundanceTable(values, [f"f{k}" for k in range(values.shape[1])], groups)


def test_clr_example():
    out = clr_transform(table([[1.0, math.e, math.e**2]]), pseudocount=0.0)
    np.testing.assert_allclose(out, [[-1.0, 0.0, 1.0]], atol=1e-15)


def test_clr_invariances(gen):
    v = gen.gamma(2.0, 3.0, size=(5, 6)) + 0.1
    base = clr_transform(table(v), pseudocount=0.0)
    np.testing.assert_allclose(base.sum(axis=1), 0.0, atol=1e-12)
    scaled = clr_transform(table(v * gen.uniform(0.5, 20, size=(5, 1))), pseudocount=0.0)
    np.testing.assert_allclose(scaled, base, atol=1e-12)


def test_clr_needs_positive_values():
    with pytest.raises(NonPositiveAfterPseudocount):
        clr_transform(table([[0.0, 1.0]]), pseudocount=0.0)
    assert np.all(np.isfinite(clr_transform(table([[0.0, 1.0]]), pseudocount=0.5)))


def test_prevalence_filter():
    v = [[1, 0, 0], [2, 1, 0], [3, 0, 0], [4, 1, 1]]
    assert prevalence_filter(table(v), 0.5).features == ["f0", "f1"]
    assert prevalence_filter(table(v), 0.75).features == ["f0"]
    assert prevalence_filter(table(v), 0.0).features == ["f0", "f1", "f2"]
    with pytest.raises(AllFeaturesFiltered):
        prevalence_filter(table([[0, 0], [1, 0]]), 1.0)


def test_table_validation():
    with pytest.raises(UserInputError):
        table([[-1.0, 2.0]])
    with pytest.raises(UserInputError):
        AbundanceTable(np.ones((2, 2)), ["a", "a"])


def test_subsample_uniform():
    n, m, reps = 7, 3, 4000
    counts = np.zeros(n)
    for k in range(reps):
        idx = subsample_index(RngStream(1).child(k), n, m)
        assert len(set(idx.tolist())) == m and np.all(np.diff(idx) > 0)
        counts[idx] += 1
    p = m / n
    sd = math.sqrt(reps * p * (1 - p))
    assert np.all(np.abs(counts - reps * p) < 4 * sd)
    with pytest.raises(SubsampleTooLarge):
        subsample_index(RngStream(1), 3, 4)


def _sel(retained):
    return SelectionResult(threshold=0.1, selected_edges=frozenset(retained), retained_values=retained,
                           target_q=0.1, scheme="ko")


def test_aggregation_example():
    s = aggregate_selections([_sel({(0, 1): 0.5, (1, 2): -0.2}), _sel({(0, 1): -0.3})], 3)
    assert s[0, 1] == s[1, 0] == 1.0
    assert s[1, 2] == pytest.approx(0.25)
    assert s[0, 2] == 0.0
    assert np.all(aggregate_selections([], 3) == 0)


def test_multi_fdr_targets(gen):
    runs = [gen.standard_normal((30, 4)) for _ in range(3)]
    out = multi_fdr_aggregate(runs, 0.4, RngStream(2))
    assert out.targets == [0.2, 0.1, 0.05]
    assert out.values.max() in (0.0, 1.0)


def test_wilcoxon_all_positive_n6():
    res = wilcoxon_signed_rank(np.arange(1.0, 7.0), np.zeros(6))
    assert res.method == "exact"
    assert res.statistic == 0.0
    assert res.p_value == 0.03125


def test_wilcoxon_exact_matches_reference(gen):
    for _ in range(20):
        d = gen.standard_normal(10) + 0.4
        ours = wilcoxon_signed_rank(d, np.zeros(10)).p_value
        ref = stats.wilcoxon(d, method="exact").pvalue
        assert ours == pytest.approx(ref, abs=1e-12)


def test_wilcoxon_normal_matches_reference(gen):
    for _ in range(20):
        d = gen.standard_normal(25) + 0.3
        ours = wilcoxon_signed_rank(d, np.zeros(25)).p_value
        ref = stats.wilcoxon(d, method="approx", correction=True).pvalue
        assert ours == pytest.approx(ref, abs=1e-12)


def all_statistics_n12():
    ranks = np.arange(1.0, 13.0)
    for w in range(0, 40):
        signs = np.ones(12)
        remaining = w
        for r in range(12, 0, -1):  # a sign pattern realizing T- = w
            if r <= remaining:
                signs[r - 1] = -1.0
                remaining -= r
        d = signs * ranks
        yield (wilcoxon_signed_rank(d, np.zeros(12), method="exact").p_value,
               wilcoxon_signed_rank(d, np.zeros(12), method="normal").p_value)


def test_wilcoxon_exact_vs_normal_n12_tail():
    # agreement within 0.01 holds wherever the exact p-value is at most 0.2
    for exact, normal in all_statistics_n12():
        if exact <= 0.2:
            assert abs(exact - normal) <= 0.01


def test_wilcoxon_exact_vs_normal_n12_overall():
    # in the centre of the distribution the continuity-corrected normal law is off by up to ~0.014
    gaps = [abs(e - n) for e, n in all_statistics_n12()]
    assert 0.01 < max(gaps) < 0.015


def test_wilcoxon_ties_and_zeros():
    a = np.array([1.0, 2.0, 2.0, 3.0, 0.0, -1.0, 4.0, 5.0])
    res = wilcoxon_signed_rank(a, np.zeros_like(a))
    assert res.n_pairs == 7
    # midranks of |d| = 1,1,2,2,3,4,5 -> 1.5,1.5,3.5,3.5,5,6,7; T- = 1.5
    assert res.statistic == 1.5
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank(np.ones(5), np.zeros(5))


def test_wilcoxon_null_calibration():
    reps, hits = 400, 0
    for k in range(reps):
        z = RngStream(3, k).standard_normal(30)
        hits += wilcoxon_signed_rank(z, np.zeros(30)).p_value <= 0.05
    assert hits / reps <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / reps)


def synthetic_groups(n_a=150, n_b=80, p=20, seed=0):
    """Group A follows a strong chain over all features; group B is independent."""
    gen = np.random.default_rng(seed)
    latent_a = gen.standard_normal((n_a, p))
    for k in range(1, p):
        latent_a[:, k] += 0.9 * latent_a[:, k - 1]
    latent_b = gen.standard_normal((n_b, p))
    counts = np.exp(np.vstack([latent_a, latent_b]) + 3.0).round()
    return AbundanceTable(counts, [f"t{k}" for k in range(p)], ["A"] * n_a + ["B"] * n_b)


def add_rare_feature(tab):
    extra = np.zeros((tab.n, 1))
    extra[0] = 1.0
    return AbundanceTable(np.hstack([tab.values, extra]), tab.features + ["rare"], tab.groups)


def test_two_group_pipeline_detects_difference():
    tab = add_rare_feature(synthetic_groups())
    res = analyze_groups(tab, RngStream(4), base_q=0.2, subsamples=5)
    assert res.features == [f"t{k}" for k in range(20)]
    assert res.schemes == {"A": "multi-fdr", "B": "vanilla"}
    assert res.subsample_size == 80
    assert res.comparison is not None
    assert res.comparison.p_value < 0.05
    assert res.strengths["A"].targets == [0.2 * 0.5**k for k in range(1, 6)]


def test_equal_groups_use_single_runs():
    tab = add_rare_feature(synthetic_groups(n_a=80, n_b=80))
    res = analyze_groups(tab, RngStream(4))
    assert res.schemes == {"A": "vanilla", "B": "vanilla"}
    assert res.subsample_size is None


def test_too_few_pairs_is_recorded():
    gen = np.random.default_rng(9)
    counts = np.exp(gen.standard_normal((80, 4)) + 3.0).round()
    tab = add_rare_feature(AbundanceTable(counts, ["a", "b", "c", "d"], ["x"] * 40 + ["y"] * 40))
    res = analyze_groups(tab, RngStream(1))
    assert res.comparison is None or res.comparison.n_pairs >= 6
    if res.comparison is None:
        assert "nonzero differences" in res.comparison_error


def test_group_count_checked():
    tab = add_rare_feature(synthetic_groups())
    tab.groups[0] = "C"
    with pytest.raises(UserInputError):
        analyze_groups(tab, RngStream(0))


def test_read_csv(tmp_path):
    path = tmp_path / "ab.csv"
    path.write_text("a,b,__group__\n1,2,g1\n3,0,g2\n\n", encoding="utf-8")
    tab = read_abundance_csv(path)
    assert tab.features == ["a", "b"] and tab.groups == ["g1", "g2"]
    np.testing.assert_array_equal(tab.values, [[1, 2], [3, 0]])
    path.write_text("a,b\n1,x\n", encoding="utf-8")
    with pytest.raises(UserInputError):
        read_abundance_csv(path)
    with pytest.raises(UserInputError):
        read_abundance_csv(tmp_path / "missing.csv")


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=6, max_size=14), st.lists(st.integers(-5, 5), min_size=6, max_size=14))
def test_wilcoxon_swap_symmetry(xs, ys):
    m = min(len(xs), len(ys))
    a, b = np.array(xs[:m], dtype=float), np.array(ys[:m], dtype=float)
    try:
        ab = wilcoxon_signed_rank(a, b)
    except TooFewPairs:
        return
    ba = wilcoxon_signed_rank(b, a)
    assert ab.statistic == ba.statistic
    assert ab.p_value == ba.p_value
    assert 0.0 < ab.p_value <= 1.0
