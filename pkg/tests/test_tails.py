import math

import numpy as np
import pytest

from heavytail_sre import (
    BlockPartition,
    LadderError,
    ModelSpec,
    block_tail_constant,
    empirical_tail_constant,
    goldie_constant,
    hill_estimate,
    moment_estimate,
    quantile_ladder,
    spectral_measure,
    stationary_pool,
)

REFERENCE = ModelSpec(
    "TwoPoint",
    1,
    {"p": 0.2, "up": 2.0, "down": 0.5, "b": {"dist": "exponential", "rate": 1.0}},
)
# closed form for the reference model: E X = 5 and
# c_+ = E((A X + B)^2 - (A X)^2) / (2 E A^2 log A) = 10 / (1.2 log 2)
C_PLUS = 10.0 / (1.2 * math.log(2.0))
GOLDIE_MEAN = 0.6 * math.log(2.0)


@pytest.fixture(scope="module")
def ref_pool():
    return stationary_pool(REFERENCE, seed=20, chains=400, n_per_chain=500)


@pytest.fixture(scope="module")
def pair_pool():
    spec = ModelSpec(
        "TwoPoint",
        2,
        {"p": 0.2, "up": 2.0, "down": 0.5, "b": {"dist": "exponential", "rate": 1.0}},
    )
    return stationary_pool(spec, seed=21, chains=400, n_per_chain=500)


# -- quantile_ladder -------------------------------------------------------------


def test_quantile_ladder_increasing(ref_pool):
    mag = ref_pool.x_post[:, 0] ** 2
    lad = quantile_ladder(mag)
    assert np.all(np.diff(lad) > 0)
    # every kept rung retains at least the default top count
    assert all(int((mag > t).sum()) >= 50 for t in lad)


def test_quantile_ladder_drops_thin_rungs():
    v = np.arange(1.0, 1001.0)
    lad = quantile_ladder(v, quantiles=(0.5, 0.9999), min_top=50)
    # the 0.9999 rung keeps no 50 exceedances out of 1000 points
    assert lad.size == 1


def test_quantile_ladder_errors():
    with pytest.raises(LadderError):
        quantile_ladder(np.array([]))
    with pytest.raises(LadderError):
        quantile_ladder(np.ones(10), quantiles=(1.5,))
    with pytest.raises(LadderError):
        quantile_ladder(np.arange(60.0), min_top=1000)


def test_custom_ladder_validated(ref_pool):
    with pytest.raises(LadderError):
        empirical_tail_constant(ref_pool, 0, 2.0, ladder=[2.0, 1.0])
    with pytest.raises(LadderError):
        empirical_tail_constant(ref_pool, 0, 2.0, ladder=[-1.0, 2.0])
    with pytest.raises(LadderError):
        # top rung above the sample maximum keeps nothing
        empirical_tail_constant(ref_pool, 0, 2.0, ladder=[1e12])


# -- hill_estimate ---------------------------------------------------------------


def test_hill_on_exact_pareto():
    rng = np.random.default_rng(0)
    v = rng.random(100_000) ** (-1.0 / 2.0)
    est = hill_estimate(v, 3000)
    assert est.ci_lo < 2.0 < est.ci_hi
    assert est.alpha == pytest.approx(2.0, rel=0.05)
    assert est.k == 3000
    assert est.threshold > 1.0


def test_hill_validates_input():
    v = np.arange(1.0, 100.0)
    with pytest.raises(ValueError):
        hill_estimate(v, 4)
    with pytest.raises(ValueError):
        hill_estimate(v, 99)
    with pytest.raises(ValueError):
        hill_estimate(np.array([1.0, -2.0] * 50), 10)


def test_hill_constant_sample_flag():
    est = hill_estimate(np.ones(100), 10)
    assert est.alpha == math.inf
    assert est.flag == "constant-sample"


# -- empirical_tail_constant -------------------------------------------------------


def test_tail_constant_ladder_reference(ref_pool):
    lad = empirical_tail_constant(ref_pool, 0, 2.0)
    assert np.all(np.diff(lad.thresholds) > 0)
    assert lad.n == len(ref_pool)
    # X >= 0 a.s., so the left tail is empty with a rule-of-three bound
    assert lad.c_minus.value == 0.0
    assert lad.c_minus.flag == "rule-of-three"
    # the top rung brackets the closed-form constant
    assert lad.c_plus.ci_lo < C_PLUS < lad.c_plus.ci_hi
    assert lad.converged is True
    doc = lad.to_dict()
    assert len(doc["plus"]) == len(doc["thresholds"])


def test_tail_constant_rejects_bad_alpha(ref_pool):
    with pytest.raises(ValueError):
        empirical_tail_constant(ref_pool, 0, -2.0)


# -- goldie_constant ---------------------------------------------------------------


def test_goldie_constant_matches_closed_form(ref_pool):
    got = goldie_constant(ref_pool, 0, 2.0, GOLDIE_MEAN)
    assert got.plus.value == pytest.approx(C_PLUS, rel=0.05)
    assert got.unstable is False
    # the state never goes negative, so the minus part is identically zero
    assert got.minus.value == 0.0
    assert got.minus.ci_lo == got.minus.ci_hi == 0.0
    assert got.total.value == pytest.approx(got.plus.value + got.minus.value, rel=1e-12)


def test_goldie_constant_flags_unstable_order(ref_pool):
    # alpha far above the true index probes a diverging moment
    got = goldie_constant(ref_pool, 0, 6.0, GOLDIE_MEAN)
    assert got.unstable is True
    assert got.total.flag == "unstable"


def test_goldie_constant_validates_arguments(ref_pool):
    with pytest.raises(ValueError):
        goldie_constant(ref_pool, 0, 0.0, GOLDIE_MEAN)
    with pytest.raises(ValueError):
        goldie_constant(ref_pool, 0, 2.0, -1.0)


# -- block_tail_constant -------------------------------------------------------------


def test_block_additivity_independent_pair(pair_pool):
    part = BlockPartition(((0,), (1,)), (0, 1), {})
    bl = block_tail_constant(pair_pool, part, [2.0, 2.0])
    assert bl.consistent is True
    assert len(bl.block) == 2
    assert len(bl.c_inf) == len(bl.thresholds)
    top_sum = sum(e.value for e in bl.block_top)
    assert bl.c_inf_top.value == pytest.approx(top_sum, rel=0.05)


def test_block_single_class_equals_full():
    spec = ModelSpec(
        "TwoPoint",
        2,
        {
            "p": 0.2,
            "up": 2.0,
            "down": 0.5,
            "comonotone": True,
            "b": {"dist": "exponential", "rate": 1.0, "shared": True},
        },
    )
    pool = stationary_pool(spec, seed=22, chains=200, n_per_chain=300)
    part = BlockPartition(((0, 1),), (0, 1), {})
    bl = block_tail_constant(pool, part, [2.0, 2.0])
    # one class covering everything: class norm is the full norm
    for inf_est, blk_est in zip(bl.c_inf, bl.block[0]):
        assert inf_est.value == blk_est.value
    assert bl.consistent is True


# -- spectral_measure ----------------------------------------------------------------


def test_spectral_masses_independent_pair(pair_pool):
    part = BlockPartition(((0,), (1,)), (0, 1), {})
    sp = spectral_measure(pair_pool, part, [2.0, 2.0])
    assert sp.counts == tuple(sorted(sp.counts, reverse=True))
    # asymptotically independent coordinates: all angular mass sits on the
    # coordinate axes, split between the two classes
    top = sp.block_mass[-1]
    assert sum(top) == pytest.approx(1.0, abs=0.05)
    assert sp.off_block_mass[-1] <= 0.05
    assert sp.histogram is not None
    assert sum(sp.histogram[-1]) == pytest.approx(1.0, abs=1e-12)
    for hist in sp.marginals[-1]:
        assert sum(hist) == pytest.approx(1.0, abs=1e-12)


def test_spectral_single_class_mass():
    spec = ModelSpec(
        "TwoPoint",
        2,
        {
            "p": 0.2,
            "up": 2.0,
            "down": 0.5,
            "comonotone": True,
            "b": {"dist": "exponential", "rate": 1.0, "shared": True},
        },
    )
    pool = stationary_pool(spec, seed=22, chains=200, n_per_chain=300)
    part = BlockPartition(((0, 1),), (0, 1), {})
    sp = spectral_measure(pool, part, [2.0, 2.0])
    assert all(row == (1.0,) for row in sp.block_mass)
    assert all(off == 0.0 for off in sp.off_block_mass)


def test_spectral_validates_arguments(pair_pool):
    part = BlockPartition(((0,), (1,)), (0, 1), {})
    with pytest.raises(ValueError):
        spectral_measure(pair_pool, part, [2.0, 2.0], eps=0.0)
    with pytest.raises(ValueError):
        spectral_measure(pair_pool, part, [2.0, 2.0], bins=1)


# -- moment_estimate ----------------------------------------------------------------


def test_moment_estimate_stable_below_index(ref_pool):
    chk = moment_estimate(ref_pool, 0, 1.0)
    assert chk.stable is True
    assert chk.estimate.flag is None
    # E X = E B / (1 - E A) = 5
    assert chk.estimate.value == pytest.approx(5.0, rel=0.1)


def test_moment_estimate_unstable_above_index(ref_pool):
    chk = moment_estimate(ref_pool, 0, 4.0)
    assert chk.stable is False
    assert chk.estimate.flag == "unstable"
    assert chk.rel_change > 0.05


def test_moment_estimate_validates_order(ref_pool):
    with pytest.raises(ValueError):
        moment_estimate(ref_pool, 0, 0.0)
