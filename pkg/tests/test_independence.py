import math

import numpy as np
import pytest

from heavytail_sre import (
    LadderError,
    ModelSpec,
    TauHeavinessError,
    decay_rate_fit,
    joint_exceedance,
    stationary_pool,
    submultiplicativity_check,
    tau_gamma_bound,
)
from heavytail_sre.independence import (
    CustomTau,
    LogLogTau,
    LogTau,
    PowerTau,
    ProductTau,
    build_tau,
)

RNG = lambda s: np.random.default_rng(s)

PAIR = ModelSpec("TwoPoint", 2, {"p": 0.2, "up": 2.0, "down": 0.5})


@pytest.fixture(scope="module")
def pair_pool():
    spec = ModelSpec(
        "TwoPoint",
        2,
        {"p": 0.2, "up": 2.0, "down": 0.5, "b": {"dist": "exponential", "rate": 1.0}},
    )
    return stationary_pool(spec, seed=21, chains=400, n_per_chain=500)


@pytest.fixture(scope="module")
def comonotone_pool():
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
    return stationary_pool(spec, seed=22, chains=400, n_per_chain=500)


# -- tau weights -------------------------------------------------------------


def test_tau_values():
    assert PowerTau(2.0).value(3.0) == 9.0
    assert LogTau(1.0).value(math.e - 1.0) == pytest.approx(2.0, rel=1e-12)
    assert LogLogTau().value(0.0) == 1.0
    prod = ProductTau(LogTau(1.0), PowerTau(1.0))
    assert prod.two_arg is True
    assert prod.value2(0.0, 2.0) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        prod.value(1.0)


def test_tau_validation():
    with pytest.raises(ValueError):
        PowerTau(-1.0)
    with pytest.raises(ValueError):
        LogTau(math.inf)
    with pytest.raises(ValueError):
        ProductTau(ProductTau(LogTau(), LogTau()), LogTau())
    with pytest.raises(ValueError):
        CustomTau(42)


def test_build_tau_roundtrip():
    for tau in (PowerTau(1.5), LogTau(2.0), LogLogTau(), ProductTau(LogTau(), LogLogTau())):
        doc = tau.to_doc()
        clone = build_tau(doc)
        assert clone.to_doc() == doc
        g = np.array([0.5, 3.0, -7.0])
        if tau.two_arg:
            np.testing.assert_allclose(clone.value2(g, g), tau.value2(g, g))
        else:
            np.testing.assert_allclose(clone.value(g), tau.value(g))


def test_build_tau_rejects_bad_docs():
    with pytest.raises(ValueError):
        build_tau({"kind": "exp"})
    with pytest.raises(ValueError):
        build_tau({"beta": 1.0})
    with pytest.raises(ValueError):
        build_tau({"kind": "product", "factors": [{"kind": "log"}]})


# -- submultiplicativity audit --------------------------------------------------


def test_slow_weights_are_submultiplicative():
    for tau in (LogTau(1.0), LogTau(3.0), LogLogTau(), PowerTau(2.0)):
        chk = submultiplicativity_check(tau, RNG(2), n=50_000)
        assert chk.passed is True
        assert chk.growth_ok is True
        assert chk.worst_ratio <= 1.0 + 1e-9


def test_exponential_weight_fails():
    tau = CustomTau(lambda g: np.exp(np.abs(g)), name="exp")
    chk = submultiplicativity_check(tau, RNG(1), n=50_000)
    assert chk.passed is False
    assert chk.worst_ratio > 10.0
    assert chk.growth_ok is None
    # direct witness: tau(3 * 3) = e^9 > e^6 = tau(3) tau(3)
    assert tau.value(9.0) / (tau.value(3.0) * tau.value(3.0)) == pytest.approx(
        math.e**3, rel=1e-12
    )


def test_declared_growth_bound_audited():
    # claims tau <= (1 + |g|)^0 = 1 but grows linearly
    lying = CustomTau(lambda g: 1.0 + np.abs(g), name="lying", growth=(1.0, 0.0))
    chk = submultiplicativity_check(lying, RNG(3), n=10_000)
    assert chk.growth_ok is False


def test_submultiplicativity_validates_range():
    with pytest.raises(ValueError):
        submultiplicativity_check(LogTau(), RNG(0), n=0)
    with pytest.raises(ValueError):
        submultiplicativity_check(LogTau(), RNG(0), lo=1.0, hi=0.5)


# -- joint exceedance ladders ------------------------------------------------------


def test_joint_ladder_independent_pair_decays(pair_pool):
    je = joint_exceedance(pair_pool, 0, 1, [2.0, 2.0])
    assert je.decaying is True
    vals = [e.value for e in je.normalized]
    assert vals[-1] < 0.5 * vals[0]
    assert je.counts == tuple(sorted(je.counts, reverse=True))
    assert je.n == len(pair_pool)


def test_joint_ladder_comonotone_pair_stays_up(comonotone_pool):
    # both coordinates are the same path, so the joint ladder tracks the
    # marginal constant (about 12) instead of collapsing
    je = joint_exceedance(comonotone_pool, 0, 1, [2.0, 2.0])
    vals = [e.value for e in je.normalized]
    assert min(vals) > 5.0
    # flat within confidence bands across the top rungs
    top = je.normalized[-3:]
    assert max(e.ci_lo for e in top) <= min(e.ci_hi for e in top)


def test_joint_ladder_rule_of_three_beyond_data(pair_pool):
    je = joint_exceedance(pair_pool, 0, 1, [2.0, 2.0], ladder=[1.0, 10.0, 1e9])
    assert je.counts[-1] == 0
    assert je.normalized[-1].value == 0.0
    assert je.normalized[-1].flag == "rule-of-three"
    assert je.normalized[-1].ci_hi == pytest.approx(1e9 * 3.0 / je.n)
    assert je.decaying is False


def test_joint_ladder_validation(pair_pool):
    with pytest.raises(ValueError):
        joint_exceedance(pair_pool, 0, 0, [2.0, 2.0])
    with pytest.raises(ValueError):
        joint_exceedance(pair_pool, 0, 1, [2.0, 2.0], r1=0.0)
    with pytest.raises(LadderError):
        joint_exceedance(pair_pool, 0, 1, [2.0, 2.0], ladder=[3.0, 2.0])


# -- decay fit ----------------------------------------------------------------------


def test_decay_fit_recovers_synthetic_exponent():
    t = np.exp(np.linspace(0.5, 6.0, 12))
    y = (1.0 + np.log(t)) ** -2.0
    fit = decay_rate_fit(t, y)
    assert fit.beta == pytest.approx(2.0, rel=1e-12)
    assert fit.residual_rms < 1e-12
    assert fit.n_used == 12


def test_decay_fit_accepts_estimates(pair_pool):
    je = joint_exceedance(pair_pool, 0, 1, [2.0, 2.0])
    fit = decay_rate_fit(je.thresholds, je.normalized)
    assert fit.beta > 0.0


def test_decay_fit_needs_three_rungs():
    with pytest.raises(ValueError):
        decay_rate_fit([2.0, 3.0], [0.5, 0.4])
    with pytest.raises(ValueError):
        # rungs below t = 1 are discarded
        decay_rate_fit([0.1, 0.2, 0.5], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        decay_rate_fit([1.0, 2.0], [0.5, 0.4, 0.3])


# -- tau gamma bound ------------------------------------------------------------------


def test_gamma_bound_independent_pair():
    gb = tau_gamma_bound(PAIR, 0, 1, 2.0, 2.0, LogTau(1.0), RNG(3), n=200_000)
    assert gb.gamma0 > 0.1
    assert gb.cross.value == pytest.approx(0.64, abs=1e-12)
    assert gb.k_zero.ci_hi < 1.0
    assert gb.k_at_gamma0.ci_hi < 1.0
    assert gb.refined is True
    assert gb.tau_name == "log(1)"
    # k grows with gamma along the probed grid
    assert all(a <= b * (1 + 1e-9) for a, b in zip(gb.k_values, gb.k_values[1:]))
    doc = gb.to_dict()
    assert set(doc) >= {"gamma0", "k_zero", "k_at_gamma0", "cross", "xi"}


def test_gamma_bound_heavy_weight_raises():
    with pytest.raises(TauHeavinessError):
        tau_gamma_bound(PAIR, 0, 1, 2.0, 2.0, PowerTau(4000.0), RNG(3), n=50_000)


def test_gamma_bound_refuses_shared_class():
    com = ModelSpec("TwoPoint", 2, {"p": 0.2, "up": 2.0, "down": 0.5, "comonotone": True})
    with pytest.raises(ValueError, match="share a class"):
        tau_gamma_bound(com, 0, 1, 2.0, 2.0, LogTau(1.0), RNG(3), n=50_000)


def test_gamma_bound_validates_arguments():
    with pytest.raises(ValueError):
        tau_gamma_bound(PAIR, 0, 0, 2.0, 2.0, LogTau(1.0), RNG(0))
    with pytest.raises(ValueError):
        tau_gamma_bound(PAIR, 0, 1, 2.0, 2.0, LogTau(1.0), RNG(0), xi=1.0)
    with pytest.raises(ValueError):
        tau_gamma_bound(PAIR, 0, 1, 2.0, 2.0, LogTau(1.0), RNG(0), gammas=[0.5, 0.2])
