import numpy as np
import pytest

from heavytail_sre import (
    AmbiguousPartitionError,
    BlockPartition,
    ModelSpec,
    detect_blocks,
    project_block,
    stationary_pool,
)
from heavytail_sre.moments import solve_alpha

RNG = lambda s: np.random.default_rng(s)


def test_independent_pair_splits():
    spec = ModelSpec("TwoPoint", 2, {"p": 0.2, "up": 2.0, "down": 0.5})
    part = detect_blocks(spec, [2.0, 2.0], RNG(0))
    assert part.classes == ((0,), (1,))
    assert part.permutation == (0, 1)
    ev = part.evidence["0-1"]
    assert ev["same_class"] is False
    assert ev["max_rel_dev"] > 0.1
    # independent same-marginal pair: cross moment 0.64 at xi = 1/2
    mid = ev["cross_kappa"]["0.5"]
    assert mid["value"] == pytest.approx(0.64, abs=1e-12)


def test_comonotone_pair_is_one_class():
    spec = ModelSpec(
        "TwoPoint", 2, {"p": 0.2, "up": 2.0, "down": 0.5, "comonotone": True}
    )
    part = detect_blocks(spec, [2.0, 2.0], RNG(1))
    assert part.classes == ((0, 1),)
    ev = part.evidence["0-1"]
    assert ev["same_class"] is True
    assert ev["max_rel_dev"] == 0.0
    assert ev["cross_kappa"]["0.5"]["value"] == pytest.approx(1.0, abs=1e-12)


def test_correlated_lognormal_blocks():
    corr = [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    spec = ModelSpec(
        "LogNormal", 3, {"mu": -0.5, "sigma": 1.0, "corr": corr}
    )
    part = detect_blocks(spec, [1.0, 1.0, 1.0], RNG(2))
    assert part.classes == ((0, 1), (2,))
    assert part.permutation == (0, 1, 2)
    assert part.class_of(1) == 0
    assert part.class_of(2) == 1


def test_shared_factor_garch_blocks():
    spec = ModelSpec(
        "CCCGarch",
        3,
        {"arch": [0.35, 0.35, 0.15], "garch": [0.25, 0.25, 0.55], "z_map": [0, 0, 1]},
    )
    alphas = [solve_alpha(spec, j).alpha for j in range(3)]
    part = detect_blocks(spec, alphas, RNG(3))
    assert part.classes == ((0, 1), (2,))
    # the cross-class moment is certified strictly below 1 at every probe
    for key in ("0-2", "1-2"):
        for probe in part.evidence[key]["cross_kappa"].values():
            assert probe["ci_hi"] < 1.0


def test_ambiguous_pair_raises():
    # nearly identical coordinates: samples split them, but a short Monte
    # Carlo check cannot certify the mixed moment below 1
    spec = ModelSpec(
        "CCCGarch", 2, {"arch": [0.35, 0.3499], "garch": [0.25, 0.2501], "z_map": [0, 0]}
    )
    alphas = [solve_alpha(spec, j).alpha for j in range(2)]
    with pytest.raises(AmbiguousPartitionError) as err:
        detect_blocks(spec, alphas, RNG(0), cross_method="monte-carlo", cross_n=20_000)
    assert err.value.pair == (0, 1)
    # the closed-form mixed moment settles the same pair
    part = detect_blocks(spec, alphas, RNG(0))
    assert part.classes == ((0,), (1,))


def test_detect_blocks_validates_input():
    spec = ModelSpec("TwoPoint", 2, {"p": 0.2, "up": 2.0, "down": 0.5})
    with pytest.raises(ValueError):
        detect_blocks(spec, [2.0], RNG(0))
    with pytest.raises(ValueError):
        detect_blocks(spec, [2.0, -1.0], RNG(0))
    with pytest.raises(ValueError):
        detect_blocks(spec, [2.0, 2.0], RNG(0), xi_probes=(0.0, 0.5))


def test_partition_json_roundtrip():
    spec = ModelSpec(
        "TwoPoint", 2, {"p": 0.2, "up": 2.0, "down": 0.5, "comonotone": True}
    )
    part = detect_blocks(spec, [2.0, 2.0], RNG(4))
    back = BlockPartition.from_json(part.to_json())
    assert back.classes == part.classes
    assert back.permutation == part.permutation
    assert back.evidence == part.evidence


def test_partition_json_validation():
    with pytest.raises(ValueError):
        BlockPartition.from_json('{"classes": [[0], [1]], "permutation": [1, 0]}')
    with pytest.raises(ValueError):
        BlockPartition.from_json('{"classes": [[0], [2]], "permutation": [0, 2]}')


def test_class_of_out_of_range():
    part = BlockPartition(((0,),), (0,), {})
    with pytest.raises(IndexError):
        part.class_of(1)


def test_project_block_slices_columns():
    spec = ModelSpec(
        "TwoPoint",
        3,
        {
            "p": [0.2, 0.2, 0.3],
            "up": 2.0,
            "down": 0.5,
            "comonotone": True,
            "b": {"dist": "exponential", "rate": 1.0},
        },
    )
    pool = stationary_pool(spec, seed=5, chains=4, n_per_chain=20)
    part = BlockPartition(((0, 1), (2,)), (0, 1, 2), {})
    sub = project_block(pool, part, 0)
    assert sub.d == 2
    assert len(sub) == len(pool)
    np.testing.assert_array_equal(sub.x_post, pool.x_post[:, [0, 1]])
    assert sub.meta["block_index"] == 0
    assert sub.meta["block_coords"] == [0, 1]
    assert sub.meta["parent_d"] == 3
    one = project_block(pool, part, 1)
    np.testing.assert_array_equal(one.x_post, pool.x_post[:, [2]])
    with pytest.raises(IndexError):
        project_block(pool, part, 2)
