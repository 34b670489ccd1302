import math

import numpy as np
import pytest

from spmdesign.errors import ScalingError
from spmdesign.parameters import (
    MU_LOWER,
    MU_UPPER,
    UNSCALED_LOWER,
    UNSCALED_UPPER,
    _scale_vector,
    default_cell,
    is_admissible,
    scale_parameters,
    truth_mu,
    unscale_parameters,
)

# Scaled bounds as published, to their full printed precision.
TABLE_SCALED_LOWER = [0.0, 0.0, 0.0676328502415459, 0.0821917808219178,
                      0.32258064516129, 0.3, -9.5, -3.0, 0.857142857142857]
TABLE_SCALED_UPPER = [2.0, 2.0, 1.93236714975845, 1.91780821917808,
                      1.67741935483871, 1.7, 9.5, 11.0, 1.14285714285714]


def test_scaled_bounds_match_published_table():
    # the scaling of every unscaled bound reproduces the published scaled
    # bound; the mu_8 box is pinned separately and checked literally
    assert np.allclose(MU_LOWER, TABLE_SCALED_LOWER, rtol=0, atol=1e-12)
    assert np.allclose(MU_UPPER, TABLE_SCALED_UPPER, rtol=0, atol=1e-12)


def test_scaling_of_unscaled_bounds_is_exact():
    lo = _scale_vector(UNSCALED_LOWER)
    hi = _scale_vector(UNSCALED_UPPER)
    # every coordinate except the pinned difference coordinate maps bound->bound
    for j in range(9):
        if j == 7:
            continue
        assert lo[j] == pytest.approx(MU_LOWER[j], abs=1e-12)
        assert hi[j] == pytest.approx(MU_UPPER[j], abs=1e-12)


def test_scale_examples(cell):
    from dataclasses import replace

    # D_C at its lower bound maps to 0
    p = replace(cell, cathode=replace(cell.cathode, diffusion=1e-4))
    assert scale_parameters(p).values[0] == pytest.approx(0.0, abs=1e-15)

    # anode initial SOC at its lower bound
    p = replace(cell, anode_initial_soc=0.007)
    assert scale_parameters(p).values[2] == pytest.approx(0.0676328502415459, abs=1e-15)

    # cathode log-rate at the midpoint maps to 0
    p = replace(cell, cathode=replace(cell.cathode, log_rate=-10.5))
    assert scale_parameters(p).values[6] == pytest.approx(0.0, abs=1e-15)


def test_unscale_examples(cell):
    mu = truth_mu()
    mu[0] = 2.0
    assert unscale_parameters(mu, cell).cathode.diffusion == pytest.approx(1e-2, rel=1e-14)
    mu[8] = 1.0
    assert unscale_parameters(mu, cell).cathode.ocv_offset == pytest.approx(3.5, rel=1e-14)


def test_round_trip_on_random_admissible_vectors(cell, rng):
    for _ in range(100):
        mu = rng.uniform(MU_LOWER, MU_UPPER)
        back = scale_parameters(unscale_parameters(mu, cell)).values
        assert np.allclose(back, mu, rtol=0, atol=1e-12)


def test_admissibility_box():
    assert is_admissible(truth_mu())
    bad = truth_mu()
    bad[0] = 2.5
    assert not is_admissible(bad)
    assert not is_admissible(np.full(9, np.nan))


def test_scaling_rejects_non_finite(cell):
    from dataclasses import replace

    with pytest.raises(ScalingError):
        scale_parameters(replace(cell, inner_resistance=float("nan")))


def test_anode_offset_fixed_to_zero(cell):
    from dataclasses import replace

    with pytest.raises(ScalingError):
        replace(cell, anode=replace(cell.anode, ocv_offset=0.1))


def test_truth_is_interior():
    mu = truth_mu()
    assert np.all(mu > MU_LOWER) and np.all(mu < MU_UPPER)
