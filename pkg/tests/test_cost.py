import math

import numpy as np
import pytest

from mfgcache.cost import (DeliveryContext, InvalidRateError, cache_drift, caching_load,
                           case_conditions, delay_cost, discard_rate, expected_state_cost,
                           fronthaul_load, heaviside, integrate_cache, total_cost)
from mfgcache.model import CostParams

P = CostParams()
S = P.S
# e^-0.5 / 4 at 30 digits (mpmath)
DRIFT_Q2 = 0.151632664928158355900949883748


def test_drift_balance_point():
    assert cache_drift(0.0, math.exp(P.a - 1), 0, P) == 0.0


def test_drift_two_requests_no_caching():
    assert cache_drift(0.0, 0.0, 2, P) == pytest.approx(-DRIFT_Q2 * S, rel=1e-12)


def test_drift_many_requests_limit():
    assert abs(cache_drift(0.0, 0.3, 40, P) - 0.3 * S) <= 1e-6 * S


def test_integrate_clamps():
    assert integrate_cache(0.0, 0.0, 0, 1.0, P) == 0.0
    assert integrate_cache(S, 1.0, 10, 5.0, P) == S


def test_heaviside_step_and_logistic():
    assert heaviside(0.0) == 1.0
    assert heaviside(-1e-9) == 0.0
    assert heaviside(0.0, kappa=50.0) == 0.5
    assert heaviside(S, kappa=50.0, scale=S) == pytest.approx(1.0, abs=1e-20)


@pytest.mark.parametrize("s_n, s_alt, expected", [(S, 0.0, (1, 0, 0)), (0.0, S, (0, 1, 0)),
                                                  (0.0, 0.9 * S, (0, 0, 1)),
                                                  (0.5 * S, S, (1, 0, 0))])
def test_case_conditions_exact(s_n, s_alt, expected):
    assert tuple(case_conditions(s_n, s_alt, S)) == expected


def test_single_request_delay_from_cache():
    ctx = DeliveryContext(np.array([1e7]), np.array([1.0]), 0.0)
    assert delay_cost(ctx, S, S, P.R_F) == pytest.approx(80.0, rel=1e-12)


def test_case_two_delay_has_no_fronthaul_term():
    ctx = DeliveryContext(np.array([1.0]), np.array([1e7]), S)
    assert delay_cost(ctx, 0.0, S, P.R_F) == pytest.approx(80.0, rel=1e-12)


def test_case_three_adds_fronthaul():
    ctx = DeliveryContext(np.array([2e7, 4e7]), np.array([1.0, 1.0]), 0.0)
    # 40 + 80 and 20 + 80 seconds
    assert delay_cost(ctx, 0.0, S, 1e7) == pytest.approx(220.0, rel=1e-12)


def test_no_requests_no_delay():
    assert delay_cost(DeliveryContext(np.zeros(0), np.zeros(0), S), 0.0, S, P.R_F) == 0.0


def test_zero_rate_rejected():
    with pytest.raises(InvalidRateError):
        delay_cost(DeliveryContext(np.array([0.0]), np.array([1.0]), 0.0), 0.0, S, P.R_F)


def test_caching_load_values():
    assert caching_load(0.0, P) == 0.0
    assert caching_load(1.0, P) == pytest.approx(0.0251, rel=1e-12)


def test_full_cache_has_no_retrieval_load():
    cond = case_conditions(S, 0.0, S)
    assert fronthaul_load(0.0, S, 7, cond, P) == 0.0


def test_retrieval_load():
    cond = case_conditions(0.0, 0.0, S)
    assert fronthaul_load(0.0, 0.0, 2, cond, P) == pytest.approx(0.3 * 2 * S, rel=1e-12)


def test_total_cost_arithmetic():
    assert total_cost(0.0, 0.0, 100.0, 1e-6) == 0.0
    assert total_cost(1.0, 1.0, 100.0, 1e-6) == pytest.approx(100.000001, rel=1e-12)
    assert total_cost(3.5, 0.0, 100.0, 1e-6) == 350.0


def test_expected_state_cost_exact_step_matches_delivery():
    own, alt = 2e7, 5e6
    for s in (0.0, 0.3 * S, 0.6 * S, S):
        for active in (0.0, 1.0):
            ctx = DeliveryContext(np.array([own]), np.array([alt]), S if active else 0.0)
            cond = case_conditions(s, ctx.s_alt, S)
            want = P.omega1 * delay_cost(ctx, s, S, P.R_F) + P.omega2 * (
                fronthaul_load(0.0, s, 1, cond, P))
            got = expected_state_cost(s, 1.0, active, P, own, alt)
            assert got == pytest.approx(want, rel=1e-12)


def test_discard_rate_vectorizes():
    q = np.array([0, 1, 2])
    assert np.allclose(discard_rate(q, 0.5), math.exp(-0.5) * np.array([1, 0.5, 0.25]))
