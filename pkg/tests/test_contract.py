import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmwb.contract import (ContractError, ContractParams, apply_withdrawal, cashflow,
                           grow_wealth, guaranteed_withdrawal, terminal_payoff)


def test_guaranteed_amounts_annual():
    c = ContractParams()
    assert [guaranteed_withdrawal(c, n) for n in range(1, 11)] == pytest.approx([0.1] * 10)
    assert c.guaranteed_amounts()[1:].sum() == pytest.approx(1.0)


def test_single_date_and_semiannual():
    assert guaranteed_withdrawal(ContractParams(maturity_years=1.0, dates=(1.0,)), 1) == 1.0
    semi = ContractParams.every(10, 2)
    assert semi.n_dates == 20
    assert guaranteed_withdrawal(semi, 7) == pytest.approx(0.05)


def test_date_index_out_of_range():
    with pytest.raises(ContractError):
        guaranteed_withdrawal(ContractParams(), 0)
    with pytest.raises(ContractError):
        guaranteed_withdrawal(ContractParams(), 11)


@pytest.mark.parametrize("kw", [dict(w0=0), dict(penalty=1.2), dict(fee=-0.01),
                                dict(dates=(2.0, 1.0, 10.0)), dict(dates=(1.0, 5.0))])
def test_invalid_contract(kw):
    with pytest.raises(ContractError):
        ContractParams(**kw)


def test_cashflow_examples():
    assert cashflow(0.05, 0.1, 0.1) == pytest.approx(0.05)
    assert cashflow(0.15, 0.1, 0.1) == pytest.approx(0.145)
    assert cashflow(0.1, 0.1, 0.1) == pytest.approx(0.1)
    with pytest.raises(ContractError):
        cashflow(-0.01, 0.1, 0.1)


@given(pi=st.floats(0, 2), g=st.floats(0, 1), beta=st.floats(0, 1))
def test_cashflow_bounds(pi, g, beta):
    c = float(cashflow(pi, g, beta))
    assert c <= pi + 1e-15
    assert c >= min(pi, g) - 1e-15


def test_apply_withdrawal_examples():
    assert apply_withdrawal(0.8, 0.5, 0.5) == pytest.approx((0.3, 0.0))
    assert apply_withdrawal(0.05, 0.5, 0.1) == pytest.approx((0.0, 0.4))
    assert apply_withdrawal(0.7, 0.6, 0.0) == pytest.approx((0.7, 0.6))
    with pytest.raises(ContractError):
        apply_withdrawal(1.0, 0.5, 0.6)
    with pytest.raises(ContractError):
        apply_withdrawal(1.0, 0.5, -0.1)


def test_grow_wealth():
    assert grow_wealth(0.0, 1.7, 0.0135, 1.0) == 0.0
    assert grow_wealth(0.9, math.exp(0.0135), 0.0135, 1.0) == pytest.approx(0.9)
    assert grow_wealth(1.0, 1.1, 0.0135, 1.0) == pytest.approx(1.1 * math.exp(-0.0135))


def test_terminal_payoff():
    c = ContractParams()
    assert terminal_payoff(c, 0.3, 0.1) == pytest.approx(0.3)
    assert terminal_payoff(c, 0.05, 0.1) == pytest.approx(0.1)
    # excess guarantee is paid net of the penalty
    assert terminal_payoff(c, 0.0, 0.3) == pytest.approx(0.1 + 0.9 * 0.2)
    np.testing.assert_allclose(terminal_payoff(c, np.array([0.0, 2.0]), np.array([0.1, 0.1])),
                               [0.1, 2.0])
