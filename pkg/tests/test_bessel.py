import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import jv

from freqbin.bessel import MAX_ORDER, bessel_j, bessel_j_orders


@pytest.mark.parametrize("x", [0.0, 1e-6, 1e-3, 0.5, 1.434, 3.0, 7.5, 10.0])
def test_orders_match_scipy(x):
    got = bessel_j_orders(MAX_ORDER, x)
    assert_allclose(got, jv(np.arange(MAX_ORDER + 1), x), rtol=1e-12, atol=1e-15)


def test_negative_orders_use_parity():
    for n in range(1, 21):
        for x in (0.5, 1.434, 3.0):
            assert bessel_j(-n, x) == pytest.approx((-1) ** n * bessel_j(n, x), abs=1e-15)
            assert bessel_j(-n, x) == pytest.approx(jv(-n, x), abs=1e-14)


def test_zero_argument():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(3, 0.0) == 0.0


def test_order_limit():
    with pytest.raises(ValueError):
        bessel_j(MAX_ORDER + 1, 1.0)


def test_negative_argument_rejected():
    with pytest.raises(ValueError):
        bessel_j_orders(3, -1.0)
