"""The finite-difference checker itself."""

import numpy as np
import pytest

from nedlm import autodiff as ad
from nedlm.errors import NumericError, ParameterError
from nedlm.gradcheck import gradcheck, max_rel_err
from nedlm.params import make_parameter


class TestGradcheck:
    def test_quadratic_at_three(self):
        p = make_parameter("theta", np.array([3.0]))

        def loss():
            return ad.sum_(ad.square(p.tensor))

        errs = gradcheck(loss, [p])
        assert errs["theta"] < 1e-8
        p.zero_grad()
        loss().backward()
        assert p.grad[0] == pytest.approx(6.0, abs=1e-10)

    def test_constant_function_both_zero(self):
        p = make_parameter("theta", np.array([1.0, -2.0]))

        def loss():
            return ad.constant(4.2)

        errs = gradcheck(loss, [p])
        assert errs["theta"] == 0.0

    def test_detects_corrupted_backward(self):
        # a deliberately wrong gradient must not be masked by the noise guard
        p = make_parameter("theta", np.array([0.7, -1.2]))

        def forward():
            out = ad.Tensor(np.sum(p.values**2), parents=(p.tensor,))

            def bad_backward(g):
                p.tensor._accumulate(g * 3.0 * p.values)  # should be 2x

            out._backward = bad_backward
            return out

        assert max_rel_err(forward, [p]) > 0.3

    def test_detects_sign_flip(self):
        p = make_parameter("theta", np.array([0.9]))

        def forward():
            out = ad.Tensor(np.sum(p.values**2), parents=(p.tensor,))

            def bad_backward(g):
                p.tensor._accumulate(-g * 2.0 * p.values)

            out._backward = bad_backward
            return out

        assert max_rel_err(forward, [p]) > 1.0

    @pytest.mark.filterwarnings("ignore:divide by zero")
    def test_nonfinite_loss_raises(self):
        p = make_parameter("theta", np.array([0.0]))

        def loss():
            return ad.log(p.tensor)  # log(0) = -inf

        with pytest.raises(NumericError):
            gradcheck(loss, [p])

    def test_nonpositive_step_rejected(self):
        p = make_parameter("theta", np.array([1.0]))
        with pytest.raises(ParameterError):
            gradcheck(lambda: ad.sum_(p.tensor), [p], step=0.0)

    def test_reports_per_parameter(self):
        a = make_parameter("a", np.array([1.0]))
        b = make_parameter("b", np.array([2.0]))

        def loss():
            return ad.sum_(ad.add(ad.square(a.tensor), ad.mul(b.tensor, 3.0)))

        errs = gradcheck(loss, [a, b])
        assert set(errs) == {"a", "b"}
        assert all(v < 1e-6 for v in errs.values())
