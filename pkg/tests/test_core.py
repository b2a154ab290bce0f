import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from privlasso.core import (ConstantOne, Explicit, HyperParams, LogNormal, NoiseRealization,
                            PerturbationScheme, ProblemInstance, Scheme, UniformUnit,
                            check_params, validate_params)


def test_paper_setting_is_valid():
    assert validate_params(HyperParams(0.5, 0.1, 0.1, 1.0, 0.01)) == []


def test_rho_zero_rejected():
    errs = validate_params(HyperParams(0.5, 0.0, 0.1, 1.0))
    assert any("rho out of range" in e for e in errs)


def test_rho_zero_admitted_as_null_signal():
    assert validate_params(HyperParams(0.5, 0.0, 0.1, 1.0), allow_null_signal=True) == []


def test_negative_lambda_rejected():
    errs = validate_params(HyperParams(0.5, 0.1, 0.1, -1.0))
    assert "lambda must be positive" in errs


def test_all_violations_reported():
    errs = validate_params(HyperParams(-1.0, 2.0, -0.1, 0.0, -1.0))
    assert len(errs) == 5
    with pytest.raises(ValueError):
        check_params(HyperParams(-1.0, 0.1, 0.1, 1.0))


def test_non_finite_rejected():
    assert validate_params(HyperParams(math.nan, 0.1, 0.1, 1.0))


def test_scale_model_validation():
    with pytest.raises(ValueError):
        LogNormal(0.0, 0.0)
    with pytest.raises(ValueError):
        Explicit((1.0, -2.0))
    with pytest.raises(ValueError):
        Explicit(())


def test_second_moments():
    assert ConstantOne().second_moment() == 1.0
    assert UniformUnit().second_moment() == pytest.approx(1 / 3)
    assert LogNormal(0, 0.5).second_moment() == pytest.approx(math.exp(0.5))
    assert Explicit((1.0, 2.0)).second_moment() == pytest.approx(2.5)


def test_scheme_coercion_and_bounds():
    assert PerturbationScheme("gram", 0.1).variant is Scheme.GRAM
    with pytest.raises(ValueError):
        PerturbationScheme("gram", -0.1)
    with pytest.raises(ValueError):
        PerturbationScheme("laplace", 0.1)


def _instance(**kw):
    base = dict(F=np.eye(2), y=np.zeros(2), x0=np.zeros(2), v=np.ones(2), sigma_xi=0.0, seed=0)
    base.update(kw)
    return ProblemInstance(**base)


def test_instance_checks():
    inst = _instance()
    assert (inst.M, inst.N, inst.alpha) == (2, 2, 1.0)
    with pytest.raises(ValueError):
        _instance(y=np.zeros(3))
    with pytest.raises(ValueError):
        _instance(v=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        _instance(F=np.array([[1.0, np.inf], [0, 1]]))


def test_instance_arrays_read_only():
    inst = _instance()
    with pytest.raises(ValueError):
        inst.F[0, 0] = 3.0


def test_noise_budget_enforced():
    scheme = PerturbationScheme("gram", 1.0)
    NoiseRealization(np.zeros(2), np.array([0.4, 1.6]), scheme)
    with pytest.raises(ValueError):
        NoiseRealization(np.zeros(2), np.array([0.4, 1.7]), scheme)
    with pytest.raises(ValueError):
        NoiseRealization(np.zeros(3), np.array([0.4, 1.6]), scheme)


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=50), st.floats(0, 10))
def test_noise_var_conserves_budget_empirically(v, sbar2):
    v = np.array(v)
    for variant in Scheme:
        var = PerturbationScheme(variant, sbar2).noise_var(v, float(np.mean(v**2)))
        assert var.sum() == pytest.approx(v.size * sbar2, rel=1e-12, abs=1e-300)
