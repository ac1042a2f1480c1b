import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from phaseplug.estimator import PhasePlugDesigner


def test_params_round_trip():
    est = PhasePlugDesigner(max_iters=7, objective="power")
    params = est.get_params()
    assert params["max_iters"] == 7 and params["objective"] == "power"
    other = clone(est)
    assert other.get_params() == params
    est.set_params(h0_frac=0.2)
    assert est.h0_frac == 0.2


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        PhasePlugDesigner().predict([1000.0])


@pytest.mark.parametrize("kw", [dict(h=-1.0), dict(max_iters=0), dict(eps_s=-1.0),
                                dict(max_step_frac=0.0), dict(grad_tol=-1.0)])
def test_invalid_params_rejected_at_fit(kw):
    with pytest.raises(ValueError):
        PhasePlugDesigner(**kw).fit()


def test_fit_predict_score():
    est = PhasePlugDesigner(f_min=5000.0, f_max=9000.0, n_frequencies=2, max_iters=2,
                            solver="direct")
    assert est.fit() is est
    assert est.J_ <= est.J0_
    assert 0.0 <= est.score() < 1.0
    p = est.predict([5000.0, 9000.0])
    assert p.shape == (2,) and np.iscomplexobj(p)
    assert est.n_iter_ == len(est.history_) - 1
