import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from espmcmc.diagnostics import iact_obm, max_iact, summaries_to_json, summarize
from espmcmc.errors import InputError
from espmcmc.rng import make_generator


def test_iid_series_near_one():
    x = make_generator(71).standard_normal(100_000)
    assert 0.8 <= iact_obm(x, 300) <= 1.3


def test_duplicating_elements_roughly_doubles():
    x = make_generator(72).standard_normal(50_000)
    base = iact_obm(x, 200)
    dup = iact_obm(np.repeat(x, 2), 400)
    assert dup / base == pytest.approx(2.0, rel=0.15)


@settings(max_examples=25, deadline=None)
@given(st.floats(-100, 100), st.floats(0.01, 100))
def test_affine_invariance(shift, scale):
    x = make_generator(73).standard_normal(2000).cumsum() * 0.01 + make_generator(74).standard_normal(2000)
    assert iact_obm(shift + scale * x, 50) == pytest.approx(iact_obm(x, 50), rel=1e-7)


def test_errors():
    with pytest.raises(InputError):
        iact_obm(np.ones(1000), 10)
    with pytest.raises(InputError):
        iact_obm(np.arange(20.0), 10)
    with pytest.raises(InputError):
        iact_obm(np.arange(20.0), 0)


def test_summaries_and_json():
    x = make_generator(75).standard_normal((5000, 2))
    s = summarize(x, ["a", "b"], 50)
    assert [q.quantity for q in s] == ["a", "b"]
    assert s[0].ess == pytest.approx(5000 / s[0].iact)
    assert max_iact(s) == max(q.iact for q in s)
    data = json.loads(summaries_to_json(s))
    assert set(data[0]) == {"quantity", "mean", "sd", "iact", "ess", "batch_size"}
