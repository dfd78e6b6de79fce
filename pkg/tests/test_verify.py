import numpy as np
import pytest

from trans4mer import verify as V
from trans4mer import tensor as T
from trans4mer.tensor import Tensor


@pytest.mark.parametrize("suite", ["kernels", "gradients", "metrics", "losses"])
def test_suites_pass(suite):
    checks = V.run_suite(suite)
    assert checks
    for c in checks:
        assert c.passed, c.line()


def test_all_subsumes_every_suite():
    names = V.suite_names()
    assert "all" in names
    assert set(names) >= {"kernels", "gradients", "metrics", "losses"}
    with pytest.raises(ValueError):
        V.run_suite("nonsense")


def test_gradcheck_detects_wrong_gradient(rng):
    x = Tensor(rng.standard_normal(4))
    assert V.gradcheck(lambda: (x * x).sum(), [x]) < 1e-8

    def bad_square(t):
        # backward is off by a factor of two
        return T._make(t.data ** 2, (t,), lambda g: T._accum(t, g * t.data))
    assert V.gradcheck(lambda: bad_square(x).sum(), [x]) > 0.1


def test_bruteforce_oracles_agree_on_examples():
    assert V.ap_bruteforce([0.9, 0.1], [0, 1]) == 0.5
    assert V.auc_bruteforce([0.5, 0.5], [1, 0]) == 0.5
    e = np.eye(2)
    assert V.pseudo_boundary_bruteforce([e[0], e[0], e[1]]) == 1
