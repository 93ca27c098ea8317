import numpy as np
import pytest

from dgmmkit.errors import InvalidConfig, ShapeMismatch
from dgmmkit.linalg import RngState
from dgmmkit.models import MlpParams
from dgmmkit.optimizers import AdaGrad, RMSprop, SGD, available, get_optimizer, optimizer_step


def _scalar_params(w0: float) -> MlpParams:
    """Empty-trunk 1 -> 1 network; every array is a single weight."""
    p = MlpParams.initialize([1, 1], RngState(0))
    return p.with_arrays([np.full_like(a, w0) for a in p.arrays()])


def _bowl(opt, lr: float, steps: int) -> MlpParams:
    # f(w) = 1/2 w^2 per array, so the gradient is w itself
    params = _scalar_params(1.0)
    state = opt.init_state(params, lr)
    for _ in range(steps):
        params = opt.step(params, params, state)
    assert state.step == steps
    return params


def test_registry():
    assert set(available()) == {"sgd", "rmsprop", "adagrad"}
    assert isinstance(get_optimizer("RMSprop"), RMSprop)
    assert isinstance(get_optimizer("sgd"), SGD)
    assert isinstance(get_optimizer("adagrad"), AdaGrad)
    with pytest.raises(InvalidConfig):
        get_optimizer("adam")


@pytest.mark.parametrize("opt", [SGD(), RMSprop(), AdaGrad()])
def test_zero_gradient_is_a_fixed_point(opt):
    params = MlpParams.initialize([3, 4, 2], RngState(1))
    state = opt.init_state(params, 0.1)
    moved = opt.step(params, params.zeros_like(), state)
    for a, b in zip(params.arrays(), moved.arrays()):
        assert np.array_equal(a, b)
    assert state.step == 1


def test_rmsprop_converges_on_quadratic_bowl():
    params = _bowl(RMSprop(), lr=0.1, steps=200)
    assert all(abs(float(a.ravel()[0])) < 1e-3 for a in params.arrays())


def test_sgd_converges_on_quadratic_bowl():
    params = _bowl(SGD(), lr=0.1, steps=200)
    assert all(abs(float(a.ravel()[0])) < 1e-3 for a in params.arrays())


def test_parameters_move_against_the_gradient():
    params = _scalar_params(1.0)
    for opt in (SGD(), RMSprop(), AdaGrad()):
        moved = opt.step(params, params, opt.init_state(params, 0.01))
        assert all(float(b.ravel()[0]) < 1.0 for b in moved.arrays())


def test_default_step_is_rmsprop_and_deterministic():
    params = MlpParams.initialize([3, 4, 2], RngState(2))
    grads = MlpParams.initialize([3, 4, 2], RngState(3))
    runs = []
    for _ in range(2):
        state = RMSprop().init_state(params, 1e-3)
        p = params
        for _ in range(5):
            p = optimizer_step(p, grads, state)
        runs.append(p)
    for a, b in zip(runs[0].arrays(), runs[1].arrays()):
        assert np.array_equal(a, b)


def test_shape_mismatch():
    params = MlpParams.initialize([3, 4, 2], RngState(2))
    other = MlpParams.initialize([3, 5, 2], RngState(2))
    with pytest.raises(ShapeMismatch):
        SGD().step(params, other, SGD().init_state(params, 0.1))
