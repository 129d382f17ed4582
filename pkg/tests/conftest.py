import numpy as np
import pytest

from modelsplit.nn.model import evaluate_loss, loss_and_grads

# relative error with a floor so near-zero coordinates compare on an absolute scale
FD_FLOOR = 1e-4


def fd_gradient(f, data: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` over every coordinate of ``data`` (mutated in place)."""
    out = np.zeros_like(data)
    for i in range(data.size):
        old = data[i]
        data[i] = old + h
        up = f()
        data[i] = old - h
        down = f()
        data[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), FD_FLOOR)


def model_fd_check(model, params, x, y):
    _, grads = loss_and_grads(model, params, x, y)
    num = fd_gradient(lambda: evaluate_loss(model, params, x, y), params.data)
    return rel_error(grads.data, num)


@pytest.fixture
def toy_data():
    from modelsplit.datasets import make_toy
    return make_toy(n_train=120, n_test=60, n_features=6, n_classes=3, seed=7)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
