import numpy as np
import pytest

from sptk.numcore import Tensor, backward, default_dtype


def central_diff(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Finite-difference oracle: d f / d x by central differences, coordinatewise.

    Mutates x in place while probing, restoring each coordinate afterwards.
    """
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grad_close(ad, fd, rtol: float = 1e-3, floor: float = 1e-6):
    """Relative comparison of autodiff vs finite differences.

    Coordinates where both magnitudes sit below `floor` count as matching zeros.
    """
    ad = np.asarray(ad, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), floor)
    rel = np.abs(ad - fd) / denom
    worst = float(rel.max()) if rel.size else 0.0
    assert worst <= rtol, f"gradient mismatch: max relative error {worst:.3e} > {rtol}"


def gradcheck(build_loss, leaves: dict, h: float = 1e-3, rtol: float = 1e-3):
    """Check autodiff grads of `build_loss({name: Tensor}) -> scalar Tensor`
    against central differences for every leaf.

    Runs the graph in float64 so the oracle is not drowned in rounding noise;
    `build_loss` must rebuild the graph from scratch on every call.
    """
    with default_dtype(np.float64):
        tensors = {k: Tensor(np.asarray(v, dtype=np.float64).copy(), requires_grad=True)
                   for k, v in leaves.items()}
        loss = build_loss(tensors)
        backward(loss)

        def loss_value():
            # fresh wrappers share the (possibly perturbed) data buffers
            rebuilt = {k: Tensor(t.data) for k, t in tensors.items()}
            return float(build_loss(rebuilt).data)

        for name, t in tensors.items():
            fd = central_diff(loss_value, t.data, h=h)
            ad = t.grad if t.grad is not None else np.zeros_like(t.data)
            assert_grad_close(ad, fd, rtol=rtol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
