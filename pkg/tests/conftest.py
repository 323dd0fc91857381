import numpy as np
import pytest

from tvq import kernels
from tvq.container import TensorMap


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    monkeypatch.setattr(kernels, "_impl", kernels.get_backend(request.param))
    return request.param


def random_tensormap(rng: np.random.Generator, n_tensors: int = 3,
                     max_elems: int = 64, scale: float = 1.0) -> TensorMap:
    tensors = []
    for i in range(n_tensors):
        n = int(rng.integers(1, max_elems + 1))
        if rng.random() < 0.5 and n >= 4:
            shape = (2, n // 2) if n % 2 == 0 else (n,)
        else:
            shape = (n,)
        count = int(np.prod(shape))
        tensors.append((f"t{i}", (scale * rng.standard_normal(count)).reshape(shape)))
    return TensorMap(tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)
