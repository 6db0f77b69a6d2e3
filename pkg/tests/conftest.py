import numpy as np
import pytest

from pssim import ModelArch, ParamVector, init_params, mlp_arch, stream
from pssim.nn import Conv2DSpec, DenseSpec

MNIST_DIR = "data/mnist"


@pytest.fixture(scope="session")
def mnist():
    from pssim import load_mnist

    return load_mnist(MNIST_DIR)


def tiny_mlp(in_dim=5, hidden=4, classes=3) -> ModelArch:
    return mlp_arch(in_dim, hidden, classes)


def tiny_conv(classes=3) -> ModelArch:
    # 6x6x1 -> conv 3x3x2 -> pool -> 2x2x2 -> dense classes; 47 params
    return ModelArch(
        input_shape=(6, 6, 1),
        layers=(
            Conv2DSpec((6, 6, 1), filters=2, kernel=3),
            DenseSpec(8, classes, "linear"),
        ),
    )


def seeded_params(arch, seed=0, dtype=np.float32) -> ParamVector:
    return init_params(arch, stream(seed, "init"), dtype=dtype)
