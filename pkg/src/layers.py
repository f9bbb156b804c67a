"""
Neural Network Layers
Parameter-owning building blocks on top of the tensor core.
"""

import logging

import numpy as np

from .exceptions import CheckpointError
from .tensor import Tensor, conv2d, fully_connected, relu

logger = logging.getLogger(__name__)


class Module:
    """
    Base class: parameters are Tensor attributes with requires_grad, plus
    those of child Modules (attributes or lists), named by attribute path
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def parameters(self, prefix=""):
        """
        Returns:
            dict: dotted name -> Tensor, in definition order
        """
        params = {}
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[full] = value
            elif isinstance(value, Module):
                params.update(value.parameters(prefix=f"{full}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.parameters(prefix=f"{full}.{i}."))
        return params

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state_dict(self, state):
        """
        Copy arrays into existing parameters; names and shapes must match

        Raises:
            CheckpointError: On any name or shape mismatch (nothing is copied)
        """
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise CheckpointError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        arrays = {name: np.asarray(state[name]) for name in params}
        for name, tensor in params.items():
            if arrays[name].shape != tensor.shape:
                raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {tensor.shape}")
        for name, tensor in params.items():
            tensor.data = arrays[name].astype(tensor.data.dtype, copy=True)

    def num_parameters(self):
        return sum(t.size for t in self.parameters().values())


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    """
    2-D convolution with 'same'-style default padding

    Args:
        in_channels (int): Input channels
        out_channels (int): Output channels
        kernel_size (int): Odd kernel side
        rng (np.random.Generator): Source for uniform(+-1/sqrt(fan_in)) init
        stride (int): Stride
        padding (int): Defaults to kernel_size // 2
    """

    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=None):
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = _uniform(rng, (out_channels,), fan_in)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    """Fully-connected layer with an L x M weight"""

    def __init__(self, in_features, out_features, rng):
        self.weight = _uniform(rng, (in_features, out_features), in_features)
        self.bias = _uniform(rng, (out_features,), in_features)

    def forward(self, x):
        return fully_connected(x, self.weight, self.bias)


class ResBlock(Module):
    """conv3x3 -> ReLU -> conv3x3, plus the identity skip"""

    def __init__(self, channels, rng):
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def forward(self, x):
        return x + self.conv2(relu(self.conv1(x)))


class ResStack(Module):
    def __init__(self, channels, depth, rng):
        self.blocks = [ResBlock(channels, rng) for _ in range(depth)]

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x
