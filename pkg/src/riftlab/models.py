"""Reference architectures."""

from __future__ import annotations

from typing import Sequence

from .network import Conv2d, Flatten, Linear, NetworkSpec, ReLU


def mlp(input_dim: int, hidden: Sequence[int], num_classes: int) -> NetworkSpec:
    layers = []
    prev = input_dim
    for i, width in enumerate(hidden, start=1):
        layers += [Linear(f"fc{i}", prev, width), ReLU(f"relu{i}")]
        prev = width
    layers.append(Linear(f"fc{len(hidden) + 1}", prev, num_classes))
    return NetworkSpec(layers, (input_dim,), num_classes)


def small_cnn(channels: Sequence[int] = (8, 16, 16), hidden: int = 32, num_classes: int = 4,
              image_size: int = 8, in_channels: int = 1) -> NetworkSpec:
    """3x3 conv stack (second conv strided by 2), then two linear layers."""
    layers = []
    prev, size = in_channels, image_size
    for i, ch in enumerate(channels, start=1):
        stride = 2 if i == 2 else 1
        layers += [Conv2d(f"conv{i}", prev, ch, 3, stride=stride, padding=1), ReLU(f"relu{i}")]
        prev = ch
        size = (size + 2 - 3) // stride + 1
    n = len(channels)
    layers += [
        Flatten("flatten"),
        Linear("fc1", prev * size * size, hidden),
        ReLU(f"relu{n + 1}"),
        Linear("fc2", hidden, num_classes),
    ]
    return NetworkSpec(layers, (in_channels, image_size, image_size), num_classes)
