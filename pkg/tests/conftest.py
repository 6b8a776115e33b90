import numpy as np
import pytest


def disk_image(n, radius=1.5, extent=2.0):
    """Binary disk raster on [-extent, extent]^2 sampled at pixel centers."""
    xs = (np.arange(n) + 0.5) / n * (2 * extent) - extent
    x, y = np.meshgrid(xs, xs)
    return (x ** 2 + y ** 2 <= radius ** 2).astype(float)


def texture(x, y):
    """Smooth aperiodic test pattern with gradients in both directions."""
    return (0.5 + 0.25 * np.sin(2 * np.pi * x / 32) * np.cos(2 * np.pi * y / 24)
            + 0.15 * np.sin(2 * np.pi * (x + y) / 20)
            + 0.1 * np.cos(2 * np.pi * x / 13))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
