"""Shared fixtures and scene helpers for the test suite."""

import numpy as np
import pytest

from covec.model import RasterizerConfig, VectorPath
from covec.refine import circle_control_points


def square_control_points(x0, y0, x1, y1):
    """Closed 4-segment cubic tracing an axis-aligned rectangle."""
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)
    pts = []
    for i in range(4):
        a = corners[i]
        b = corners[(i + 1) % 4]
        pts.append(a)
        pts.append(a + (b - a) / 3.0)
        pts.append(a + 2.0 * (b - a) / 3.0)
    return np.asarray(pts)


def square_path(x0, y0, x1, y1, color=(0.5, 0.5, 0.5), opacity=1.0,
                tag="albedo"):
    return VectorPath(control_points=square_control_points(x0, y0, x1, y1),
                      fill_color=np.asarray(color, dtype=np.float64),
                      opacity=opacity, layer_tag=tag)


def disk_path(cx, cy, r, color=(0.5, 0.5, 0.5), opacity=1.0, tag="albedo"):
    return VectorPath(control_points=circle_control_points((cx, cy), r),
                      fill_color=np.asarray(color, dtype=np.float64),
                      opacity=opacity, layer_tag=tag)


def random_path(rng, width, height, tag="albedo", color_hi=0.95):
    center = rng.uniform([4.0, 4.0], [width - 4.0, height - 4.0])
    radius = rng.uniform(2.5, min(width, height) / 3.0)
    ctrl = circle_control_points(center, radius)
    ctrl = ctrl + rng.normal(0.0, 0.4, ctrl.shape)
    return VectorPath(control_points=ctrl,
                      fill_color=rng.uniform(0.05, color_hi, 3),
                      opacity=float(rng.uniform(0.2, 0.95)), layer_tag=tag)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def rcfg():
    return RasterizerConfig()


@pytest.fixture
def fixed_rcfg():
    # uniform-parameter flattening keeps finite differences smooth
    return RasterizerConfig(flatten_mode="fixed")
