"""Shared fixtures and independent oracles.

The matrix helpers here are deliberately written against 4x4 homogeneous
matrices with their own quaternion conversions, so they can serve as an
oracle for the package's quaternion-based pose algebra.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from hybridgen.geometry import Pose

FIXTURES = Path(__file__).parent / "fixtures"


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot: np.ndarray):
    """Shepperd's method, independent of the package conversions."""
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        w, x, y, z = 0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w, x, y, z = (m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w, x, y, z = (m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w, x, y, z = (m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s
    return (w, x, y, z)


def pose_to_matrix(p: Pose) -> np.ndarray:
    mat = np.eye(4)
    mat[:3, :3] = quat_to_matrix(p.rotation)
    mat[:3, 3] = p.translation
    return mat


def matrix_to_pose(mat: np.ndarray) -> Pose:
    return Pose(matrix_to_quat(mat[:3, :3]), tuple(mat[:3, 3]))


def random_quat(rng) -> tuple:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return tuple(q)


def random_pose(rng, translation_scale: float = 1.0) -> Pose:
    return Pose(random_quat(rng), tuple(rng.uniform(-translation_scale, translation_scale, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
