"""The 24 rotations of the cube, used as nominal starting orientations."""

from __future__ import annotations

import itertools

import numpy as np

from ..geometry import matrix_to_quat


def cube_rotation_matrices() -> np.ndarray:
    """Signed permutation matrices with determinant +1, shape (24, 3, 3)."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, sg) in enumerate(zip(perm, signs)):
                m[row, col] = sg
            if np.linalg.det(m) > 0:
                mats.append(m)
    return np.array(mats)


CUBE_ROTATIONS = cube_rotation_matrices()
CUBE_QUATERNIONS = np.array([matrix_to_quat(m) for m in CUBE_ROTATIONS])
