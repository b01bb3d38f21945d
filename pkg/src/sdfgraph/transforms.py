"""Similarity transforms in homogeneous ``[[R, T], [0, s]]`` form.

A transform acts on points by dehomogenization: ``apply(x) = (R x + T) / s``.
Composition is the 4x4 matrix product, so ``(a @ b).apply(x) == a.apply(b.apply(x))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-9
_GIMBAL_MARGIN = 1e-3


def _check_rotation(R: np.ndarray, what: str = "R") -> None:
    if R.shape != (3, 3):
        raise ValueError(f"{what} must be 3x3, got {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
        raise ValueError(f"{what} is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise ValueError(f"{what} is not a proper rotation (det != +1)")


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation in Frobenius norm (orthogonal Procrustes with det fix)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def euler_zyx_to_matrix(angles) -> np.ndarray:
    """Z-Y-X intrinsic Euler angles (phi about z, theta about y, psi about x)."""
    return Rotation.from_euler("ZYX", np.asarray(angles, dtype=np.float64)).as_matrix()


def matrix_to_euler_zyx(R: np.ndarray) -> np.ndarray:
    phi_theta_psi = Rotation.from_matrix(R).as_euler("ZYX")
    if abs(abs(phi_theta_psi[1]) - math.pi / 2) < _GIMBAL_MARGIN:
        log.warning("Euler decomposition near gimbal lock (theta=%.6f)", phi_theta_psi[1])
    return phi_theta_psi


def rotation_angle(R: np.ndarray) -> float:
    """Angle in radians of a rotation matrix (atan2 form, accurate near zero)."""
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(math.atan2(0.5 * np.linalg.norm(axis), 0.5 * (np.trace(R) - 1.0)))


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    R: np.ndarray
    T: np.ndarray
    s: float = 1.0

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(3)
        _check_rotation(R)
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"invalid scale s={self.s}: must be > 0")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "s", float(self.s))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    @classmethod
    def from_matrix(cls, H) -> "SimilarityTransform":
        H = np.asarray(H, dtype=np.float64)
        if H.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {H.shape}")
        if np.any(H[3, :3] != 0.0):
            raise ValueError("bottom row of a similarity matrix must be [0, 0, 0, s]")
        return cls(H[:3, :3], H[:3, 3], float(H[3, 3]))

    @classmethod
    def translation(cls, v) -> "SimilarityTransform":
        return cls(np.eye(3), np.asarray(v, dtype=np.float64), 1.0)

    @classmethod
    def from_euler(cls, angles, T, s: float) -> "SimilarityTransform":
        return cls(euler_zyx_to_matrix(angles), T, s)

    def matrix(self) -> np.ndarray:
        H = np.zeros((4, 4))
        H[:3, :3] = self.R
        H[:3, 3] = self.T
        H[3, 3] = self.s
        return H

    def euler(self) -> np.ndarray:
        return matrix_to_euler_zyx(self.R)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x @ self.R.T + self.T) / self.s

    def apply_inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return (self.s * y - self.T) @ self.R

    def inverse(self) -> "SimilarityTransform":
        Rt = self.R.T
        return SimilarityTransform(Rt, -(Rt @ self.T) / self.s, 1.0 / self.s)

    def __matmul__(self, other: "SimilarityTransform") -> "SimilarityTransform":
        if not isinstance(other, SimilarityTransform):
            return NotImplemented
        return SimilarityTransform.from_matrix(self.matrix() @ other.matrix())

    compose = __matmul__

    @property
    def distance_scale(self) -> float:
        """Factor converting source-frame distances to target-frame distances."""
        return 1.0 / self.s

    def max_entry_error(self, other: "SimilarityTransform") -> float:
        return float(np.abs(self.matrix() - other.matrix()).max())

    def errors_to(self, other: "SimilarityTransform") -> dict:
        """Rotation (deg), translation and relative scale discrepancies.

        Translation error is measured on the point action at the origin, i.e.
        ``|apply(0) - other.apply(0)|`` in target units.
        """
        dR = self.R @ other.R.T
        return {
            "rotation_deg": math.degrees(rotation_angle(dR)),
            "translation": float(np.linalg.norm(self.T / self.s - other.T / other.s)),
            "scale_rel": abs(self.s / other.s - 1.0),
        }

    def to_list(self) -> list[float]:
        return [*self.R.ravel().tolist(), *self.T.tolist(), self.s]

    @classmethod
    def from_list(cls, vals) -> "SimilarityTransform":
        vals = [float(v) for v in vals]
        if len(vals) != 13:
            raise ValueError("similarity transform needs 13 numbers: R(9) T(3) s")
        return cls(np.array(vals[:9]).reshape(3, 3), vals[9:12], vals[12])

    def __repr__(self):
        e = np.degrees(self.euler())
        return (f"SimilarityTransform(euler_zyx_deg={np.round(e, 6).tolist()}, "
                f"T={np.round(self.T, 6).tolist()}, s={self.s:.6g})")


@dataclass(frozen=True)
class EulerPose7:
    """(phi, theta, psi) Z-Y-X Euler angles in radians, translation, scale."""

    angles: tuple[float, float, float]
    t: tuple[float, float, float]
    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("scale must be > 0")

    @classmethod
    def from_transform(cls, tr: SimilarityTransform) -> "EulerPose7":
        return cls(tuple(tr.euler()), tuple(tr.T), tr.s)

    @classmethod
    def from_vector(cls, v) -> "EulerPose7":
        v = np.asarray(v, dtype=np.float64)
        return cls(tuple(v[:3]), tuple(v[3:6]), float(v[6]))

    def vector(self) -> np.ndarray:
        return np.array([*self.angles, *self.t, self.s])

    def to_transform(self) -> SimilarityTransform:
        return SimilarityTransform.from_euler(self.angles, self.t, self.s)
