"""Deformation bases from registered sequences by principal component analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConnectivityError, DimensionError, RankDeficiencyError
from .latent import Basis
from .mesh import TriMesh


@dataclass(frozen=True)
class TangentSample:
    """A finite-difference velocity on the template connectivity."""

    field: np.ndarray
    source: tuple = ()


@dataclass
class PCAResult:
    components: np.ndarray  # (count, V, 3), orthonormal in the flat inner product
    singular_values: np.ndarray  # full spectrum, nonincreasing
    mean: np.ndarray | None

    @property
    def explained_variance(self):
        return self.singular_values**2

    def residual_variance(self, count=None):
        count = self.components.shape[0] if count is None else count
        return float(np.sum(self.singular_values[count:] ** 2))


def _frame_vertices(frame, template: TriMesh, seq_id, t):
    if isinstance(frame, TriMesh):
        if not frame.same_connectivity(template):
            raise ConnectivityError(
                f"sequence {seq_id} frame {t}: connectivity differs from the template"
            )
        return frame.vertices
    arr = np.asarray(frame, dtype=np.float64)
    if arr.shape != template.vertices.shape:
        raise ConnectivityError(
            f"sequence {seq_id} frame {t}: shape {arr.shape} does not match the template"
        )
    return arr


def motion_tangents(sequences, template: TriMesh, scale=1.0):
    """Velocities ``scale * (frame[t+1] - frame[t])`` of every sequence.

    Parameters
    ----------
    sequences : list of list of TriMesh or (V, 3) arrays
    template : TriMesh
    scale : float
        Multiplies every velocity; 1 treats consecutive frames as unit time
        apart.
    """
    samples = []
    for s, seq in enumerate(sequences):
        if len(seq) < 2:
            raise DimensionError(f"sequence {s} has {len(seq)} frames; at least 2 are needed")
        verts = [_frame_vertices(f, template, s, t) for t, f in enumerate(seq)]
        for t in range(len(verts) - 1):
            samples.append(TangentSample(scale * (verts[t + 1] - verts[t]), (s, t)))
    return samples


def shape_tangents(geodesic_paths, template: TriMesh, scale=1.0):
    """Velocities of same-pose cross-identity paths; mechanics as :func:`motion_tangents`."""
    return motion_tangents(geodesic_paths, template, scale)


def _fields(samples):
    out = []
    for s in samples:
        out.append(s.field if isinstance(s, TangentSample) else np.asarray(s, dtype=np.float64))
    return np.asarray(out, dtype=np.float64)


def pca_basis(samples, count: int, center: bool = False) -> PCAResult:
    """Leading right singular vectors of the stacked sample fields.

    Each component's largest-magnitude entry is made positive.
    """
    X = _fields(samples)
    if X.shape[0] == 0:
        raise DimensionError("pca_basis needs at least one sample")
    shape = X.shape[1:]
    X = X.reshape(X.shape[0], -1)
    if not 1 <= count <= min(X.shape):
        raise DimensionError(
            f"count {count} must be between 1 and min(samples, 3V) = {min(X.shape)}"
        )
    mean = X.mean(axis=0) if center else None
    if center:
        X = X - mean
    if not np.any(X):
        raise RankDeficiencyError("all tangent samples are zero")
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s[count - 1] <= 1e-12 * s[0]:
        raise RankDeficiencyError(
            f"samples span fewer than {count} directions "
            f"(singular value {count} is {s[count - 1]:.3e})"
        )
    comps = Vt[:count].copy()
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(count), idx])
    comps *= signs[:, None]
    return PCAResult(comps.reshape((count,) + shape), s,
                     None if mean is None else mean.reshape(shape))


def build_basis(motion_samples, shape_samples, n: int, m: int, template: TriMesh,
                center: bool = False):
    """Pose and shape bases with a joint linear-independence check.

    Returns
    -------
    basis : Basis
    info : dict
        Spectra of both decompositions and the eigenvalues of the combined
        normalized Gram matrix.

    Raises
    ------
    RankDeficiencyError
        If the combined fields are linearly dependent; ``pairs`` lists the
        offending (pose index, shape index) pairs in code ordering.
    """
    pose = pca_basis(motion_samples, n, center)
    shape = pca_basis(shape_samples, m, center)
    for name, res in (("motion", pose), ("shape", shape)):
        if res.components.shape[1:] != template.vertices.shape:
            raise ConnectivityError(f"{name} samples do not match the template vertex count")
    basis = Basis(template, pose.components, shape.components)
    eig = basis.check_independence()
    info = {
        "pose_singular_values": pose.singular_values.tolist(),
        "shape_singular_values": shape.singular_values.tolist(),
        "gram_eigenvalues": eig.tolist(),
        "gram_condition": float(eig[-1] / eig[0]),
    }
    return basis, info
