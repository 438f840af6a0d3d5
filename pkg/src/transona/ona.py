"""Ordered network model: normalization, means rotation, co-registration, group networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass
class RotationBasis:
    dim1: np.ndarray
    dim2: np.ndarray
    mean: np.ndarray
    positive_group: str
    sign_convention: str = "positive group mean on dim1 > 0; dim2 largest |component| > 0"

    def project(self, normalized):
        centered = np.atleast_2d(normalized) - self.mean
        return centered @ self.dim1, centered @ self.dim2

    def to_dict(self):
        return {"dim1": self.dim1.tolist(), "dim2": self.dim2.tolist(), "mean": self.mean.tolist(),
                "positive_group": self.positive_group, "sign_convention": self.sign_convention}


@dataclass
class Scores:
    x: np.ndarray
    y: np.ndarray

    def as_array(self):
        return np.column_stack([self.x, self.y])


@dataclass
class NodeLayout:
    codes: tuple
    points: np.ndarray  # (C, 2)
    ridge: float
    objective: float
    grad_norm: float

    def point(self, code):
        return self.points[self.codes.index(code)]


@dataclass
class GroupNetwork:
    codes: tuple
    label: str
    weights: np.ndarray  # (C, C) mean normalized weights, [a, b] is a -> b
    members: np.ndarray  # (n, C*C) member rows
    count: int

    @property
    def response_strength(self):
        """Incoming weight from other codes, per code."""
        return self.weights.sum(axis=0) - np.diag(self.weights)

    @property
    def self_strength(self):
        return np.diag(self.weights).copy()


@dataclass
class SubtractedNetwork:
    codes: tuple
    label_a: str
    label_b: str
    weights: np.ndarray  # (C, C) mean_a - mean_b
    members_a: np.ndarray
    members_b: np.ndarray

    def dominant(self, a, b):
        i, j = self.codes.index(a), self.codes.index(b)
        w = self.weights[i, j]
        if w > 0:
            return self.label_a
        if w < 0:
            return self.label_b
        return None

    def member_weights(self, a, b):
        """Per-member weights of edge a -> b in each group, ready for a rank test."""
        C = len(self.codes)
        k = self.codes.index(a) * C + self.codes.index(b)
        return self.members_a[:, k].copy(), self.members_b[:, k].copy()


def sphere_normalize(matrix):
    """Scale each nonzero row to unit Euclidean norm; returns ``(normalized, zero_rows)``."""
    m = np.asarray(matrix, dtype=float)
    norms = np.linalg.norm(m, axis=1)
    zero = norms == 0
    out = m.copy()
    out[~zero] = m[~zero] / norms[~zero, None]
    return out, zero


def means_rotation(normalized, groups: Sequence, positive_group) -> tuple[RotationBasis, Scores]:
    """Rotate so dim1 runs along the difference of the two group means.

    dim2 is the leading right-singular direction of the centered matrix once
    its dim1 component has been removed.
    """
    X = np.asarray(normalized, dtype=float)
    labels = np.asarray([str(g) for g in groups])
    if len(labels) != X.shape[0]:
        raise DataError("one group label per unit row is required")
    positive = labels == str(positive_group)
    if len(set(labels.tolist())) > 2:
        raise DataError(f"means rotation needs two groups, got {sorted(set(labels.tolist()))}")
    if not positive.any() or positive.all():
        raise DataError("means rotation needs both groups non-empty")
    mean_pos = X[positive].mean(axis=0)
    mean_other = X[~positive].mean(axis=0)
    diff = mean_pos - mean_other
    gap = np.linalg.norm(diff)
    if not gap > 1e-15:
        raise DataError("group means coincide; the rotation direction is undefined "
                        f"(|mean difference| = {gap:.3g})")
    dim1 = diff / gap
    grand = X.mean(axis=0)
    Xc = X - grand
    deflated = Xc - np.outer(Xc @ dim1, dim1)
    dim2 = _leading_direction(deflated, dim1)
    basis = RotationBasis(dim1, dim2, grand, str(positive_group))
    return basis, Scores(Xc @ dim1, Xc @ dim2)


def _leading_direction(deflated, dim1):
    s = np.linalg.svd(deflated, compute_uv=False) if deflated.size else np.zeros(0)
    if s.size and s[0] > 1e-12:
        _, _, vt = np.linalg.svd(deflated, full_matrices=False)
        v = vt[0]
    else:
        # nothing left after deflation: any direction orthogonal to dim1 will do
        v = np.zeros_like(dim1)
        v[int(np.argmin(np.abs(dim1)))] = 1.0
    v = v - (v @ dim1) * dim1
    v = v - (v @ dim1) * dim1
    v /= np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return v


def centroid_operator(weights, n_codes):
    """Rows map node points to each unit's weighted edge-midpoint centroid."""
    W = np.asarray(weights, dtype=float).reshape(-1, n_codes, n_codes)
    total = W.sum(axis=(1, 2))
    keep = total > 0
    M = (W.sum(axis=2) + W.sum(axis=1)) / 2.0
    M[keep] /= total[keep, None]
    return M, keep


def coregister_objective(points, weights, scores, n_codes, ridge=1e-6):
    M, keep = centroid_operator(weights, n_codes)
    S = np.asarray(scores, dtype=float)[keep]
    R = S - M[keep] @ points
    return float(np.sum(R * R) + ridge * np.sum(points * points))


def coregister(normalized, scores, codes: Sequence[str], ridge=1e-6) -> NodeLayout:
    """Node positions whose unit centroids best match the unit scores (ridge least squares)."""
    codes = tuple(codes)
    C = len(codes)
    S = scores.as_array() if isinstance(scores, Scores) else np.asarray(scores, dtype=float)
    M, keep = centroid_operator(normalized, C)
    if not keep.any():
        raise DataError("co-registration needs at least one unit with nonzero weights")
    A = np.vstack([M[keep], np.sqrt(ridge) * np.eye(C)])
    b = np.vstack([S[keep], np.zeros((C, 2))])
    P, *_ = np.linalg.lstsq(A, b, rcond=None)
    Mk = M[keep]
    grad = 2.0 * (Mk.T @ (Mk @ P - S[keep]) + ridge * P)
    obj = coregister_objective(P, normalized, S, C, ridge)
    return NodeLayout(codes, P, float(ridge), obj, float(np.linalg.norm(grad)))


def group_mean_network(normalized, groups: Sequence, label, codes: Sequence[str]) -> GroupNetwork:
    codes = tuple(codes)
    C = len(codes)
    X = np.asarray(normalized, dtype=float)
    mask = np.asarray([str(g) == str(label) for g in groups], dtype=bool)
    if not mask.any():
        raise DataError(f"group {label!r} has no units")
    members = X[mask]
    return GroupNetwork(codes, str(label), members.mean(axis=0).reshape(C, C), members, int(mask.sum()))


def subtract_networks(a: GroupNetwork, b: GroupNetwork) -> SubtractedNetwork:
    if a.codes != b.codes:
        raise DataError("cannot subtract networks over different code universes")
    return SubtractedNetwork(a.codes, a.label, b.label, a.weights - b.weights, a.members, b.members)
