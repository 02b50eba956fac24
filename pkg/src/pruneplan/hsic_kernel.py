"""Kernel Gram construction and (normalized) HSIC estimation.

Estimators operate on centered Gram matrices:

    hsic(Kx, Ky)  = tr(Kx Ky) / (n - 1)^2
    nhsic(Kx, Ky) = tr(Kx Ky) / (sqrt(tr(Kx Kx)) * sqrt(tr(Ky Ky)))

For the linear kernel on column-centered features X, Y the normalized
statistic has an equivalent feature-space form

    nhsic = ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F)

which avoids the n x n Grams when the feature counts are small; both
routes are kept and must agree to 1e-8 relative.

All arithmetic is float64 regardless of the input dtype: the traces are
differences of large products and float32 accumulation is not enough
once n reaches a few thousand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activation_store import ActivationMatrix, center_columns
from .errors import DegenerateInput, DimensionMismatch, NotPositiveDefinite

# Centered Gram with Frobenius norm at or below DEGENERATE_TOL * n carries
# no dependence signal (constant activations); pairs involving it score 0.
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice: ``linear`` or ``rbf`` with optional fixed bandwidth."""

    name: str
    bandwidth: float | None = None

    @staticmethod
    def parse(text: str) -> "KernelSpec":
        """Parse CLI syntax: ``linear``, ``rbf`` or ``rbf:<bandwidth>``."""
        if text == "linear":
            return KernelSpec("linear")
        if text == "rbf":
            return KernelSpec("rbf")
        if text.startswith("rbf:"):
            bw = float(text.split(":", 1)[1])
            if bw <= 0:
                raise ValueError("rbf bandwidth must be positive")
            return KernelSpec("rbf", bw)
        raise ValueError(f"unknown kernel {text!r}")

    def __str__(self) -> str:
        if self.name == "rbf" and self.bandwidth is not None:
            return f"rbf:{self.bandwidth:g}"
        return self.name


LINEAR = KernelSpec("linear")


@dataclass
class GramMatrix:
    """n x n centered kernel matrix in float64."""

    data: np.ndarray
    kernel: KernelSpec
    centered: bool

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def is_degenerate(self) -> bool:
        return self.frobenius_norm() <= DEGENERATE_TOL * self.n


def _as_centered_features(x: ActivationMatrix | np.ndarray) -> np.ndarray:
    """Return column-centered float64 features from a matrix or ndarray."""
    if isinstance(x, ActivationMatrix):
        data = x.data.astype(np.float64, copy=False)
        return data if x.centered else center_columns(data)
    data = np.asarray(x, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionMismatch(f"expected an n x d matrix, got shape {data.shape}")
    return center_columns(data)


def median_bandwidth(x: np.ndarray) -> float:
    """Median pairwise distance; falls back to 1.0 when all points coincide."""
    d2 = _pairwise_sq_dists(np.asarray(x, dtype=np.float64))
    iu = np.triu_indices(d2.shape[0], k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d2, 0.0)


def gram(x: ActivationMatrix | np.ndarray, kernel: KernelSpec = LINEAR) -> GramMatrix:
    """Centered Gram matrix of one layer's samples.

    Linear kernel: X Xᵀ on column-centered X (identical to double-centering
    the raw Gram). RBF kernel: exp(-||xi - xj||² / (2 σ²)) double-centered,
    with σ from the median heuristic unless ``kernel.bandwidth`` is set.
    """
    data = _as_centered_features(x)
    n = data.shape[0]
    if n < 2:
        raise DegenerateInput(f"need at least 2 samples, got {n}")
    if kernel.name == "linear":
        k = data @ data.T
    elif kernel.name == "rbf":
        bw = kernel.bandwidth if kernel.bandwidth is not None else median_bandwidth(data)
        k = np.exp(_pairwise_sq_dists(data) / (-2.0 * bw * bw))
        k -= k.mean(axis=0, keepdims=True)
        k -= k.mean(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown kernel {kernel.name!r}")
    k = 0.5 * (k + k.T)  # kill asymmetric rounding noise
    return GramMatrix(data=k, kernel=kernel, centered=True)


def _check_pair(kx: GramMatrix, ky: GramMatrix) -> None:
    if kx.n != ky.n:
        raise DimensionMismatch(f"gram sizes differ: {kx.n} vs {ky.n}")
    if not (kx.centered and ky.centered):
        raise DimensionMismatch("hsic/nhsic need centered Gram matrices")


def hsic(kx: GramMatrix, ky: GramMatrix) -> float:
    """Biased HSIC estimate tr(Kx Ky) / (n-1)² on centered Grams."""
    _check_pair(kx, ky)
    n = kx.n
    # Both matrices are symmetric, so tr(Kx Ky) = <Kx, Ky>_F.
    return float(np.sum(kx.data * ky.data)) / (n - 1) ** 2


def nhsic(kx: GramMatrix, ky: GramMatrix) -> float:
    """Normalized HSIC in [0, 1]; degenerate (zero) Grams score 0."""
    _check_pair(kx, ky)
    if kx.is_degenerate() or ky.is_degenerate():
        return 0.0
    cross = float(np.sum(kx.data * ky.data))
    return cross / (kx.frobenius_norm() * ky.frobenius_norm())


def nhsic_features(x: ActivationMatrix | np.ndarray,
                   y: ActivationMatrix | np.ndarray) -> float:
    """Linear-kernel nHSIC via the d x d cross-product form (no n x n Grams)."""
    xc = _as_centered_features(x)
    yc = _as_centered_features(y)
    if xc.shape[0] != yc.shape[0]:
        raise DimensionMismatch(f"sample counts differ: {xc.shape[0]} vs {yc.shape[0]}")
    if xc.shape[0] < 2:
        raise DegenerateInput("need at least 2 samples")
    norm_xx = np.linalg.norm(xc.T @ xc)
    norm_yy = np.linalg.norm(yc.T @ yc)
    n = xc.shape[0]
    if norm_xx <= DEGENERATE_TOL * n or norm_yy <= DEGENERATE_TOL * n:
        return 0.0
    cross = np.linalg.norm(yc.T @ xc) ** 2
    return float(cross / (norm_xx * norm_yy))


def nhsic_pair(x: ActivationMatrix | np.ndarray, y: ActivationMatrix | np.ndarray,
               kernel: KernelSpec = LINEAR) -> float:
    """nHSIC between two layers, picking the cheaper route.

    The feature-space route costs O(n dx dy) and is used when both feature
    counts stay below n; otherwise (or for non-linear kernels) the n x n
    Gram route is used. Routes agree to 1e-8 relative.
    """
    if kernel.name == "linear":
        xc = _as_centered_features(x)
        yc = _as_centered_features(y)
        n = xc.shape[0]
        if xc.shape[1] < n and yc.shape[1] < n:
            return nhsic_features(xc, yc)
        return nhsic(gram(xc, kernel), gram(yc, kernel))
    return nhsic(gram(x, kernel), gram(y, kernel))


def _logdet_spd(a: np.ndarray, what: str) -> float:
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_mutual_information(sigma_x: np.ndarray, sigma_y: np.ndarray,
                                sigma_xy: np.ndarray) -> float:
    """Mutual information of jointly Gaussian vectors from covariance blocks.

    Returns (ln|Σx| + ln|Σy| - ln|Σjoint|) / 2, which is zero exactly when
    the cross-covariance block is zero. The joint block matrix must be
    symmetric positive definite.
    """
    sx = np.asarray(sigma_x, dtype=np.float64)
    sy = np.asarray(sigma_y, dtype=np.float64)
    sxy = np.asarray(sigma_xy, dtype=np.float64)
    if sx.ndim != 2 or sx.shape[0] != sx.shape[1]:
        raise DimensionMismatch(f"sigma_x must be square, got {sx.shape}")
    if sy.ndim != 2 or sy.shape[0] != sy.shape[1]:
        raise DimensionMismatch(f"sigma_y must be square, got {sy.shape}")
    if sxy.shape != (sx.shape[0], sy.shape[0]):
        raise DimensionMismatch(
            f"sigma_xy must be {(sx.shape[0], sy.shape[0])}, got {sxy.shape}")
    for name, block in (("sigma_x", sx), ("sigma_y", sy)):
        if not np.allclose(block, block.T, atol=1e-9, rtol=1e-9):
            raise NotPositiveDefinite(f"{name} is not symmetric")
    joint = np.block([[sx, sxy], [sxy.T, sy]])
    joint = 0.5 * (joint + joint.T)
    ld_joint = _logdet_spd(joint, "joint covariance")
    ld_x = _logdet_spd(0.5 * (sx + sx.T), "sigma_x")
    ld_y = _logdet_spd(0.5 * (sy + sy.T), "sigma_y")
    return 0.5 * (ld_x + ld_y - ld_joint)
