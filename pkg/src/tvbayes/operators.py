"""Lattice geometry, periodic difference operators, and the blur forward model.

Images are k x n pixel grids handled as column-wise stacked vectors of
length N = k*n: pixel (i, j) (0-based row i, column j) lives at stacked
index j*k + i. All operators assume periodic boundary conditions in both
directions.

The difference operator D stacks a horizontal block (x[i, j+1] - x[i, j])
over a vertical block (x[i+1, j] - x[i, j]); a block whose lattice
dimension is 1 would be identically zero and is dropped, so a 1-D signal
gets the plain circulant first-difference matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, NonFiniteError

__all__ = [
    "DENSE_CAPACITY",
    "LatticeSpec",
    "DiffOperator",
    "BlurOperator",
    "build_diff_operator",
    "gaussian_kernel",
    "weighted_gram_matvec",
    "gram_matrix_dense",
    "circulant_gram_precond",
    "validate_rank_condition",
]

# Largest stacked length for which dense-matrix code paths are allowed.
DENSE_CAPACITY = 4096


def _check_dense(n: int, what: str):
    if n > DENSE_CAPACITY:
        raise CapacityError(
            f"{what} needs a dense {n} x {n} matrix; the dense path is capped "
            f"at N = {DENSE_CAPACITY}. Use the matrix-free estimator (ias / "
            "tikhonov) for problems this large."
        )


@dataclass(frozen=True)
class LatticeSpec:
    """k x n pixel lattice with column-wise stacking."""

    k: int
    n: int

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise ValueError(f"lattice dimensions must be >= 1, got {self.k} x {self.n}")
        if self.k * self.n < 2:
            raise ValueError("lattice needs at least 2 pixels")

    @property
    def size(self) -> int:
        return self.k * self.n

    def index(self, i: int, j: int) -> int:
        """Stacked index of pixel (row i, column j), 0-based."""
        return (j % self.n) * self.k + (i % self.k)

    def to_grid(self, x: np.ndarray) -> np.ndarray:
        """Stacked vector -> k x n array."""
        return np.asarray(x, dtype=float).reshape((self.k, self.n), order="F")

    def to_stacked(self, img: np.ndarray) -> np.ndarray:
        """k x n array -> stacked vector."""
        img = np.asarray(img, dtype=float)
        if img.shape != (self.k, self.n):
            raise ValueError(f"expected {self.k} x {self.n} image, got {img.shape}")
        return img.ravel(order="F")


class DiffOperator:
    """Periodic first-difference operator over a lattice.

    Each row has one +1 and one -1 entry; the row set is the horizontal
    block followed by the vertical block. Sparse storage is two index
    arrays (``pos_idx``, ``neg_idx``) per row.
    """

    def __init__(self, lattice: LatticeSpec):
        self.lattice = lattice
        k, n, N = lattice.k, lattice.n, lattice.size
        s = np.arange(N)
        i, j = s % k, s // k
        pos_blocks, neg_blocks, blocks = [], [], []
        if n >= 2:  # horizontal differences x[i, j+1] - x[i, j]
            pos_blocks.append(((j + 1) % n) * k + i)
            neg_blocks.append(s.copy())
            blocks.append("h")
        if k >= 2:  # vertical differences x[i+1, j] - x[i, j]
            pos_blocks.append(j * k + (i + 1) % k)
            neg_blocks.append(s.copy())
            blocks.append("v")
        self.blocks: tuple[str, ...] = tuple(blocks)
        self.pos_idx = np.concatenate(pos_blocks)
        self.neg_idx = np.concatenate(neg_blocks)

    @property
    def n_rows(self) -> int:
        return self.pos_idx.shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[self.pos_idx] - x[self.neg_idx]

    def rmatvec(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        N = self.lattice.size
        return (np.bincount(self.pos_idx, weights=w, minlength=N)
                - np.bincount(self.neg_idx, weights=w, minlength=N))

    def weighted_gram_diag(self, row_weights: np.ndarray) -> np.ndarray:
        """diag(D' W D) for W = diag(row_weights)."""
        N = self.lattice.size
        return (np.bincount(self.pos_idx, weights=row_weights, minlength=N)
                + np.bincount(self.neg_idx, weights=row_weights, minlength=N))

    def gram_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of D'D on the rfft2 frequency grid.

        Each periodic difference block contributes |1 - e^{2 pi i f}|^2
        = 2 - 2 cos(2 pi f) along its axis; D'D is circulant, so these are
        exact.
        """
        k, n = self.lattice.k, self.lattice.n
        fi = np.arange(k) / k
        fj = np.arange(n // 2 + 1) / n
        out = np.zeros((k, n // 2 + 1))
        if "h" in self.blocks:
            out += (2.0 - 2.0 * np.cos(2.0 * np.pi * fj))[None, :]
        if "v" in self.blocks:
            out += (2.0 - 2.0 * np.cos(2.0 * np.pi * fi))[:, None]
        return out

    def weighted_gram_dense(self, row_weights: np.ndarray) -> np.ndarray:
        """Dense D' W D (N x N), capacity gated."""
        N = self.lattice.size
        _check_dense(N, "weighted difference gram")
        w = np.asarray(row_weights, dtype=float)
        out = np.zeros((N, N))
        np.add.at(out, (self.pos_idx, self.pos_idx), w)
        np.add.at(out, (self.neg_idx, self.neg_idx), w)
        np.add.at(out, (self.pos_idx, self.neg_idx), -w)
        np.add.at(out, (self.neg_idx, self.pos_idx), -w)
        return out

    def row_quadratic(self, mat: np.ndarray) -> np.ndarray:
        """d_r' M d_r for every difference row d_r, M dense symmetric.

        Equals M[p,p] + M[q,q] - 2 M[p,q] with (p, q) the +1/-1 columns.
        """
        p, q = self.pos_idx, self.neg_idx
        return mat[p, p] + mat[q, q] - 2.0 * mat[p, q]

    def to_dense(self) -> np.ndarray:
        _check_dense(self.lattice.size, "difference operator assembly")
        out = np.zeros((self.n_rows, self.lattice.size))
        rows = np.arange(self.n_rows)
        out[rows, self.pos_idx] += 1.0
        out[rows, self.neg_idx] -= 1.0
        return out


def build_diff_operator(lattice: LatticeSpec) -> DiffOperator:
    """Periodic difference operator for the lattice."""
    return DiffOperator(lattice)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Sampled isotropic Gaussian mask, odd size, normalised to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {size}")
    if not sigma > 0:
        raise ValueError(f"kernel sigma must be > 0, got {sigma}")
    if size == 1:
        return np.ones((1, 1))
    c = size // 2
    u = np.arange(-c, c + 1, dtype=float)
    g = np.exp(-0.5 * (u[:, None] ** 2 + u[None, :] ** 2) / sigma ** 2)
    return g / g.sum()


@dataclass
class BlurOperator:
    """Periodic 2-D convolution with an odd, normalised, nonnegative mask.

    matvec computes out(i, j) = sum_{u,v} w(u, v) x(i+u-c, j+v-c) with
    periodic wrap; the adjoint is the same stencil with the flipped mask.
    Both are evaluated in the Fourier domain (the operator is circulant).
    """

    kernel: np.ndarray
    lattice: LatticeSpec
    _fwd: np.ndarray = field(init=False, repr=False)
    _adj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.kernel, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be odd square, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("kernel weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel must sum to 1, got {w.sum()!r}")
        self.kernel = w
        k, n = self.lattice.k, self.lattice.n
        c = w.shape[0] // 2
        pad = np.zeros((k, n))
        di, dj = np.meshgrid(np.arange(-c, c + 1), np.arange(-c, c + 1),
                             indexing="ij")
        # kernels larger than the lattice alias by periodic wrap
        np.add.at(pad, (di.ravel() % k, dj.ravel() % n), w.ravel())
        freq = np.fft.rfft2(pad)
        self._adj = freq            # multiplier of convolution with w
        self._fwd = np.conj(freq)   # correlation with w

    @property
    def size(self) -> int:
        return self.lattice.size

    def _apply(self, x: np.ndarray, mult: np.ndarray) -> np.ndarray:
        grid = self.lattice.to_grid(x)
        out = np.fft.irfft2(np.fft.rfft2(grid) * mult, s=grid.shape)
        return self.lattice.to_stacked(out)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"expected stacked vector of length {self.size}")
        return self._apply(x, self._fwd)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"expected stacked vector of length {self.size}")
        return self._apply(x, self._adj)

    def gram_diag(self) -> float:
        """Common diagonal entry of H'H (columns share the norm by shift
        invariance)."""
        e0 = np.zeros(self.size)
        e0[0] = 1.0
        col = self.matvec(e0)
        return float(col @ col)

    def to_dense(self) -> np.ndarray:
        _check_dense(self.size, "blur operator assembly")
        k, n, N = self.lattice.k, self.lattice.n, self.size
        c = self.kernel.shape[0] // 2
        s = np.arange(N)
        i, j = s % k, s // k
        out = np.zeros((N, N))
        for du in range(-c, c + 1):
            for dv in range(-c, c + 1):
                wgt = self.kernel[du + c, dv + c]
                cols = ((j + dv) % n) * k + (i + du) % k
                np.add.at(out, (s, cols), wgt)
        return out


def weighted_gram_matvec(blur: BlurOperator, diff: DiffOperator,
                         lam_over_nu: float, row_weights: np.ndarray,
                         v: np.ndarray) -> np.ndarray:
    """(H'H + (lambda/nu) D' W D) v without forming the matrix.

    ``row_weights`` is the diagonal of W = R^{-2}, one entry per difference
    row; zero entries are allowed (a safeguarded prior keeps them finite).
    """
    row_weights = np.asarray(row_weights, dtype=float)
    if not np.all(np.isfinite(row_weights)) or np.any(row_weights < 0):
        raise NonFiniteError("difference row weights must be finite and >= 0",
                             where="row_weights")
    if not np.isfinite(lam_over_nu) or lam_over_nu < 0:
        raise NonFiniteError(f"invalid penalty ratio {lam_over_nu}",
                             where="lam_over_nu")
    out = blur.rmatvec(blur.matvec(v))
    if lam_over_nu != 0.0:
        out = out + lam_over_nu * diff.rmatvec(row_weights * diff.matvec(v))
    return out


def gram_matrix_dense(blur: BlurOperator, diff: DiffOperator,
                      lam_over_nu: float, row_weights: np.ndarray) -> np.ndarray:
    """Dense H'H + (lambda/nu) D' W D, capacity gated."""
    hd = blur.to_dense()
    q = hd.T @ hd
    if lam_over_nu != 0.0:
        q = q + lam_over_nu * diff.weighted_gram_dense(row_weights)
    return q


def circulant_gram_precond(blur: BlurOperator, diff: DiffOperator,
                           lam_over_nu: float, mean_weight: float):
    """Exact inverse of H'H + (lambda/nu) * w_mean * D'D, applied via FFT.

    Freezing the difference weights at their mean makes the operator
    block-circulant, so it diagonalises on the Fourier grid. Used as a
    preconditioner for the true variable-weight system.
    """
    eig = (np.abs(blur._fwd) ** 2
           + lam_over_nu * mean_weight * diff.gram_eigenvalues())
    eig = np.maximum(eig, 1e-300)
    lattice = blur.lattice

    def apply(v: np.ndarray) -> np.ndarray:
        grid = lattice.to_grid(v)
        out = np.fft.irfft2(np.fft.rfft2(grid) / eig, s=grid.shape)
        return lattice.to_stacked(out)

    return apply


def validate_rank_condition(blur: BlurOperator, diff: DiffOperator) -> bool:
    """Nul(D) cap Nul(H) = {0} for periodic D (nullspace = constants):
    passes iff H applied to the constant image is nonzero."""
    ones = np.ones(blur.size)
    return float(np.linalg.norm(blur.matvec(ones))) > 1e-10 * np.sqrt(blur.size)
