"""Exact linear algebra for small integer matrices (2 <= n <= 8).

Everything that feeds topological invariants (determinants, characteristic
polynomials, exterior powers) is computed in exact integer arithmetic with
Python ints, so homology data carries no floating-point error. Floating-point
enters only through the eigen decomposition and k-volumes, which carry explicit
residual contracts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

MIN_DIM = 2
MAX_DIM = 8


class NonRealSpectrum(ValueError):
    """Raised when the spectrum has a complex pair beyond tolerance."""


class DegenerateSpectrum(ValueError):
    """Raised when two eigenvalues coincide within tolerance."""


def _as_int_rows(a):
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(arr == np.round(arr)):
            raise ValueError("matrix entries must be integers")
    elif arr.dtype.kind not in "iuO":
        raise ValueError(f"unsupported entry dtype {arr.dtype}")
    return [[int(x) for x in row] for row in arr]


def int_det(rows) -> int:
    """Exact determinant by fraction-free (Bareiss) elimination."""
    m = _as_int_rows(rows)
    n = len(m)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for i in range(k + 1, n):
                if m[i][k] != 0:
                    m[k], m[i] = m[i], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[-1][-1]


class UnimodularMatrix:
    """Integer matrix with |det| = 1, validated exactly at construction."""

    def __init__(self, rows):
        m = _as_int_rows(rows)
        n = len(m)
        if not MIN_DIM <= n <= MAX_DIM:
            raise ValueError(f"dimension {n} outside [{MIN_DIM}, {MAX_DIM}]")
        d = int_det(m)
        if d not in (1, -1):
            raise ValueError(f"matrix is not unimodular: det = {d}")
        self.n = n
        self.det = d
        self.entries = np.array(m, dtype=np.int64)
        self.entries.setflags(write=False)
        self._inverse = None

    def as_float(self) -> np.ndarray:
        return self.entries.astype(float)

    def inverse(self) -> "UnimodularMatrix":
        """Exact integer inverse: the adjugate times det (det is +-1)."""
        if self._inverse is None:
            m = [[int(x) for x in row] for row in self.entries]
            n = self.n
            adj = [[0] * n for _ in range(n)]
            for i in range(n):
                for j in range(n):
                    minor = [row[:j] + row[j + 1:] for ri, row in enumerate(m) if ri != i]
                    adj[j][i] = (-1) ** (i + j) * int_det(minor)
            inv = [[self.det * adj[i][j] for j in range(n)] for i in range(n)]
            out = UnimodularMatrix(inv)
            prod = self.entries @ out.entries
            assert np.array_equal(prod, np.eye(n, dtype=np.int64))
            self._inverse = out
        return self._inverse

    def __repr__(self):
        return f"UnimodularMatrix({self.entries.tolist()})"

    def __eq__(self, other):
        return isinstance(other, UnimodularMatrix) and np.array_equal(self.entries, other.entries)


def _identity_object(n):
    ident = np.zeros((n, n), dtype=object)
    for i in range(n):
        ident[i, i] = 1
    return ident


def char_poly(a) -> list[int]:
    """Exact characteristic polynomial det(xI - A), coefficients descending.

    Faddeev-LeVerrier recurrence; all divisions are exact over the integers.
    """
    if isinstance(a, UnimodularMatrix):
        a = a.entries
    rows = _as_int_rows(a)
    n = len(rows)
    arr = np.array(rows, dtype=object)
    ident = _identity_object(n)
    coeffs = [1]
    m = arr.copy()
    c = -sum(int(m[i, i]) for i in range(n))
    coeffs.append(c)
    for k in range(2, n + 1):
        m = arr @ (m + c * ident)
        tr = sum(int(m[i, i]) for i in range(n))
        q, r = divmod(-tr, k)
        assert r == 0, "Faddeev-LeVerrier division must be exact"
        c = q
        coeffs.append(c)
    return coeffs


@dataclass(frozen=True)
class EigenData:
    """Real simple spectrum, eigenvalues sorted by decreasing modulus.

    vectors holds unit eigenvectors in columns; the component of largest
    magnitude in each is positive, which pins the otherwise free sign.
    """

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray

    @property
    def n(self) -> int:
        return len(self.values)


def eigen_real(a, tol: float = 1e-10) -> EigenData:
    """Eigen decomposition restricted to the real simple case.

    Raises NonRealSpectrum for complex pairs and DegenerateSpectrum when two
    eigenvalues coincide within tol * ||A||. Residuals ||Av - lambda v|| are
    checked against the same scale.
    """
    if isinstance(a, UnimodularMatrix):
        a = a.as_float()
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    n = arr.shape[0]
    scale = float(np.linalg.norm(arr, 2))
    scale = max(scale, 1e-300)
    w, v = np.linalg.eig(arr)
    if np.max(np.abs(w.imag)) > tol * scale:
        raise NonRealSpectrum(f"complex eigenvalues detected: {w}")
    values = w.real
    order = np.lexsort((-values, -np.abs(values)))
    values = values[order]
    vectors = v.real[:, order]
    gaps = np.abs(values[:, None] - values[None, :]) + np.eye(n) * scale
    if gaps.min() < tol * scale:
        raise DegenerateSpectrum(f"eigenvalue spacing below tolerance: {values}")
    out = np.empty_like(vectors)
    residuals = np.empty(n)
    for j in range(n):
        col = vectors[:, j]
        col = col / np.linalg.norm(col)
        if col[np.argmax(np.abs(col))] < 0:
            col = -col
        out[:, j] = col
        residuals[j] = np.linalg.norm(arr @ col - values[j] * col)
    if residuals.max() > tol * scale:
        raise ValueError(f"eigen residual {residuals.max():.3e} exceeds contract")
    return EigenData(values=values, vectors=out, residuals=residuals)


class WedgeIndex:
    """Lexicographic indexing of k-element subsets of {0..n-1}.

    Subsets are stored 0-based; labels follow the 1-based coordinate naming
    dx1^dx2^... used in reports.
    """

    def __init__(self, n: int, k: int):
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        self.n = n
        self.k = k
        self.subsets = tuple(combinations(range(n), k))
        self._pos = {s: i for i, s in enumerate(self.subsets)}

    def __len__(self):
        return len(self.subsets)

    def ordinal(self, subset) -> int:
        key = tuple(sorted(int(i) for i in subset))
        if key not in self._pos:
            raise KeyError(f"{subset} is not a {self.k}-subset of range({self.n})")
        return self._pos[key]

    def subset(self, ordinal: int):
        return self.subsets[ordinal]

    def labels(self) -> list[str]:
        return ["^".join(f"dx{i + 1}" for i in s) for s in self.subsets]


def exterior_power(a, k: int) -> np.ndarray:
    """Matrix of the induced map on the k-th exterior power.

    Entry (I, J) is the k x k minor with rows I and columns J, both running in
    lexicographic order. Integer input gives exact int64 output (overflow is
    detected); float input is computed with LAPACK determinants.
    """
    if isinstance(a, UnimodularMatrix):
        a = a.entries
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    n = arr.shape[0]
    w = WedgeIndex(n, k)
    m = len(w)
    exact = arr.dtype.kind in "iuO" or (arr.dtype.kind == "f" and np.all(arr == np.round(arr)))
    if exact:
        rows = [[int(x) for x in row] for row in arr]
        out = [[0] * m for _ in range(m)]
        for bi, ri in enumerate(w.subsets):
            for bj, cj in enumerate(w.subsets):
                minor = [[rows[r][c] for c in cj] for r in ri]
                out[bi][bj] = int_det(minor) if k > 1 else minor[0][0]
        flat = [x for row in out for x in row]
        if max(abs(x) for x in flat) >= 2 ** 63:
            raise OverflowError("exterior power entry exceeds int64")
        return np.array(out, dtype=np.int64)
    out = np.empty((m, m), dtype=float)
    for bi, ri in enumerate(w.subsets):
        sub = arr[np.ix_(ri, range(n))]
        for bj, cj in enumerate(w.subsets):
            minor = sub[:, cj]
            out[bi, bj] = minor[0, 0] if k == 1 else np.linalg.det(minor)
    return out


def k_volume(frame) -> float | np.ndarray:
    """k-dimensional volume of the parallelepiped spanned by frame columns.

    frame has shape (..., n, k); the result is sqrt(det(G^T G)) with leading
    batch dimensions preserved.
    """
    arr = np.asarray(frame, dtype=float)
    if arr.ndim < 2:
        raise ValueError("frame must have shape (..., n, k)")
    n, k = arr.shape[-2], arr.shape[-1]
    if k > n:
        raise ValueError(f"frame has more columns ({k}) than rows ({n})")
    gram = np.einsum("...ij,...ik->...jk", arr, arr)
    det = np.linalg.det(gram) if k > 1 else gram[..., 0, 0]
    vol = np.sqrt(np.clip(det, 0.0, None))
    if arr.ndim == 2:
        return float(vol)
    return vol
