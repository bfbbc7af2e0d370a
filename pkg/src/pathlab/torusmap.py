"""Perturbed toral automorphisms f = T_A o h_1 o ... o h_m.

Each h is a volume-preserving rotation localized in an ellipsoid around a
center point: in eigen-chart coordinates u = L^-1 (x - p) the (u_i, u_j) plane
is rotated by an angle psi(|u|) that vanishes to all orders at the support
boundary. The angle depends only on the chart radius, which the rotation
preserves, so every h has Jacobian determinant 1 pointwise and a closed-form
inverse (rotate by -psi).

All point operations accept single points (n,) or batches (B, n); maps act on
the last axis.
"""
from __future__ import annotations

import numpy as np

from .smallmat import EigenData, UnimodularMatrix, eigen_real

# profile values below exp(1 - 1/eps) are flushed to an exact zero so the
# derivative formula never evaluates 0 * inf near the support boundary
_EDGE = 1e-3


class SupportTooLarge(ValueError):
    """Support ellipsoid too large to embed in the torus."""


def bump_profile(r, rho, theta_max):
    """Rotation angle psi(r) and derivative psi'(r) of the localized bump.

    psi(r) = theta_max * exp(1 - 1/(1 - (r/rho)^2)) for r < rho, else 0.
    """
    r = np.asarray(r, dtype=float)
    psi = np.zeros_like(r)
    dpsi = np.zeros_like(r)
    t2 = (r / rho) ** 2
    inner = t2 < 1.0 - _EDGE
    if np.any(inner):
        ti2 = t2[inner]
        g = 1.0 / (1.0 - ti2)
        val = theta_max * np.exp(1.0 - g)
        psi[inner] = val
        dpsi[inner] = -val * 2.0 * np.sqrt(ti2) * g * g / rho
    return psi, dpsi


def _wrap_half(d):
    # nearest lattice representative, each coordinate in [-0.5, 0.5)
    return d - np.floor(d + 0.5)


def _apply_matrix(points, mat):
    # row-wise mat @ p with a fixed accumulation order; BLAS matmul kernels
    # may round differently for different batch sizes, and leaf refinement
    # recomputes nodes in batches of varying size expecting identical floats
    out = points[..., 0, None] * mat[:, 0]
    for k in range(1, mat.shape[1]):
        out = out + points[..., k, None] * mat[:, k]
    return out


def _mod1(y):
    y = y % 1.0
    y[y == 1.0] = 0.0
    return y


class LocalizedRotation:
    """One localized rotation in the eigen chart of the linear part."""

    def __init__(self, center, chart, plane, rho, theta_max):
        self.center = np.asarray(center, dtype=float)
        self.chart = np.asarray(chart, dtype=float)
        self.chart_inv = np.linalg.inv(self.chart)
        self.plane = (int(plane[0]), int(plane[1]))  # 0-based chart axes
        self.rho = float(rho)
        self.theta_max = float(theta_max)
        self.n = len(self.center)

    def chart_coords(self, points):
        d = _wrap_half(points - self.center)
        return _apply_matrix(d, self.chart_inv)

    def transform(self, points, sign):
        """Apply the rotation (sign=+1) or its inverse (sign=-1)."""
        points = np.asarray(points, dtype=float)
        u = self.chart_coords(points)
        r = np.linalg.norm(u, axis=-1)
        mask = r < self.rho
        out = points.copy()
        if not np.any(mask):
            return out
        psi, _ = bump_profile(r[mask], self.rho, self.theta_max)
        psi = sign * psi
        i, j = self.plane
        ui = u[mask, i]
        uj = u[mask, j]
        c = np.cos(psi)
        s = np.sin(psi)
        du = np.zeros_like(u[mask])
        du[:, i] = c * ui - s * uj - ui
        du[:, j] = s * ui + c * uj - uj
        out[mask] += _apply_matrix(du, self.chart)
        return out

    def differential(self, points, sign):
        """Analytic Jacobian (B, n, n); identity outside the support."""
        points = np.asarray(points, dtype=float)
        b = points.shape[0]
        n = self.n
        out = np.broadcast_to(np.eye(n), (b, n, n)).copy()
        u = self.chart_coords(points)
        r = np.linalg.norm(u, axis=-1)
        mask = r < self.rho
        if not np.any(mask):
            return out
        rm = r[mask]
        psi, dpsi = bump_profile(rm, self.rho, self.theta_max)
        psi = sign * psi
        dpsi = sign * dpsi
        i, j = self.plane
        um = u[mask]
        ui = um[:, i]
        uj = um[:, j]
        c = np.cos(psi)
        s = np.sin(psi)
        m = len(rm)
        du = np.broadcast_to(np.eye(n), (m, n, n)).copy()
        du[:, i, i] = c
        du[:, i, j] = -s
        du[:, j, i] = s
        du[:, j, j] = c
        # radial shear: d/du [R(psi(|u|)) u] picks up (dR/dpsi u) psi' u^T / |u|
        w = np.zeros_like(um)
        w[:, i] = -s * ui - c * uj
        w[:, j] = c * ui - s * uj
        coef = np.where(rm > 0.0, dpsi / np.where(rm > 0.0, rm, 1.0), 0.0)
        du += w[:, :, None] * (um * coef[:, None])[:, None, :]
        out[mask] = np.einsum("ab,mbc,cd->mad", self.chart, du, self.chart_inv)
        return out

    def to_dict(self):
        return {
            "center": [float(x) for x in self.center],
            "plane": [self.plane[0] + 1, self.plane[1] + 1],
            "rho": self.rho,
            "theta_max": self.theta_max,
        }


def build_localized_rotation(eigen: EigenData, center, plane, rho, theta_max) -> LocalizedRotation:
    """Validated rotation in the eigen chart of the linear part.

    plane names two eigen-chart axes, 1-based, ordered by decreasing
    eigenvalue modulus. Raises SupportTooLarge when the support ellipsoid
    cannot embed in the torus, ValueError when a lattice point would fall
    inside the support (that would break exact lattice equivariance).
    """
    n = eigen.n
    center = np.asarray(center, dtype=float)
    if center.shape != (n,):
        raise ValueError(f"center must have shape ({n},), got {center.shape}")
    i, j = (int(p) for p in plane)
    if not (1 <= i <= n and 1 <= j <= n) or i == j:
        raise ValueError(f"plane must name two distinct eigen indices in 1..{n}, got {plane}")
    rho = float(rho)
    if rho <= 0:
        raise ValueError("rho must be positive")
    chart = eigen.vectors
    opnorm = float(np.linalg.norm(chart, 2))
    if 2.0 * rho * opnorm >= 1.0:
        raise SupportTooLarge(
            f"2 * rho * |L| = {2 * rho * opnorm:.4f} >= 1; support cannot embed"
        )
    rot = LocalizedRotation(center, chart, (i - 1, j - 1), rho, theta_max)
    u0 = rot.chart_inv @ _wrap_half(-center)
    if np.linalg.norm(u0) < rho * (1.0 + 1e-9):
        raise ValueError(
            f"lattice point inside support: chart distance {np.linalg.norm(u0):.4f} < rho"
        )
    return rot


class TorusMap:
    """f = T_A o h_1 o ... o h_m; the last rotation in the list acts first."""

    def __init__(self, linear, rotations=()):
        if not isinstance(linear, UnimodularMatrix):
            linear = UnimodularMatrix(linear)
        self.linear = linear
        self.rotations = tuple(rotations)
        for rot in self.rotations:
            if rot.n != linear.n:
                raise ValueError("rotation dimension does not match linear part")
        self._a = linear.as_float()
        self._a_inv = linear.inverse().as_float()
        self._eigen = None

    @property
    def n(self) -> int:
        return self.linear.n

    @property
    def eigen(self) -> EigenData:
        if self._eigen is None:
            self._eigen = eigen_real(self.linear)
        return self._eigen

    def _batch(self, x):
        arr = np.asarray(x, dtype=float)
        scalar = arr.ndim == 1
        if scalar:
            arr = arr[None, :]
        if arr.shape[-1] != self.n:
            raise ValueError(f"points must have {self.n} coordinates")
        return arr, scalar

    # ---------------------------------------------------------------- maps

    def lift_apply(self, x):
        """Universal-cover lift F(x) = A (x + periodic displacement)."""
        pts, scalar = self._batch(x)
        y = pts
        for rot in reversed(self.rotations):
            y = rot.transform(y, +1)
        y = _apply_matrix(y, self._a)
        return y[0] if scalar else y

    def apply(self, x):
        pts, scalar = self._batch(x)
        y = _mod1(self.lift_apply(pts))
        return y[0] if scalar else y

    def inverse_apply(self, x):
        pts, scalar = self._batch(x)
        y = _apply_matrix(pts, self._a_inv)
        for rot in self.rotations:
            y = rot.transform(y, -1)
        y = _mod1(y)
        return y[0] if scalar else y

    def differential(self, x):
        pts, scalar = self._batch(x)
        b = pts.shape[0]
        if not self.rotations:
            jac = np.broadcast_to(self._a, (b, self.n, self.n)).copy()
            return jac[0] if scalar else jac
        jac = None
        y = pts
        for rot in reversed(self.rotations):
            step = rot.differential(y, +1)
            jac = step if jac is None else np.einsum("bij,bjk->bik", step, jac)
            y = rot.transform(y, +1)
        jac = np.einsum("ij,bjk->bik", self._a, jac)
        return jac[0] if scalar else jac

    def inverse_differential(self, x):
        pts, scalar = self._batch(x)
        b = pts.shape[0]
        if not self.rotations:
            jac = np.broadcast_to(self._a_inv, (b, self.n, self.n)).copy()
            return jac[0] if scalar else jac
        y = _apply_matrix(pts, self._a_inv)
        jac = np.broadcast_to(self._a_inv, (b, self.n, self.n)).copy()
        for rot in self.rotations:
            step = rot.differential(y, -1)
            jac = np.einsum("bij,bjk->bik", step, jac)
            y = rot.transform(y, -1)
        return jac[0] if scalar else jac

    def apply_and_differential(self, x):
        """One forward step with its Jacobian, sharing the rotation sweep."""
        pts, scalar = self._batch(x)
        b = pts.shape[0]
        y = pts
        jac = None
        for rot in reversed(self.rotations):
            step = rot.differential(y, +1)
            jac = step if jac is None else np.einsum("bij,bjk->bik", step, jac)
            y = rot.transform(y, +1)
        if jac is None:
            jac = np.broadcast_to(self._a, (b, self.n, self.n)).copy()
        else:
            jac = np.einsum("ij,bjk->bik", self._a, jac)
        y = _mod1(_apply_matrix(y, self._a))
        if scalar:
            return y[0], jac[0]
        return y, jac

    # ---------------------------------------------------------------- misc

    def support_mask(self, x):
        pts, scalar = self._batch(x)
        mask = np.zeros(pts.shape[0], dtype=bool)
        for rot in self.rotations:
            u = rot.chart_coords(pts)
            mask |= np.linalg.norm(u, axis=-1) < rot.rho
        return mask[0] if scalar else mask

    def c1_distance_estimate(self, samples: int = 10000, seed: int = 0) -> dict:
        """Sampled estimate of the C1 distance to the linear part.

        This is an estimate, not a certified bound; support_sampled reports
        whether any sample actually landed in a rotation support.
        """
        rng = np.random.default_rng(seed)
        pts = rng.random((int(samples), self.n))
        fx = self.apply(pts)
        lin = _mod1(_apply_matrix(pts, self._a))
        d0 = np.linalg.norm(_wrap_half(fx - lin), axis=-1)
        diff = self.differential(pts) - self._a
        dop = np.linalg.svd(diff, compute_uv=False)[:, 0]
        return {
            "estimate": float(np.max(d0 + dop)),
            "c0_max": float(np.max(d0)),
            "c1_op_max": float(np.max(dop)),
            "samples": int(samples),
            "support_sampled": bool(np.any(self.support_mask(pts))),
        }

    # ---------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "linear": self.linear.entries.tolist(),
            "rotations": [rot.to_dict() for rot in self.rotations],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "TorusMap":
        if not isinstance(spec, dict):
            raise ValueError("map spec must be an object")
        unknown = set(spec) - {"linear", "rotations"}
        if unknown:
            raise ValueError(f"unknown map keys: {sorted(unknown)}")
        if "linear" not in spec:
            raise ValueError("map spec needs a 'linear' matrix")
        linear = UnimodularMatrix(spec["linear"])
        rot_specs = spec.get("rotations", [])
        if not isinstance(rot_specs, list):
            raise ValueError("'rotations' must be a list")
        rotations = []
        if rot_specs:
            eig = eigen_real(linear)
            for k, rs in enumerate(rot_specs):
                if not isinstance(rs, dict):
                    raise ValueError(f"rotations[{k}] must be an object")
                unknown = set(rs) - {"center", "plane", "rho", "theta_max"}
                if unknown:
                    raise ValueError(f"rotations[{k}]: unknown keys {sorted(unknown)}")
                for key in ("center", "plane", "rho", "theta_max"):
                    if key not in rs:
                        raise ValueError(f"rotations[{k}]: missing '{key}'")
                rotations.append(
                    build_localized_rotation(
                        eig, rs["center"], rs["plane"], rs["rho"], rs["theta_max"]
                    )
                )
        return cls(linear, rotations)
