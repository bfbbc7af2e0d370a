"""Invariant splittings by frame transport, and the derived checks.

Frames are computed by pushing a fixed generic seed frame along a stored
orbit segment ending at the base point: forward with Df for the strongest
directions, backward with Df^-1 for the weakest. Any floating-point
pseudo-orbit ending at the base point determines the same bundle up to
O(roundoff), so drift of long backward orbits in the stable directions is
harmless and no shadowing correction is needed.

Batched entry points return per-sample status codes instead of raising, so
Monte Carlo callers can count rejected samples; the scalar wrappers raise.
All batched results are per-sample deterministic: a sample's output depends
only on its own coordinates, never on the batch it rode in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .homology import BundleSelector
from .smallmat import k_volume

OK = 0
STATUS_NOGAP = 1
STATUS_ILLCOND = 2
STATUS_DEGENERATE = 3

# alignment ladder: retry unconverged samples with deeper transports
_LADDER = (40, 80, 160, 200)
_CAUCHY_TOL = 1e-9
_EXPLICIT_GAP_TOL = 1e-6
_INTERSECT_SV_TOL = 1e-6


class NoGap(RuntimeError):
    """Frame transport did not settle: no usable spectral gap."""


class IllConditionedIntersection(RuntimeError):
    """Plane intersection is numerically ambiguous."""


def _hartley(n: int) -> np.ndarray:
    j = np.arange(n)
    ang = 2.0 * np.pi * np.outer(j, j) / n
    return (np.cos(ang) + np.sin(ang)) / np.sqrt(n)


def generic_seed_frame(n: int, k: int) -> np.ndarray:
    """First k columns of the discrete Hartley matrix (exactly orthogonal).

    Fixed and irrational relative to integer eigen-directions, so the seed
    never starts orthogonal to the target plane for the maps studied here.
    """
    return _hartley(n)[:, :k].copy()


def _seed_for(n: int, k: int, direction: int) -> np.ndarray:
    # backward transport seeds from the tail columns so that gap-free maps
    # (identity) still produce distinct strongest/weakest spans to report on
    h = _hartley(n)
    return h[:, :k].copy() if direction > 0 else h[:, n - k:].copy()


def _orthonormalize(frames):
    """Column-wise Gram-Schmidt with reorthogonalization, batched (B,n,k)."""
    b, n, k = frames.shape
    q = np.empty_like(frames)
    ok = np.ones(b, dtype=bool)
    for i in range(k):
        col = frames[:, :, i]
        scale = np.linalg.norm(col, axis=1)
        v = col.copy()
        for _ in range(2):
            for j in range(i):
                coef = np.einsum("bn,bn->b", q[:, :, j], v)
                v -= coef[:, None] * q[:, :, j]
        norm = np.linalg.norm(v, axis=1)
        bad = ~(norm > 1e-13 * np.maximum(scale, 1e-300))
        ok &= ~bad
        q[:, :, i] = v / np.where(bad, 1.0, norm)[:, None]
    return q, ok


def max_principal_angle(p, q) -> float:
    """Largest principal angle between two equal-dimension column spans."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if q.ndim == 1:
        q = q[:, None]
    if p.shape != q.shape:
        raise ValueError(f"span dimensions differ: {p.shape} vs {q.shape}")
    po, okp = _orthonormalize(p[None])
    qo, okq = _orthonormalize(q[None])
    if not (okp[0] and okq[0]):
        raise ValueError("degenerate frame in angle computation")
    return float(_batch_angles(po, qo)[0])


def _batch_angles(p, q):
    # sine-based: arccos of an svd saturates around sqrt(eps) for small
    # angles, which is far above the transport convergence floor
    overlap = np.einsum("bnk,bnl->bkl", q, p)
    resid = p - np.einsum("bnk,bkl->bnl", q, overlap)
    s = np.linalg.svd(resid, compute_uv=False)
    return np.arcsin(np.clip(s[:, 0], 0.0, 1.0))


def _transport_pair(map_, xs, k, m, direction):
    """Frames at each x after m and m+5 alignment steps along one orbit.

    direction +1 pushes forward along a backward orbit (strongest plane),
    -1 pulls backward along a forward orbit (weakest plane). Memory holds
    the full orbit segment: (m+5) * B * n floats.
    """
    b, n = xs.shape
    total = m + 5
    orbit = np.empty((total, b, n))
    y = xs
    if direction > 0:
        for t in range(total):
            y = map_.inverse_apply(y)
            orbit[total - 1 - t] = y
        jac_at = map_.differential
    else:
        for t in range(total):
            y = map_.apply(y)
            orbit[total - 1 - t] = y
        jac_at = map_.inverse_differential
    seed = _seed_for(n, k, direction)
    f_long = np.broadcast_to(seed, (b, n, k)).copy()
    f_short = f_long.copy()
    ok = np.ones(b, dtype=bool)
    for t in range(total):
        jac = jac_at(orbit[t])
        f_long = np.einsum("bij,bjk->bik", jac, f_long)
        f_long, good = _orthonormalize(f_long)
        ok &= good
        if t >= 5:
            f_short = np.einsum("bij,bjk->bik", jac, f_short)
            f_short, good = _orthonormalize(f_short)
            ok &= good
    return f_long, f_short, ok


def _aligned_frames(map_, xs, k, m, direction):
    xs = np.asarray(xs, dtype=float)
    b, n = xs.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got {k}")
    if m is not None:
        f_long, f_short, ok = _transport_pair(map_, xs, k, int(m), direction)
        ang = _batch_angles(f_long, f_short)
        status = np.where(ang > _EXPLICIT_GAP_TOL, STATUS_NOGAP, OK)
        status = np.where(ok, status, STATUS_DEGENERATE).astype(np.int8)
        return f_long, status, int(m)
    frames = np.empty((b, n, k))
    status = np.full(b, STATUS_NOGAP, dtype=np.int8)
    pending = np.arange(b)
    m_used = _LADDER[0]
    for rung in _LADDER:
        f_long, f_short, ok = _transport_pair(map_, xs[pending], k, rung, direction)
        ang = _batch_angles(f_long, f_short)
        st = np.where(ang > _CAUCHY_TOL, STATUS_NOGAP, OK)
        st = np.where(ok, st, STATUS_DEGENERATE).astype(np.int8)
        frames[pending] = f_long
        status[pending] = st
        m_used = rung
        pending = pending[st == STATUS_NOGAP]
        if len(pending) == 0:
            break
    return frames, status, m_used


def strongest_frames(map_, xs, k, m=None):
    """Batched strongest-k-plane frames: (frames, status, m_used)."""
    return _aligned_frames(map_, xs, k, m, +1)


def weakest_frames(map_, xs, k, m=None):
    """Batched weakest-k-plane frames (most contracted directions)."""
    return _aligned_frames(map_, xs, k, m, -1)


def _raise_status(code, where):
    if code == OK:
        return
    if code == STATUS_ILLCOND:
        raise IllConditionedIntersection(f"{where}: intersection ill-conditioned")
    if code == STATUS_DEGENERATE:
        raise NoGap(f"{where}: transported frame degenerated")
    raise NoGap(f"{where}: frames did not settle within the alignment ladder")


def strongest_subbundle(map_, x, k, m=None):
    frames, status, _ = strongest_frames(map_, np.asarray(x, float)[None, :], k, m)
    _raise_status(int(status[0]), "strongest_subbundle")
    return frames[0]


def weakest_subbundle(map_, x, k, m=None):
    frames, status, _ = weakest_frames(map_, np.asarray(x, float)[None, :], k, m)
    _raise_status(int(status[0]), "weakest_subbundle")
    return frames[0]


def intersect_frames(p, q):
    """Batched intersection of column spans: (frames, status).

    Inputs need not be orthonormal. The intersection dimension is forced to
    j + l - n; a smallest retained singular value below tolerance marks the
    sample STATUS_ILLCOND (covers both genuinely ill-conditioned data and
    degenerate inputs whose true intersection is larger).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    b, n, j = p.shape
    l = q.shape[2]
    d = j + l - n
    if d < 1:
        raise ValueError(f"plane dimensions {j} + {l} do not force an intersection in R^{n}")
    po, okp = _orthonormalize(p)
    qo, okq = _orthonormalize(q)
    status = np.where(okp & okq, OK, STATUS_DEGENERATE).astype(np.int8)
    if d == n:
        eye = np.broadcast_to(np.eye(n), (b, n, n)).copy()
        return eye, status
    eye = np.eye(n)
    proj_p = eye - np.einsum("bnk,bmk->bnm", po, po)
    proj_q = eye - np.einsum("bnk,bmk->bnm", qo, qo)
    stacked = np.concatenate([proj_p, proj_q], axis=1)
    svals = np.linalg.svd(stacked, compute_uv=False)
    _, _, vt = np.linalg.svd(stacked)
    frames = np.swapaxes(vt[:, n - d:, :], 1, 2)
    thin = svals[:, n - d - 1] < _INTERSECT_SV_TOL
    status = np.where(thin & (status == OK), STATUS_ILLCOND, status).astype(np.int8)
    # membership residual of the returned vectors in both input spans
    res_p = np.abs(np.einsum("bnm,bmk->bnk", proj_p, frames)).max(axis=(1, 2))
    res_q = np.abs(np.einsum("bnm,bmk->bnk", proj_q, frames)).max(axis=(1, 2))
    leaky = (np.maximum(res_p, res_q) > 1e-8) & (status == OK)
    status = np.where(leaky, STATUS_ILLCOND, status).astype(np.int8)
    return frames, status


def intersect_planes(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    frames, status = intersect_frames(p[None], q[None])
    _raise_status(int(status[0]), "intersect_planes")
    return frames[0]


@dataclass(frozen=True)
class SplittingFrame:
    x: np.ndarray
    dims: tuple
    blocks: tuple
    m_fwd: int
    m_bwd: int


def splitting_frames(map_, xs, dims, m=None):
    """Batched splitting into blocks of the given dimensions, strongest first.

    Returns (blocks, status, m_fwd, m_bwd) where blocks is a list of
    (B, n, dims[i]) arrays.
    """
    xs = np.asarray(xs, dtype=float)
    n = map_.n
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims) or sum(dims) != n:
        raise ValueError(f"block dimensions {dims} must be positive and sum to {n}")
    b = xs.shape[0]
    status = np.zeros(b, dtype=np.int8)
    cum = np.cumsum(dims)
    m_fwd = m_bwd = 0
    blocks = []
    for i, d in enumerate(dims):
        if i == 0:
            blk, st, used = strongest_frames(map_, xs, cum[0], m)
            m_fwd = max(m_fwd, used)
        elif i == len(dims) - 1:
            blk, st, used = weakest_frames(map_, xs, d, m)
            m_bwd = max(m_bwd, used)
        else:
            strong, st_s, used_s = strongest_frames(map_, xs, cum[i], m)
            weak, st_w, used_w = weakest_frames(map_, xs, n - cum[i - 1], m)
            m_fwd = max(m_fwd, used_s)
            m_bwd = max(m_bwd, used_w)
            blk, st = intersect_frames(strong, weak)
            st = np.maximum(st, np.maximum(st_s, st_w))
        blocks.append(blk)
        status = np.maximum(status, st)
    full = np.concatenate(blocks, axis=2)
    vol = k_volume(full)
    status = np.where((vol < 1e-6) & (status == OK), STATUS_DEGENERATE, status).astype(np.int8)
    return blocks, status, m_fwd, m_bwd


def splitting_at(map_, x, dims, m=None) -> SplittingFrame:
    x = np.asarray(x, dtype=float)
    blocks, status, m_fwd, m_bwd = splitting_frames(map_, x[None], dims, m)
    _raise_status(int(status[0]), "splitting_at")
    return SplittingFrame(
        x=x,
        dims=tuple(int(d) for d in dims),
        blocks=tuple(blk[0] for blk in blocks),
        m_fwd=m_fwd,
        m_bwd=m_bwd,
    )


def bundle_frames(map_, xs, selector: BundleSelector, m=None):
    """Frames of the bundle named by a selector, batched: (frames, status, m).

    Pure linear maps use exact eigen-direction frames (any selector, frames
    not orthonormal). Perturbed maps require a contiguous selector, realized
    as strongest/weakest planes or their intersection.
    """
    xs = np.asarray(xs, dtype=float)
    n = map_.n
    selector.validate_for(n)
    b = xs.shape[0]
    if not map_.rotations:
        cols = list(selector.zero_based())
        frame = map_.eigen.vectors[:, cols]
        frames = np.broadcast_to(frame, (b, n, len(cols))).copy()
        return frames, np.zeros(b, dtype=np.int8), 0
    lo, hi = selector.indices[0], selector.indices[-1]
    if selector.indices != tuple(range(lo, hi + 1)):
        raise ValueError(
            f"selector {selector.indices} must be contiguous for perturbed maps"
        )
    if lo == 1:
        return strongest_frames(map_, xs, hi, m)
    if hi == n:
        return weakest_frames(map_, xs, n - lo + 1, m)
    strong, st_s, used_s = strongest_frames(map_, xs, hi, m)
    weak, st_w, used_w = weakest_frames(map_, xs, n - lo + 1, m)
    frames, st = intersect_frames(strong, weak)
    status = np.maximum(st, np.maximum(st_s, st_w)).astype(np.int8)
    return frames, status, max(used_s, used_w)


def _chained_jacobian(map_, xs, steps):
    jac = None
    y = xs
    for _ in range(int(steps)):
        step = map_.differential(y)
        jac = step if jac is None else np.einsum("bij,bjk->bik", step, jac)
        y = map_.apply(y)
    return jac


def _sample_points(map_, samples, seed):
    if np.isscalar(samples):
        rng = np.random.default_rng(seed)
        return rng.random((int(samples), map_.n))
    xs = np.asarray(samples, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != map_.n:
        raise ValueError(f"sample points must have shape (N, {map_.n})")
    return xs


def domination_check(map_, samples=200, l=2, dims=None, m=None, seed=0) -> dict:
    """Sampled check of the factor-2 domination between consecutive blocks.

    margin = min over samples and block pairs of half the strong/weak
    expansion ratio minus one; holds iff margin > 0. A negative margin is a
    finding, not an error.
    """
    n = map_.n
    if dims is None:
        dims = (1,) * n
    xs = _sample_points(map_, samples, seed)
    blocks, status, _, _ = splitting_frames(map_, xs, dims, m)
    worst = int(status.max(initial=0))
    if worst != OK:
        _raise_status(worst, "domination_check")
    jac = _chained_jacobian(map_, xs, l)
    rng = np.random.default_rng(seed + 1)
    rates = []
    for blk in blocks:
        k = blk.shape[2]
        vecs = [blk[:, :, i] for i in range(k)]
        for _ in range(3 if k > 1 else 0):
            combo = rng.normal(size=k)
            combo /= np.linalg.norm(combo)
            v = np.einsum("bnk,k->bn", blk, combo)
            vecs.append(v / np.linalg.norm(v, axis=1)[:, None])
        r = np.stack(
            [np.linalg.norm(np.einsum("bij,bj->bi", jac, v), axis=1) for v in vecs],
            axis=1,
        )
        rates.append((r.min(axis=1), r.max(axis=1)))
    margin = np.inf
    for i in range(len(blocks) - 1):
        strong_min = rates[i][0]
        weak_max = rates[i + 1][1]
        margin = min(margin, float(np.min(0.5 * strong_min / weak_max - 1.0)))
    return {
        "l": int(l),
        "margin": margin,
        "holds": bool(margin > 0),
        "samples": int(xs.shape[0]),
    }


def closedness_condition_check(map_, selector: BundleSelector, steps=4, samples=200,
                               m=None, seed=0) -> dict:
    """Uniform-gap sufficient condition for closed limit currents.

    Compares the largest (k-1)-volume growth over all subframes of the
    bundle (product of the top k-1 restricted singular values of the chained
    differential) against the smallest k-volume growth. The sup runs over
    every unit subframe of the sampled planes, not only eigen-aligned ones,
    so small step counts can honestly fail where eigenvalue arithmetic would
    suggest otherwise; the margin still grows like the weakest selected
    eigenvalue once positive.
    """
    if selector.k < 2:
        raise ValueError("closedness check needs a bundle of dimension >= 2")
    xs = _sample_points(map_, samples, seed)
    frames, status, _ = bundle_frames(map_, xs, selector, m)
    worst = int(status.max(initial=0))
    if worst != OK:
        _raise_status(worst, "closedness_condition_check")
    q, ok = _orthonormalize(frames)
    if not ok.all():
        _raise_status(STATUS_DEGENERATE, "closedness_condition_check")
    jac = _chained_jacobian(map_, xs, steps)
    restricted = np.einsum("bij,bjk->bik", jac, q)
    svals = np.linalg.svd(restricted, compute_uv=False)
    grow_k = np.prod(svals, axis=1)
    grow_km1 = grow_k / svals[:, -1]
    margin = float(np.min(grow_k) / np.max(grow_km1) - 1.0)
    return {
        "l": int(steps),
        "margin": margin,
        "holds": bool(margin > 0),
        "samples": int(xs.shape[0]),
    }
