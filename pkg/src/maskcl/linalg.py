"""Dense linear algebra and exact optimal transport on numpy arrays.

All functions treat 2-D float64 arrays as immutable values: inputs are never
modified and outputs are freshly allocated. Anything containing NaN/Inf is
rejected at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-10

MARGINAL_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """An iterative routine exhausted its iteration budget."""


class MarginalError(ValueError):
    """Transport marginals are not valid probability vectors."""


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray
    cost: float


def svd(a) -> SvdResult:
    """Thin SVD by one-sided Jacobi rotations.

    Deterministic for a fixed input: a fixed sweep order, stable ordering of
    equal singular values, and a sign convention (the largest-magnitude entry
    of every left singular vector is positive) make the factors
    byte-reproducible across runs.
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m >= n:
        u, sigma, v = _jacobi_svd_tall(a)
        vt = v.T
    else:
        # Orthogonalizing min(m, n) columns is the cheap orientation.
        ut, sigma, vtt = _jacobi_svd_tall(a.T)
        u, vt = vtt, ut.T
    _fix_signs(u, vt)
    return SvdResult(u=u, sigma=sigma, vt=vt)


def _round_robin_pairs(n: int):
    """Brent-Luk tournament schedule: n-1 rounds of floor(n/2) disjoint pairs
    covering every (p, q) combination once. Fixed order for determinism."""
    padded = n + (n % 2)
    others = list(range(1, padded))
    rounds = []
    for _ in range(padded - 1):
        lineup = [0] + others
        pairs = []
        for i in range(padded // 2):
            p, q = lineup[i], lineup[padded - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        others = [others[-1]] + others[:-1]
    return rounds


def _jacobi_svd_tall(a: np.ndarray):
    """One-sided Jacobi for m >= n: returns (u, sigma, v) with a = u @ diag(sigma) @ v.T.

    Each round rotates a set of disjoint column pairs at once (vectorized);
    the tournament schedule makes the result deterministic for fixed input.
    """
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    rounds = _round_robin_pairs(n) if n > 1 else []
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for pairs in rounds:
            ps = np.fromiter((p for p, _ in pairs), dtype=np.intp)
            qs = np.fromiter((q for _, q in pairs), dtype=np.intp)
            wp = w[:, ps]
            wq = w[:, qs]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            need = np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta)
            if not np.any(need):
                continue
            rotated = True
            gamma_safe = np.where(need, gamma, 1.0)
            zeta = np.where(need, (beta - alpha) / (2.0 * gamma_safe), 0.0)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(need & (zeta == 0.0), 1.0, t)
            t = np.where(need, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            w[:, ps] = wp * c - wq * s
            w[:, qs] = wp * s + wq * c
            vp = v[:, ps]
            vq = v[:, qs]
            v[:, ps] = vp * c - vq * s
            v[:, qs] = vp * s + vq * c
        if not rotated:
            break
    else:
        raise ConvergenceError(
            f"SVD did not converge within {JACOBI_MAX_SWEEPS} sweeps on a {m}x{n} matrix"
        )
    sigma = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    cutoff = max(m, n) * np.finfo(np.float64).eps * (sigma[0] if sigma[0] > 0 else 1.0)
    nonzero = sigma > cutoff
    u[:, nonzero] = w[:, nonzero] / sigma[nonzero]
    if not np.all(nonzero):
        _complete_basis(u, np.flatnonzero(~nonzero))
        sigma = np.where(nonzero, sigma, 0.0)
    return u, sigma, v


def _complete_basis(u: np.ndarray, empty_cols: np.ndarray) -> None:
    """Fill zero-singular-value columns with deterministic orthonormal vectors."""
    m = u.shape[0]
    filled = [u[:, j] for j in range(u.shape[1]) if j not in set(empty_cols)]
    cand = 0
    for j in empty_cols:
        while cand < m:
            vec = np.zeros(m)
            vec[cand] = 1.0
            cand += 1
            for b in filled:
                vec -= (b @ vec) * b
            norm = np.linalg.norm(vec)
            if norm > 1e-6:
                vec /= norm
                u[:, j] = vec
                filled.append(vec)
                break
        else:
            raise ConvergenceError("failed to complete orthonormal basis")


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> None:
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            if j < vt.shape[0]:
                vt[j, :] = -vt[j, :]


def frobenius_sq(a) -> float:
    """Sum of squared entries."""
    a = _as_matrix(a)
    return float(np.sum(a * a))


def solve_transport(ground_cost, src_weights, dst_weights) -> TransportPlan:
    """Exact discrete optimal transport.

    Equal-size uniform marginals reduce to a minimum-cost assignment; general
    marginals are solved as an LP (HiGHS). The returned cost is recomputed
    from the coupling so that ``cost == sum(coupling * ground_cost)`` holds by
    construction.
    """
    cost = _as_matrix(ground_cost, "ground_cost")
    if np.any(cost < 0):
        raise ValueError("ground_cost entries must be non-negative")
    src = np.asarray(src_weights, dtype=np.float64).ravel()
    dst = np.asarray(dst_weights, dtype=np.float64).ravel()
    ns, nd = cost.shape
    if src.shape[0] != ns or dst.shape[0] != nd:
        raise ValueError(
            f"marginal sizes ({src.shape[0]}, {dst.shape[0]}) do not match cost shape {cost.shape}"
        )
    if np.any(src < 0) or np.any(dst < 0):
        raise MarginalError("marginal weights must be non-negative")
    if abs(src.sum() - 1.0) > MARGINAL_TOL or abs(dst.sum() - 1.0) > MARGINAL_TOL:
        raise MarginalError(
            f"marginals must each sum to 1 (got {src.sum():.12g} and {dst.sum():.12g})"
        )

    uniform = 1.0 / ns
    if ns == nd and np.allclose(src, uniform, atol=1e-12) and np.allclose(dst, uniform, atol=1e-12):
        rows, cols = linear_sum_assignment(cost)
        coupling = np.zeros_like(cost)
        coupling[rows, cols] = uniform
    else:
        coupling = _transport_lp(cost, src, dst)
    return TransportPlan(coupling=coupling, cost=float(np.sum(coupling * cost)))


def _transport_lp(cost: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ns, nd = cost.shape
    a_eq = np.zeros((ns + nd, ns * nd))
    for i in range(ns):
        a_eq[i, i * nd : (i + 1) * nd] = 1.0
    for j in range(nd):
        a_eq[ns + j, j::nd] = 1.0
    b_eq = np.concatenate([src, dst])
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if not res.success:
        raise ConvergenceError(f"transport LP failed: {res.message}")
    return res.x.reshape(ns, nd)
