"""Backward elliptic dual chain on the finite-difference grid and duality norms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spatial import FDGrid, fd_laplacian_solve


@dataclass
class StepEmbedding:
    """A family ``(h^k)_{k=1..N}`` viewed as a piecewise-constant-in-time field."""

    values: np.ndarray  # (N, G)
    tau: float
    cell: float

    def norm_L2(self) -> float:
        """``||h||_{L2(Q_T)}^2 = sum_k tau ||h^k||_{L2}^2``."""
        return math.sqrt(self.tau * self.cell * float(np.sum(self.values ** 2)))

    def norm_Linf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def norm_Lq_Lp(self, q: float, p: float) -> float:
        v = np.abs(self.values)
        if math.isinf(p):
            inner = v.max(axis=1)
        else:
            inner = (self.cell * np.sum(v ** p, axis=1)) ** (1.0 / p)
        if math.isinf(q):
            return float(inner.max())
        return float((self.tau * np.sum(inner ** q)) ** (1.0 / q))


@dataclass
class DualChain:
    grid: FDGrid
    b: np.ndarray
    F: np.ndarray
    r: float
    tau: float
    Phi: np.ndarray = field(default=None)  # (N, G); Phi[k-1] is Phi^k

    @property
    def N(self) -> int:
        return self.b.shape[0]

    @property
    def growth_factor(self) -> float:
        """``e^{r(tau) T}``: square root of ``exp((N+1) 2 r tau / (1 - 2 r tau))``."""
        return math.exp((self.N + 1) * self.r * self.tau / (1.0 - 2.0 * self.r * self.tau))


def solve_dual_chain(grid: FDGrid, b, F, r: float, tau: float) -> DualChain:
    """Solve ``(Phi^{k+1} - Phi^k)/tau + b^k Lap Phi^k = sqrt(b^k) F^k - r Phi^k`` backwards.

    ``Phi^{N+1} = 0``.  Each step is the M-matrix problem
    ``(1/tau - r) Phi^k - b^k Lap Phi^k = Phi^{k+1}/tau - sqrt(b^k) F^k``.
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if b.shape != F.shape or b.shape[1] != grid.size:
        raise ValueError(f"b and F must both have shape (N, {grid.size})")
    if np.any(b < 1.0):
        raise ValueError("b must be >= 1 everywhere")
    if np.any(F > 0.0):
        raise ValueError("F must be <= 0 everywhere")
    if r < 0 or tau <= 0 or 1.0 - 2.0 * r * tau <= 0:
        raise ValueError("need r >= 0, tau > 0 and 1 - 2 r tau > 0")
    N = b.shape[0]
    Phi = np.zeros_like(b)
    nxt = np.zeros(grid.size)
    coef = 1.0 / tau - r
    for k in range(N - 1, -1, -1):
        rhs = nxt / tau - np.sqrt(b[k]) * F[k]
        nxt = fd_laplacian_solve(grid, b[k], rhs, coef=coef)
        Phi[k] = nxt
    return DualChain(grid, b, F, float(r), float(tau), Phi)


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    asserted: bool = True
    slack: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.slack) + 1e-300

    def line(self) -> str:
        tag = ("PASS" if self.passed else "FAIL") if self.asserted else "INFO"
        return f"{tag} {self.name}: {self.lhs:.6e} <= {self.rhs:.6e}"


def check_dual_bounds(chain: DualChain, slack: float = 1e-10):
    """Gradient, weighted-Laplacian and H1 bounds of the solved chain.

    The H1 bound asserted is the one the integration argument actually yields,
    ``||Phi^j||_H1 <= e^{rT}||F|| [(1 + C_P) + |Omega|^{-1/2}(1 + e^{rT}) ||sqrt b||]``;
    the compact bracket ``e^{rT} C [e^{rT} + ||sqrt b||]`` with
    ``C = 1 + C_P + |Omega|^{-1/2}`` is reported alongside for information.
    """
    g = chain.grid
    ert = chain.growth_factor
    Fn = StepEmbedding(chain.F, chain.tau, g.cell).norm_L2()
    sqrtb = StepEmbedding(np.sqrt(chain.b), chain.tau, g.cell).norm_L2()
    grads = np.array([g.grad_norm(p) for p in chain.Phi])
    lap = np.stack([g.lap(p) for p in chain.Phi])
    weighted = StepEmbedding(np.sqrt(chain.b) * lap, chain.tau, g.cell).norm_L2()
    h1 = np.array([math.sqrt(g.l2(p) ** 2 + gr ** 2) for p, gr in zip(chain.Phi, grads)])
    inv_mu = 1.0 / math.sqrt(g.mu)
    derived = ert * Fn * ((1.0 + g.poincare) + inv_mu * (1.0 + ert) * sqrtb)
    compact = ert * (1.0 + g.poincare + inv_mu) * (ert + sqrtb) * Fn
    return [
        BoundCheck("max_j ||grad Phi^j||", float(grads.max(initial=0.0)), ert * Fn, slack=slack),
        BoundCheck("||sqrt(b) Lap Phi||_L2(Q_T)", weighted, ert * Fn, slack=slack),
        BoundCheck("max_j ||Phi^j||_H1", float(h1.max(initial=0.0)), derived, slack=slack),
        BoundCheck("max_j ||Phi^j||_H1 (compact bracket)", float(h1.max(initial=0.0)), compact,
                   asserted=False),
    ]


def check_dual_linf(chain: DualChain) -> dict:
    """Max norms of ``Phi^k`` and ``Lap Phi^k`` and their ratio to ``[1 + ||sqrt b||] ||F||_inf``."""
    g = chain.grid
    phi_inf = np.max(np.abs(chain.Phi), axis=1)
    lap_inf = np.array([np.max(np.abs(g.lap(p))) for p in chain.Phi])
    sqrtb = StepEmbedding(np.sqrt(chain.b), chain.tau, g.cell).norm_L2()
    Finf = StepEmbedding(chain.F, chain.tau, g.cell).norm_Linf()
    scale = (1.0 + sqrtb) * Finf
    worst = float(np.max(phi_inf + lap_inf)) if phi_inf.size else 0.0
    return {
        "phi_inf": phi_inf,
        "lap_inf": lap_inf,
        "finite": bool(np.all(np.isfinite(phi_inf)) and np.all(np.isfinite(lap_inf))),
        "fitted_constant": worst / scale if scale > 0 else 0.0,
    }


def duality_norm(traj) -> tuple:
    """``||u_i sqrt(d_ii(u_i) + a_ij(u_j))||_{L2(Q_T)}`` over steps ``k = 1..N``, both species."""
    reg = traj.reg
    space = traj.space
    out = []
    for i in range(2):
        j = 1 - i
        total = 0.0
        for u in traj.states[1:]:
            integrand = u[i] ** 2 * (reg.d(i, u[i]) + reg.a(i, j, u[j]))
            total += traj.tau * float(space.integrate(integrand))
        out.append(math.sqrt(total))
    return tuple(out)


def transfer_to_grid(traj, grid: FDGrid):
    """Nodal ``u^k`` on the FD grid (k = 1..N), by evaluating ``w^k`` then inverting."""
    B, _ = traj.space.basis_at(grid.nodes)
    fields = []
    for c, u_q in zip(traj.coeffs[1:], traj.states[1:]):
        w = c @ B.T
        guess = np.full(grid.size, 1.0)
        fields.append(np.stack([traj.maps[i].phi_inverse(w[i], guess=guess) for i in range(2)]))
    return np.array(fields)  # (N, 2, G)


def verify_trajectory_duality(traj, grid: FDGrid):
    """Build the dual chains a trajectory induces and check every bound on them."""
    reg = traj.reg
    u = transfer_to_grid(traj, grid)
    r = max(float(np.max(reg.base.r)), 0.0)
    results = {}
    for i in range(2):
        j = 1 - i
        b = np.maximum(1.0, reg.d(i, u[:, i]) + reg.a(i, j, u[:, j]))
        h = u[:, i] * np.sqrt(b)
        norm = StepEmbedding(h, traj.tau, grid.cell).norm_L2()
        F = -h / norm if norm > 0 else np.zeros_like(h)
        chain = solve_dual_chain(grid, b, F, r, traj.tau)
        results[i + 1] = {
            "chain": chain,
            "bounds": check_dual_bounds(chain),
            "linf": check_dual_linf(chain),
            "min_phi": float(chain.Phi.min()),
        }
    return results
