"""Neumann cosine Galerkin spaces, quadrature, and a finite-difference backend."""
from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def _extents(dim, L):
    if dim not in (1, 2):
        raise ValueError("only 1D intervals and 2D rectangles are supported")
    ext = tuple(float(v) for v in np.atleast_1d(L))
    if len(ext) == 1 and dim == 2:
        ext = ext * 2
    if len(ext) != dim or any(v <= 0 for v in ext):
        raise ValueError(f"bad domain extents {L!r} for dim={dim}")
    return ext


def _cos_mode(k, x, length):
    """Orthonormal Neumann cosine of index k on [0, length] and its derivative."""
    if k == 0:
        return np.full_like(x, 1.0 / np.sqrt(length)), np.zeros_like(x)
    c = np.sqrt(2.0 / length)
    w = k * np.pi / length
    return c * np.cos(w * x), -c * w * np.sin(w * x)


class SpatialSpace:
    """The span of the first ``n`` Neumann-Laplacian eigenfunctions.

    Modes are ordered by eigenvalue with ties broken lexicographically, so the
    spaces are nested in ``n`` and mode 0 is the constant ``1/sqrt(|Omega|)``.
    Integrals use the cell-centred midpoint rule with ``nodes_per_dim`` points
    per axis; it integrates products of two basis functions exactly and is
    spectrally accurate for smooth functions of members of the space.
    """

    def __init__(self, dim: int = 1, L=1.0, n: int = 8, nodes_per_dim: int | None = None):
        self.dim = int(dim)
        self.extents = _extents(self.dim, L)
        if n < 1:
            raise ValueError("Galerkin dimension n must be >= 1")
        self.n = int(n)
        self.mu = float(np.prod(self.extents))

        if self.dim == 1:
            modes = [(k,) for k in range(self.n)]
        else:
            Lx, Ly = self.extents
            cand = itertools.product(range(self.n), range(self.n))
            modes = sorted(cand, key=lambda pq: ((pq[0] * np.pi / Lx) ** 2
                                                 + (pq[1] * np.pi / Ly) ** 2, pq))[: self.n]
        self.modes = modes
        self.lam = np.array([sum((k * np.pi / Ld) ** 2 for k, Ld in zip(m, self.extents))
                             for m in modes])

        if nodes_per_dim is None:
            nodes_per_dim = 4 * self.n
        self.nodes_per_dim = int(nodes_per_dim)
        axes = [(np.arange(self.nodes_per_dim) + 0.5) * Ld / self.nodes_per_dim
                for Ld in self.extents]
        grids = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([g.ravel() for g in grids], axis=-1)
        cell = np.prod([Ld / self.nodes_per_dim for Ld in self.extents])
        self.weights = np.full(self.nodes.shape[0], cell)
        self.B, self.G = self.basis_at(self.nodes)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    def basis_at(self, points):
        """Basis values ``(P, n)`` and gradients ``(dim, P, n)`` at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            pts = pts.reshape(-1, self.dim)
        P = pts.shape[0]
        B = np.empty((P, self.n))
        G = np.empty((self.dim, P, self.n))
        for col, m in enumerate(self.modes):
            vals, ders = zip(*(_cos_mode(k, pts[:, d], self.extents[d]) for d, k in enumerate(m)))
            B[:, col] = np.prod(vals, axis=0)
            for d in range(self.dim):
                prod = ders[d].copy()
                for e in range(self.dim):
                    if e != d:
                        prod = prod * vals[e]
                G[d, :, col] = prod
        return B, G

    # ---- fields ----------------------------------------------------------------

    def evaluate(self, coeffs):
        """Nodal values of a member of V_n (or a stack of them, last axis = modes)."""
        return np.asarray(coeffs) @ self.B.T

    def gradient(self, coeffs):
        """Gradient components at the nodes, shape ``(..., dim, Q)``."""
        c = np.asarray(coeffs)
        return np.einsum("dqm,...m->...dq", self.G, c)

    def integrate(self, f):
        return np.asarray(f) @ self.weights

    def project(self, f):
        """L2-orthogonal projection coefficients ``<f, chi_m>``."""
        return (np.asarray(f) * self.weights) @ self.B

    def inner_products(self, f, g, grad_f=None, grad_g=None):
        """``(<f,g>_L2, <f,g>_H1)`` for nodal fields with nodal gradients ``(dim, Q)``."""
        l2 = float(self.integrate(np.asarray(f) * np.asarray(g)))
        if grad_f is None or grad_g is None:
            return l2, None
        h1 = l2 + float(self.integrate(np.sum(np.asarray(grad_f) * np.asarray(grad_g), axis=0)))
        return l2, h1

    def h1_norm_sq(self, coeffs):
        """Exact ``||w||_H1^2`` of a member of V_n from its coefficients."""
        c = np.asarray(coeffs)
        return np.sum((1.0 + self.lam) * c * c, axis=-1)

    def assemble_diffusion(self, Aeval, gw):
        """Weak diffusion terms ``<grad chi_m, (A grad w)_row>`` for both rows.

        ``Aeval`` exposes nodal ``A11, A12, A22``; ``gw`` has shape ``(2, dim, Q)``.
        Returns an array of shape ``(2, n)``.
        """
        gw = np.asarray(gw)
        flux1 = Aeval.A11 * gw[0] + Aeval.A12 * gw[1]
        flux2 = Aeval.A12 * gw[0] + Aeval.A22 * gw[1]
        out = np.empty((2, self.n))
        out[0] = np.einsum("dq,dqm->m", flux1 * self.weights, self.G)
        out[1] = np.einsum("dq,dqm->m", flux2 * self.weights, self.G)
        return out

    def check_quadrature(self) -> float:
        """Max deviation of the basis Gram matrix from the identity."""
        gram = self.B.T @ (self.B * self.weights[:, None])
        return float(np.max(np.abs(gram - np.eye(self.n))))


def project_Pn(space: SpatialSpace, f):
    return space.project(f)


def inner_products(space: SpatialSpace, f, g, grad_f=None, grad_g=None):
    return space.inner_products(f, g, grad_f, grad_g)


def assemble_diffusion(space: SpatialSpace, Aeval, gw):
    return space.assemble_diffusion(Aeval, gw)


# ---- finite differences ---------------------------------------------------------


def _neumann_1d(M, h):
    main = np.full(M, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(M - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


class FDGrid:
    """Cell-centred uniform grid with a ghost-point Neumann Laplacian."""

    def __init__(self, dim: int = 1, L=1.0, points: int = 64):
        self.dim = int(dim)
        self.extents = _extents(self.dim, L)
        if points < 2:
            raise ValueError("need at least two grid points per axis")
        self.points = int(points)
        self.h = tuple(Ld / self.points for Ld in self.extents)
        axes = [(np.arange(self.points) + 0.5) * hd for hd in self.h]
        grids = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([g.ravel() for g in grids], axis=-1)
        self.cell = float(np.prod(self.h))
        self.mu = float(np.prod(self.extents))
        lap1 = [_neumann_1d(self.points, hd) for hd in self.h]
        if self.dim == 1:
            self.laplacian = lap1[0].tocsr()
        else:
            I = sp.identity(self.points, format="csr")
            self.laplacian = (sp.kron(lap1[0], I) + sp.kron(I, lap1[1])).tocsr()
        # smallest nonzero eigenvalue of -Lap_h, known in closed form
        self.lambda1 = min(4.0 / (hd * hd) * np.sin(np.pi / (2 * self.points)) ** 2 for hd in self.h)
        self.poincare = 1.0 / np.sqrt(self.lambda1)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def integrate(self, f):
        return np.asarray(f).sum(axis=-1) * self.cell

    def l2(self, f) -> float:
        return float(np.sqrt(self.integrate(np.asarray(f) ** 2)))

    def lap(self, f):
        return self.laplacian @ np.asarray(f)

    def grad_norm(self, f) -> float:
        """Discrete ``||grad f||_L2`` via summation by parts, ``-<f, Lap_h f>``."""
        f = np.asarray(f)
        return float(np.sqrt(max(-self.integrate(f * self.lap(f)), 0.0)))


def fd_laplacian_solve(grid: FDGrid, b, rhs, coef: float = 1.0, rtol: float = 1e-11):
    """Solve ``coef * Phi - b * Lap_h Phi = rhs`` nodewise.

    The matrix is an M-matrix for ``b > 0`` and ``coef > 0``, so a nonnegative
    ``rhs`` gives a nonnegative ``Phi``.
    """
    b = np.broadcast_to(np.asarray(b, dtype=float), (grid.size,))
    rhs = np.asarray(rhs, dtype=float)
    if coef <= 0:
        raise ValueError("coefficient must be positive")
    if np.any(b <= 0) or not np.all(np.isfinite(b)):
        raise ValueError("b must be positive and finite")
    if not np.any(rhs):
        return np.zeros(grid.size)
    mat = (coef * sp.identity(grid.size, format="csr") - sp.diags(b) @ grid.laplacian).tocsc()
    lu = spla.splu(mat)
    phi = lu.solve(rhs)
    scale = np.linalg.norm(rhs)
    for _ in range(3):
        res = rhs - mat @ phi
        if np.linalg.norm(res) <= rtol * scale:
            break
        phi = phi + lu.solve(res)
    else:
        raise np.linalg.LinAlgError(
            f"elliptic solve residual {np.linalg.norm(res):.3e} above {rtol:.1e}*|rhs|")
    return phi
