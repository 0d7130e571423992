"""Lagrange finite element spaces on triangles, with homogeneous Dirichlet
conditions imposed by eliminating boundary nodes.

Provides assembly of the mass matrix M and the variable-coefficient stiffness
matrix K over interior basis functions, the L2 and energy (Ritz) projections,
application of the discrete elliptic operator (matrix form M V = -K U), and
exact nested-space transfer between a mesh and its uniform refinements.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .mesh import Mesh, mesh_size
from .quadrature import triangle_rule, rule_id

MAX_DEGREE = 4  # monomial Vandermonde basis is well conditioned up to here


class AssemblyError(RuntimeError):
    """Raised when assembly preconditions fail, e.g. ellipticity violations."""


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric 2x2 diffusion tensor a(x, y) with claimed ellipticity bound.

    Entries are vectorized callables of (x, y); the field claims
    lam^-1 |xi|^2 <= a(x) xi . xi <= lam |xi|^2 pointwise.
    """

    a11: callable
    a12: callable
    a22: callable
    lam: float
    name: str

    def tensor(self, x, y) -> np.ndarray:
        """Tensor values at points, shape x.shape + (2, 2)."""
        x = np.asarray(x, dtype=float)
        ones = np.ones_like(x)
        a11 = np.asarray(self.a11(x, y)) * ones
        a12 = np.asarray(self.a12(x, y)) * ones
        a22 = np.asarray(self.a22(x, y)) * ones
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = a11
        out[..., 0, 1] = a12
        out[..., 1, 0] = a12
        out[..., 1, 1] = a22
        return out


def coefficient_field(name: str) -> CoefficientField:
    """Built-in fields: 'identity', 'smooth', and the Hoelder-rough 'rough'."""
    if name == "identity":
        return CoefficientField(
            a11=lambda x, y: np.ones_like(x),
            a12=lambda x, y: np.zeros_like(x),
            a22=lambda x, y: np.ones_like(x),
            lam=1.0,
            name="identity",
        )
    if name == "smooth":
        return CoefficientField(
            a11=lambda x, y: 1.0 + 0.5 * np.sin(np.pi * x) * np.sin(np.pi * y),
            a12=lambda x, y: 0.25 * x * y,
            a22=lambda x, y: 1.0 + 0.5 * np.cos(np.pi * x),
            lam=4.0,
            name="smooth",
        )
    if name == "rough":
        # W^{1,2+beta} for beta < 1/2 only: gradient blows up like |x-1/2|^-0.4
        return CoefficientField(
            a11=lambda x, y: 1.0 + 0.5 * np.abs(x - 0.5) ** 0.6,
            a12=lambda x, y: np.zeros_like(x),
            a22=lambda x, y: 1.0 + 0.5 * np.abs(x - 0.5) ** 0.6,
            lam=1.5,
            name="rough",
        )
    raise ValueError(f"unknown coefficient field {name!r}; choose identity, smooth, or rough")


# ---------------------------------------------------------------------------
# reference element


@functools.lru_cache(maxsize=None)
def _reference_element(degree: int):
    """Lagrange nodes, monomial exponents, and nodal-basis coefficients.

    Node order: 3 vertices, then r-1 nodes per edge (edges (0,1), (1,2),
    (2,0), each from first to second vertex), then interior lattice points.
    """
    r = degree
    nodes = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    vref = np.array(nodes)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for i in range(1, r):
            t = i / r
            nodes.append(tuple((1 - t) * vref[a] + t * vref[b]))
    for j in range(1, r):
        for i in range(1, r - j):
            nodes.append((i / r, j / r))
    nodes = np.array(nodes[: (r + 1) * (r + 2) // 2])

    exps = [(a, b) for total in range(r + 1) for a in range(total, -1, -1) for b in (total - a,)]
    V = np.empty((len(nodes), len(exps)))
    for m, (a, b) in enumerate(exps):
        V[:, m] = nodes[:, 0] ** a * nodes[:, 1] ** b
    coeffs = np.linalg.inv(V)  # column m = monomial coefficients of basis fn m
    return nodes, tuple(exps), coeffs


def _eval_reference_basis(degree: int, points: np.ndarray):
    """Basis values and reference gradients at points, shapes (nl, np), (nl, np, 2)."""
    _, exps, coeffs = _reference_element(degree)
    x, y = points[:, 0], points[:, 1]
    P = np.empty((len(exps), len(points)))
    Dx = np.zeros_like(P)
    Dy = np.zeros_like(P)
    for m, (a, b) in enumerate(exps):
        P[m] = x**a * y**b
        if a:
            Dx[m] = a * x ** (a - 1) * y**b
        if b:
            Dy[m] = b * x**a * y ** (b - 1)
    phi = coeffs.T @ P
    grad = np.stack([coeffs.T @ Dx, coeffs.T @ Dy], axis=-1)
    return phi, grad


# ---------------------------------------------------------------------------
# finite element space


class FESpace:
    """Continuous Lagrange space of given degree with Dirichlet dofs eliminated.

    Immutable after construction; tabulations are cached lazily.
    """

    def __init__(self, mesh: Mesh, degree: int = 1, quad_degree: int | None = None):
        if not 1 <= degree <= MAX_DEGREE:
            raise ValueError(f"degree must be in 1..{MAX_DEGREE}, got {degree}")
        self.mesh = mesh
        self.degree = degree
        # coefficients are evaluated pointwise; 2r+2 pushes quadrature error
        # below discretization error for the built-in smooth fields
        self.quad_degree = 2 * degree + 2 if quad_degree is None else quad_degree
        self.quadrature = rule_id(self.quad_degree)
        self._build_dofs()
        self._build_geometry()

    # -- construction -------------------------------------------------------

    def _build_dofs(self):
        mesh, r = self.mesh, self.degree
        nv = mesh.num_vertices
        edges, counts = mesh.edges()
        edge_of = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
        ne = edges.shape[0]
        n_per_edge = r - 1
        n_interior = (r - 1) * (r - 2) // 2
        nt = mesh.num_triangles

        n_nodes = nv + ne * n_per_edge + nt * n_interior
        coords = np.empty((n_nodes, 2))
        coords[:nv] = mesh.vertices
        boundary = np.zeros(n_nodes, dtype=bool)
        boundary[:nv] = mesh.boundary_vertex

        if n_per_edge:
            va, vb = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
            for i in range(1, r):
                t = i / r
                coords[nv + (i - 1) * ne : nv + i * ne] = (1 - t) * va + t * vb
            is_bd_edge = counts == 1
            for i in range(1, r):
                boundary[nv + (i - 1) * ne : nv + i * ne] = is_bd_edge

        def edge_nodes(a, b):
            # global ids along edge from a to b
            lo, hi = (a, b) if a < b else (b, a)
            k = edge_of[(lo, hi)]
            ids = [nv + (i - 1) * ne + k for i in range(1, r)]
            return ids if a < b else ids[::-1]

        ref_nodes, _, _ = _reference_element(r)
        tri_dofs = np.empty((nt, ref_nodes.shape[0]), dtype=np.int64)
        int_base = nv + ne * n_per_edge
        for e, (v0, v1, v2) in enumerate(mesh.triangles):
            ids = [int(v0), int(v1), int(v2)]
            for a, b in ((v0, v1), (v1, v2), (v2, v0)):
                ids.extend(edge_nodes(int(a), int(b)))
            ids.extend(range(int_base + e * n_interior, int_base + (e + 1) * n_interior))
            tri_dofs[e] = ids

        if n_interior:
            corners = mesh.triangle_corners()
            bary = ref_nodes[3 + 3 * n_per_edge :]
            for e in range(nt):
                p0 = corners[e, 0]
                J = np.stack([corners[e, 1] - p0, corners[e, 2] - p0], axis=1)
                coords[int_base + e * n_interior : int_base + (e + 1) * n_interior] = p0 + bary @ J.T

        self.node_coords = coords
        self.node_boundary = boundary
        self.tri_dofs = tri_dofs
        self.interior = np.flatnonzero(~boundary)
        self.node_to_interior = -np.ones(n_nodes, dtype=np.int64)
        self.node_to_interior[self.interior] = np.arange(self.interior.size)

    def _build_geometry(self):
        corners = self.mesh.triangle_corners()
        p0 = corners[:, 0]
        J = np.stack([corners[:, 1] - p0, corners[:, 2] - p0], axis=2)  # (nt, 2, 2)
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        invJ = np.empty_like(J)
        invJ[:, 0, 0] = J[:, 1, 1]
        invJ[:, 0, 1] = -J[:, 0, 1]
        invJ[:, 1, 0] = -J[:, 1, 0]
        invJ[:, 1, 1] = J[:, 0, 0]
        invJ /= detJ[:, None, None]
        self._p0 = p0
        self._J = J
        self._detJ = detJ
        self._invJ = invJ
        self._invJT = np.swapaxes(invJ, 1, 2)

        xi, wq = triangle_rule(self.quad_degree)
        self.quad_ref_points = xi
        self.quad_ref_weights = wq
        self.phi_ref, self.grad_ref = _eval_reference_basis(self.degree, xi)

    # -- basic queries -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.interior.size

    @property
    def h(self) -> float:
        return mesh_size(self.mesh)

    def quad_physical_points(self) -> np.ndarray:
        """Quadrature points in physical coordinates, shape (nt, nq, 2)."""
        return self._p0[:, None, :] + np.einsum("eab,qb->eqa", self._J, self.quad_ref_points)

    def quad_physical_weights(self) -> np.ndarray:
        """Quadrature weights including |det J|, shape (nt, nq)."""
        return np.abs(self._detJ)[:, None] * self.quad_ref_weights[None, :]

    # -- tabulations for norm evaluation and projections ---------------------

    @functools.cached_property
    def _tabulation(self):
        """Sparse maps from full nodal vectors to quadrature-point values.

        Returns (E, Gx, Gy, w, X): value/gradient evaluation matrices of shape
        (nt*nq, n_nodes), the flattened physical weights, and flattened points.
        """
        nt = self.mesh.num_triangles
        nq = self.quad_ref_points.shape[0]
        nl = self.tri_dofs.shape[1]
        rows = np.repeat(np.arange(nt * nq), nl)
        cols = np.broadcast_to(self.tri_dofs[:, None, :], (nt, nq, nl)).ravel()

        vals_e = np.broadcast_to(self.phi_ref.T[None, :, :], (nt, nq, nl)).ravel()
        gphys = np.einsum("eba,lqb->elqa", self._invJ, self.grad_ref)  # invJ^T . grad
        vals_gx = np.ascontiguousarray(np.swapaxes(gphys[..., 0], 1, 2)).ravel()
        vals_gy = np.ascontiguousarray(np.swapaxes(gphys[..., 1], 1, 2)).ravel()

        shape = (nt * nq, self.n_nodes)
        E = sp.csr_matrix((vals_e, (rows, cols)), shape=shape)
        Gx = sp.csr_matrix((vals_gx, (rows, cols)), shape=shape)
        Gy = sp.csr_matrix((vals_gy, (rows, cols)), shape=shape)
        w = self.quad_physical_weights().ravel()
        X = self.quad_physical_points().reshape(-1, 2)
        return E, Gx, Gy, w, X

    def eval_matrices(self):
        return self._tabulation

    # -- point location and evaluation ---------------------------------------

    @functools.cached_property
    def _centroid_tree(self):
        return cKDTree(self.mesh.triangle_corners().mean(axis=1))

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and reference coordinates for each point."""
        points = np.atleast_2d(points)
        n = points.shape[0]
        elem = -np.ones(n, dtype=np.int64)
        ref = np.zeros((n, 2))
        pending = np.arange(n)
        nt = self.mesh.num_triangles
        tol = 1e-10
        k = 4
        while pending.size:
            k = min(k, nt)
            _, cand = self._centroid_tree.query(points[pending], k=k)
            cand = np.atleast_2d(cand.reshape(pending.size, -1))
            local = points[pending][:, None, :] - self._p0[cand]
            xi = np.einsum("pkab,pkb->pka", self._invJ[cand], local)
            ok = (xi[..., 0] >= -tol) & (xi[..., 1] >= -tol) & (xi.sum(axis=2) <= 1 + tol)
            hit = ok.any(axis=1)
            first = ok.argmax(axis=1)
            rows = np.flatnonzero(hit)
            idx = pending[rows]
            elem[idx] = cand[rows, first[rows]]
            ref[idx] = xi[rows, first[rows]]
            pending = pending[~hit]
            if k >= nt:
                break
            k *= 8
        if pending.size:
            raise ValueError(f"{pending.size} point(s) lie outside the mesh, e.g. {points[pending[0]]}")
        return elem, ref

    def evaluate_basis(self, elem: np.ndarray, ref: np.ndarray):
        """Local basis values/physical gradients at located points."""
        phi, grad_ref = _eval_reference_basis(self.degree, ref)
        grad = np.einsum("eab,lea->leb", self._invJ[elem], grad_ref)
        return phi, grad


# ---------------------------------------------------------------------------
# fields on a space


@dataclass
class FEFunction:
    """Member of the Dirichlet space: coefficients over interior dofs only."""

    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} interior coefficients, got {self.coeffs.shape}")

    def full_values(self) -> np.ndarray:
        """Nodal values over all Lagrange nodes (zero on the boundary)."""
        full = np.zeros(self.space.n_nodes, dtype=self.coeffs.dtype)
        full[self.space.interior] = self.coeffs
        return full

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        elem, ref = self.space.locate(points)
        phi, _ = self.space.evaluate_basis(elem, ref)
        vals = self.full_values()[self.space.tri_dofs[elem]]
        return np.einsum("pl,pl->p", phi.T, vals)

    def evaluate_gradient(self, points: np.ndarray) -> np.ndarray:
        elem, ref = self.space.locate(points)
        _, grad = self.space.evaluate_basis(elem, ref)
        vals = self.full_values()[self.space.tri_dofs[elem]]
        return np.einsum("lpa,pl->pa", grad, vals)

    def _assert_same_space(self, other: "FEFunction"):
        if self.space is not other.space:
            raise ValueError("FEFunctions live on different spaces")

    def __add__(self, other):
        self._assert_same_space(other)
        return FEFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._assert_same_space(other)
        return FEFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return FEFunction(self.space, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return FEFunction(self.space, -self.coeffs)


@dataclass
class NodalField:
    """Nodal interpolant over *all* Lagrange nodes, boundary included.

    The norm routines accept these, so functions that do not vanish on the
    boundary (constants in particular) can be measured.
    """

    space: FESpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.space.n_nodes,):
            raise ValueError(f"expected {self.space.n_nodes} nodal values, got {self.values.shape}")

    @classmethod
    def from_callable(cls, space: FESpace, f) -> "NodalField":
        xy = space.node_coords
        return cls(space, np.asarray(f(xy[:, 0], xy[:, 1])) * np.ones(space.n_nodes))

    def full_values(self) -> np.ndarray:
        return self.values


# ---------------------------------------------------------------------------
# assembly


@dataclass
class EllipticityReport:
    ok: bool
    worst_ratio: float
    worst_point: tuple[float, float]


def check_ellipticity(coeff: CoefficientField, mesh: Mesh, quad_degree: int = 4) -> EllipticityReport:
    """Rayleigh-quotient check of lam^-1 <= eig(a(x)) <= lam at quadrature points.

    worst_ratio <= 1 means the claimed bound holds everywhere sampled.
    """
    space = FESpace(mesh, degree=1, quad_degree=quad_degree)
    X = space.quad_physical_points().reshape(-1, 2)
    return _ellipticity_at_points(coeff, X)


def _ellipticity_at_points(coeff: CoefficientField, X: np.ndarray) -> EllipticityReport:
    x, y = X[:, 0], X[:, 1]
    ones = np.ones_like(x)
    a11 = np.asarray(coeff.a11(x, y)) * ones
    a12 = np.asarray(coeff.a12(x, y)) * ones
    a22 = np.asarray(coeff.a22(x, y)) * ones
    half_tr = 0.5 * (a11 + a22)
    disc = np.sqrt(0.25 * (a11 - a22) ** 2 + a12**2)
    eig_max = half_tr + disc
    eig_min = half_tr - disc
    lam = coeff.lam
    with np.errstate(divide="ignore"):
        ratio = np.maximum(eig_max / lam, 1.0 / (lam * np.maximum(eig_min, 0.0)))
    worst = int(np.argmax(ratio))
    return EllipticityReport(
        ok=bool(ratio[worst] <= 1.0 + 1e-12),
        worst_ratio=float(ratio[worst]),
        worst_point=(float(x[worst]), float(y[worst])),
    )


class AssembledPair:
    """Sparse SPD mass/stiffness pair over interior dofs, with solver caching."""

    def __init__(self, M, K, space: FESpace, coeff: CoefficientField, M_full, K_full):
        self.M = M
        self.K = K
        self.space = space
        self.coeff = coeff
        self.M_full = M_full
        self.K_full = K_full
        self._factors: dict = {}

    def factorization(self, key, matrix) -> spla.SuperLU:
        """Cached sparse LU of `matrix`; key must identify it uniquely."""
        if key not in self._factors:
            self._factors[key] = spla.splu(sp.csc_matrix(matrix))
        return self._factors[key]

    def solve_M(self, b: np.ndarray) -> np.ndarray:
        return self.factorization("M", self.M).solve(b)

    def solve_K(self, b: np.ndarray) -> np.ndarray:
        return self.factorization("K", self.K).solve(b)

    def shifted_solver(self, z: complex) -> spla.SuperLU:
        """Factorization of (z M + K); used by resolvent probes."""
        z = complex(z)
        A = z * self.M.astype(complex) + self.K.astype(complex)
        return self.factorization(("shift", z), A)

    def stepping_solver(self, delta0: float, tau: float) -> spla.SuperLU:
        """Factorization of (delta0 M + tau K); reused across all time steps."""
        return self.factorization(("step", float(delta0), float(tau)), float(delta0) * self.M + float(tau) * self.K)


def assemble(space: FESpace, coeff: CoefficientField) -> AssembledPair:
    """Mass and stiffness matrices for the diffusion tensor over interior dofs.

    M_ij = int phi_j phi_i, K_ij = sum_kl int a_kl d_l phi_j d_k phi_i.
    Raises AssemblyError if the claimed ellipticity bound fails at any
    quadrature point.
    """
    X = space.quad_physical_points()
    Xf = X.reshape(-1, 2)
    report = _ellipticity_at_points(coeff, Xf)
    if not report.ok:
        raise AssemblyError(
            f"coefficient field {coeff.name!r} violates its ellipticity bound "
            f"lam={coeff.lam} at quadrature point {report.worst_point} "
            f"(worst ratio {report.worst_ratio:.6g})"
        )

    wq = space.quad_ref_weights
    absdet = np.abs(space._detJ)
    phi = space.phi_ref  # (nl, nq)

    M_ref = np.einsum("q,iq,jq->ij", wq, phi, phi)
    M_loc = absdet[:, None, None] * M_ref[None, :, :]

    x, y = X[..., 0], X[..., 1]
    ones = np.ones_like(x)
    a11 = np.asarray(coeff.a11(x, y)) * ones
    a12 = np.asarray(coeff.a12(x, y)) * ones
    a22 = np.asarray(coeff.a22(x, y)) * ones

    gphys = np.einsum("eba,lqb->elqa", space._invJ, space.grad_ref)  # (nt, nl, nq, 2)
    flux0 = a11[:, None, :] * gphys[..., 0] + a12[:, None, :] * gphys[..., 1]
    flux1 = a12[:, None, :] * gphys[..., 0] + a22[:, None, :] * gphys[..., 1]
    wphys = wq[None, :] * absdet[:, None]
    K_loc = np.einsum("eq,eiqa,ejqa->eij", wphys, gphys, np.stack([flux0, flux1], axis=-1))

    n = space.n_nodes
    nl = space.tri_dofs.shape[1]
    rows = np.repeat(space.tri_dofs, nl, axis=1).ravel()
    cols = np.tile(space.tri_dofs, (1, nl)).ravel()
    M_full = sp.csr_matrix((M_loc.ravel(), (rows, cols)), shape=(n, n))
    K_full = sp.csr_matrix((K_loc.ravel(), (rows, cols)), shape=(n, n))

    idx = space.interior
    M = M_full[idx][:, idx].tocsr()
    K = K_full[idx][:, idx].tocsr()
    return AssembledPair(M, K, space, coeff, M_full, K_full)


# ---------------------------------------------------------------------------
# projections and the discrete elliptic operator


def load_vector(space: FESpace, f) -> np.ndarray:
    """Quadrature approximation of b_i = int f phi_i over interior basis fns."""
    X = space.quad_physical_points()
    vals = np.asarray(f(X[..., 0], X[..., 1])) * np.ones(X.shape[:2])
    wv = space.quad_physical_weights() * vals
    nl = space.tri_dofs.shape[1]
    b_loc = np.einsum("eq,lq->el", wv, space.phi_ref)
    b = np.zeros(space.n_nodes)
    np.add.at(b, space.tri_dofs.ravel(), b_loc.ravel())
    return b[space.interior]


def l2_project(pair: AssembledPair, f, fine_pair: AssembledPair | None = None) -> FEFunction:
    """L2-orthogonal projection P_h of f onto the space: solves M U = (f, phi_i).

    f may be a vectorized callable f(x, y), or an FEFunction on a nested finer
    space (pass the finer `fine_pair`), in which case the projection is exact.
    """
    if isinstance(f, FEFunction):
        if fine_pair is None or f.space is not fine_pair.space:
            raise ValueError("projecting a fine-space FEFunction requires its assembled fine_pair")
        T = prolongation(pair.space, fine_pair.space)
        b = T.T @ (fine_pair.M @ f.coeffs)
    else:
        b = load_vector(pair.space, f)
    return FEFunction(pair.space, pair.solve_M(b))


def ritz_project(pair: AssembledPair, u, grad=None, fine_pair: AssembledPair | None = None) -> FEFunction:
    """Energy projection R_h: K U = sum_kl (a_kl d_l u, d_k phi_i).

    Pass either a callable u with vectorized `grad(x, y) -> (ux, uy)`, or an
    FEFunction on a nested finer space together with its `fine_pair` (exact,
    via Galerkin orthogonality through the fine stiffness matrix).
    """
    space = pair.space
    if isinstance(u, FEFunction):
        if fine_pair is None or u.space is not fine_pair.space:
            raise ValueError("projecting a fine-space FEFunction requires its assembled fine_pair")
        T = prolongation(space, fine_pair.space)
        c = T.T @ (fine_pair.K @ u.coeffs)
    elif grad is not None:
        X = space.quad_physical_points()
        x, y = X[..., 0], X[..., 1]
        ux, uy = grad(x, y)
        ones = np.ones(X.shape[:2])
        ux = np.asarray(ux) * ones
        uy = np.asarray(uy) * ones
        a11 = np.asarray(pair.coeff.a11(x, y)) * ones
        a12 = np.asarray(pair.coeff.a12(x, y)) * ones
        a22 = np.asarray(pair.coeff.a22(x, y)) * ones
        f0 = a11 * ux + a12 * uy
        f1 = a12 * ux + a22 * uy
        wphys = space.quad_physical_weights()
        gphys = np.einsum("eba,lqb->elqa", space._invJ, space.grad_ref)
        c_loc = np.einsum("eq,elqa,eqa->el", wphys, gphys, np.stack([f0, f1], axis=-1))
        c_full = np.zeros(space.n_nodes)
        np.add.at(c_full, space.tri_dofs.ravel(), c_loc.ravel())
        c = c_full[space.interior]
    else:
        raise TypeError("ritz_project needs either grad= for a callable u or fine_pair= for an FEFunction")
    return FEFunction(space, pair.solve_K(c))


def apply_Ah(pair: AssembledPair, u: FEFunction) -> FEFunction:
    """Discrete elliptic operator: returns v with M V = -K U."""
    if u.space is not pair.space:
        raise ValueError("FEFunction does not live on the pair's space")
    return FEFunction(pair.space, pair.solve_M(-(pair.K @ u.coeffs)))


# ---------------------------------------------------------------------------
# nested-space transfer


_prolongation_store: dict = {}


def prolongation(coarse: FESpace, fine: FESpace) -> sp.csr_matrix:
    """Embedding matrix T with (fine coeffs of v_H) = T (coarse coeffs of v_H).

    Requires the fine mesh to resolve the coarse one (uniform refinements of
    the same mesh, or equal meshes).  Cached per space pair.
    """
    key = (id(coarse), id(fine))
    if key in _prolongation_store:
        return _prolongation_store[key]
    pts = fine.node_coords[fine.interior]
    elem, ref = coarse.locate(pts)
    phi, _ = coarse.evaluate_basis(elem, ref)  # (nl, n_pts)
    cols_nodes = coarse.tri_dofs[elem]  # (n_pts, nl)
    cols = coarse.node_to_interior[cols_nodes]
    rows = np.broadcast_to(np.arange(pts.shape[0])[:, None], cols.shape)
    vals = phi.T.copy()
    keep = cols >= 0
    # coarse boundary basis functions carry zero coefficients; drop them
    T = sp.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])),
        shape=(fine.n_dofs, coarse.n_dofs),
    )
    T.sum_duplicates()
    T.data[np.abs(T.data) < 1e-14] = 0.0
    T.eliminate_zeros()
    _prolongation_store[key] = T
    return T


# ---------------------------------------------------------------------------
# debugging helpers


def export_matrix_triplets(matrix, path) -> None:
    """Write a sparse matrix as 'i j value' lines (row-major order)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as f:
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            f.write(f"{i} {j} {v:.17g}\n")
