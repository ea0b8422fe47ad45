"""Bilinear quadrilateral finite elements.

Vector fields use interleaved dofs ``2*node + component``.  Strains are
handled in Voigt form ``[e_xx, e_yy, 2 e_xy]`` and stresses as
``[s_xx, s_yy, s_xy]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import LOCAL_EDGES, BoundaryTag, Mesh

# reference coordinates of the local vertices, counterclockwise
REF_VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class GeometryError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) on [-1, 1]^2
    weights: np.ndarray  # (nq,)


def gauss_rule(order: int = 2) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(order)
    pts = np.array([[a, b] for b in x for a in x])
    wts = np.array([wa * wb for wb in w for wa in w])
    return QuadratureRule(pts, wts)


def shape_eval(ref_point):
    """Bilinear shape values ``(4,)`` and reference gradients ``(4, 2)``."""
    xi, eta = float(ref_point[0]), float(ref_point[1])
    sx, sy = REF_VERTICES[:, 0], REF_VERTICES[:, 1]
    values = 0.25 * (1 + sx * xi) * (1 + sy * eta)
    grads = 0.25 * np.column_stack([sx * (1 + sy * eta), sy * (1 + sx * xi)])
    return values, grads


def _shape_tables(points):
    vals, grads = zip(*(shape_eval(p) for p in points))
    return np.array(vals), np.array(grads)  # (nq, 4), (nq, 4, 2)


@dataclass(frozen=True)
class DofMap:
    kind: str  # "scalar" or "vector"
    n_nodes: int

    @property
    def n_components(self) -> int:
        return 1 if self.kind == "scalar" else 2

    @property
    def n_dofs(self) -> int:
        return self.n_components * self.n_nodes

    def node_dofs(self, nodes, component=None):
        nodes = np.asarray(nodes, dtype=np.int64)
        if self.kind == "scalar":
            return nodes
        if component is None:
            return np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()
        return 2 * nodes + component

    def element_dofs(self, elements):
        if self.kind == "scalar":
            return np.asarray(elements, dtype=np.int64)
        e = np.asarray(elements, dtype=np.int64)
        return np.stack([2 * e, 2 * e + 1], axis=2).reshape(len(e), -1)


class _Pattern:
    """Fixed CSR sparsity with deterministic scatter of element matrices."""

    def __init__(self, element_dofs, n):
        nloc = element_dofs.shape[1]
        rows = np.repeat(element_dofs, nloc, axis=1).ravel()
        cols = np.tile(element_dofs, (1, nloc)).ravel()
        keys = rows * n + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self.scatter = inv.ravel()
        self.n = n
        self.nnz = len(uniq)
        r = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(n + 1)).astype(np.int32)

    def matrix(self, element_matrices) -> sp.csr_matrix:
        """Assemble symmetric element matrices ``(ne, nloc, nloc)``.

        The element matrices are symmetrized first so that rounding in the
        element kernels cannot break exact symmetry of the global matrix.
        """
        ke = 0.5 * (element_matrices + element_matrices.swapaxes(-1, -2))
        data = np.bincount(self.scatter, weights=ke.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


class FESpace:
    """Precomputed element geometry and assembly routines for one mesh."""

    def __init__(self, mesh: Mesh, quadrature: QuadratureRule | None = None):
        self.mesh = mesh
        self.quad = quadrature or gauss_rule(2)
        self.scalar = DofMap("scalar", mesh.n_nodes)
        self.vector = DofMap("vector", mesh.n_nodes)
        self.N, dN_ref = _shape_tables(self.quad.points)  # (nq,4), (nq,4,2)

        xy = mesh.nodes[mesh.elements]  # (ne, 4, 2)
        J = np.einsum("qai,eaj->eqji", dN_ref, xy)  # J[e,q,j,i] = dx_j/dxi_i
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0.0):
            raise GeometryError("non-positive Jacobian determinant")
        inv = np.empty_like(J)
        inv[..., 0, 0] = J[..., 1, 1] / det
        inv[..., 1, 1] = J[..., 0, 0] / det
        inv[..., 0, 1] = -J[..., 0, 1] / det
        inv[..., 1, 0] = -J[..., 1, 0] / det
        self.dNdx = np.einsum("qai,eqij->eqaj", dN_ref, inv)  # (ne, nq, 4, 2)
        self.JxW = det * self.quad.weights[None, :]

        ne = mesh.n_elements
        B = np.zeros((ne, len(self.quad.weights), 3, 8))
        B[:, :, 0, 0::2] = self.dNdx[..., 0]
        B[:, :, 1, 1::2] = self.dNdx[..., 1]
        B[:, :, 2, 0::2] = self.dNdx[..., 1]
        B[:, :, 2, 1::2] = self.dNdx[..., 0]
        self.B = B

        self.sdofs = self.scalar.element_dofs(mesh.elements)
        self.vdofs = self.vector.element_dofs(mesh.elements)
        self._spat = _Pattern(self.sdofs, self.scalar.n_dofs)
        self._vpat = _Pattern(self.vdofs, self.vector.n_dofs)

        self.mass = self.assemble_scalar(np.ones_like(self.JxW), "mass")
        self.lumped_mass = np.asarray(self.mass.sum(axis=1)).ravel()
        self.stiffness = self.assemble_scalar(np.ones_like(self.JxW), "stiffness")
        self.vector_mass = self.assemble_vector_mass()

    # ---------------------------------------------------------------- fields
    def interpolate(self, nodal):
        """Scalar nodal field at quadrature points ``(ne, nq)``."""
        return np.asarray(nodal)[self.sdofs] @ self.N.T

    def strains(self, u):
        """Voigt strains ``(ne, nq, 3)`` with engineering shear."""
        return np.einsum("eqia,ea->eqi", self.B, np.asarray(u)[self.vdofs])

    def strain_at_qp(self, u, element: int, qp: int):
        """Symmetric 2x2 strain tensor at one quadrature point."""
        ue = np.asarray(u)[self.vdofs[element]]
        e = self.B[element, qp] @ ue
        return np.array([[e[0], 0.5 * e[2]], [0.5 * e[2], e[1]]])

    # -------------------------------------------------------------- assembly
    def assemble_scalar(self, coeff, kind: str) -> sp.csr_matrix:
        """Weighted mass ``(c N_a, N_b)`` or stiffness ``(c grad N_a, grad N_b)``."""
        w = np.asarray(coeff) * self.JxW
        if kind == "mass":
            ke = np.einsum("eq,qa,qb->eab", w, self.N, self.N)
        elif kind == "stiffness":
            ke = np.einsum("eq,eqak,eqbk->eab", w, self.dNdx, self.dNdx)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        return self._spat.matrix(ke)

    def assemble_load_scalar(self, coeff):
        """Vector ``(c, N_a)``."""
        fe = np.einsum("eq,qa->ea", np.asarray(coeff) * self.JxW, self.N)
        return np.bincount(self.sdofs.ravel(), weights=fe.ravel(), minlength=self.scalar.n_dofs)

    def assemble_vector_mass(self) -> sp.csr_matrix:
        ne, nq = self.JxW.shape
        Nv = np.zeros((nq, 2, 8))
        Nv[:, 0, 0::2] = self.N
        Nv[:, 1, 1::2] = self.N
        ke = np.einsum("eq,qia,qib->eab", self.JxW, Nv, Nv)
        return self._vpat.matrix(ke)

    def assemble_elasticity(self, D) -> sp.csr_matrix:
        """Stiffness ``(D B u, B v)`` for per-point Voigt tangents ``D (ne, nq, 3, 3)``."""
        DB = np.einsum("eqij,eqjb->eqib", D, self.B)
        ke = np.einsum("eq,eqia,eqib->eab", self.JxW, self.B, DB)
        return self._vpat.matrix(ke)

    def assemble_internal_force(self, stress):
        """Vector ``(sigma, e(v))`` for Voigt stresses ``(ne, nq, 3)``."""
        fe = np.einsum("eq,eqia,eqi->ea", self.JxW, self.B, stress)
        return np.bincount(self.vdofs.ravel(), weights=fe.ravel(), minlength=self.vector.n_dofs)

    # -------------------------------------------------------------- boundary
    def face_quadrature(self, tag: BoundaryTag):
        """Face Gauss data for all faces with ``tag``.

        Returns ``(elements, ref_points (nf, 2, 2), weights*length (nf, 2),
        outward normals (nf, 2))``.
        """
        faces = self.mesh.faces_with_tag(tag)
        if len(faces) == 0:
            raise KeyError(f"no boundary faces tagged {BoundaryTag(tag).name}")
        g, w = np.polynomial.legendre.leggauss(2)
        a = REF_VERTICES[LOCAL_EDGES[faces[:, 1], 0]]
        b = REF_VERTICES[LOCAL_EDGES[faces[:, 1], 1]]
        ref = 0.5 * (a[:, None, :] + b[:, None, :]) + 0.5 * g[None, :, None] * (b - a)[:, None, :]
        xy = self.mesh.face_nodes(faces)
        pa, pb = self.mesh.nodes[xy[:, 0]], self.mesh.nodes[xy[:, 1]]
        t = pb - pa
        length = np.linalg.norm(t, axis=1)
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
        return faces[:, 0], ref, 0.5 * length[:, None] * w[None, :], normal

    def face_strains(self, u, elements, ref):
        """Voigt strains at face points ``(nf, npts, 3)``."""
        u = np.asarray(u)
        out = np.zeros(ref.shape[:2] + (3,))
        xy = self.mesh.nodes[self.mesh.elements[elements]]
        ue = u[self.vdofs[elements]]
        for k in range(ref.shape[1]):
            dN_ref = np.array([shape_eval(p)[1] for p in ref[:, k]])  # (nf, 4, 2)
            J = np.einsum("fai,faj->fji", dN_ref, xy)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            inv = np.stack(
                [np.stack([J[:, 1, 1], -J[:, 0, 1]], -1), np.stack([-J[:, 1, 0], J[:, 0, 0]], -1)], 1
            ) / det[:, None, None]
            dNdx = np.einsum("fai,fij->faj", dN_ref, inv)
            ux, uy = ue[:, 0::2], ue[:, 1::2]
            out[:, k, 0] = np.einsum("fa,fa->f", dNdx[..., 0], ux)
            out[:, k, 1] = np.einsum("fa,fa->f", dNdx[..., 1], uy)
            out[:, k, 2] = np.einsum("fa,fa->f", dNdx[..., 1], ux) + np.einsum("fa,fa->f", dNdx[..., 0], uy)
        return out

    def face_values(self, nodal, elements, ref):
        """Scalar nodal field at face points ``(nf, npts)``."""
        vals = np.asarray(nodal)[self.sdofs[elements]]
        out = np.zeros(ref.shape[:2])
        for k in range(ref.shape[1]):
            Nk = np.array([shape_eval(p)[0] for p in ref[:, k]])
            out[:, k] = np.einsum("fa,fa->f", Nk, vals)
        return out


def apply_dirichlet(A: sp.spmatrix, b, constraints: dict | tuple):
    """Symmetric elimination of prescribed dofs.

    ``constraints`` is either a ``{dof: value}`` mapping or a ``(dofs,
    values)`` pair.  Constrained rows and columns become identity rows with
    the prescribed value in the right-hand side.
    """
    dofs, values = _constraint_arrays(constraints)
    A = sp.csr_matrix(A)
    b = np.array(b, dtype=float, copy=True)
    if len(dofs) == 0:
        return A.copy(), b
    n = A.shape[0]
    if dofs.min() < 0 or dofs.max() >= n:
        raise ConstraintError("constrained dof out of range")
    x_c = np.zeros(n)
    x_c[dofs] = values
    b = b - A @ x_c
    free = np.ones(n)
    free[dofs] = 0.0
    F = sp.diags(free)
    A_mod = (F @ A @ F + sp.diags(1.0 - free)).tocsr()
    A_mod.sort_indices()
    b[dofs] = values
    return A_mod, b


def _constraint_arrays(constraints):
    if isinstance(constraints, dict):
        dofs = np.fromiter(constraints.keys(), dtype=np.int64, count=len(constraints))
        values = np.fromiter(constraints.values(), dtype=float, count=len(constraints))
        return dofs, values
    dofs = np.asarray(constraints[0], dtype=np.int64)
    values = np.broadcast_to(np.asarray(constraints[1], dtype=float), dofs.shape)
    order = np.argsort(dofs, kind="stable")
    dofs, values = dofs[order], values[order]
    dup = np.nonzero(np.diff(dofs) == 0)[0]
    if len(dup) and np.any(values[dup] != values[dup + 1]):
        raise ConstraintError(f"conflicting values for dof {dofs[dup[0]]}")
    keep = np.ones(len(dofs), dtype=bool)
    keep[dup + 1] = False
    return dofs[keep], np.array(values[keep])
