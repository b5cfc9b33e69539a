"""
Structured P1 meshes on intervals and rectangles.

Nodes are numbered lexicographically (x fastest).  In 2D every square cell
is split along its lower-left to upper-right diagonal.  Dirichlet nodes are
eliminated from assembled operators; all nodal vectors keep full length and
carry zeros there.
"""
from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np
import scipy.sparse as sp

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class Mesh:
    dimension: int
    extents: tuple
    divisions: tuple
    nodes: np.ndarray          # (n_nodes, d)
    elements: np.ndarray       # (n_elements, d+1) vertex indices
    measures: np.ndarray       # (n_elements,)
    basis_grads: np.ndarray    # (n_elements, d+1, d)
    tags: np.ndarray           # (n_nodes,) INTERIOR / DIRICHLET / NEUMANN

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @cached_property
    def dirichlet(self):
        return np.flatnonzero(self.tags == DIRICHLET)

    @cached_property
    def free(self):
        """Indices of all non-Dirichlet nodes, ascending."""
        return np.flatnonzero(self.tags != DIRICHLET)

    def restrict(self, v):
        return np.asarray(v)[..., self.free]

    def extend(self, v_free):
        """Embed free-node values into a full nodal vector (zeros on Dirichlet)."""
        v_free = np.asarray(v_free)
        out = np.zeros(v_free.shape[:-1] + (self.n_nodes,))
        out[..., self.free] = v_free
        return out

    @cached_property
    def pattern(self):
        """CSR sparsity of the full operator and of its free-free block.

        Each is ``(indptr, indices, slot, keep)``: flattened local entry
        ``keep[m]`` lands in data position ``slot[m]``.
        """
        k = self.elements.shape[1]
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        full = _csr_pattern(rows, cols, self.n_nodes, np.arange(rows.size))
        index = np.full(self.n_nodes, -1)
        index[self.free] = np.arange(len(self.free))
        keep = np.flatnonzero((index[rows] >= 0) & (index[cols] >= 0))
        free = _csr_pattern(index[rows[keep]], index[cols[keep]], len(self.free), keep)
        return full, free

    def interpolate(self, fn):
        """Nodal interpolant of ``fn(x)`` with ``x`` of shape (n_nodes, d)."""
        return np.asarray(fn(self.nodes), dtype=float).reshape(self.n_nodes)


def _csr_pattern(rows, cols, n, keep):
    keys, slot = np.unique(rows * n + cols, return_inverse=True)
    indptr = np.searchsorted(keys // n, np.arange(n + 1)).astype(np.int32)
    return indptr, (keys % n).astype(np.int32), slot.ravel(), keep


def _side_mask(nodes, side, extents, atol):
    axis = {"left": 0, "right": 0, "bottom": 1, "top": 1}[side]
    target = 0.0 if side in ("left", "bottom") else extents[axis]
    return np.abs(nodes[:, axis] - target) <= atol


def build_mesh(dimension, extents, nx, ny=None, dirichlet_sides=()):
    """Uniform mesh of [0,Lx] (1D) or [0,Lx]x[0,Ly] (2D).

    Nodes on any side listed in ``dirichlet_sides`` are tagged Dirichlet
    (a corner shared with a Dirichlet side is Dirichlet); the remaining
    boundary nodes are Neumann.
    """
    if dimension not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {dimension}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    if len(extents) != dimension:
        raise ValueError(f"expected {dimension} extents, got {len(extents)}")
    if any(not e > 0 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if int(nx) != nx or nx < 1:
        raise ValueError(f"nx must be a positive integer, got {nx}")
    nx = int(nx)
    sides = SIDES_1D if dimension == 1 else SIDES_2D
    dirichlet_sides = set(dirichlet_sides)
    unknown = dirichlet_sides - set(sides)
    if unknown:
        raise ValueError(f"unknown side labels {sorted(unknown)}; expected {sides}")

    if dimension == 1:
        nodes = np.linspace(0.0, extents[0], nx + 1)[:, None]
        elements = np.column_stack([np.arange(nx), np.arange(1, nx + 1)])
        divisions = (nx,)
        boundary = np.zeros(nx + 1, dtype=bool)
        boundary[[0, nx]] = True
    else:
        if ny is None or int(ny) != ny or ny < 1:
            raise ValueError(f"ny must be a positive integer in 2D, got {ny}")
        ny = int(ny)
        xs = np.linspace(0.0, extents[0], nx + 1)
        ys = np.linspace(0.0, extents[1], ny + 1)
        X, Y = np.meshgrid(xs, ys)
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        i, j = np.meshgrid(np.arange(nx), np.arange(ny))
        n0 = (j * (nx + 1) + i).ravel()
        n1, n2, n3 = n0 + 1, n0 + nx + 2, n0 + nx + 1
        # two counter-clockwise triangles per cell, shared diagonal n0-n2
        elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
        elements[0::2] = np.column_stack([n0, n1, n2])
        elements[1::2] = np.column_stack([n0, n2, n3])
        divisions = (nx, ny)
        ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        boundary = ((ii == 0) | (ii == nx) | (jj == 0) | (jj == ny)).ravel()

    h = min(e / n for e, n in zip(extents, divisions))
    tags = np.where(boundary, NEUMANN, INTERIOR).astype(np.int8)
    for side in dirichlet_sides:
        tags[_side_mask(nodes, side, extents, 1e-9 * h)] = DIRICHLET

    measures, grads = _element_geometry(nodes, elements)
    return Mesh(dimension, extents, divisions, nodes, elements.astype(np.int64),
                measures, grads, tags)


def _element_geometry(nodes, elements):
    d = nodes.shape[1]
    verts = nodes[elements]                       # (ne, d+1, d)
    jac = np.swapaxes(verts[:, 1:] - verts[:, :1], 1, 2)   # columns are edges
    det = np.linalg.det(jac)
    ref = np.vstack([-np.ones((1, d)), np.eye(d)])          # (d+1, d)
    inv_t = np.linalg.inv(jac).transpose(0, 2, 1)
    grads = np.einsum("ekl,il->eik", inv_t, ref)
    return np.abs(det) / factorial(d), grads


# ---------------------------------------------------------------- assembly

def assemble_vector(mesh, local):
    """Sum per-element nodal contributions ``local`` (ne, d+1) into a nodal vector."""
    return np.bincount(mesh.elements.ravel(), weights=np.asarray(local).ravel(),
                       minlength=mesh.n_nodes)


def assemble_matrix(mesh, local, free_only=False):
    """Sum per-element blocks ``local`` (ne, d+1, d+1) into a CSR matrix.

    ``local[e, i, j]`` is the entry for row ``elements[e, i]`` and column
    ``elements[e, j]``.
    """
    indptr, indices, slot, keep = mesh.pattern[1 if free_only else 0]
    n = len(indptr) - 1
    data = np.bincount(slot, weights=np.asarray(local).ravel()[keep], minlength=len(indices))
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _as_coefficient(mesh, coeff):
    d = mesh.dimension
    if coeff is None:
        coeff = 1.0
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.broadcast_to(c * np.eye(d), (mesh.n_elements, d, d))
    if c.shape == (d, d):
        return np.broadcast_to(c, (mesh.n_elements, d, d))
    if c.shape == (mesh.n_elements,):
        return c[:, None, None] * np.eye(d)
    if c.shape == (mesh.n_elements, d, d):
        return c
    raise ValueError(f"coefficient shape {c.shape} incompatible with mesh")


def check_coefficient(coeff, atol=1e-12):
    c = np.asarray(coeff)
    if not np.allclose(c, np.swapaxes(c, -1, -2), atol=atol):
        raise ValueError("coefficient matrices must be symmetric")
    if np.any(np.linalg.eigvalsh(c) < -atol):
        raise ValueError("coefficient matrices must be positive (semi)definite")


def stiffness_local(mesh, coeff):
    """Element blocks ``measure * (coeff grad phi_j) . grad phi_i``."""
    G = mesh.basis_grads
    return mesh.measures[:, None, None] * np.einsum("eik,ekl,ejl->eij", G, coeff, G)


def assemble_stiffness(mesh, coeff=None, free_only=True):
    """P1 stiffness matrix of ``-div(coeff grad .)``.

    ``coeff`` may be a scalar, one d x d matrix, one scalar per element or
    one matrix per element.  With ``free_only`` the Dirichlet rows and
    columns are eliminated.
    """
    c = _as_coefficient(mesh, coeff)
    check_coefficient(c)
    return assemble_matrix(mesh, stiffness_local(mesh, c), free_only=free_only)


def mass_local(mesh):
    d = mesh.dimension
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    return mesh.measures[:, None, None] * ref


def assemble_mass(mesh):
    """Consistent P1 mass matrix over all nodes."""
    return assemble_matrix(mesh, mass_local(mesh))


def lumped_mass(mesh):
    """Row sums of the consistent mass matrix (nodal share of the measure)."""
    d = mesh.dimension
    return assemble_vector(mesh, np.repeat(mesh.measures[:, None] / (d + 1), d + 1, axis=1))


def nodal_gradient(mesh, y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != mesh.n_nodes:
        raise ValueError(f"field length {y.shape[-1]} != node count {mesh.n_nodes}")
    return np.einsum("eik,...ei->...ek", mesh.basis_grads, y[..., mesh.elements])


def element_mean(mesh, y):
    return np.asarray(y)[..., mesh.elements].mean(axis=-1)
