"""Function spaces, quadrature and assembly of the scheme's weak forms.

Discretization: Taylor-Hood pair with quadratic velocities (VectorP2),
linear pressure and linear phase fraction (ScalarP1), so that the box
constraints on the phase fraction act nodewise.  A fixed 6-point
degree-4 triangle rule integrates every bilinear form exactly; the
nonlinear closure terms (drag, interfacial pressure, convection) are
quadrature approximations on the same points.

Assembly is vectorized over cells: every matrix family has a static
sparsity pattern built once per space, and per-step assembly only
recomputes values and scatters them with bincount, which keeps the
accumulation order (and therefore the floating-point result)
deterministic.

Sub-step systems assembled here:

  tentative velocity   [M/dt + (1/2Re)(Keps - G(ln alpha))] v* = explicit
                       convection / drag / pressure / gravity loads
  pressure Poisson     < sum_q Eu_q alpha_q grad dP, grad phi >  (SPD
                       after outlet Dirichlet elimination)
  velocity update      mass solve against the pressure-increment gradient
  phase fraction       implicit advection with SUPG test functions,
                       handed to the VI solver in bounded mode
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import physics
from .errors import OutOfDomainError, SingularSystemError
from .linalg import SparseMatrix
from .mesh import BoundaryTag

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:                                        # pragma: no cover
    _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# compiled element kernels (sequential; bitwise deterministic)

if _HAVE_NUMBA:

    @_njit(cache=True)
    def _nb_qp_eval(n6, dn6, nl, ng, v_l, v_g, dv_l, dv_g, vr, vr_norm):
        nc, nq = dn6.shape[0], dn6.shape[1]
        for c in range(nc):
            for q in range(nq):
                for a in range(2):
                    accl = 0.0
                    accg = 0.0
                    for i in range(6):
                        accl += n6[q, i] * nl[c, i, a]
                        accg += n6[q, i] * ng[c, i, a]
                    v_l[c, q, a] = accl
                    v_g[c, q, a] = accg
                    vr[c, q, a] = accg - accl
                    for k in range(2):
                        dl = 0.0
                        dg = 0.0
                        for i in range(6):
                            dl += dn6[c, q, i, k] * nl[c, i, a]
                            dg += dn6[c, q, i, k] * ng[c, i, a]
                        dv_l[c, q, a, k] = dl
                        dv_g[c, q, a, k] = dg
                vr_norm[c, q] = np.sqrt(vr[c, q, 0] ** 2 + vr[c, q, 1] ** 2)

    @_njit(cache=True)
    def _nb_g_scatter(g, b0, b1, slots, out):
        nc = g.shape[0]
        for c in range(nc):
            gx = g[c, 0]
            gy = g[c, 1]
            base = c * 144
            for e in range(144):
                out[slots[base + e]] += gx * b0[c, e] + gy * b1[c, e]

    @_njit(cache=True)
    def _nb_phase_load(v_qp, dv, vr, vr_norm, kdrag, ratio_signed, gl, dvr,
                       cp_liquid, cp_gas, wn6, det, out_be):
        nc, nq = v_qp.shape[0], v_qp.shape[1]
        f = np.empty((nq, 2))
        for c in range(nc):
            for q in range(nq):
                for a in range(2):
                    conv = (dv[c, q, a, 0] * v_qp[c, q, 0]
                            + dv[c, q, a, 1] * v_qp[c, q, 1])
                    val = ratio_signed[c, q] * kdrag[c, q] * vr[c, q, a] - conv
                    if cp_liquid != 0.0:
                        val -= cp_liquid * vr_norm[c, q] ** 2 * gl[c, a]
                    if cp_gas != 0.0:
                        val += cp_gas * (vr[c, q, 0] * dvr[c, q, 0, a]
                                         + vr[c, q, 1] * dvr[c, q, 1, a])
                    f[q, a] = val
            for i in range(6):
                bx = 0.0
                by = 0.0
                for q in range(nq):
                    bx += wn6[q, i] * f[q, 0]
                    by += wn6[q, i] * f[q, 1]
                out_be[c, 2 * i] = bx * det[c]
                out_be[c, 2 * i + 1] = by * det[c]

    @_njit(cache=True)
    def _nb_alpha_elem(n3, w, det, gp1, v_qp, divv, tau, aold, dt,
                       out_elem, out_be):
        nc, nq = v_qp.shape[0], v_qp.shape[1]
        stream = np.empty(3)
        for c in range(nc):
            for i in range(9):
                out_elem[c, i] = 0.0
            for i in range(3):
                out_be[c, i] = 0.0
            for q in range(nq):
                for j in range(3):
                    stream[j] = (v_qp[c, q, 0] * gp1[c, j, 0]
                                 + v_qp[c, q, 1] * gp1[c, j, 1])
                wq = w[q] * det[c]
                for i in range(3):
                    phi = n3[q, i] + tau[c] * stream[i]
                    wphi = wq * phi
                    for j in range(3):
                        trial = (n3[q, j] / dt + stream[j]
                                 + n3[q, j] * divv[c, q])
                        out_elem[c, 3 * i + j] += wphi * trial
                    out_be[c, i] += wphi * aold[c, q] / dt


# ---------------------------------------------------------------------------
# quadrature and reference bases

class QuadratureRule:
    """Reference-triangle rule: points (nq, 2) in (xi, eta), weights sum 1/2."""

    def __init__(self, points, weights, degree):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.degree = degree

    @classmethod
    def degree4(cls):
        a = 0.445948490915965
        b = 0.091576213509771
        wa = 0.223381589678011 / 2.0
        wb = 0.109951743655322 / 2.0
        pts = [(a, a), (1.0 - 2.0 * a, a), (a, 1.0 - 2.0 * a),
               (b, b), (1.0 - 2.0 * b, b), (b, 1.0 - 2.0 * b)]
        return cls(pts, [wa, wa, wa, wb, wb, wb], degree=4)


def _p1_basis(points):
    xi, eta = points[:, 0], points[:, 1]
    n = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    dn = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return n, dn


def _p2_basis(points):
    """Six-node basis: vertices 0-2, then midpoints of edges (1,2), (0,2), (0,1)."""
    xi, eta = points[:, 0], points[:, 1]
    lam = np.stack([1.0 - xi - eta, xi, eta], axis=1)   # (nq, 3)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = points.shape[0]
    n = np.empty((nq, 6))
    dn = np.empty((nq, 6, 2))
    for v in range(3):
        n[:, v] = lam[:, v] * (2.0 * lam[:, v] - 1.0)
        dn[:, v] = (4.0 * lam[:, v] - 1.0)[:, None] * dlam[v]
    for k, (i, j) in enumerate(((1, 2), (0, 2), (0, 1))):
        n[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        dn[:, 3 + k] = 4.0 * (lam[:, j][:, None] * dlam[i]
                              + lam[:, i][:, None] * dlam[j])
    return n, dn


# ---------------------------------------------------------------------------
# mesh-level cached geometry

class _Geometry:
    def __init__(self, mesh):
        v = mesh.vertices[mesh.cells]                    # (nc, 3, 2)
        j = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
        if np.any(det <= 0):
            raise ValueError("mesh has non-counterclockwise cells")
        inv = np.empty_like(j)
        inv[:, 0, 0] = j[:, 1, 1] / det
        inv[:, 0, 1] = -j[:, 0, 1] / det
        inv[:, 1, 0] = -j[:, 1, 0] / det
        inv[:, 1, 1] = j[:, 0, 0] / det
        self.det = det
        self.inv = inv                                   # J^{-1}, (nc, 2, 2)
        self.cell_verts = v


def _geometry(mesh):
    geo = getattr(mesh, "_fem_geometry", None)
    if geo is None:
        geo = _Geometry(mesh)
        mesh._fem_geometry = geo
    return geo


def _edge_table(mesh):
    """Global edge numbering; local edge k opposes local vertex k."""
    table = getattr(mesh, "_fem_edges", None)
    if table is not None:
        return table
    index = {}
    cell_edges = np.empty((mesh.n_cells, 3), dtype=np.int64)
    for c, (a, b, d) in enumerate(mesh.cells):
        for k, (u, v) in enumerate(((b, d), (a, d), (a, b))):
            key = (min(u, v), max(u, v))
            e = index.get(key)
            if e is None:
                e = len(index)
                index[key] = e
            cell_edges[c, k] = e
    edges = np.empty((len(index), 2), dtype=np.int64)
    for (u, v), e in index.items():
        edges[e] = (u, v)
    mesh._fem_edges = (edges, cell_edges, index)
    return mesh._fem_edges


class _Pattern:
    """Static CSR pattern plus the COO-position -> CSR-slot map."""

    def __init__(self, rows, cols, n):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        key = rows * n + cols
        uniq, slots = np.unique(key, return_inverse=True)
        urows = uniq // n
        ucols = (uniq - urows * n).astype(np.int32)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, urows + 1, 1)
        np.cumsum(indptr, out=indptr)
        self.n = n
        self.nnz = uniq.size
        self.indptr = indptr
        self.indices = ucols
        self.slots = slots
        diag_keys = np.arange(n, dtype=np.int64) * (n + 1)
        hit = np.searchsorted(uniq, diag_keys)
        hit[hit >= uniq.size] = uniq.size - 1
        self.diag_slots = np.where(uniq[hit] == diag_keys, hit, -1)

    def assemble_data(self, values):
        return np.bincount(self.slots, weights=np.asarray(values).ravel(),
                           minlength=self.nnz)

    def assemble(self, values):
        return self.matrix(self.assemble_data(values))

    def matrix(self, data):
        m = SparseMatrix(self.indptr, self.indices, data, (self.n, self.n))
        m.diag_slots = self.diag_slots
        return m


# ---------------------------------------------------------------------------
# function spaces and fields

class FunctionSpace:
    """Dof map over a mesh for one of ScalarP1 / ScalarP2 / VectorP2.

    Vector dofs interleave components node-major: dof(node, comp) =
    2*node + comp, so coefficients order as (x0, y0, x1, y1, ...).
    """

    def __init__(self, kind, mesh):
        self.kind = kind
        self.mesh = mesh
        self.quad = QuadratureRule.degree4()
        nverts = mesh.n_vertices
        if kind == "ScalarP1":
            self.node_cell_dofs = mesh.cells.astype(np.int64)
            self.node_coords = mesh.vertices
        elif kind in ("ScalarP2", "VectorP2"):
            edges, cell_edges, _ = _edge_table(mesh)
            self.node_cell_dofs = np.concatenate(
                [mesh.cells.astype(np.int64), nverts + cell_edges], axis=1)
            mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.node_coords = np.concatenate([mesh.vertices, mids], axis=0)
        else:
            raise ValueError(f"unknown space kind '{kind}'")
        self.n_nodes = self.node_coords.shape[0]
        if kind == "VectorP2":
            self.dof_count = 2 * self.n_nodes
            nd = self.node_cell_dofs
            cd = np.empty((mesh.n_cells, 12), dtype=np.int64)
            cd[:, 0::2] = 2 * nd
            cd[:, 1::2] = 2 * nd + 1
            self.cell_dofs = cd
            self.dof_coords = np.repeat(self.node_coords, 2, axis=0)
        else:
            self.dof_count = self.n_nodes
            self.cell_dofs = self.node_cell_dofs
            self.dof_coords = self.node_coords
        self._cache = {}

    @classmethod
    def scalar_p1(cls, mesh):
        return cls("ScalarP1", mesh)

    @classmethod
    def scalar_p2(cls, mesh):
        return cls("ScalarP2", mesh)

    @classmethod
    def vector_p2(cls, mesh):
        return cls("VectorP2", mesh)

    def field(self, coefficients=None):
        if coefficients is None:
            coefficients = np.zeros(self.dof_count)
        return FeField(self, coefficients)

    def interpolate(self, fn):
        """Nodal interpolant of fn(x, y); fn returns a pair for vector spaces."""
        vals = np.array([fn(x, y) for x, y in self.node_coords], dtype=float)
        return FeField(self, vals.ravel())

    def boundary_nodes(self, *tags):
        """Scalar node indices lying on facets carrying any given tag."""
        key = ("bnodes",) + tags
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        mesh = self.mesh
        nodes = set()
        need_edges = self.kind != "ScalarP1"
        if need_edges:
            _, _, edge_index = _edge_table(mesh)
        for f, tag in enumerate(mesh.facet_tags):
            if tag not in tags:
                continue
            u, v = int(mesh.facet_vertices[f, 0]), int(mesh.facet_vertices[f, 1])
            nodes.add(u)
            nodes.add(v)
            if need_edges:
                nodes.add(mesh.n_vertices + edge_index[(min(u, v), max(u, v))])
        out = np.array(sorted(nodes), dtype=np.int64)
        self._cache[key] = out
        return out

    def component_dofs(self, nodes, comp):
        if self.kind != "VectorP2":
            raise ValueError("component_dofs applies to vector spaces")
        return 2 * np.asarray(nodes, dtype=np.int64) + comp

    # -- cached tables ------------------------------------------------------

    def _tables(self):
        t = self._cache.get("tables")
        if t is not None:
            return t
        geo = _geometry(self.mesh)
        qp = self.quad.points
        w = self.quad.weights
        n3, dn3 = _p1_basis(qp)
        t = {"det": geo.det, "w": w, "n3": n3,
             "grad_p1": np.einsum("ik,cka->cia", dn3, geo.inv),
             "xq": np.einsum("qi,cia->cqa", n3, geo.cell_verts)}
        if self.kind != "ScalarP1":
            n6, dn6 = _p2_basis(qp)
            t["n6"] = n6
            t["dn6"] = np.einsum("qik,cka->cqia", dn6, geo.inv)
            t["n6_centroid"] = _p2_basis(np.full((1, 2), 1.0 / 3.0))[0][0]
        self._cache["tables"] = t
        return t

    def pattern(self):
        p = self._cache.get("pattern")
        if p is None:
            cd = self.cell_dofs
            nl = cd.shape[1]
            rows = np.broadcast_to(cd[:, :, None], (cd.shape[0], nl, nl))
            cols = np.broadcast_to(cd[:, None, :], (cd.shape[0], nl, nl))
            p = _Pattern(rows, cols, self.dof_count)
            self._cache["pattern"] = p
        return p

    def _static_p1(self):
        s = self._cache.get("static")
        if s is not None:
            return s
        t = self._tables()
        w, n3, det = t["w"], t["n3"], t["det"]
        m3 = np.einsum("q,qi,qj->ij", w, n3, n3)
        s = {
            "mass_ref": m3,
            "mass_data": self.pattern().assemble_data(
                np.einsum("ij,c->cij", m3, det)),
            # grad_i . grad_j without measure; scale by the integrated
            # coefficient when assembling variable-coefficient stiffness
            "gg": np.einsum("cia,cja->cij", t["grad_p1"], t["grad_p1"]),
            "int_phi": det[:, None] * np.einsum("q,qi->i", w, n3),
        }
        self._cache["static"] = s
        return s

    def _static_vec(self):
        s = self._cache.get("static")
        if s is not None:
            return s
        t = self._tables()
        w, n6, dn6, det = t["w"], t["n6"], t["dn6"], t["det"]
        eye2 = np.eye(2)
        m6 = np.einsum("q,qi,qj->ij", w, n6, n6)
        m12 = np.einsum("ij,ab->iajb", m6, eye2).reshape(12, 12)
        k6 = np.einsum("q,cqia,cqja,c->cij", w, dn6, dn6, det)
        kd = np.einsum("q,cqia,cqjb,c->cabij", w, dn6, dn6, det)
        # Keps[(i,a),(j,b)] = dab <grad_i, grad_j> + int d_a phi_j d_b phi_i
        keps = np.einsum("cij,ab->ciajb", k6, eye2)
        keps += np.einsum("cabji->ciajb", kd)
        # T[c,a,i,j] = int phi_i d_a phi_j
        t_a = np.einsum("q,qi,cqja,c->caij", w, n6, dn6, det)
        # G is linear in the per-cell gradient g of ln(alpha'):
        # G_elem[c] = g_x B_x[c] + g_y B_y[c] with
        # B_k[(i,a),(j,b)] = dab T_k[i,j] + [b == k] T_a[i,j]
        gbasis = np.zeros((2, t_a.shape[0], 6, 2, 6, 2))
        for k in range(2):
            for a in range(2):
                gbasis[k][:, :, a, :, a] += t_a[:, k]
                gbasis[k][:, :, a, :, k] += t_a[:, a]
        pat = self.pattern()
        s = {
            "mass_ref6": m6,
            "mass_data": pat.assemble_data(np.einsum("ij,c->cij", m12, det)),
            "keps_data": pat.assemble_data(keps.reshape(-1, 144)),
            "t_a": t_a,
            "g_basis": gbasis.reshape(2, -1, 144),
            "int_phi6": det[:, None] * np.einsum("q,qi->i", w, n6),
        }
        s["mass_matrix"] = pat.matrix(s["mass_data"])
        s["keps_matrix"] = pat.matrix(s["keps_data"])
        self._cache["static"] = s
        return s

    # -- field values at quadrature points -----------------------------------

    def p1_at_qp(self, coeffs):
        t = self._tables()
        return np.einsum("qi,ci->cq", t["n3"], coeffs[self.mesh.cells])

    def p1_cell_gradient(self, coeffs):
        t = self._tables()
        return np.einsum("cia,ci->ca", t["grad_p1"], coeffs[self.mesh.cells])


@dataclass
class FeField:
    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError(
                f"coefficient length {self.coefficients.shape} does not match "
                f"space dof count {self.space.dof_count}")

    def copy(self):
        return FeField(self.space, self.coefficients.copy())

    def vertex_values(self):
        """Values at mesh vertices; (n_vertices,) or (n_vertices, 2)."""
        nv = self.space.mesh.n_vertices
        if self.space.kind == "VectorP2":
            return self.coefficients.reshape(-1, 2)[:nv]
        return self.coefficients[:nv]


# ---------------------------------------------------------------------------
# helpers shared by the assembly routines

def _vec_nodes(space, coeffs):
    """(nc, 6, 2) nodal values of a VectorP2 coefficient vector."""
    nd = space.node_cell_dofs
    out = np.empty((nd.shape[0], 6, 2))
    out[:, :, 0] = coeffs[2 * nd]
    out[:, :, 1] = coeffs[2 * nd + 1]
    return out


def _vec_at_qp(space, coeffs, nodes=None):
    t = space._tables()
    if nodes is None:
        nodes = _vec_nodes(space, coeffs)
    # (1, q, i) @ (c, i, a) -> (c, q, a)
    return np.matmul(t["n6"][None, :, :], nodes)


def _vec_grad_at_qp(space, coeffs, nodes=None):
    """dv[c,q,a,k] = d v_a / d x_k at quadrature points."""
    t = space._tables()
    if nodes is None:
        nodes = _vec_nodes(space, coeffs)
    # (c, 1, a, i) @ (c, q, i, k) -> (c, q, a, k)
    return np.matmul(nodes.transpose(0, 2, 1)[:, None, :, :], t["dn6"])


class _VelocityQP:
    """Both phases' velocities and gradients sampled once per step at the
    quadrature points; shared by the load, pressure and error assemblies."""

    def __init__(self, space, v_l, v_g):
        nl = _vec_nodes(space, v_l.coefficients)
        ng = _vec_nodes(space, v_g.coefficients)
        t = space._tables()
        if _HAVE_NUMBA:
            nc, nq = nl.shape[0], t["n6"].shape[0]
            self.v_l = np.empty((nc, nq, 2))
            self.v_g = np.empty((nc, nq, 2))
            self.dv_l = np.empty((nc, nq, 2, 2))
            self.dv_g = np.empty((nc, nq, 2, 2))
            self.vr = np.empty((nc, nq, 2))
            self.vr_norm = np.empty((nc, nq))
            _nb_qp_eval(t["n6"], t["dn6"], nl, ng, self.v_l, self.v_g,
                        self.dv_l, self.dv_g, self.vr, self.vr_norm)
        else:
            self.v_l = _vec_at_qp(space, None, nodes=nl)
            self.v_g = _vec_at_qp(space, None, nodes=ng)
            self.dv_l = _vec_grad_at_qp(space, None, nodes=nl)
            self.dv_g = _vec_grad_at_qp(space, None, nodes=ng)
            self.vr = self.v_g - self.v_l
            self.vr_norm = np.linalg.norm(self.vr, axis=2)
        self._kdrag = None

    def value(self, phase):
        return self.v_l if phase == "liquid" else self.v_g

    def grad(self, phase):
        return self.dv_l if phase == "liquid" else self.dv_g

    def kdrag(self, props, scales, groups):
        if self._kdrag is None:
            self._kdrag = physics.drag_exchange_coefficient(
                self.vr_norm, props, scales, groups)
        return self._kdrag


def _load_vector(space, f_qp):
    """b[(i,a)] = int f_a phi_i dx from qp samples f_qp of shape (nc, nq, 2)."""
    t = space._tables()
    wn6 = t["w"][:, None] * t["n6"]          # (q, i)
    be = np.matmul(wn6.T[None, :, :], f_qp) * t["det"][:, None, None]
    return np.bincount(space.cell_dofs.ravel(), weights=be.ravel(),
                       minlength=space.dof_count)


def _const_grad_load(space, vec_cell):
    """b[(i,a)] = int g_a phi_i dx for a per-cell-constant vector g."""
    s = space._static_vec()
    be = np.einsum("ci,ca->cia", s["int_phi6"], vec_cell)
    return np.bincount(space.cell_dofs.ravel(), weights=be.ravel(),
                       minlength=space.dof_count)


def mass_matrix(space):
    """Assembled mass matrix of a ScalarP1 or VectorP2 space."""
    if space.kind == "ScalarP1":
        s = space._static_p1()
    else:
        s = space._static_vec()
    return space.pattern().matrix(s["mass_data"].copy())


def strain_stiffness_matrix(space):
    """Assembled < tau(u), grad v > operator of a VectorP2 space, with
    tau(u) = grad u + (grad u)^T."""
    s = space._static_vec()
    return space.pattern().matrix(s["keps_data"].copy())


def p1_stiffness_matrix(space, coefficient=None):
    """< c grad u, grad v > on ScalarP1 with an optional per-cell-constant
    coefficient."""
    st = space._static_p1()
    det = space._tables()["det"]
    scale = 0.5 * det if coefficient is None else 0.5 * det * coefficient
    return space.pattern().assemble(st["gg"] * scale[:, None, None])


def apply_dirichlet_rows(A, b, dofs, values):
    """Row replacement: identity rows at `dofs`, b[dofs] = values."""
    dofs = np.asarray(dofs, dtype=np.int64)
    if dofs.size == 0:
        return
    A.zero_rows(dofs)
    b[dofs] = values


def supg_tau(space, v_field, guard=1e-10):
    """Per-cell streamline weight tau = h / (2 |v|) (pure-advection factor
    z = 1); zero where the centroid speed falls below `guard`."""
    vs = v_field.space
    nodes = _vec_nodes(vs, v_field.coefficients)
    vc = np.einsum("i,cia->ca", vs._tables()["n6_centroid"], nodes)
    speed = np.linalg.norm(vc, axis=1)
    h = space.mesh.cell_diameters
    tau = np.zeros_like(speed)
    ok = speed >= guard
    tau[ok] = h[ok] / (2.0 * speed[ok])
    return tau


# ---------------------------------------------------------------------------
# closures bundle

@dataclass
class ClosureInputs:
    """Per-phase inputs for the tentative-velocity assembly.

    ln_alpha_* are the thresholded log phase-fraction fields whose
    gradients stand in for grad(alpha)/alpha; dirichlet is the
    (dofs, values) pair for this phase's velocity space at t + dt.
    The cache memoizes state-level intermediates across one step (share
    one dict between the two phases' instances).
    """

    props: physics.FluidProperties
    scales: physics.Scales
    ln_alpha_l: FeField
    ln_alpha_g: FeField
    dirichlet: tuple = ((), ())
    cache: dict = field(default_factory=dict)


ALPHA_FLOOR = 1e-5  # threshold for phase fractions appearing in denominators


def _log_gradient_matrix_data(space, p1, ln_alpha):
    """CSR data of G[(i,a),(j,b)] = int phi_i [(g.grad phi_j) dab
    + g_b d_a phi_j] dx with g = grad(ln alpha') per cell."""
    s = space._static_vec()
    g_cell = p1.p1_cell_gradient(ln_alpha.coefficients)
    gb = s["g_basis"]
    pat = space.pattern()
    if _HAVE_NUMBA:
        out = np.zeros(pat.nnz)
        _nb_g_scatter(g_cell, gb[0], gb[1], pat.slots, out)
        return out
    elem = g_cell[:, 0, None] * gb[0] + g_cell[:, 1, None] * gb[1]
    return pat.assemble_data(elem)


def _explicit_phase_load(phase, state, qp, groups, closures):
    """Explicit weak loads of one phase's momentum right-hand side:
    convection, drag, interfacial pressure, pressure gradient and gravity,
    with velocities sampled in `qp` and alpha/pressure from `state`."""
    liquid = phase == "liquid"
    space = state.v_l.space
    p1 = state.alpha_g.space
    eu = groups.eu_l if liquid else groups.eu_g

    v_qp = qp.value(phase)
    kdrag = qp.kdrag(closures.props, closures.scales, groups)
    if liquid:
        alpha_g_qp = p1.p1_at_qp(state.alpha_g.coefficients)
        alpha_l_qp = p1.p1_at_qp(state.alpha_l.coefficients)
        ratio_signed = alpha_g_qp / np.maximum(alpha_l_qp, ALPHA_FLOOR)
        gl = closures.cache.get("grad_ln_alpha_l")
        if gl is None:
            gl = p1.p1_cell_gradient(closures.ln_alpha_l.coefficients)
            closures.cache["grad_ln_alpha_l"] = gl
        cp_liquid, cp_gas = groups.c_p, 0.0
    else:
        ratio_signed = np.broadcast_to(-groups.rho_ratio, kdrag.shape)
        gl = np.empty((0, 2))
        cp_liquid, cp_gas = 0.0, 2.0 * groups.c_p * groups.rho_ratio

    if _HAVE_NUMBA:
        t = space._tables()
        wn6 = t["w"][:, None] * t["n6"]
        dvr = qp.dv_g - qp.dv_l if cp_gas != 0.0 else qp.grad(phase)
        gl_k = gl if gl.size else np.zeros((v_qp.shape[0], 2))
        be = np.empty((v_qp.shape[0], 12))
        _nb_phase_load(v_qp, qp.grad(phase), qp.vr, qp.vr_norm, kdrag,
                       np.ascontiguousarray(ratio_signed), gl_k, dvr,
                       cp_liquid, cp_gas, wn6, t["det"], be)
        b = np.bincount(space.cell_dofs.ravel(), weights=be.ravel(),
                        minlength=space.dof_count)
    else:
        conv = np.matmul(qp.grad(phase), v_qp[:, :, :, None])[:, :, :, 0]
        f_qp = (ratio_signed * kdrag)[:, :, None] * qp.vr - conv
        if cp_liquid != 0.0:
            f_qp = f_qp - cp_liquid * (qp.vr_norm ** 2)[:, :, None] * gl[:, None, :]
        if cp_gas != 0.0:
            dvr = qp.dv_g - qp.dv_l
            f_qp = f_qp + cp_gas * np.matmul(
                qp.vr[:, :, None, :], dvr)[:, :, 0, :]
        b = _load_vector(space, f_qp)
    dp_load = closures.cache.get("pressure_gravity_load")
    if dp_load is None:
        dp_cell = p1.p1_cell_gradient(state.p_l.coefficients)
        dp_load = _const_grad_load(space, dp_cell)
        grav = np.zeros((space.mesh.n_cells, 2))
        grav[:, 1] = -1.0 / groups.fr ** 2
        closures.cache["pressure_gravity_load"] = dp_load
        closures.cache["gravity_load"] = _const_grad_load(space, grav)
    b -= eu * dp_load
    b += closures.cache["gravity_load"]
    return b


def velocity_dependent_load(phase, state, v_l, v_g, groups, closures,
                            g_data=None, qp=None):
    """All velocity-dependent right-hand-side terms of one phase's
    tentative system evaluated at velocities (v_l, v_g): the explicit
    loads plus the explicit half of the viscous terms."""
    liquid = phase == "liquid"
    space = v_l.space
    s = space._static_vec()
    pat = space.pattern()
    re = groups.re_l if liquid else groups.re_g
    if g_data is None:
        g_data = closures.cache.get(("g_data", phase))
    if g_data is None:
        ln_alpha = closures.ln_alpha_l if liquid else closures.ln_alpha_g
        g_data = _log_gradient_matrix_data(space, state.alpha_g.space,
                                           ln_alpha)
        closures.cache[("g_data", phase)] = g_data
    if qp is None:
        qp = _VelocityQP(space, v_l, v_g)
    vn = (v_l if liquid else v_g).coefficients
    b = _explicit_phase_load(phase, state, qp, groups, closures)
    b += 0.5 / re * (pat.matrix(g_data).matvec(vn)
                     - s["keps_matrix"].matvec(vn))
    return b


def tentative_velocity_system(phase, state, dt, groups, closures, qp=None):
    """Pieces of one phase's tentative solve: the Dirichlet-constrained
    matrix A, the mass history term M v(n)/dt, the level-n
    velocity-dependent load, and the G-matrix data.  b = history + load
    with constrained rows overwritten; the error estimator re-solves A
    against an averaged load, so the pieces are exposed separately."""
    if phase not in ("liquid", "gas"):
        raise ValueError(f"unknown phase '{phase}'")
    liquid = phase == "liquid"
    space = state.v_l.space
    if state.v_g.space is not space:
        raise ValueError("phase velocity fields must share one space")
    p1 = state.alpha_g.space
    s = space._static_vec()
    pat = space.pattern()
    re = groups.re_l if liquid else groups.re_g
    ln_alpha = closures.ln_alpha_l if liquid else closures.ln_alpha_g
    vn = (state.v_l if liquid else state.v_g).coefficients

    g_data = closures.cache.get(("g_data", phase))
    if g_data is None:
        g_data = _log_gradient_matrix_data(space, p1, ln_alpha)
        closures.cache[("g_data", phase)] = g_data
    A = pat.matrix(s["mass_data"] / dt + 0.5 / re * (s["keps_data"] - g_data))
    A.zero_rows(closures.dirichlet[0])
    history = s["mass_matrix"].matvec(vn) / dt
    load = velocity_dependent_load(phase, state, state.v_l, state.v_g,
                                   groups, closures, g_data=g_data, qp=qp)
    return A, history, load, g_data


def assemble_tentative_velocity(phase, state, dt, groups, closures):
    """System A v* = b for one phase's tentative velocity.

    The half-implicit viscous terms (including the grad(ln alpha) . tau
    coupling) sit in A; everything else is an explicit load at level n.
    """
    A, history, load, _ = tentative_velocity_system(phase, state, dt, groups,
                                                    closures)
    b = history + load
    dofs, values = closures.dirichlet
    if len(dofs):
        b[np.asarray(dofs, dtype=np.int64)] = values
    return A, b


def assemble_pressure_poisson(state, v_star_l, v_star_g, dt, groups, qp=None):
    """SPD system for the pressure increment dP = P(n+1) - P(n):

        < sum_q Eu_q alpha_q grad dP, grad phi > =
            - < div sum_q alpha_q v*_q, phi > / dt

    Zero-increment Neumann on inlet and walls is natural; the outlet holds
    dP = 0 and is eliminated symmetrically.
    """
    p1 = state.p_l.space
    space = v_star_l.space
    t = p1._tables()
    st = p1._static_p1()
    w = t["w"]
    if qp is None:
        qp = _VelocityQP(space, v_star_l, v_star_g)

    alpha_l_qp = p1.p1_at_qp(state.alpha_l.coefficients)
    alpha_g_qp = p1.p1_at_qp(state.alpha_g.coefficients)
    coef_qp = groups.eu_l * alpha_l_qp + groups.eu_g * alpha_g_qp
    cell_coef = t["det"] * (coef_qp @ w)
    A = p1.pattern().assemble(st["gg"] * cell_coef[:, None, None])

    div = np.zeros((p1.mesh.n_cells, w.size))
    for alpha, v_qp, dvq in ((state.alpha_l, qp.v_l, qp.dv_l),
                             (state.alpha_g, qp.v_g, qp.dv_g)):
        ga = p1.p1_cell_gradient(alpha.coefficients)
        a_qp = p1.p1_at_qp(alpha.coefficients)
        div += np.matmul(v_qp, ga[:, :, None])[:, :, 0]
        div += a_qp * (dvq[:, :, 0, 0] + dvq[:, :, 1, 1])
    wn3 = w[:, None] * t["n3"]               # (q, i)
    be = -np.matmul(wn3.T[None, :, :], div[:, :, None])[:, :, 0] \
        * t["det"][:, None] / dt
    b = np.bincount(p1.cell_dofs.ravel(), weights=be.ravel(),
                    minlength=p1.dof_count)

    outlet = p1.boundary_nodes(BoundaryTag.Outlet)
    if outlet.size == 0:
        raise SingularSystemError(
            "pressure system has no Dirichlet boundary (all-Neumann)")
    A.zero_columns(outlet, b, np.zeros(outlet.size))
    A.zero_rows(outlet)
    b[outlet] = 0.0
    return A, b


def assemble_velocity_update(phase, v_star, delta_p, dt, groups, dirichlet=((), ())):
    """Mass system M v(n+1) = M v* - dt Eu_q < grad dP, phi >."""
    if phase not in ("liquid", "gas"):
        raise ValueError(f"unknown phase '{phase}'")
    space = v_star.space
    s = space._static_vec()
    eu = groups.eu_l if phase == "liquid" else groups.eu_g
    dp_cell = delta_p.space.p1_cell_gradient(delta_p.coefficients)
    b = s["mass_matrix"].matvec(v_star.coefficients)
    b -= dt * eu * _const_grad_load(space, dp_cell)
    M = space.pattern().matrix(s["mass_data"].copy())
    apply_dirichlet_rows(M, b, dirichlet[0], dirichlet[1])
    return M, b


def assemble_alpha_system(alpha_old, v_g_new, dt, dirichlet=None, supg=True,
                          with_raw=False):
    """Implicit advection of the gas fraction with SUPG test functions:

        < (a(n+1) - a(n))/dt, phi' > + < div(a(n+1) v), phi' > = 0,
        phi' = phi + tau v . grad phi.

    Returns (A, b); with_raw additionally returns the pre-Dirichlet CSR
    data and right-hand side used for conservation accounting.
    """
    p1 = alpha_old.space
    space = v_g_new.space
    t = p1._tables()
    w, n3, det, gp1 = t["w"], t["n3"], t["det"], t["grad_p1"]

    nodes = _vec_nodes(space, v_g_new.coefficients)
    v_qp = _vec_at_qp(space, None, nodes=nodes)
    dvq = _vec_grad_at_qp(space, None, nodes=nodes)
    divv = dvq[:, :, 0, 0] + dvq[:, :, 1, 1]
    tau = supg_tau(p1, v_g_new) if supg else np.zeros(det.size)
    aold_qp = p1.p1_at_qp(alpha_old.coefficients)
    pat = p1.pattern()

    if _HAVE_NUMBA:
        elem = np.empty((det.size, 9))
        be = np.empty((det.size, 3))
        _nb_alpha_elem(n3, w, det, gp1, np.ascontiguousarray(v_qp), divv,
                       tau, aold_qp, dt, elem, be)
    else:
        # streamline derivatives v . grad psi_i: (c,q,a) @ (c,a,i) -> (c,q,i)
        stream = np.matmul(v_qp, gp1.transpose(0, 2, 1))
        phi = np.broadcast_to(n3[None, :, :], (det.size, w.size, 3))
        phi = phi + tau[:, None, None] * stream
        trial = (n3[None, :, :] / dt + stream
                 + n3[None, :, :] * divv[:, :, None])
        wphi = w[None, :, None] * phi
        elem = np.matmul(wphi.transpose(0, 2, 1), trial) * det[:, None, None]
        be = np.matmul(wphi.transpose(0, 2, 1),
                       aold_qp[:, :, None])[:, :, 0] * det[:, None] / dt
    raw_data = pat.assemble_data(elem)
    A = pat.matrix(raw_data.copy())
    b = np.bincount(p1.cell_dofs.ravel(), weights=be.ravel(),
                    minlength=p1.dof_count)
    raw_b = b.copy()

    if dirichlet is not None:
        apply_dirichlet_rows(A, b, dirichlet[0], dirichlet[1])
    if with_raw:
        return A, b, raw_data, raw_b
    return A, b


# ---------------------------------------------------------------------------
# point evaluation

def _locate(mesh, points, tol=1e-10):
    """Containing cell and barycentric coordinates for each point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    geo = _geometry(mesh)
    lo, hi = mesh.bounds()
    pad = tol * max(hi[0] - lo[0], hi[1] - lo[1])
    outside = ((points[:, 0] < lo[0] - pad) | (points[:, 0] > hi[0] + pad)
               | (points[:, 1] < lo[1] - pad) | (points[:, 1] > hi[1] + pad))
    if np.any(outside):
        bad = points[np.argmax(outside)]
        raise OutOfDomainError(f"point {tuple(bad)} is outside the domain")

    def bary(cells_idx, pts):
        # (xi, eta) = J^{-1} (p - v0)
        v0 = mesh.vertices[mesh.cells[cells_idx, 0]]
        d = pts - v0
        xi = (geo.inv[cells_idx, 0, 0] * d[:, 0]
              + geo.inv[cells_idx, 0, 1] * d[:, 1])
        eta = (geo.inv[cells_idx, 1, 0] * d[:, 0]
               + geo.inv[cells_idx, 1, 1] * d[:, 1])
        return np.stack([1.0 - xi - eta, xi, eta], axis=1)

    if mesh.grid is not None:
        g = mesh.grid
        nx, ny = g["nx"], g["ny"]
        dx = g["width"] / nx
        dy = g["height"] / ny
        i = np.clip(((points[:, 0] - lo[0]) / dx).astype(int), 0, nx - 1)
        j = np.clip(((points[:, 1] - lo[1]) / dy).astype(int), 0, ny - 1)
        base = 2 * (j * nx + i)
        lam0 = bary(base, points)
        lam1 = bary(base + 1, points)
        use1 = lam1.min(axis=1) > lam0.min(axis=1)
        cells_idx = np.where(use1, base + 1, base)
        lam = np.where(use1[:, None], lam1, lam0)
        if np.any(lam.min(axis=1) < -1e-8):
            raise OutOfDomainError("point location failed on the grid mesh")
        return cells_idx, np.clip(lam, 0.0, None)

    # generic fallback: test all cells, in blocks to bound memory
    n = points.shape[0]
    cells_idx = np.full(n, -1, dtype=np.int64)
    lam_out = np.zeros((n, 3))
    v0 = mesh.vertices[mesh.cells[:, 0]]
    for start in range(0, n, 256):
        pts = points[start:start + 256]
        d = pts[:, None, :] - v0[None, :, :]
        xi = geo.inv[None, :, 0, 0] * d[:, :, 0] + geo.inv[None, :, 0, 1] * d[:, :, 1]
        eta = geo.inv[None, :, 1, 0] * d[:, :, 0] + geo.inv[None, :, 1, 1] * d[:, :, 1]
        lam = np.stack([1.0 - xi - eta, xi, eta], axis=2)
        ok = lam.min(axis=2) >= -1e-10
        first = np.argmax(ok, axis=1)
        found = ok[np.arange(pts.shape[0]), first]
        if not np.all(found):
            bad = pts[np.argmin(found)]
            raise OutOfDomainError(f"point {tuple(bad)} is outside every cell")
        cells_idx[start:start + 256] = first
        lam_out[start:start + 256] = np.clip(
            lam[np.arange(pts.shape[0]), first], 0.0, None)
    return cells_idx, lam_out


def evaluate_many(field, points):
    """Evaluate a field at an (n, 2) array of points; (n,) or (n, 2) values."""
    space = field.space
    cells_idx, lam = _locate(space.mesh, points)
    if space.kind == "ScalarP1":
        vals = field.coefficients[space.mesh.cells[cells_idx]]
        return np.einsum("pi,pi->p", lam, vals)
    n6 = _p2_basis(lam[:, 1:])[0]
    nd = space.node_cell_dofs[cells_idx]
    if space.kind == "ScalarP2":
        return np.einsum("pi,pi->p", n6, field.coefficients[nd])
    out = np.empty((cells_idx.size, 2))
    out[:, 0] = np.einsum("pi,pi->p", n6, field.coefficients[2 * nd])
    out[:, 1] = np.einsum("pi,pi->p", n6, field.coefficients[2 * nd + 1])
    return out


def evaluate(field, point):
    """Nodal-basis interpolation at one point (exact for the space degree)."""
    return evaluate_many(field, np.asarray(point, dtype=float).reshape(1, 2))[0]


# ---------------------------------------------------------------------------
# boundary flux of alpha * (v . n): 2-point Gauss per facet, exact to degree 3

_GAUSS2 = (0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0)))


def _facet_quadrature(space, tags):
    """Cached per-facet data for boundary flux integrals over `tags`:
    vertex/midpoint node indices, weighted normals, and lengths."""
    key = ("facetquad",) + tags
    cached = space._cache.get(key)
    if cached is not None:
        return cached
    mesh = space.mesh
    _, _, edge_index = _edge_table(mesh)
    nverts = mesh.n_vertices
    rows = [f for f, tag in enumerate(mesh.facet_tags) if tag in tags]
    u = mesh.facet_vertices[rows, 0].astype(np.int64)
    v = mesh.facet_vertices[rows, 1].astype(np.int64)
    mid = np.array([nverts + edge_index[(min(a, b), max(a, b))]
                    for a, b in zip(u, v)], dtype=np.int64)
    tvec = mesh.vertices[v] - mesh.vertices[u]
    length = np.hypot(tvec[:, 0], tvec[:, 1])
    # counterclockwise traversal: outward normal is the -90 degree rotation
    nrm = np.column_stack([tvec[:, 1], -tvec[:, 0]]) / length[:, None]
    cached = (u, v, mid, nrm, length)
    space._cache[key] = cached
    return cached


def boundary_alpha_flux(alpha, v_field, *tags):
    """Outward flux integral of (alpha v . n) over the tagged boundary
    parts, by 2-point Gauss quadrature per facet (exact to cubics)."""
    space = v_field.space
    u, v, mid, nrm, length = _facet_quadrature(space, tags)
    if u.size == 0:
        return 0.0
    coeffs = v_field.coefficients
    au, av = alpha.coefficients[u], alpha.coefficients[v]
    vu = np.column_stack([coeffs[2 * u], coeffs[2 * u + 1]])
    vv = np.column_stack([coeffs[2 * v], coeffs[2 * v + 1]])
    vm = np.column_stack([coeffs[2 * mid], coeffs[2 * mid + 1]])
    total = 0.0
    for sq in _GAUSS2:
        a = (1.0 - sq) * au + sq * av
        n0 = 2.0 * sq * sq - 3.0 * sq + 1.0
        n1 = 2.0 * sq * sq - sq
        nm = 4.0 * sq * (1.0 - sq)
        vel = n0 * vu + n1 * vv + nm * vm
        total += 0.5 * float(np.sum(length * a * np.sum(vel * nrm, axis=1)))
    return total
