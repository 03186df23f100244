"""Tetrahedral finite-element mesh of the cubic fundamental region in Rodrigues space.

The region is approximated by the cube of half-width ``tan(pi/8)``.  Each grid
cell is split into six tetrahedra (Kuhn decomposition) and integrated with the
4-point degree-2 rule.  Boundary nodes related by a cubic symmetry rotation are
identified: ODF values live only on the *independent* nodes, and every
*dependent* node takes the value of its representative.
"""
import functools
import hashlib
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOdfError, InvalidArgumentError
from .orientation import CUBIC_HALF_WIDTH, cubic_symmetry_quaternions, metric_factor

SYMMETRY_TAG = "FCC-cubic"
SYMMETRY_TOL = 1e-9

# 4-point rule on the reference tetrahedron (volume 1/6), exact for quadratics
_QA = 0.5854101966249685
_QB = 0.1381966011250105
# BARY[m, i]: value of the linear shape function of local vertex i at point m
QUAD_BARYCENTRIC = np.full((4, 4), _QB) + np.eye(4) * (_QA - _QB)
QUAD_WEIGHTS = np.full(4, 1.0 / 24.0)


@dataclass(frozen=True, eq=False)
class FundamentalMesh:
    subdivision: int
    nodes: np.ndarray  # (N, 3) Rodrigues coordinates
    elements: np.ndarray  # (E, 4) node indices, positively oriented
    independent_ids: np.ndarray  # (n,) sorted node indices
    dependent_map: dict  # dependent node -> independent representative
    quad_points: np.ndarray  # (E, 4, 3)
    quad_weights: np.ndarray  # (4,) reference weights w_m
    jacobians: np.ndarray  # (E,) |J_n|
    node_weights: np.ndarray  # (n,) q
    symmetry_tag: str = SYMMETRY_TAG

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_independent(self):
        return len(self.independent_ids)

    @functools.cached_property
    def node_to_column(self):
        """For every mesh node, the position of its representative in the ODF vector."""
        column = {int(n): k for k, n in enumerate(self.independent_ids)}
        out = np.empty(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            out[node] = column[int(self.dependent_map.get(node, node))]
        return out

    @functools.cached_property
    def quad_volume(self):
        """``w_m |J_n| / (1 + r_m.r_m)^2`` for every element and quadrature point."""
        return self.quad_weights[None, :] * self.jacobians[:, None] * metric_factor(self.quad_points)

    @functools.cached_property
    def independent_nodes(self):
        return self.nodes[self.independent_ids]

    @functools.cached_property
    def shape_gradients(self):
        """Gradients of the four linear shape functions per element, shape (E, 4, 3)."""
        x = self.nodes[self.elements]
        jac = np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)  # columns are edge vectors
        inv = np.linalg.inv(jac)  # rows: gradients of barycentric coords 1..3
        return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)

    @functools.cached_property
    def gradient_operator(self):
        """Dense ``(3, N, N)`` operator: nodal field -> volume-averaged nodal gradient."""
        n = self.n_nodes
        vol = self.jacobians / 6.0
        op = np.zeros((3, n, n))
        total = np.zeros(n)
        for e, verts in enumerate(self.elements):
            grads = self.shape_gradients[e]  # (4, 3)
            for i in verts:
                op[:, i, verts] += vol[e] * grads.T
                total[i] += vol[e]
        return op / total[None, :, None]

    def expand(self, a):
        """ODF values on every mesh node (dependent nodes copy their representative)."""
        return np.asarray(a)[..., self.node_to_column]

    def interpolate_to_quadrature(self, a):
        """Linear interpolation of an independent-node ODF to the quadrature points, (E, 4)."""
        full = self.expand(a)
        return full[..., self.elements] @ QUAD_BARYCENTRIC.T

    def uniform_odf(self):
        return np.full(self.n_independent, 1.0 / self.node_weights.sum())

    def to_dict(self):
        return {
            "subdivision": int(self.subdivision),
            "symmetry_tag": self.symmetry_tag,
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "independent_ids": [int(i) for i in self.independent_ids],
            "dependent_map": {str(k): int(v) for k, v in sorted(self.dependent_map.items())},
            "node_weights": self.node_weights.tolist(),
        }

    @functools.cached_property
    def content_hash(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _grid_nodes(subdivision):
    h = CUBIC_HALF_WIDTH
    ticks = np.linspace(-h, h, subdivision + 1)
    return np.array(list(itertools.product(ticks, ticks, ticks)))


def _kuhn_elements(subdivision):
    m = subdivision + 1

    def index(i, j, k):
        return (i * m + j) * m + k

    elements = []
    for i, j, k in itertools.product(range(subdivision), repeat=3):
        for perm in itertools.permutations(range(3)):
            corner = [i, j, k]
            verts = [index(*corner)]
            for axis in perm:
                corner[axis] += 1
                verts.append(index(*corner))
            elements.append(verts)
    return np.array(elements, dtype=int)


def _orient_positive(nodes, elements):
    x = nodes[elements]
    det = np.linalg.det(np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2))
    flip = det < 0
    elements = elements.copy()
    elements[flip, 1], elements[flip, 2] = elements[flip, 2], elements[flip, 1].copy()
    return elements, np.abs(det)


def _symmetry_classes(nodes, subdivision):
    """Union boundary nodes related by right-composition with a cubic rotation."""
    h = CUBIC_HALF_WIDTH
    spacing = 2.0 * h / subdivision
    m = subdivision + 1
    on_boundary = np.any(np.abs(np.abs(nodes) - h) < 1e-12, axis=1)
    parent = list(range(len(nodes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    sym = cubic_symmetry_quaternions()[1:]  # skip identity
    for node in np.flatnonzero(on_boundary):
        r = nodes[node]
        q0, qv = 1.0, r  # unnormalized quaternion of r
        for s in sym:
            w = q0 * s[0] - qv @ s[1:]
            if abs(w) < 1e-12:
                continue  # half-turn: image at infinity
            v = q0 * s[1:] + s[0] * qv + np.cross(qv, s[1:])
            image = v / w
            grid = (image + h) / spacing
            idx = np.rint(grid)
            if np.any(idx < 0) or np.any(idx > subdivision):
                continue
            target = int((idx[0] * m + idx[1]) * m + idx[2])
            if not on_boundary[target] or target == node:
                continue
            if np.max(np.abs(nodes[target] - image)) > SYMMETRY_TOL:
                continue
            a, b = find(node), find(target)
            if a != b:
                parent[max(a, b)] = min(a, b)
    return {i: find(i) for i in range(len(nodes)) if find(i) != i}


def _assemble(subdivision, nodes, elements, dependent_map):
    elements, jac = _orient_positive(nodes, elements)
    if np.any(jac <= 0):
        raise InvalidArgumentError("degenerate element in mesh")
    quad_points = QUAD_BARYCENTRIC @ nodes[elements]  # (E, 4, 3)
    independent = np.array(sorted(set(range(len(nodes))) - set(dependent_map)), dtype=int)
    mesh = FundamentalMesh(
        subdivision=subdivision,
        nodes=nodes,
        elements=elements,
        independent_ids=independent,
        dependent_map=dict(dependent_map),
        quad_points=quad_points,
        quad_weights=QUAD_WEIGHTS.copy(),
        jacobians=jac,
        node_weights=np.empty(0),
    )
    object.__setattr__(mesh, "node_weights", node_weights(mesh))
    return mesh


def build_mesh(subdivision):
    """Structured Kuhn mesh of the fundamental cube with ``subdivision**3`` cells."""
    if isinstance(subdivision, bool) or int(subdivision) != subdivision or subdivision < 1:
        raise InvalidArgumentError(f"subdivision must be a positive integer, got {subdivision!r}")
    subdivision = int(subdivision)
    nodes = _grid_nodes(subdivision)
    elements = _kuhn_elements(subdivision)
    return _assemble(subdivision, nodes, elements, _symmetry_classes(nodes, subdivision))


def node_weights(mesh):
    """Integration weight of every independent node.

    Quadrature of each node's linear shape function against the Rodrigues metric,
    with dependent-node contributions folded onto their representatives.
    """
    contrib = mesh.quad_volume @ QUAD_BARYCENTRIC  # (E, 4): per local vertex
    full = np.zeros(mesh.n_nodes)
    np.add.at(full, mesh.elements, contrib)
    q = np.zeros(mesh.n_independent)
    np.add.at(q, mesh.node_to_column, full)
    return q


def normalize_odf(mesh, a):
    """Scale a nonnegative ODF so that ``q . a == 1``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (mesh.n_independent,):
        raise InvalidArgumentError(f"ODF must have {mesh.n_independent} entries, got {a.shape}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise DegenerateOdfError("ODF has negative or non-finite entries; clip before normalizing")
    mass = float(mesh.node_weights @ a)
    if mass <= 0:
        raise DegenerateOdfError(f"ODF has no positive volume (q.a = {mass!r})")
    return a / mass


def assemble_property_matrix(mesh, c0):
    """Property matrix ``P`` (independent nodes x 21) with ``pack(<C>) = P.T @ a``."""
    from .homogenization import pack, stiffness_at_quadrature

    c_quad = pack(stiffness_at_quadrature(mesh, c0))  # (E, 4, 21)
    # per element, per local vertex: sum_m N_i(r_m) vol_m C(r_m)
    local = np.einsum("mi,em,emk->eik", QUAD_BARYCENTRIC, mesh.quad_volume, c_quad)
    full = np.zeros((mesh.n_nodes, c_quad.shape[-1]))
    np.add.at(full, mesh.elements, local)
    p = np.zeros((mesh.n_independent, c_quad.shape[-1]))
    np.add.at(p, mesh.node_to_column, full)
    return p


def mesh_from_dict(data):
    """Rebuild a mesh from its JSON form, recomputing quadrature data."""
    if data.get("symmetry_tag", SYMMETRY_TAG) != SYMMETRY_TAG:
        raise InvalidArgumentError(f"unsupported symmetry tag {data.get('symmetry_tag')!r}")
    nodes = np.asarray(data["nodes"], dtype=float)
    elements = np.asarray(data["elements"], dtype=int)
    dep = {int(k): int(v) for k, v in data["dependent_map"].items()}
    mesh = _assemble(int(data["subdivision"]), nodes, elements, dep)
    if list(mesh.independent_ids) != [int(i) for i in data["independent_ids"]]:
        raise InvalidArgumentError("independent_ids inconsistent with dependent_map")
    stored = np.asarray(data["node_weights"], dtype=float)
    if stored.shape != mesh.node_weights.shape or not np.allclose(stored, mesh.node_weights, rtol=1e-12, atol=0):
        raise InvalidArgumentError("stored node_weights do not match the mesh geometry")
    object.__setattr__(mesh, "node_weights", stored)
    return mesh
