"""Structured triangulations of rectangular domains with boundary tagging.

The column geometry is a rectangle spanning x in [-width/2, width/2] and
y in [0, height]: the inlet is the bottom side, the outlet the top, and
the two remaining sides are walls.  Cells are counterclockwise vertex
triples obtained by splitting a structured quad grid along one of its
diagonals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BoundaryTag(enum.Enum):
    Inlet = "inlet"
    Outlet = "outlet"
    WallLeft = "wall_left"
    WallRight = "wall_right"


@dataclass
class Mesh:
    """Triangle mesh with tagged boundary facets.

    vertices:  (n_vertices, 2) coordinates
    cells:     (n_cells, 3) vertex indices, counterclockwise
    facet_vertices: (n_facets, 2) vertex indices of boundary edges
    facet_cells:    (n_facets,) owning cell of each boundary edge
    facet_tags:     list of BoundaryTag, one per boundary edge
    cell_diameters: (n_cells,) longest edge length per cell
    """

    vertices: np.ndarray
    cells: np.ndarray
    facet_vertices: np.ndarray
    facet_cells: np.ndarray
    facet_tags: list
    cell_diameters: np.ndarray = field(default=None)
    # grid metadata when built by generate_rect_mesh; enables O(1) point location
    grid: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int32)
        if self.cell_diameters is None:
            p = self.vertices[self.cells]  # (nc, 3, 2)
            e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
            self.cell_diameters = np.linalg.norm(e, axis=-1).max(axis=0)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def cell_areas(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def generate_rect_mesh(width, height, nx, ny, diagonal="alternating"):
    """Triangulate [-width/2, width/2] x [0, height] into 2*nx*ny cells.

    diagonal selects how each structured quad is split:
      'right'       -- along the lower-left/upper-right diagonal
      'left'        -- along the lower-right/upper-left diagonal
      'alternating' -- checkerboard of the two; with even nx the result is
                       mirror symmetric about x = 0 (an odd nx leaves the
                       middle column unpaired)
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"need nx, ny >= 1, got nx={nx}, ny={ny}")
    if width <= 0 or height <= 0:
        raise ValueError(f"need positive dimensions, got {width} x {height}")
    if diagonal not in ("right", "left", "alternating"):
        raise ValueError(f"unknown diagonal rule '{diagonal}'")

    xs = np.linspace(-width / 2.0, width / 2.0, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    xv, yv = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = np.empty((2 * nx * ny, 3), dtype=np.int32)
    k = 0
    for j in range(ny):
        for i in range(nx):
            ll, lr = vid(i, j), vid(i + 1, j)
            ul, ur = vid(i, j + 1), vid(i + 1, j + 1)
            if diagonal == "right":
                right = True
            elif diagonal == "left":
                right = False
            else:
                right = (i + j) % 2 == 0
            if right:
                cells[k] = (ll, lr, ur)
                cells[k + 1] = (ll, ur, ul)
            else:
                cells[k] = (ll, lr, ul)
                cells[k + 1] = (lr, ur, ul)
            k += 2

    fv, fc, tags = _boundary_facets(vertices, cells, width, height)
    grid = {"nx": nx, "ny": ny, "width": width, "height": height,
            "diagonal": diagonal}
    return Mesh(vertices, cells, fv, fc, tags, grid=grid)


def from_cell_arrays(vertices, cells):
    """Build a Mesh from raw vertex/cell arrays (e.g. read back from disk).

    Boundary edges are tagged against the bounding box; edges that lie on
    none of the four sides (non-rectangular outlines) fall back to Outlet.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int32)
    (x0, y0), (x1, y1) = vertices.min(axis=0), vertices.max(axis=0)
    fv, fc, tags = _boundary_facets(vertices, cells, x1 - x0, y1 - y0,
                                    x_left=x0, y_bottom=y0)
    return Mesh(vertices, cells, fv, fc, tags)


def _boundary_facets(vertices, cells, width, height, x_left=None, y_bottom=None):
    if x_left is None:
        x_left = -width / 2.0
    if y_bottom is None:
        y_0 = 0.0
    else:
        y_0 = y_bottom
    x_right = x_left + width
    y_top = y_0 + height

    # directed edges kept in cell-traversal (counterclockwise) order so the
    # outward normal of a boundary facet is its direction rotated by -90 deg
    edge_owner = {}
    for c, (a, b, d) in enumerate(cells):
        for u, v in ((a, b), (b, d), (d, a)):
            key = (min(u, v), max(u, v))
            if key in edge_owner:
                edge_owner[key] = None  # interior
            else:
                edge_owner[key] = (c, int(u), int(v))

    tol = 1e-12 * max(width, height, 1.0)
    fv, fc, tags = [], [], []
    for owner in edge_owner.values():
        if owner is None:
            continue
        c, u, v = owner
        p, q = vertices[u], vertices[v]
        if abs(p[1] - y_0) <= tol and abs(q[1] - y_0) <= tol:
            tag = BoundaryTag.Inlet
        elif abs(p[1] - y_top) <= tol and abs(q[1] - y_top) <= tol:
            tag = BoundaryTag.Outlet
        elif abs(p[0] - x_left) <= tol and abs(q[0] - x_left) <= tol:
            tag = BoundaryTag.WallLeft
        elif abs(p[0] - x_right) <= tol and abs(q[0] - x_right) <= tol:
            tag = BoundaryTag.WallRight
        else:
            tag = BoundaryTag.Outlet
        fv.append((u, v))
        fc.append(c)
        tags.append(tag)

    return (np.asarray(fv, dtype=np.int32).reshape(-1, 2),
            np.asarray(fc, dtype=np.int32), tags)


def boundary_facets(mesh, tag):
    """Indices of the boundary facets carrying the given tag."""
    return [i for i, t in enumerate(mesh.facet_tags) if t is tag]


def facet_lengths(mesh, facet_indices=None):
    fv = mesh.facet_vertices
    if facet_indices is not None:
        fv = fv[np.asarray(facet_indices, dtype=int)]
    d = mesh.vertices[fv[:, 1]] - mesh.vertices[fv[:, 0]]
    return np.linalg.norm(d, axis=1)
