"""Structured quadrilateral mesh hierarchies for the channel/flag control scenario.

Meshes are graded tensor-product grids whose lines are forced through every
geometric feature (obstacle block, elastic flag, control recess, observation
window), so uniform refinement keeps all material boundaries on mesh lines.
Cells are axis-aligned rectangles; the fluid/solid interface is resolved by
cell facets.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

FLUID = 0
SOLID = 1

_ALIGN_TOL = 1e-12


class FacetTag(IntEnum):
    INFLOW = 1
    WALL = 2
    OUTFLOW = 3
    CONTROL = 4
    SOLID_DIRICHLET = 5
    INTERFACE = 6


class MeshError(ValueError):
    pass


Rect = tuple[float, float, float, float]  # (x0, x1, y0, y1)


def _in_rect(rect: Rect, x, y) -> bool:
    x0, x1, y0, y1 = rect
    return x0 < x < x1 and y0 < y < y1


@dataclass(frozen=True)
class GeometrySpec:
    """Scenario geometry.  All rectangles are (x0, x1, y0, y1) in meters.

    ``block`` is a rigid rectangular obstacle (a hole in the mesh) the flag
    clamps to; ``notch`` is a fluid recess below the channel floor whose
    bottom side carries the control traction.  If ``notch`` is None the
    control boundary is ``control_segment`` on the channel floor itself.
    """

    channel: Rect = (0.0, 1.5, 0.0, 0.41)
    flag: Rect | None = (0.25, 0.6, 0.19, 0.21)
    block: Rect | None = (0.15, 0.25, 0.15, 0.25)
    notch: Rect | None = (0.2, 0.35, -0.1, 0.0)
    control_segment: tuple[float, float] | None = None
    obs: Rect | None = (0.525, 0.6, 0.19, 0.21)
    inflow: bool = True
    extra_x: tuple[float, ...] = ()
    extra_y: tuple[float, ...] = ()

    def required_x(self) -> list[float]:
        xs = [self.channel[0], self.channel[1]]
        for rect in (self.flag, self.block, self.notch, self.obs):
            if rect is not None:
                xs += [rect[0], rect[1]]
        if self.control_segment is not None:
            xs += list(self.control_segment)
        xs += list(self.extra_x)
        return xs

    def required_y(self) -> list[float]:
        ys = [self.channel[2], self.channel[3]]
        for rect in (self.flag, self.block, self.obs):
            if rect is not None:
                ys += [rect[2], rect[3]]
        if self.notch is not None:
            ys += [self.notch[2]]
        ys += list(self.extra_y)
        return ys

    def contains_cell(self, cx: float, cy: float) -> bool:
        in_channel = _in_rect(self.channel, cx, cy)
        in_notch = self.notch is not None and _in_rect(self.notch, cx, cy)
        in_block = self.block is not None and _in_rect(self.block, cx, cy)
        return (in_channel or in_notch) and not in_block

    def cell_domain(self, cx: float, cy: float) -> int:
        if self.flag is not None and _in_rect(self.flag, cx, cy):
            return SOLID
        return FLUID


@dataclass
class Facet:
    """Axis-aligned mesh facet: vertex pair, tag and outward unit normal.

    For interface facets the normal points from the fluid into the solid.
    """

    vertices: tuple[int, int]
    tag: FacetTag
    normal: tuple[float, float]
    p0: tuple[float, float]
    p1: tuple[float, float]

    @property
    def length(self) -> float:
        return abs(self.p1[0] - self.p0[0]) + abs(self.p1[1] - self.p0[1])

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.p0[0] + self.p1[0]), 0.5 * (self.p0[1] + self.p1[1]))


@dataclass
class QuadMesh:
    """Conforming rectangle mesh with fluid/solid cell tags.

    vertices:    (n_v, 2) coordinates
    cells:       (n_c, 4) vertex ids, counterclockwise
    cell_domain: (n_c,) FLUID or SOLID
    cell_ij:     (n_c, 2) structured (ix, iy) index of each cell
    """

    x_breaks: np.ndarray
    y_breaks: np.ndarray
    vertices: np.ndarray
    cells: np.ndarray
    cell_domain: np.ndarray
    cell_ij: np.ndarray
    cell_id_grid: np.ndarray  # (ny, nx) cell id or -1
    facets: list[Facet]
    geometry: GeometrySpec

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def facets_by_tag(self, tag: FacetTag) -> list[Facet]:
        return [f for f in self.facets if f.tag == tag]

    def cell_sizes(self) -> tuple[np.ndarray, np.ndarray]:
        ix = self.cell_ij[:, 0]
        iy = self.cell_ij[:, 1]
        hx = self.x_breaks[ix + 1] - self.x_breaks[ix]
        hy = self.y_breaks[iy + 1] - self.y_breaks[iy]
        return hx, hy

    def domain_area(self, domain: int) -> float:
        hx, hy = self.cell_sizes()
        sel = self.cell_domain == domain
        return float(np.sum(hx[sel] * hy[sel]))

    def export_text(self) -> str:
        """Plain-text dump: nodes, cells and facet tags in columnar form."""
        out = io.StringIO()
        out.write("# fsicontrol mesh export v1\n")
        out.write(f"# vertices {self.n_vertices}\n")
        out.write("# id x y\n")
        for i, (x, y) in enumerate(self.vertices):
            out.write(f"{i} {x:.16g} {y:.16g}\n")
        out.write(f"# cells {self.n_cells}\n")
        out.write("# id v0 v1 v2 v3 domain\n")
        for i in range(self.n_cells):
            v = self.cells[i]
            out.write(f"{i} {v[0]} {v[1]} {v[2]} {v[3]} {int(self.cell_domain[i])}\n")
        out.write(f"# facets {len(self.facets)}\n")
        out.write("# v0 v1 tag nx ny\n")
        for f in self.facets:
            out.write(
                f"{f.vertices[0]} {f.vertices[1]} {f.tag.name} "
                f"{f.normal[0]:g} {f.normal[1]:g}\n"
            )
        return out.getvalue()


@dataclass
class MeshHierarchy:
    """Nested meshes, coarse to fine; each level is the uniform 1->4 split
    of the previous one and parent_maps[l][c] is the level-l parent of
    level-(l+1) cell c."""

    levels: list[QuadMesh]
    parent_maps: list[np.ndarray] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def finest(self) -> QuadMesh:
        return self.levels[-1]


@dataclass
class DofPartition:
    fluid_nodes: np.ndarray
    interface_nodes: np.ndarray
    solid_nodes: np.ndarray

    @property
    def n_total(self) -> int:
        return len(self.fluid_nodes) + len(self.interface_nodes) + len(self.solid_nodes)


def _grade_lines(required: list[float], target_h: float) -> np.ndarray:
    req = np.array(sorted(set(float(v) for v in required)))
    if len(req) < 2:
        raise MeshError("geometry must span a nondegenerate interval")
    pieces = [np.array([req[0]])]
    for a, b in zip(req[:-1], req[1:]):
        n = max(1, int(np.ceil((b - a) / target_h - 1e-9)))
        pieces.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(pieces)


def _check_alignment(breaks: np.ndarray, values: list[float], axis: str) -> None:
    for v in values:
        if np.min(np.abs(breaks - v)) > _ALIGN_TOL:
            raise MeshError(f"feature coordinate {axis}={v} is not on a mesh line")


def _build_from_breaks(geo: GeometrySpec, x_breaks: np.ndarray, y_breaks: np.ndarray) -> QuadMesh:
    x_breaks = np.asarray(x_breaks, dtype=float)
    y_breaks = np.asarray(y_breaks, dtype=float)
    if np.any(np.diff(x_breaks) <= 0) or np.any(np.diff(y_breaks) <= 0):
        raise MeshError("mesh lines must be strictly increasing")
    _check_alignment(x_breaks, geo.required_x(), "x")
    _check_alignment(y_breaks, geo.required_y(), "y")

    nx = len(x_breaks) - 1
    ny = len(y_breaks) - 1
    cx = 0.5 * (x_breaks[:-1] + x_breaks[1:])
    cy = 0.5 * (y_breaks[:-1] + y_breaks[1:])

    cell_id_grid = -np.ones((ny, nx), dtype=int)
    cell_ij = []
    cell_domain = []
    for iy in range(ny):
        for ix in range(nx):
            if geo.contains_cell(cx[ix], cy[iy]):
                cell_id_grid[iy, ix] = len(cell_ij)
                cell_ij.append((ix, iy))
                cell_domain.append(geo.cell_domain(cx[ix], cy[iy]))
    if not cell_ij:
        raise MeshError("geometry produced an empty mesh")
    cell_ij = np.array(cell_ij, dtype=int)
    cell_domain = np.array(cell_domain, dtype=int)

    if geo.flag is not None:
        fx0, fx1, fy0, fy1 = geo.flag
        n_flag_x = np.sum((x_breaks >= fx0 - _ALIGN_TOL) & (x_breaks <= fx1 + _ALIGN_TOL)) - 1
        n_flag_y = np.sum((y_breaks >= fy0 - _ALIGN_TOL) & (y_breaks <= fy1 + _ALIGN_TOL)) - 1
        if n_flag_x < 1 or n_flag_y < 1:
            raise MeshError(
                "flag thinner than one cell row at this resolution; "
                "refine the coarse mesh or shrink target_h"
            )
        solid_area = 0.0
        hx = np.diff(x_breaks)
        hy = np.diff(y_breaks)
        for (ix, iy), dom in zip(cell_ij, cell_domain):
            if dom == SOLID:
                solid_area += hx[ix] * hy[iy]
        if abs(solid_area - (fx1 - fx0) * (fy1 - fy0)) > 1e-10:
            raise MeshError("solid cells do not exactly cover the flag rectangle")

    # vertex lattice over existing cells
    vid_grid = -np.ones((ny + 1, nx + 1), dtype=int)
    for (ix, iy) in cell_ij:
        vid_grid[iy : iy + 2, ix : ix + 2] = 0
    n_vertices = int(np.sum(vid_grid == 0))
    vid_grid[vid_grid == 0] = np.arange(n_vertices)
    jj, ii = np.nonzero(vid_grid >= 0)
    vertices = np.zeros((n_vertices, 2))
    vertices[vid_grid[jj, ii]] = np.column_stack([x_breaks[ii], y_breaks[jj]])

    cells = np.zeros((len(cell_ij), 4), dtype=int)
    for c, (ix, iy) in enumerate(cell_ij):
        cells[c] = (
            vid_grid[iy, ix],
            vid_grid[iy, ix + 1],
            vid_grid[iy + 1, ix + 1],
            vid_grid[iy + 1, ix],
        )

    facets = _tag_facets(geo, x_breaks, y_breaks, cell_id_grid, cell_domain, cell_ij, vid_grid)

    mesh = QuadMesh(
        x_breaks=x_breaks,
        y_breaks=y_breaks,
        vertices=vertices,
        cells=cells,
        cell_domain=cell_domain,
        cell_ij=cell_ij,
        cell_id_grid=cell_id_grid,
        facets=facets,
        geometry=geo,
    )
    _validate_interface(mesh)
    return mesh


def _tag_facets(geo, x_breaks, y_breaks, cell_id_grid, cell_domain, cell_ij, vid_grid):
    ny, nx = cell_id_grid.shape

    def cell_at(ix, iy):
        if 0 <= ix < nx and 0 <= iy < ny:
            return cell_id_grid[iy, ix]
        return -1

    facets: list[Facet] = []
    ch = geo.channel

    def boundary_tag(mid, normal, domain):
        mx, my = mid
        if domain == SOLID:
            return FacetTag.SOLID_DIRICHLET
        if geo.notch is not None and abs(my - geo.notch[2]) < _ALIGN_TOL and normal[1] < 0:
            if geo.notch[0] - _ALIGN_TOL < mx < geo.notch[1] + _ALIGN_TOL:
                return FacetTag.CONTROL
        if (
            geo.control_segment is not None
            and abs(my - ch[2]) < _ALIGN_TOL
            and normal[1] < 0
            and geo.control_segment[0] - _ALIGN_TOL < mx < geo.control_segment[1] + _ALIGN_TOL
        ):
            return FacetTag.CONTROL
        if geo.inflow and abs(mx - ch[0]) < _ALIGN_TOL and normal[0] < 0:
            return FacetTag.INFLOW
        if abs(mx - ch[1]) < _ALIGN_TOL and normal[0] > 0:
            return FacetTag.OUTFLOW
        return FacetTag.WALL

    # vertical facets: between cells (ix-1, iy) and (ix, iy)
    for iy in range(ny):
        for ix in range(nx + 1):
            left = cell_at(ix - 1, iy)
            right = cell_at(ix, iy)
            if left < 0 and right < 0:
                continue
            va = vid_grid[iy, ix]
            vb = vid_grid[iy + 1, ix]
            p0 = (x_breaks[ix], y_breaks[iy])
            p1 = (x_breaks[ix], y_breaks[iy + 1])
            if left >= 0 and right >= 0:
                if cell_domain[left] != cell_domain[right]:
                    n = (1.0, 0.0) if cell_domain[left] == FLUID else (-1.0, 0.0)
                    facets.append(Facet((va, vb), FacetTag.INTERFACE, n, p0, p1))
                continue
            normal = (-1.0, 0.0) if right >= 0 else (1.0, 0.0)
            dom = cell_domain[right] if right >= 0 else cell_domain[left]
            mid = (x_breaks[ix], 0.5 * (y_breaks[iy] + y_breaks[iy + 1]))
            facets.append(Facet((va, vb), boundary_tag(mid, normal, dom), normal, p0, p1))

    # horizontal facets: between cells (ix, iy-1) and (ix, iy)
    for iy in range(ny + 1):
        for ix in range(nx):
            below = cell_at(ix, iy - 1)
            above = cell_at(ix, iy)
            if below < 0 and above < 0:
                continue
            va = vid_grid[iy, ix]
            vb = vid_grid[iy, ix + 1]
            p0 = (x_breaks[ix], y_breaks[iy])
            p1 = (x_breaks[ix + 1], y_breaks[iy])
            if below >= 0 and above >= 0:
                if cell_domain[below] != cell_domain[above]:
                    n = (0.0, 1.0) if cell_domain[below] == FLUID else (0.0, -1.0)
                    facets.append(Facet((va, vb), FacetTag.INTERFACE, n, p0, p1))
                continue
            normal = (0.0, -1.0) if above >= 0 else (0.0, 1.0)
            dom = cell_domain[above] if above >= 0 else cell_domain[below]
            mid = (0.5 * (x_breaks[ix] + x_breaks[ix + 1]), y_breaks[iy])
            facets.append(Facet((va, vb), boundary_tag(mid, normal, dom), normal, p0, p1))

    return facets


def _validate_interface(mesh: QuadMesh) -> None:
    # Interface facets must be exactly the facets shared by one fluid and one
    # solid cell; _tag_facets constructs them that way, so check count > 0
    # whenever both domains are present.
    has_solid = np.any(mesh.cell_domain == SOLID)
    has_fluid = np.any(mesh.cell_domain == FLUID)
    n_iface = len(mesh.facets_by_tag(FacetTag.INTERFACE))
    if has_solid and has_fluid and n_iface == 0:
        raise MeshError("fluid and solid subdomains present but no interface facets found")


def build_scenario_mesh(
    geo: GeometrySpec,
    target_h: float,
    n_levels: int,
    x_breaks=None,
    y_breaks=None,
) -> MeshHierarchy:
    """Build the mesh hierarchy for a scenario.

    The coarse mesh is a graded tensor grid through all feature coordinates
    with spacing ~``target_h``; explicit break arrays override the automatic
    grading.  ``n_levels`` >= 1 uniform refinements levels are produced.
    """
    if n_levels < 1:
        raise MeshError("n_levels must be >= 1")
    if x_breaks is None:
        x_breaks = _grade_lines(geo.required_x(), target_h)
    if y_breaks is None:
        y_breaks = _grade_lines(geo.required_y(), target_h)
    coarse = _build_from_breaks(geo, np.asarray(x_breaks, float), np.asarray(y_breaks, float))
    levels = [coarse]
    parent_maps = []
    for _ in range(n_levels - 1):
        fine, parents = refine(levels[-1])
        levels.append(fine)
        parent_maps.append(parents)
    return MeshHierarchy(levels=levels, parent_maps=parent_maps)


def _bisect(breaks: np.ndarray) -> np.ndarray:
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    out = np.empty(2 * len(breaks) - 1)
    out[0::2] = breaks
    out[1::2] = mid
    return out


def refine(mesh: QuadMesh) -> tuple[QuadMesh, np.ndarray]:
    """Uniform 1->4 refinement.  Returns the fine mesh and the parent map."""
    fine = _build_from_breaks(mesh.geometry, _bisect(mesh.x_breaks), _bisect(mesh.y_breaks))
    parents = np.empty(fine.n_cells, dtype=int)
    for c, (ix, iy) in enumerate(fine.cell_ij):
        pid = mesh.cell_id_grid[iy // 2, ix // 2]
        if pid < 0:
            raise MeshError("refined cell has no parent; geometry classification changed")
        parents[c] = pid
        if fine.cell_domain[c] != mesh.cell_domain[pid]:
            raise MeshError("refinement changed a cell's domain tag")
    return fine, parents


# ----------------------------------------------------------------------------
# nodal lattices (shared by dof classification and the FE dof map)


@dataclass
class NodeLattice:
    """Nodes of the degree-d tensor Lagrange space on a QuadMesh.

    ids maps lattice (row, col) -> node id or -1; node_domain is 0 fluid,
    1 interface, 2 solid.
    """

    degree: int
    xs: np.ndarray
    ys: np.ndarray
    ids: np.ndarray
    node_xy: np.ndarray
    node_domain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.node_xy.shape[0]

    def lattice_index(self, x: float, y: float) -> tuple[int, int]:
        i = int(np.argmin(np.abs(self.xs - x)))
        j = int(np.argmin(np.abs(self.ys - y)))
        if abs(self.xs[i] - x) > 1e-9 or abs(self.ys[j] - y) > 1e-9:
            raise MeshError(f"point ({x},{y}) is not a lattice node")
        return i, j


def _subdivide(breaks: np.ndarray, d: int) -> np.ndarray:
    if d == 1:
        return breaks.copy()
    segs = [np.array([breaks[0]])]
    for a, b in zip(breaks[:-1], breaks[1:]):
        segs.append(np.linspace(a, b, d + 1)[1:])
    return np.concatenate(segs)


def node_lattice(mesh: QuadMesh, degree: int) -> NodeLattice:
    if degree not in (1, 2):
        raise MeshError("element degree must be 1 or 2")
    d = degree
    xs = _subdivide(mesh.x_breaks, d)
    ys = _subdivide(mesh.y_breaks, d)
    nxl, nyl = len(xs), len(ys)
    ny, nx = mesh.cell_id_grid.shape

    exists = np.zeros((nyl, nxl), dtype=bool)
    influid = np.zeros((nyl, nxl), dtype=bool)
    insolid = np.zeros((nyl, nxl), dtype=bool)
    cellmask = mesh.cell_id_grid >= 0
    fluidmask = np.zeros_like(cellmask)
    solidmask = np.zeros_like(cellmask)
    for c, (ix, iy) in enumerate(mesh.cell_ij):
        if mesh.cell_domain[c] == FLUID:
            fluidmask[iy, ix] = True
        else:
            solidmask[iy, ix] = True
    for b in range(d + 1):
        for a in range(d + 1):
            sl = (slice(b, b + d * ny, d), slice(a, a + d * nx, d))
            exists[sl] |= cellmask
            influid[sl] |= fluidmask
            insolid[sl] |= solidmask

    ids = -np.ones((nyl, nxl), dtype=int)
    ids[exists] = np.arange(int(exists.sum()))
    jj, ii = np.nonzero(exists)
    node_xy = np.column_stack([xs[ii], ys[jj]])
    dom = np.zeros(int(exists.sum()), dtype=int)
    both = influid[jj, ii] & insolid[jj, ii]
    only_solid = insolid[jj, ii] & ~influid[jj, ii]
    dom[both] = 1
    dom[only_solid] = 2
    return NodeLattice(degree=d, xs=xs, ys=ys, ids=ids, node_xy=node_xy, node_domain=dom)


def classify_dofs(mesh: QuadMesh, degree: int = 1) -> DofPartition:
    """Split the degree-d nodes into fluid / interface / solid index sets."""
    lat = node_lattice(mesh, degree)
    return DofPartition(
        fluid_nodes=np.nonzero(lat.node_domain == 0)[0],
        interface_nodes=np.nonzero(lat.node_domain == 1)[0],
        solid_nodes=np.nonzero(lat.node_domain == 2)[0],
    )


def facet_lattice_nodes(lat: NodeLattice, facet: Facet) -> np.ndarray:
    """Node ids of all lattice nodes lying on a (single-cell) facet."""
    i0, j0 = lat.lattice_index(*facet.p0)
    i1, j1 = lat.lattice_index(*facet.p1)
    if j0 == j1:
        cols = np.arange(min(i0, i1), max(i0, i1) + 1)
        out = lat.ids[j0, cols]
    else:
        rows = np.arange(min(j0, j1), max(j0, j1) + 1)
        out = lat.ids[rows, i0]
    if np.any(out < 0):
        raise MeshError("facet crosses a non-existing lattice node")
    return out


def nodes_by_tag(lat: NodeLattice, mesh: QuadMesh) -> dict[FacetTag, np.ndarray]:
    found: dict[FacetTag, set] = {tag: set() for tag in FacetTag}
    for f in mesh.facets:
        found[f.tag].update(facet_lattice_nodes(lat, f).tolist())
    return {tag: np.array(sorted(s), dtype=int) for tag, s in found.items()}
