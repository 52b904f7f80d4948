"""
Tensor-product cell-centered meshes, cell fields and discrete calculus.

Cells are numbered x-fastest: cell (i, j) has index i + n_x * j. Interval
meshes are treated as a single row (n_y = 1) with no y-faces.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from util import profile
from util.errors import ConfigError, DomainError

MESH_KINDS = ("interval", "rectangle")
SIDES = ("left", "right", "bottom", "top")

# Dense eigensolves below this cell count, shift-invert Lanczos above.
_DENSE_EIG_LIMIT = 600


@dataclass(frozen=True)
class BoundaryFace:
    cell: int
    """
    Index of the adjacent cell
    """
    axis: int
    """
    Axis of the outward normal (0 = x, 1 = y)
    """
    sign: int
    """
    Sign of the outward normal along its axis
    """
    side: str
    """
    One of left, right, bottom, top
    """
    measure: float
    """
    Face measure (1 for interval endpoints)
    """
    spacing: float
    """
    Cell spacing normal to the face
    """


class Mesh:
    """
    Uniform tensor-product mesh of an interval or an axis-aligned rectangle.
    Immutable after construction; all lookup arrays are read-only.
    """

    def __init__(self, kind: str, lengths: Sequence[float], cells: Sequence[int]):
        self.kind = kind
        self.lengths = tuple(float(length) for length in lengths)
        self.shape = tuple(int(n) for n in cells)
        self.spacing = tuple(L / n for L, n in zip(self.lengths, self.shape))
        self.ndim = len(self.shape)

        nx = self.shape[0]
        ny = self.shape[1] if self.ndim == 2 else 1
        hx = self.spacing[0]
        hy = self.spacing[1] if self.ndim == 2 else None
        self.grid_shape = (ny, nx)
        self.ncells = nx * ny
        self.cell_volume = hx * (hy if hy is not None else 1.0)
        self.volume = math.prod(self.lengths)

        # Interior faces: x-faces first, then y-faces.
        idx = np.arange(self.ncells).reshape(ny, nx)
        x_measure = hy if hy is not None else 1.0
        left = [idx[:, :-1].ravel()]
        right = [idx[:, 1:].ravel()]
        spacing = [np.full(left[0].size, hx)]
        measure = [np.full(left[0].size, x_measure)]
        axis = [np.zeros(left[0].size, dtype=int)]
        if self.ndim == 2:
            left.append(idx[:-1, :].ravel())
            right.append(idx[1:, :].ravel())
            spacing.append(np.full(left[1].size, hy))
            measure.append(np.full(left[1].size, hx))
            axis.append(np.ones(left[1].size, dtype=int))
        self.interior_left = _frozen(np.concatenate(left))
        self.interior_right = _frozen(np.concatenate(right))
        self.interior_spacing = _frozen(np.concatenate(spacing))
        self.interior_measure = _frozen(np.concatenate(measure))
        self.interior_axis = _frozen(np.concatenate(axis))

        # Boundary faces, grouped by side.
        faces = []
        for i in idx[:, 0]:
            faces.append(BoundaryFace(int(i), 0, -1, "left", x_measure, hx))
        for i in idx[:, -1]:
            faces.append(BoundaryFace(int(i), 0, 1, "right", x_measure, hx))
        if self.ndim == 2:
            for i in idx[0, :]:
                faces.append(BoundaryFace(int(i), 1, -1, "bottom", hx, hy))
            for i in idx[-1, :]:
                faces.append(BoundaryFace(int(i), 1, 1, "top", hx, hy))
        self.faces = tuple(faces)
        self.face_cell = _frozen(np.array([f.cell for f in faces], dtype=int))
        self.face_measure = _frozen(np.array([f.measure for f in faces]))
        self.face_spacing = _frozen(np.array([f.spacing for f in faces]))
        self.face_side = tuple(f.side for f in faces)
        self.boundary_measure = float(np.sum(self.face_measure))

    def __repr__(self) -> str:
        cells = "x".join(str(n) for n in self.shape)
        lengths = "x".join(f"{L:g}" for L in self.lengths)
        return f"Mesh({self.kind}, {lengths}, {cells} cells)"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return (self.kind, self.lengths, self.shape) == (other.kind, other.lengths, other.shape)

    def __hash__(self) -> int:
        return hash((self.kind, self.lengths, self.shape))

    @property
    def sides(self) -> tuple[str, ...]:
        """
        The boundary sides present on this mesh.
        """
        return SIDES[: 2 * self.ndim]

    @property
    def nfaces(self) -> int:
        return len(self.faces)

    @property
    def ninterior(self) -> int:
        return self.interior_left.size


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CellField:
    mesh: Mesh
    """
    The mesh the values live on
    """
    values: np.ndarray
    """
    One value per cell, x-fastest ordering
    """

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.mesh.ncells:
            raise ValueError(
                f"CellField has {values.size} values for {self.mesh.ncells} cells"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("CellField values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "CellField":
        return cls(mesh, np.full(mesh.ncells, float(value)))

    def min(self) -> float:
        return float(np.min(self.values))

    def max(self) -> float:
        return float(np.max(self.values))

    def as_grid(self) -> np.ndarray:
        """
        Values reshaped to (n_y, n_x).
        """
        return self.values.reshape(self.mesh.grid_shape)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    mesh: Mesh
    """
    The mesh whose boundary faces g refers to
    """
    gamma: float
    """
    Saturation concentration
    """
    g: np.ndarray
    """
    Transfer coefficient per boundary face
    """

    def __post_init__(self):
        g = np.array(self.g, dtype=float).ravel()
        if g.size != self.mesh.nfaces:
            raise ValueError(f"g has {g.size} values for {self.mesh.nfaces} faces")
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise DomainError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise DomainError("every transfer coefficient g must be finite and >= 0")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def gnorm(self) -> float:
        """
        max g over the boundary, the L-infinity norm of g.
        """
        return float(np.max(self.g))

    @property
    def gmin(self) -> float:
        return float(np.min(self.g))

    def with_gamma(self, gamma: float) -> "BoundaryData":
        return BoundaryData(self.mesh, gamma, self.g)


def boundary_data(
    mesh: Mesh, gamma: float, g: float, g_sides: dict[str, float] | None = None
) -> BoundaryData:
    """
    Build per-face boundary data from a constant g and optional per-side
    overrides.

    Args:
        mesh: The mesh.
        gamma: The saturation concentration.
        g: Transfer coefficient on every side without an override.
        g_sides: Side label -> transfer coefficient.
    """
    g_sides = g_sides or {}
    for side in g_sides:
        if side not in mesh.sides:
            raise ConfigError(f"side '{side}' does not exist on a {mesh.kind}")
    values = np.array([g_sides.get(side, g) for side in mesh.face_side], dtype=float)
    return BoundaryData(mesh, gamma, values)


def build_mesh(kind: str, lengths: Sequence[float], cells: Sequence[int]) -> Mesh:
    """
    Build a uniform mesh.

    Args:
        kind: interval or rectangle.
        lengths: Side lengths, one per axis.
        cells: Cell counts, one per axis.

    Raises: ConfigError for an unknown kind, nonpositive lengths or fewer
            than 2 cells along an axis.
    """
    if kind not in MESH_KINDS:
        raise ConfigError(f"unknown domain kind '{kind}', expected one of {MESH_KINDS}")
    ndim = 1 if kind == "interval" else 2
    if len(lengths) != ndim or len(cells) != ndim:
        raise ConfigError(f"a {kind} needs {ndim} lengths and {ndim} cell counts")
    for length in lengths:
        if not (length > 0 and math.isfinite(length)):
            raise ConfigError(f"domain lengths must be positive, got {length}")
    for n in cells:
        if int(n) != n or n < 2:
            raise ConfigError(f"cell counts must be integers >= 2, got {n}")
    return Mesh(kind, lengths, cells)


def integrate(f: CellField) -> float:
    """
    Midpoint quadrature over the domain.
    """
    return float(np.sum(f.values) * f.mesh.cell_volume)


def boundary_integrate(mesh: Mesh, trace: np.ndarray) -> float:
    """
    Quadrature over the boundary, one value per boundary face.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size != mesh.nfaces:
        raise ValueError(f"trace has {trace.size} values for {mesh.nfaces} faces")
    return float(np.dot(trace, mesh.face_measure))


def neumann_lambda1(mesh: Mesh) -> float:
    """
    Smallest positive eigenvalue of the continuum Neumann Laplacian.
    """
    if mesh.kind not in MESH_KINDS:
        raise DomainError(f"no closed-form eigenvalue for a {mesh.kind}")
    return min((math.pi / L) ** 2 for L in mesh.lengths)


def face_gradient(f: CellField) -> np.ndarray:
    """
    Centered difference across every interior face, along the face's axis.
    """
    mesh = f.mesh
    v = f.values
    return (v[mesh.interior_right] - v[mesh.interior_left]) / mesh.interior_spacing


def dirichlet_form(mesh: Mesh, values: np.ndarray) -> float:
    """
    Discrete integral of |grad v|^2: sum over interior faces of
    measure/h * (jump)^2.
    """
    jump = values[mesh.interior_right] - values[mesh.interior_left]
    return float(np.sum(mesh.interior_measure / mesh.interior_spacing * jump**2))


def stiffness_matrix(mesh: Mesh) -> scipy.sparse.csr_matrix:
    """
    The conservative Neumann stiffness matrix S, with v^T S v equal to
    dirichlet_form(v). S = -vol * L_h for the Neumann Laplacian L_h.
    """
    w = mesh.interior_measure / mesh.interior_spacing
    left, right = mesh.interior_left, mesh.interior_right
    rows = np.concatenate([left, right, left, right])
    cols = np.concatenate([left, right, right, left])
    data = np.concatenate([w, w, -w, -w])
    return scipy.sparse.coo_matrix(
        (data, (rows, cols)), shape=(mesh.ncells, mesh.ncells)
    ).tocsr()


@profile.timer("grid.neumann_modes")
def neumann_modes(mesh: Mesh, count: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Lowest eigenpairs of the discrete Neumann Laplacian, S phi = mu vol phi.

    Args:
        mesh: The mesh.
        count: How many eigenpairs; capped at the cell count.

    Returns: eigenvalues ascending, and eigenvectors as columns normalized
             to unit discrete L2 norm.
    """
    count = min(count, mesh.ncells)
    operator = stiffness_matrix(mesh) / mesh.cell_volume
    if mesh.ncells <= _DENSE_EIG_LIMIT or count >= mesh.ncells - 1:
        mu, vecs = scipy.linalg.eigh(operator.toarray(), subset_by_index=[0, count - 1])
    else:
        # Shift-invert around a negative shift: inverse iteration on S + vol.
        mu, vecs = scipy.sparse.linalg.eigsh(
            operator.tocsc(), k=count, sigma=-1.0, which="LM"
        )
        order = np.argsort(mu)
        mu, vecs = mu[order], vecs[:, order]
    vecs = vecs / math.sqrt(mesh.cell_volume)
    return mu, vecs


def discrete_lambda1(mesh: Mesh) -> float:
    """
    Smallest positive eigenvalue of the discrete Neumann Laplacian.
    """
    mu, _ = neumann_modes(mesh, 2)
    return float(mu[1])


def cell_centers(mesh: Mesh) -> np.ndarray:
    """
    Cell centers as an (ncells, ndim) array.
    """
    axes = [(np.arange(n) + 0.5) * h for n, h in zip(mesh.shape, mesh.spacing)]
    if mesh.ndim == 1:
        return axes[0].reshape(-1, 1)
    x, y = np.meshgrid(axes[0], axes[1])
    return np.column_stack([x.ravel(), y.ravel()])


def mirror(f: CellField, axis: int = 0) -> CellField:
    """
    Reflect a field across the midline perpendicular to axis.
    """
    grid = f.as_grid()
    grid = grid[:, ::-1] if axis == 0 else grid[::-1, :]
    return CellField(f.mesh, grid.ravel())


def l2_norm(mesh: Mesh, values: np.ndarray) -> float:
    return float(np.sqrt(np.sum(values**2) * mesh.cell_volume))


def lq_norm(mesh: Mesh, values: np.ndarray, q: float) -> float:
    """
    (sum vol |v|^q)^(1/q); a quasi-norm for q < 1.
    """
    return float((np.sum(np.abs(values) ** q) * mesh.cell_volume) ** (1.0 / q))


def boundary_trace(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """
    Zero-gradient trace: the adjacent cell value on every boundary face.
    """
    return values[mesh.face_cell]
