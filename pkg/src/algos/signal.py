"""
Elliptic signal subproblem: 0 = lap c - n c in the domain with the Robin
condition dc/dnu = (gamma - c) g on the boundary.

Everything is assembled in conservative (cell-integrated) form

    A c = b,   A = S + R + vol * diag(n),   b = R_face * gamma

where S is the Neumann stiffness matrix and R the Robin closure. At a
boundary face the ghost value c_g solves

    (c_g - c_c) / h = (gamma - (c_c + c_g) / 2) g

so the outward flux is beta (gamma - c_c) with beta = g / (1 + h g / 2) and
the face value (c_c + c_g) / 2 is a convex combination of c_c and gamma.
"""

from __future__ import annotations

from dataclasses import dataclass
import functools
import logging

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from util import profile
from util.errors import DegenerateProblemError, DomainError, NumericalError
from util.grid import BoundaryData, CellField, stiffness_matrix

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
PCG_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class SignalSolution:
    c: CellField
    """
    Concentration per cell
    """
    c_b: np.ndarray
    """
    Concentration per boundary face
    """
    residual: float
    """
    Max-norm residual of the conservative discrete equation
    """


class SignalOperator:
    """
    The n-independent part of the signal operator for one BoundaryData.
    """

    def __init__(self, bc: BoundaryData):
        mesh = bc.mesh
        self.bc = bc
        self.mesh = mesh

        h = mesh.face_spacing
        self.beta = bc.g / (1.0 + 0.5 * h * bc.g)
        self.robin = np.bincount(
            mesh.face_cell, weights=mesh.face_measure * self.beta, minlength=mesh.ncells
        )
        self.b = self.robin * bc.gamma
        self.A0 = (stiffness_matrix(mesh) + scipy.sparse.diags(self.robin)).tocsr()

        # Banded (upper, diagonal, lower) storage for exact 1D elimination.
        self.ab0 = None
        if mesh.ndim == 1:
            w = mesh.interior_measure / mesh.interior_spacing
            ab = np.zeros((3, mesh.ncells))
            ab[0, 1:] = -w
            ab[1] = self.A0.diagonal()
            ab[2, :-1] = -w
            self.ab0 = ab

    def matrix(self, reaction: np.ndarray) -> scipy.sparse.csr_matrix:
        """
        A0 + diag(reaction).
        """
        return (self.A0 + scipy.sparse.diags(reaction)).tocsr()

    def residual(self, c: np.ndarray, reaction: np.ndarray) -> np.ndarray:
        """
        A c - b, row by row.
        """
        return self.A0 @ c + reaction * c - self.b

    def face_values(self, c: np.ndarray) -> np.ndarray:
        """
        Ghost-averaged concentration on every boundary face.
        """
        c_cell = c[self.mesh.face_cell]
        return c_cell + 0.5 * self.mesh.face_spacing * self.beta * (self.bc.gamma - c_cell)


@functools.lru_cache(maxsize=16)
def signal_operator(bc: BoundaryData) -> SignalOperator:
    """
    Assembled operator, cached per BoundaryData object.
    """
    return SignalOperator(bc)


def solve_direct(
    op: SignalOperator, reaction: np.ndarray, rhs: np.ndarray | None = None
) -> np.ndarray:
    """
    Tridiagonal elimination in 1D, sparse LU in 2D. Solves (A0 + diag(reaction)) x
    = rhs, with rhs defaulting to the Robin source b.
    """
    rhs = op.b if rhs is None else rhs
    if op.ab0 is not None:
        ab = op.ab0.copy()
        ab[1] += reaction
        return scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
    return scipy.sparse.linalg.spsolve(op.matrix(reaction).tocsc(), rhs)


def solve_pcg(
    op: SignalOperator, reaction: np.ndarray, rhs: np.ndarray | None = None
) -> np.ndarray:
    """
    Jacobi-preconditioned conjugate gradients, started from c = gamma for the
    signal system and from zero for any other right-hand side.
    """
    A = op.matrix(reaction)
    M = scipy.sparse.diags(1.0 / A.diagonal())
    if rhs is None:
        rhs, x0 = op.b, np.full(op.mesh.ncells, op.bc.gamma)
    else:
        x0 = np.zeros(op.mesh.ncells)
    maxiter = 50 * op.mesh.ncells
    c, info = scipy.sparse.linalg.cg(
        A, rhs, x0=x0, rtol=PCG_RTOL, atol=0.0, maxiter=maxiter, M=M
    )
    if info != 0:
        residual = float(np.max(np.abs(A @ c - rhs)))
        raise NumericalError(f"CG did not converge in {maxiter} iterations", residual)
    return c


linear_solvers = {
    "direct": solve_direct,
    "pcg": solve_pcg,
}
"""
Linear solvers for the SPD signal system.
"""


@profile.timer("signal.solve_signal")
def solve_signal(
    n: CellField,
    bc: BoundaryData,
    tol: float = DEFAULT_TOL,
    method: str = "direct",
) -> SignalSolution:
    """
    Solve 0 = lap c - n c with the Robin boundary condition.

    Args:
        n: Cell density, >= 0.
        bc: Boundary data on the same mesh.
        tol: Max-norm tolerance on the conservative residual.
        method: Key of linear_solvers.

    Raises:
        DegenerateProblemError: n == 0 and g == 0 (singular operator).
        NumericalError: NaN or residual above tol.
    """
    if n.mesh != bc.mesh:
        raise ValueError("density and boundary data live on different meshes")
    if tol <= 0:
        raise DomainError(f"tolerance must be > 0, got {tol}")
    if np.any(n.values < 0):
        raise DomainError("signal solve needs a nonnegative density")
    if not np.any(n.values > 0) and not np.any(bc.g > 0):
        raise DegenerateProblemError(
            "n == 0 and g == 0: the signal operator is singular"
        )

    op = signal_operator(bc)
    reaction = n.mesh.cell_volume * n.values
    c = linear_solvers[method](op, reaction)
    if not np.all(np.isfinite(c)):
        raise NumericalError("signal solve produced non-finite values")

    residual = float(np.max(np.abs(op.residual(c, reaction))))
    if residual > tol:
        raise NumericalError("signal solve missed its tolerance", residual)
    return SignalSolution(CellField(n.mesh, c), op.face_values(c), residual)


def signal_residual(
    c: SignalSolution | CellField, n: CellField, bc: BoundaryData
) -> float:
    """
    Max over cells of |vol ((L_h c)_i - n_i c_i)|, Robin closure included.
    """
    field = c.c if isinstance(c, SignalSolution) else c
    if field.mesh != n.mesh or n.mesh != bc.mesh:
        raise ValueError("fields and boundary data live on different meshes")
    op = signal_operator(bc)
    reaction = n.mesh.cell_volume * n.values
    return float(np.max(np.abs(op.residual(field.values, reaction))))
