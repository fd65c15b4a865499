"""Gradient-field integration, height-map lifting and gradient error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import fft
from scipy.sparse import diags, identity, kron
from scipy.sparse.linalg import cg

from .tactile import GradientGrid, ScalarGrid, SensorModel

RESIDUAL_RTOL = 1e-8
RESIDUAL_ATOL = 1e-12


class PoissonSolveError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


def divergence(g: GradientGrid) -> np.ndarray:
    """d(gx)/dx + d(gy)/dy with the same stencil as ``gradients_from_height``."""
    dx, dy = g.pitch_mm
    return np.gradient(g.gx, dx, axis=1) + np.gradient(g.gy, dy, axis=0)


def laplacian_interior(f: np.ndarray, pitch: tuple[float, float]) -> np.ndarray:
    """Five-point Laplacian evaluated on interior pixels, shape ``(rows-2, cols-2)``."""
    dx, dy = pitch
    c = f[1:-1, 1:-1]
    return (f[1:-1, 2:] - 2 * c + f[1:-1, :-2]) / dx**2 + (f[2:, 1:-1] - 2 * c + f[:-2, 1:-1]) / dy**2


def poisson_residual(f: np.ndarray, rhs: np.ndarray, pitch) -> float:
    """Relative residual of the interior Laplacian against ``rhs`` (absolute if rhs is zero)."""
    r = np.linalg.norm(laplacian_interior(f, pitch) - rhs)
    scale = np.linalg.norm(rhs)
    return float(r / scale) if scale > 0 else float(r)


def laplacian_neumann(f: np.ndarray, pitch: tuple[float, float]) -> np.ndarray:
    """Five-point Laplacian on the full grid with mirrored (zero-flux) borders."""
    dx, dy = pitch
    p = np.pad(f, 1, mode="edge")
    c = p[1:-1, 1:-1]
    return (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / dx**2 + (p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / dy**2


def _solve_dct(rhs: np.ndarray, pitch) -> np.ndarray:
    dx, dy = pitch
    m, n = rhs.shape
    lam_y = (2 * np.cos(np.pi * np.arange(m) / m) - 2) / dy**2
    lam_x = (2 * np.cos(np.pi * np.arange(n) / n) - 2) / dx**2
    coef = fft.dctn(rhs, type=2)
    denom = lam_y[:, None] + lam_x[None, :]
    denom[0, 0] = 1.0
    coef /= denom
    coef[0, 0] = 0.0
    return fft.idctn(coef, type=2)


def _solve_dst(rhs: np.ndarray, pitch) -> np.ndarray:
    dx, dy = pitch
    m, n = rhs.shape
    lam_y = (2 * np.cos(np.pi * np.arange(1, m + 1) / (m + 1)) - 2) / dy**2
    lam_x = (2 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1)) - 2) / dx**2
    coef = fft.dstn(rhs, type=1)
    coef /= lam_y[:, None] + lam_x[None, :]
    return fft.idstn(coef, type=1)


def _laplacian_matrix(m: int, n: int, pitch):
    dx, dy = pitch
    d2x = diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / dx**2
    d2y = diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m)) / dy**2
    return (kron(identity(m), d2x) + kron(d2y, identity(n))).tocsr()


def _solve_cg(rhs: np.ndarray, pitch, maxiter: int) -> np.ndarray:
    m, n = rhs.shape
    a = -_laplacian_matrix(m, n, pitch)  # SPD
    b = -rhs.ravel()
    if not np.any(b):
        return np.zeros_like(rhs)
    x, info = cg(a, b, rtol=RESIDUAL_RTOL * 0.1, atol=0.0, maxiter=maxiter)
    x = x.reshape(m, n)
    if info != 0:
        full = np.zeros((m + 2, n + 2))
        full[1:-1, 1:-1] = x
        raise PoissonSolveError(f"conjugate gradient stopped after {maxiter} iterations", poisson_residual(full, rhs, pitch))
    return x


def _integrate_neumann(g: GradientGrid) -> ScalarGrid:
    rhs = divergence(g)
    rhs = rhs - rhs.mean()  # compatibility condition for the zero-flux problem
    f = _solve_dct(rhs, g.pitch_mm)
    r = np.linalg.norm(laplacian_neumann(f, g.pitch_mm) - rhs)
    scale = np.linalg.norm(rhs)
    res = float(r / scale) if scale > 0 else float(r)
    if res > (RESIDUAL_RTOL if scale > 0 else RESIDUAL_ATOL):
        raise PoissonSolveError("zero-flux Poisson solve missed its residual target", res)
    border = np.concatenate([f[0], f[-1], f[1:-1, 0], f[1:-1, -1]])
    return ScalarGrid(f - np.median(border), g.pitch_mm)


def integrate_gradients(
    g: GradientGrid,
    method: str = "dst",
    maxiter: int = 20000,
    boundary: str = "dirichlet",
) -> ScalarGrid:
    """Height map whose Laplacian matches the divergence of ``g``.

    With ``boundary="dirichlet"`` the outermost ring of pixels is held at zero
    (gel clamped at the frame); ``method="dst"`` is a direct
    discrete-sine-transform solve and ``"cg"`` runs conjugate gradients.  If
    the direct solve misses the residual target the iterative solver takes
    over from scratch.

    ``boundary="neumann"`` leaves the border free (zero normal flux, solved by
    a cosine transform) and fixes the free constant so that the median border
    height is zero.  Use it when contact reaches the sensor edge.
    """
    if g.rows < 3 or g.cols < 3:
        raise ValueError("grid must be at least 3x3")
    if boundary == "neumann":
        return _integrate_neumann(g)
    if boundary != "dirichlet":
        raise ValueError(f"unknown boundary condition {boundary!r}")
    rhs = divergence(g)[1:-1, 1:-1]
    f = np.zeros((g.rows, g.cols))
    if method == "dst":
        f[1:-1, 1:-1] = _solve_dst(rhs, g.pitch_mm)
    elif method == "cg":
        f[1:-1, 1:-1] = _solve_cg(rhs, g.pitch_mm, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = poisson_residual(f, rhs, g.pitch_mm)
    tol = RESIDUAL_RTOL if np.any(rhs) else RESIDUAL_ATOL
    if res > tol:
        if method == "dst":
            f[1:-1, 1:-1] = _solve_cg(rhs, g.pitch_mm, maxiter)
            res = poisson_residual(f, rhs, g.pitch_mm)
        if res > tol:
            raise PoissonSolveError("Poisson solve missed its residual target", res)
    return ScalarGrid(f, g.pitch_mm)


def height_to_cloud(h: ScalarGrid, sensor: SensorModel | None = None) -> np.ndarray:
    """One ``(x, y, z)`` point per pixel with ``x = col*dx``, ``y = row*dy``."""
    dx, dy = h.pitch_mm if sensor is None else sensor.pitch_mm
    rows, cols = h.values.shape
    yy, xx = np.mgrid[0:rows, 0:cols]
    return np.column_stack([xx.ravel() * dx, yy.ravel() * dy, h.values.ravel()])


@dataclass(frozen=True)
class MaeReport:
    mae_gx: float
    mae_gy: float
    mae_theta_x: float
    mae_theta_y: float
    normalization: str = "per-channel min-max over pred and gt jointly"

    def to_json(self) -> dict:
        return asdict(self)


def _joint_minmax(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return np.zeros_like(a), np.zeros_like(b)
    return (a - lo) / (hi - lo), (b - lo) / (hi - lo)


def gradient_mae(pred: GradientGrid, gt: GradientGrid) -> MaeReport:
    """Mean absolute error of normalised slopes and of slope angles (degrees)."""
    if pred.gx.shape != gt.gx.shape:
        raise ValueError(f"grid size mismatch: {pred.gx.shape} vs {gt.gx.shape}")
    px, gx = _joint_minmax(pred.gx, gt.gx)
    py, gy = _joint_minmax(pred.gy, gt.gy)
    tx = np.degrees(np.arctan(pred.gx)) - np.degrees(np.arctan(gt.gx))
    ty = np.degrees(np.arctan(pred.gy)) - np.degrees(np.arctan(gt.gy))
    return MaeReport(
        float(np.mean(np.abs(px - gx))),
        float(np.mean(np.abs(py - gy))),
        float(np.mean(np.abs(tx))),
        float(np.mean(np.abs(ty))),
    )
