"""Spectral decompositions of the spatial operators.

Two representations are served here:

* :class:`ModalModel` -- eigenpairs of ``-Laplacian`` on a model domain
  (interval, torus, rectangle), with a quadrature grid for the measure ``|dx|``.
* :class:`GeneralSystem` -- an arbitrary finite generator ``H`` of the damped
  semigroup ``Omega(t) = exp(-t H)``, cached in eigen form.

The helpers :func:`entire_cos` and :func:`entire_sinc` evaluate
``cos(t sqrt(z))`` and ``sin(t sqrt(z)) / sqrt(z)`` as entire functions of
``z`` so that modes with ``lambda_j < a**2`` need no branch choice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import AttenuationError, FormatError, InvalidArgument

_TAYLOR_CUTOFF = 1e-4
_DEFECTIVE_COND = 1e8


# ---------------------------------------------------------------------------
# entire functions c(z, t), s(z, t)
# ---------------------------------------------------------------------------

def _prep(z, t):
    z, t = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(t, dtype=float))
    w = z * t * t
    small = np.abs(w) < _TAYLOR_CUTOFF
    r = np.sqrt(np.abs(z))
    return z, t, w, small, r


def entire_cos(z, t):
    """``cos(t*sqrt(z))`` continued to ``z < 0`` as ``cosh(t*sqrt(-z))``."""
    z, t, w, small, r = _prep(z, t)
    out = np.empty(z.shape)
    pos = (z > 0) & ~small
    neg = (z < 0) & ~small
    out[pos] = np.cos(t[pos] * r[pos])
    out[neg] = np.cosh(t[neg] * r[neg])
    ws = w[small]
    out[small] = 1.0 - ws / 2.0 + ws * ws / 24.0 - ws ** 3 / 720.0
    return out


def entire_sinc(z, t):
    """``sin(t*sqrt(z))/sqrt(z)``, odd in ``t``, equal to ``t`` at ``z = 0``."""
    z, t, w, small, r = _prep(z, t)
    out = np.empty(z.shape)
    pos = (z > 0) & ~small
    neg = (z < 0) & ~small
    out[pos] = np.sin(t[pos] * r[pos]) / r[pos]
    out[neg] = np.sinh(t[neg] * r[neg]) / r[neg]
    ws = w[small]
    out[small] = t[small] * (1.0 - ws / 6.0 + ws * ws / 120.0 - ws ** 3 / 5040.0)
    return out


def damped_cos_sinc(z, t, a):
    """Return ``exp(-a|t|) * (c(z, t), s(z, t))`` without overflow.

    For ``z < 0`` the hyperbolic branch is combined with the damping factor
    in exponent form, so growth ``exp(r|t|)`` never materializes alone.
    """
    z, t, w, small, r = _prep(z, t)
    neg = (z < 0) & ~small
    rest = ~neg
    c = np.empty(z.shape)
    s = np.empty(z.shape)
    damp = np.exp(-a * np.abs(t[rest]))
    c[rest] = entire_cos(z[rest], t[rest]) * damp
    s[rest] = entire_sinc(z[rest], t[rest]) * damp
    if np.any(neg):
        rn, tn = r[neg], np.abs(t[neg])
        e_plus = np.exp((rn - a) * tn)
        e_minus = np.exp(-(rn + a) * tn)
        c[neg] = 0.5 * (e_plus + e_minus)
        s[neg] = np.sign(t[neg]) * 0.5 * (e_plus - e_minus) / rn
    return c, s


# ---------------------------------------------------------------------------
# ModalModel
# ---------------------------------------------------------------------------

def _frozen(arr, dtype=float):
    arr = np.array(arr, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ModalModel:
    """Eigenpairs of ``-Laplacian`` plus a quadrature rule for ``|dx|``.

    Attributes
    ----------
    domain : str
        ``"interval"``, ``"torus"`` or ``"rectangle"``.
    eigenvalues : ndarray, shape (J,)
        Nondecreasing eigenvalues of ``-Laplacian`` (1/length**2).
    grid : ndarray
        Quadrature nodes, shape (G,) in 1D or (G, 2) in 2D.
    weights : ndarray, shape (G,)
        Quadrature weights of the uniform measure.
    params : dict
        Construction parameters (length, bc, ...), JSON friendly.
    """

    domain: str
    eigenvalues: np.ndarray
    grid: np.ndarray
    weights: np.ndarray
    params: dict
    _basis: Callable = field(repr=False)
    is_real: bool = True

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    def eigenfunctions(self, points) -> np.ndarray:
        """Evaluate every eigenfunction at ``points``; returns shape (P, J)."""
        pts = np.asarray(points, dtype=float)
        if self.domain == "rectangle":
            pts = np.atleast_2d(pts)
        else:
            pts = np.atleast_1d(pts)
        return self._basis(pts)

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix ``sum_g w_g phi_j(x_g) conj(phi_k(x_g))``."""
        phi = self.eigenfunctions(self.grid)
        return (phi * self.weights[:, None]).T @ phi.conj()

    def project(self, values) -> np.ndarray:
        """Modal coefficients of a grid function (length G)."""
        phi = self.eigenfunctions(self.grid)
        return (np.asarray(values) * self.weights) @ phi.conj()


def _check_count(n, name):
    if int(n) != n or n < 1:
        raise InvalidArgument(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def _check_length(length, name="length"):
    if not (length > 0 and math.isfinite(length)):
        raise InvalidArgument(f"{name} must be positive, got {length!r}")
    return float(length)


def _midpoint_grid(n, length):
    h = length / n
    return (np.arange(n) + 0.5) * h, np.full(n, h)


def build_interval_modes(n_modes, length, bc="dirichlet", n_grid=None) -> ModalModel:
    """Sine (Dirichlet) or cosine (Neumann) modes on ``[0, length]``.

    Dirichlet modes use ``j = 1..J`` and Neumann modes ``j = 0..J-1``;
    eigenvalues are ``(j*pi/length)**2``. The quadrature grid is the
    midpoint rule, which integrates products of retained modes exactly.
    """
    n_modes = _check_count(n_modes, "n_modes")
    length = _check_length(length)
    bc = bc.lower()
    if bc not in ("dirichlet", "neumann"):
        raise InvalidArgument(f"unsupported boundary condition {bc!r}")
    n_grid = _check_count(n_grid or max(1024, 4 * n_modes), "n_grid")
    j = np.arange(1, n_modes + 1) if bc == "dirichlet" else np.arange(n_modes)
    k = j * np.pi / length
    norm = np.where(j == 0, math.sqrt(1.0 / length), math.sqrt(2.0 / length))

    if bc == "dirichlet":
        def basis(x):
            return norm * np.sin(np.multiply.outer(x, k))
    else:
        def basis(x):
            return norm * np.cos(np.multiply.outer(x, k))

    grid, weights = _midpoint_grid(n_grid, length)
    return ModalModel(
        domain="interval",
        eigenvalues=_frozen(k ** 2),
        grid=_frozen(grid),
        weights=_frozen(weights),
        params={"n_modes": n_modes, "length": length, "bc": bc, "n_grid": n_grid},
        _basis=basis,
    )


def build_torus_model(n_grid, length) -> ModalModel:
    """Fourier modes on the circle of circumference ``length``.

    Wavenumbers ``j in {-n/2, ..., n/2 - 1}``, eigenvalues
    ``(2*pi*j/length)**2`` sorted nondecreasing (ties keep ``j`` order).
    The quadrature is the ``n_grid`` point uniform grid starting at 0.
    """
    n_grid = _check_count(n_grid, "n_grid")
    if n_grid % 2 or n_grid < 8:
        raise InvalidArgument(f"torus grid must be even and >= 8, got {n_grid}")
    length = _check_length(length)
    j = np.arange(-n_grid // 2, n_grid // 2)
    lam = (2 * np.pi * j / length) ** 2
    order = np.argsort(lam, kind="stable")
    j = j[order]
    kk = 2 * np.pi * j / length
    norm = 1.0 / math.sqrt(length)

    def basis(x):
        return norm * np.exp(1j * np.multiply.outer(x, kk))

    h = length / n_grid
    return ModalModel(
        domain="torus",
        eigenvalues=_frozen(lam[order]),
        grid=_frozen(np.arange(n_grid) * h),
        weights=_frozen(np.full(n_grid, h)),
        params={"n_grid": n_grid, "length": length, "wavenumbers": j.tolist()},
        _basis=basis,
        is_real=False,
    )


def build_rectangle_modes(nx, ny, Lx, Ly, bc="dirichlet", n_grid=None) -> ModalModel:
    """Tensor-product Dirichlet sine modes on ``[0, Lx] x [0, Ly]``, sorted by eigenvalue."""
    nx = _check_count(nx, "nx")
    ny = _check_count(ny, "ny")
    Lx = _check_length(Lx, "Lx")
    Ly = _check_length(Ly, "Ly")
    if bc.lower() != "dirichlet":
        raise InvalidArgument("rectangle supports Dirichlet conditions only")
    p, q = np.meshgrid(np.arange(1, nx + 1), np.arange(1, ny + 1), indexing="ij")
    p, q = p.ravel(), q.ravel()
    lam = (p * np.pi / Lx) ** 2 + (q * np.pi / Ly) ** 2
    order = np.argsort(lam, kind="stable")
    p, q, lam = p[order], q[order], lam[order]
    kx, ky = p * np.pi / Lx, q * np.pi / Ly
    norm = 2.0 / math.sqrt(Lx * Ly)

    def basis(pts):
        return norm * np.sin(np.multiply.outer(pts[:, 0], kx)) * np.sin(np.multiply.outer(pts[:, 1], ky))

    gx, gy = (n_grid or (max(64, 4 * nx), max(64, 4 * ny)))
    xs, wx = _midpoint_grid(gx, Lx)
    ys, wy = _midpoint_grid(gy, Ly)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    weights = np.outer(wx, wy).ravel()
    return ModalModel(
        domain="rectangle",
        eigenvalues=_frozen(lam),
        grid=_frozen(grid),
        weights=_frozen(weights),
        params={"nx": nx, "ny": ny, "Lx": Lx, "Ly": Ly, "bc": "dirichlet",
                "modes": np.column_stack([p, q]).tolist()},
        _basis=basis,
    )


def mode_sum(model: ModalModel, coeffs, x, y):
    """``sum_j coeffs[..., j] * phi_j(x) * conj(phi_j(y))`` for single points x, y."""
    phx = model.eigenfunctions(x)[0]
    phy = model.eigenfunctions(y)[0]
    out = np.asarray(coeffs) @ (phx * phy.conj())
    return out.real if model.is_real else out


def wave_green(model: ModalModel, a, t, x, y):
    """Causal Green function ``Y(t) exp(-a t) [sin(tP)/P](x, y)``, ``P**2 = -Laplacian - a**2``.

    ``t`` may be an array; the result has the same shape. Modes with
    ``lambda_j < a**2`` use the hyperbolic branch of ``sin(tP)/P``.
    """
    if a < 0:
        raise InvalidArgument("damping must be nonnegative")
    t = np.asarray(t, dtype=float)
    lam = model.eigenvalues
    tt = np.maximum(t, 0.0)[..., None]
    _, s = damped_cos_sinc(lam - a * a, tt, a)
    g = mode_sum(model, s, x, y)
    return np.where(t >= 0, g, 0.0)


# ---------------------------------------------------------------------------
# GeneralSystem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeneralSystem:
    """Finite generator ``H`` of ``Omega(t) = exp(-t H)`` with verified attenuation.

    ``margin`` is ``min Re(spec H)``. When the eigenvector matrix is
    ill-conditioned (cond > 1e8) the eigen cache is dropped and
    :meth:`propagator` falls back to ``scipy.linalg.expm``.
    """

    matrix: np.ndarray
    margin: float
    eigvals: np.ndarray
    eigvecs: np.ndarray | None
    eigvecs_inv: np.ndarray | None

    @classmethod
    def from_matrix(cls, H) -> "GeneralSystem":
        H = np.array(H, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise FormatError(f"system matrix must be square, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise FormatError("system matrix has non-finite entries")
        mu, V = np.linalg.eig(H)
        margin = float(mu.real.min())
        if margin <= 0:
            raise AttenuationError(
                f"min Re(spec H) = {margin:.6g} <= 0: the semigroup does not decay")
        Vinv = None
        if np.linalg.cond(V) < _DEFECTIVE_COND:
            Vinv = np.linalg.inv(V)
        else:
            V = None
        H.flags.writeable = False
        return cls(matrix=H, margin=margin, eigvals=mu, eigvecs=V, eigvecs_inv=Vinv)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonalizable(self) -> bool:
        return self.eigvecs is not None

    def propagator(self, t) -> np.ndarray:
        """``exp(-t H)`` for any real ``t`` (negative ``t`` gives the backward map)."""
        if self.eigvecs is None:
            return scipy.linalg.expm(-t * self.matrix)
        return (self.eigvecs * np.exp(-t * self.eigvals)) @ self.eigvecs_inv


def _format_complex(z: complex) -> str:
    im = z.imag
    sign = "-" if (im < 0 or (im == 0 and math.copysign(1.0, im) < 0)) else "+"
    return f"{z.real!r}{sign}{abs(im)!r}j"


def write_system(path, H) -> None:
    """Write ``H`` in the text matrix format: header ``n`` then ``n`` rows of ``re+imj``."""
    H = np.asarray(H, dtype=complex)
    lines = [str(H.shape[0])]
    lines += [" ".join(_format_complex(complex(z)) for z in row) for row in H]
    Path(path).write_text("\n".join(lines) + "\n")


def read_system_matrix(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty matrix file")
    try:
        n = int(lines[0])
    except ValueError:
        raise FormatError(f"{path}: header must be the integer dimension, got {lines[0]!r}")
    rows = lines[1:]
    if len(rows) != n:
        raise FormatError(f"{path}: expected {n} rows, found {len(rows)}")
    H = np.empty((n, n), dtype=complex)
    for i, row in enumerate(rows):
        tokens = row.split()
        if len(tokens) != n:
            raise FormatError(f"{path}: row {i} has {len(tokens)} entries, expected {n} (matrix must be square)")
        try:
            H[i] = [complex(tok) for tok in tokens]
        except ValueError as exc:
            raise FormatError(f"{path}: row {i}: {exc}")
    return H


def ingest_system(path) -> GeneralSystem:
    """Read a system matrix file and verify its attenuation margin."""
    return GeneralSystem.from_matrix(read_system_matrix(path))
