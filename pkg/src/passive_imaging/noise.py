"""Random sources and phase-space quantization on periodic grids.

Conventions
-----------
A grid function ``f`` lives on nodes ``x_g`` with quadrature weights ``w_g``;
the inner product is ``<f, g> = sum_g w_g f_g conj(g_g)``. An operator is
stored by its Schwartz kernel ``[R](x, y)``; the matrix acting on grid
vectors is ``kernel * w[None, :]``.

The spatial delta function is represented by ``1 / w_g`` on the diagonal,
and white noise on the grid by independent ``N(0, 1 / w_g)`` draws, so that
``E <A w, w> = trace(A)`` for every operator matrix ``A``. In modal
coordinates white noise is i.i.d. ``N(0, 1)`` across modes (per unit time);
both pictures agree because the modes are orthonormal for the same weights.

Weyl quantization on the torus of length ``L`` with ``n`` nodes and
semiclassical parameter ``eps`` uses the momentum lattice
``xi_m = eps * 2*pi*m / L``, ``m = -n/2 .. n/2-1``, and the midpoint kernel

    [Op(p)](z, z') = (1/L) sum_m exp(i xi_m (z - z') / eps) p((z + z')/2, xi_m),

where ``z' - z`` is taken in ``[-L/2, L/2)`` and the symbol is evaluated at
the midpoint by trigonometric interpolation in ``x``. At the antipodal lag
``|z' - z| = L/2`` both midpoints are averaged, which keeps real symbols
Hermitian. Quantization and :func:`kernel_to_symbol` are exact inverses on
symbols band-limited to ``|q| < n/2`` in ``x`` whose kernels vanish at the
antipodal lag.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .storage import canonical_json, sha256_bytes

_GRID_RTOL = 1e-9


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def torus_phase_grid(n, length, eps):
    """Nodes ``x_g = g*L/n`` and the eps-scaled dual lattice ``xi_m``."""
    if n % 2 or n < 2:
        raise InvalidArgument(f"phase grid size must be even, got {n}")
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    x = np.arange(n) * (length / n)
    xi = eps * 2 * np.pi * np.arange(-n // 2, n // 2) / length
    return x, xi


@dataclass(frozen=True, eq=False)
class SymbolField:
    """Phase-space sampled function ``values[i, j] = v(x[i], xi[j])`` at scale ``eps``."""

    x: np.ndarray
    xi: np.ndarray
    eps: float
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        vals = np.asarray(self.values)
        if x.size < 2 or xi.size < 2:
            raise InvalidArgument("symbol grids need at least 2 points per axis")
        if not self.eps > 0:
            raise InvalidArgument("eps must be positive")
        if vals.shape != (x.size, xi.size):
            raise InvalidArgument(f"values shape {vals.shape} does not match grids ({x.size}, {xi.size})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "values", vals)

    @classmethod
    def on_torus(cls, fn, n, length, eps) -> "SymbolField":
        """Sample ``fn(X, XI)`` on the torus phase grid."""
        x, xi = torus_phase_grid(n, length, eps)
        X, XI = np.meshgrid(x, xi, indexing="ij")
        return cls(x, xi, eps, np.asarray(fn(X, XI)) * np.ones_like(X))

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values) or np.all(self.values.imag == 0)

    def with_values(self, values) -> "SymbolField":
        return SymbolField(self.x, self.xi, self.eps, values)

    def to_json(self) -> str:
        v = np.asarray(self.values, dtype=complex).ravel()
        payload = {
            "x": self.x.tolist(),
            "xi": self.xi.tolist(),
            "epsilon": float(self.eps),
            "values": np.column_stack([v.real, v.imag]).tolist(),
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text) -> "SymbolField":
        try:
            d = json.loads(text)
            x = np.array(d["x"], dtype=float)
            xi = np.array(d["xi"], dtype=float)
            pairs = np.array(d["values"], dtype=float).reshape(-1, 2)
            eps = float(d["epsilon"])
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad symbol field: {exc}")
        vals = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(x.size, xi.size)
        if np.all(pairs[:, 1] == 0):
            vals = vals.real
        return cls(x, xi, eps, vals)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SymbolField":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class OperatorKernel:
    """Schwartz kernel ``[R](x, y)`` of an operator on a weighted grid."""

    points: np.ndarray
    weights: np.ndarray
    kernel: np.ndarray

    def __post_init__(self):
        g = len(self.weights)
        if self.kernel.shape != (g, g):
            raise InvalidArgument(f"kernel shape {self.kernel.shape} inconsistent with {g} grid points")

    @classmethod
    def from_matrix(cls, matrix, points, weights) -> "OperatorKernel":
        weights = np.asarray(weights, dtype=float)
        return cls(np.asarray(points), weights, np.asarray(matrix) / weights[None, :])

    @classmethod
    def identity(cls, points, weights) -> "OperatorKernel":
        weights = np.asarray(weights, dtype=float)
        return cls(np.asarray(points), weights, np.diag(1.0 / weights))

    @property
    def matrix(self) -> np.ndarray:
        return self.kernel * self.weights[None, :]

    def apply(self, f):
        return self.matrix @ f

    def adjoint(self) -> "OperatorKernel":
        return OperatorKernel(self.points, self.weights, self.kernel.conj().T)

    def compose(self, other: "OperatorKernel") -> "OperatorKernel":
        return OperatorKernel(self.points, self.weights, self.kernel @ (self.weights[:, None] * other.kernel))

    def trace(self) -> complex:
        return np.trace(self.matrix)


# ---------------------------------------------------------------------------
# Weyl quantization on the torus
# ---------------------------------------------------------------------------

def _torus_geometry(sym: SymbolField):
    n = sym.x.size
    if sym.xi.size != n or n % 2:
        raise InvalidArgument(f"torus quantization needs an even square phase grid, got {sym.values.shape}")
    h = sym.x[1] - sym.x[0]
    if not np.allclose(np.diff(sym.x), h, rtol=_GRID_RTOL, atol=0):
        raise InvalidArgument("x-grid is not uniform")
    length = n * h
    expected = sym.eps * 2 * np.pi * np.arange(-n // 2, n // 2) / length
    if not np.allclose(sym.xi, expected, rtol=_GRID_RTOL, atol=_GRID_RTOL * abs(expected).max()):
        raise InvalidArgument("xi-grid is not the eps-scaled dual lattice of the x-grid")
    return n, length, h


def _lag_table(n):
    """Wrapped lags ``delta_k`` in FFT order and the midpoint shift multipliers."""
    k = np.arange(n)
    delta = np.where(k < n // 2, k, k - n)
    q = np.fft.fftfreq(n, 1.0 / n)
    mult = np.exp(1j * np.pi * np.outer(delta, q) / n)
    nyq = n // 2
    mult[:, nyq] = np.cos(np.pi * delta * q[nyq] / n)
    mult[nyq, :] = np.cos(np.pi * q / 2)
    return delta, mult


def weyl_quantize(sym: SymbolField) -> OperatorKernel:
    """Kernel of ``Op_eps(p)`` on the periodic grid carried by ``sym``."""
    n, length, h = _torus_geometry(sym)
    p = np.asarray(sym.values, dtype=complex)
    F = np.fft.fft(np.fft.ifftshift(p, axes=1), axis=1).T / length
    delta, mult = _lag_table(n)
    G = np.fft.ifft(np.fft.fft(F, axis=1) * mult, axis=1)
    g = np.arange(n)[None, :]
    K = np.empty((n, n), dtype=complex)
    K[g, (g + delta[:, None]) % n] = G
    return OperatorKernel(sym.x.copy(), np.full(n, h), K)


def kernel_to_symbol(op: OperatorKernel, eps) -> SymbolField:
    """Weyl symbol of a torus-grid operator: exact inverse of :func:`weyl_quantize`."""
    x = np.asarray(op.points, dtype=float)
    n = x.size
    if n % 2 or n < 2:
        raise InvalidArgument("operator grid must have an even number of nodes")
    h = x[1] - x[0]
    if not np.allclose(np.diff(x), h, rtol=_GRID_RTOL, atol=0) or not np.allclose(op.weights, h):
        raise InvalidArgument("operator grid is not a uniform periodic grid")
    length = n * h
    delta, mult = _lag_table(n)
    g = np.arange(n)[None, :]
    G = op.kernel[g, (g + delta[:, None]) % n]
    Ghat = np.fft.fft(G, axis=1)
    invertible = np.abs(mult) > 0.5
    Fhat = np.where(invertible, Ghat / np.where(invertible, mult, 1.0), 0.0)
    F = np.fft.ifft(Fhat, axis=1)
    p = h * n * np.fft.ifft(F, axis=0).T
    p = np.fft.fftshift(p, axes=1)
    xi = eps * 2 * np.pi * np.arange(-n // 2, n // 2) / length
    return SymbolField(x.copy(), xi, eps, p)


# ---------------------------------------------------------------------------
# random sources
# ---------------------------------------------------------------------------

def realization_rng(seed, index) -> np.random.Generator:
    """Independent stream for realization ``index`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Source model.

    ``kind`` is ``"white"`` (``channels`` independent unit white noises),
    ``"twisted"`` (``L0 @ w`` with channel covariance ``K0 = L0 L0*``) or
    ``"filtered"`` (``Op_eps(l) w`` for a sampled symbol ``l``). A filtered
    source may carry a time window: the time correlation is then the
    triangle ``(1/t0) * (1 - |t|/t0)`` of unit mass, whose Fourier transform
    ``sinc(omega*t0/2)**2`` is the squared window ``|h(omega)|**2``; with
    ``t0=None`` the source is white in time.
    """

    kind: str
    channels: int = 1
    L0: np.ndarray | None = None
    symbol: SymbolField | None = None
    t0: float | None = None
    seed: int = 0
    operator: OperatorKernel | None = field(default=None, repr=False)

    @classmethod
    def white(cls, channels=1, seed=0) -> "NoiseSpec":
        return cls("white", channels=int(channels), seed=seed)

    @classmethod
    def twisted(cls, L0, seed=0) -> "NoiseSpec":
        L0 = np.atleast_2d(np.asarray(L0, dtype=complex))
        if L0.shape[0] != L0.shape[1]:
            raise InvalidArgument("L0 must be square")
        return cls("twisted", channels=L0.shape[0], L0=L0, seed=seed)

    @classmethod
    def filtered(cls, symbol: SymbolField, t0=None, seed=0) -> "NoiseSpec":
        if t0 is not None and t0 <= 0:
            raise InvalidArgument("t0 must be positive")
        v = np.abs(symbol.values)
        # the x-axis is periodic; only the momentum boundary must vanish
        if np.max(v[:, [0, -1]]) > 1e-12 * max(v.max(), 1e-300):
            raise InvalidArgument("filtered symbol must vanish on the momentum boundary of the grid")
        return cls("filtered", channels=1, symbol=symbol, t0=t0, seed=seed,
                   operator=weyl_quantize(symbol))

    @property
    def K0(self) -> np.ndarray:
        if self.kind == "white":
            return np.eye(self.channels)
        if self.kind == "twisted":
            return self.L0 @ self.L0.conj().T
        raise InvalidArgument("K0 is defined for white and twisted sources only")

    def spatial_covariance(self) -> OperatorKernel:
        """``L L*`` for a filtered source."""
        if self.kind != "filtered":
            raise InvalidArgument("spatial covariance operator exists for filtered sources only")
        return self.operator.compose(self.operator.adjoint())

    def time_profile(self, t):
        """Time correlation factor; the delta coefficient (1 at t=0) if white in time."""
        t = np.abs(np.asarray(t, dtype=float))
        if self.kind != "filtered" or self.t0 is None:
            return np.where(t == 0, 1.0, 0.0)
        return np.where(t < self.t0, (1.0 - t / self.t0) / self.t0, 0.0)

    def window_power(self, omega):
        """``|h(omega)|**2``: Fourier transform of :meth:`time_profile`."""
        omega = np.asarray(omega, dtype=float)
        if self.kind != "filtered" or self.t0 is None:
            return np.ones_like(omega)
        return np.sinc(omega * self.t0 / (2 * np.pi)) ** 2

    def describe(self) -> dict:
        d = {"kind": self.kind, "channels": self.channels, "seed": self.seed, "t0": self.t0}
        if self.L0 is not None:
            d["L0"] = [[z.real, z.imag] for z in self.L0.ravel()]
        if self.symbol is not None:
            d["symbol_sha256"] = sha256_bytes(self.symbol.to_json().encode())
        return d

    def spec_hash(self) -> str:
        return sha256_bytes(canonical_json(self.describe()).encode())


def sample_white_noise(model, channels, dt, steps, seed) -> np.ndarray:
    """Modal white-noise increments, shape ``(steps, J, channels)``, i.i.d. ``N(0, dt)``."""
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((int(steps), model.n_modes, int(channels))) * math.sqrt(dt)


def white_grid_noise(weights, rng) -> np.ndarray:
    """One draw of grid white noise: independent ``N(0, 1/w_g)``."""
    weights = np.asarray(weights, dtype=float)
    return rng.standard_normal(weights.size) / np.sqrt(weights)


def sample_filtered_noise(L: OperatorKernel, seed, index=0) -> np.ndarray:
    """One realization ``f = L w`` of symbol-filtered noise on the grid of ``L``."""
    w = white_grid_noise(L.weights, realization_rng(seed, index))
    return L.matrix @ w


def sample_filtered_ensemble(L: OperatorKernel, n_realizations, seed, threads=1) -> np.ndarray:
    """Stack of ``n_realizations`` fields, shape ``(R, G)``; independent of ``threads``."""
    if threads <= 1:
        fields = [sample_filtered_noise(L, seed, i) for i in range(n_realizations)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fields = list(pool.map(lambda i: sample_filtered_noise(L, seed, i), range(n_realizations)))
    return np.array(fields)


def correlation_kernel(spec: NoiseSpec, x, y, t, *, weights=None, dt=None) -> np.ndarray:
    """Source correlation ``E f(x, s) f*(y, s - t)`` as an ``N x N`` matrix.

    ``x`` and ``y`` are grid indices. For white and twisted sources the
    spatial delta is ``1/w_x`` on the diagonal (``weights`` required). A time
    delta is returned as its coefficient (1 at ``t == 0``) unless ``dt`` is
    given, in which case it is the discrete surrogate ``1/dt`` at lag 0.
    Lags outside the support of the time profile give exact zeros.
    """
    if spec.kind == "filtered":
        op = spec.spatial_covariance()
        spatial = np.array([[op.kernel[x, y]]])
    else:
        if weights is None:
            raise InvalidArgument("weights are required for the spatial delta surrogate")
        diag = (1.0 / weights[x]) if x == y else 0.0
        spatial = diag * spec.K0
    timed = spec.kind == "filtered" and spec.t0 is not None
    if timed:
        factor = float(spec.time_profile(t))
    else:
        on = abs(t) < (dt / 2 if dt else 0.0) or t == 0
        factor = (1.0 / dt if dt else 1.0) if on else 0.0
    return spatial * factor


# ---------------------------------------------------------------------------
# Wigner pairings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WignerEstimate:
    """Ensemble mean and standard error of ``<Op_eps(a) f, f>`` per test symbol."""

    mean: np.ndarray
    stderr: np.ndarray
    samples: np.ndarray = field(repr=False)


def pairing(A: OperatorKernel, f) -> complex:
    """``<A f, f>`` in the weighted inner product."""
    f = np.asarray(f)
    return np.sum(A.weights * (A.matrix @ f) * f.conj())


def estimate_wigner(realizations, test_symbols) -> WignerEstimate:
    """Average Wigner pairings of an ensemble of grid fields (shape ``(R, G)``)."""
    F = np.atleast_2d(np.asarray(realizations))
    if F.shape[0] < 2:
        raise InvalidArgument("need at least 2 realizations")
    if not test_symbols:
        raise InvalidArgument("no test symbols given")
    samples = np.empty((len(test_symbols), F.shape[0]), dtype=complex)
    for i, sym in enumerate(test_symbols):
        A = weyl_quantize(sym)
        AF = F @ A.matrix.T
        samples[i] = (AF * F.conj()) @ A.weights
    mean = samples.mean(axis=1)
    stderr = samples.std(axis=1, ddof=1) / math.sqrt(F.shape[0])
    if all(s.is_real for s in test_symbols):
        mean = mean.real
    return WignerEstimate(mean=mean, stderr=stderr, samples=samples)
