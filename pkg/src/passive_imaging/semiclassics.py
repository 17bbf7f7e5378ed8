"""High-frequency check: the stationary covariance as a quantized ray integral.

On the torus ``[0, L)`` with the eps-scaled momentum lattice, the generator

    H_eps = (i/eps) Op(H0) + Op(d),     d = -Im H1 >= k > 0,

and source ``f = Op(l) w`` give a stationary covariance ``Pi`` whose Weyl
symbol should approach the transport integral

    pi(x, xi) = int_{t_min}^0 exp(-2 int_t^0 d(phi_s) ds) |l|^2(phi_t(x, xi)) dt,

``phi_t`` being the Hamiltonian flow of ``H0``. The lower limit is
``t_min = max(-c |log eps|, -15/k)``; the discarded tail is at most
``sup|l|^2 * exp(2 k t_min) / (2k)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .correlation import build_L_operator, lyapunov_pi
from .errors import ChartError, InvalidArgument
from .modal import GeneralSystem
from .noise import NoiseSpec, OperatorKernel, SymbolField, kernel_to_symbol, torus_phase_grid, weyl_quantize

# fourth-order Yoshida composition of the leapfrog step
_CBRT2 = 2.0 ** (1.0 / 3.0)
_YOSHIDA = (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2))


@dataclass(frozen=True)
class Hamiltonian:
    """Principal symbol ``H0(x, xi)`` with its gradients.

    When ``separable`` is set, ``H0 = T(xi) + V(x)`` and ``grad_x`` only
    depends on ``x``, ``grad_xi`` only on ``xi``.
    """

    value: Callable
    grad_x: Callable
    grad_xi: Callable
    separable: bool = False
    name: str = "custom"

    @classmethod
    def free(cls) -> "Hamiltonian":
        return cls(lambda x, xi: 0.5 * xi ** 2 + 0 * x, lambda x, xi: 0 * x, lambda x, xi: xi + 0 * x,
                   separable=True, name="free")

    @classmethod
    def pendulum(cls, strength=1.0) -> "Hamiltonian":
        s = float(strength)
        return cls(lambda x, xi: 0.5 * xi ** 2 + s * np.cos(x), lambda x, xi: -s * np.sin(x) + 0 * xi,
                   lambda x, xi: xi + 0 * x, separable=True, name="pendulum")

    @classmethod
    def half_wave(cls) -> "Hamiltonian":
        return cls(lambda x, xi: np.abs(xi) + 0 * x, lambda x, xi: 0 * x, lambda x, xi: np.sign(xi) + 0 * x,
                   separable=True, name="half-wave")


@dataclass(frozen=True)
class RayTrace:
    x0: float
    xi0: float
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    energy: np.ndarray

    @property
    def energy_drift(self) -> float:
        return float(np.abs(self.energy - self.energy[0]).max())


def _as_callable(v):
    if callable(v):
        return v
    c = float(v)
    return lambda x, xi: np.full(np.broadcast(x, xi).shape, c)


@dataclass(frozen=True)
class TransportSpec:
    """Everything the transport comparison needs.

    ``amplitude`` is the source symbol ``l(x, xi)`` (real); with ``sigma0``
    set the source carries the time window whose squared Fourier transform
    is ``sinc(sigma0 * omega / 2)**2`` in the rescaled frequency
    ``omega = -H0``, i.e. a triangle correlation of half-width
    ``t0 = eps * sigma0``. ``damping`` is ``-Im H1`` (constant or callable),
    bounded below by ``k``. With ``wave=True`` the forcing covariance is
    ``Op(|xi|)^{-1} L L^* Op(|xi|)^{-1}`` and the reference carries the
    factor ``|xi|^{-2}``.
    """

    hamiltonian: Hamiltonian
    amplitude: Callable
    eps: float
    damping: object = 0.25
    k: float | None = None
    c: float = 1.0
    sigma0: float | None = None
    length: float = 2 * math.pi
    wave: bool = False
    dt: float = 0.01

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidArgument("eps must be positive")
        if self.k is None:
            if callable(self.damping):
                raise InvalidArgument("a lower bound k is required with variable damping")
            object.__setattr__(self, "k", float(self.damping))
        if not self.k > 0:
            raise InvalidArgument("attenuation requires k > 0 (sup Im H1 <= -k < 0)")
        if not callable(self.damping) and float(self.damping) < self.k:
            raise InvalidArgument("constant damping is below the stated bound k")

    @property
    def n_grid(self) -> int:
        # n = L/eps keeps the momentum cutoff at xi_N = pi for every eps
        n = int(round(self.length / self.eps))
        return n + (n % 2)

    @property
    def constant_damping(self) -> bool:
        return not callable(self.damping)

    def damping_fn(self):
        return _as_callable(self.damping)

    def power(self, x, xi):
        return np.abs(self.amplitude(x, xi)) ** 2

    def window(self, x, xi):
        if self.sigma0 is None:
            return np.ones(np.broadcast(x, xi).shape)
        return np.sinc(self.sigma0 * self.hamiltonian.value(x, xi) / (2 * math.pi)) ** 2

    def cutoff(self) -> float:
        return max(-self.c * abs(math.log(self.eps)), -15.0 / self.k)

    def truncation_bound(self, sup_power) -> float:
        return sup_power * math.exp(2 * self.k * self.cutoff()) / (2 * self.k)

    def with_eps(self, eps) -> "TransportSpec":
        return replace(self, eps=eps)

    def phase_grid(self):
        return torus_phase_grid(self.n_grid, self.length, self.eps)


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------

def _leapfrog(H: Hamiltonian, x, xi, h):
    xi = xi - 0.5 * h * H.grad_x(x, xi)
    x = x + h * H.grad_xi(x, xi)
    xi = xi - 0.5 * h * H.grad_x(x, xi)
    return x, xi


def _midpoint(H: Hamiltonian, x, xi, h, tol=1e-14, max_iter=100):
    xn, xin = x, xi
    for _ in range(max_iter):
        xm, xim = 0.5 * (x + xn), 0.5 * (xi + xin)
        x_new = x + h * H.grad_xi(xm, xim)
        xi_new = xi - h * H.grad_x(xm, xim)
        delta = max(np.abs(x_new - xn).max(), np.abs(xi_new - xin).max())
        xn, xin = x_new, xi_new
        if delta <= tol * (1 + np.abs(xn).max() + np.abs(xin).max()):
            break
    return xn, xin


def flow_step(H: Hamiltonian, x, xi, h):
    """One symplectic step of size ``h`` (may be negative); vectorized over points."""
    if H.separable:
        for w in _YOSHIDA:
            x, xi = _leapfrog(H, x, xi, w * h)
        return x, xi
    return _midpoint(H, x, xi, h)


def hamiltonian_flow(H, x0, xi0, t_final, dt, *, length=None, xi_max=None) -> RayTrace:
    """Trace ``phi_t(x0, xi0)`` for ``t`` from 0 to ``t_final`` (either sign).

    ``H`` is a :class:`Hamiltonian` or a :class:`TransportSpec` (whose
    torus length and momentum chart are then used). Positions are reduced
    modulo ``length`` when given. Leaving ``|xi| < xi_max`` raises
    :class:`ChartError`.
    """
    if isinstance(H, TransportSpec):
        length = H.length if length is None else length
        if xi_max is None:
            xi_max = float(np.abs(H.phase_grid()[1]).max())
        H = H.hamiltonian
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    n = max(1, int(math.ceil(abs(t_final) / dt - 1e-12)))
    h = t_final / n
    xs = np.empty(n + 1)
    xis = np.empty(n + 1)
    x, xi = float(x0), float(xi0)
    xs[0], xis[0] = x, xi
    for i in range(1, n + 1):
        x, xi = flow_step(H, x, xi, h)
        if xi_max is not None and abs(xi) > xi_max:
            raise ChartError(f"ray from ({x0:g}, {xi0:g}) reached |xi| = {abs(xi):.4g} > {xi_max:.4g} at t = {i * h:g}")
        xs[i], xis[i] = x, xi
    times = np.arange(n + 1) * h
    energy = H.value(xs, xis)
    if length is not None:
        xs = np.mod(xs, length)
    return RayTrace(float(x0), float(xi0), times, xs, xis, energy)


# ---------------------------------------------------------------------------
# transport integral
# ---------------------------------------------------------------------------

def transport_integral(spec: TransportSpec, x, xi, *, xi_max=None, on_chart_exit="raise"):
    """Backward-ray integral at arbitrary phase points (arrays of equal shape).

    Returns ``pi`` with ``NaN`` at points whose ray left ``|xi| < xi_max``
    when ``on_chart_exit="mask"``. Uses composite Simpson on the step grid
    for both the attenuation and the outer integral (4th order overall,
    matching the flow integrator).
    """
    if on_chart_exit not in ("raise", "mask"):
        raise InvalidArgument("on_chart_exit must be 'raise' or 'mask'")
    H = spec.hamiltonian
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast(x, xi).shape
    x = np.broadcast_to(x, shape).ravel().copy()
    xi = np.broadcast_to(xi, shape).ravel().copy()
    t_min = spec.cutoff()
    n = int(math.ceil(abs(t_min) / spec.dt))
    n += n % 2
    h = t_min / n
    ah = abs(h)
    damp = spec.damping_fn()
    const = spec.constant_damping
    kconst = float(spec.damping) if const else 0.0
    L = spec.length
    alive = np.ones(x.size, bool)

    def check(i, xi_now):
        if xi_max is None:
            return
        out = alive & (np.abs(xi_now) > xi_max)
        if np.any(out):
            if on_chart_exit == "raise":
                j = int(np.flatnonzero(out)[0])
                raise ChartError(f"ray from ({x[j]:g}, {xi[j]:g}) left |xi| <= {xi_max:.4g} at t = {i * h:g}")
            alive[out] = False

    def power(xc, xic):
        return spec.power(np.mod(xc, L), xic)

    xc, xic = x.copy(), xi.copy()
    check(0, xic)
    d_prev2 = damp(np.mod(xc, L), xic) if not const else None
    A_prev2 = np.zeros(x.size)
    g_prev2 = power(xc, xic)
    acc = g_prev2 * (ah / 3.0)
    d_prev1 = p_prev1 = None
    for i in range(1, n + 1):
        xc, xic = flow_step(H, xc, xic, h)
        check(i, xic)
        p_now = power(xc, xic)
        if const:
            if i % 2 == 0:
                A1 = kconst * (i - 1) * ah
                A2 = kconst * i * ah
                g1 = np.exp(-2 * A1) * p_prev1
                g2 = np.exp(-2 * A2) * p_now
                acc += (4.0 * ah / 3.0) * g1 + (ah / 3.0 if i == n else 2.0 * ah / 3.0) * g2
            else:
                p_prev1 = p_now
            continue
        d_now = damp(np.mod(xc, L), xic)
        if i % 2 == 0:
            A1 = A_prev2 + ah * (5 * d_prev2 + 8 * d_prev1 - d_now) / 12.0
            A2 = A_prev2 + ah * (d_prev2 + 4 * d_prev1 + d_now) / 3.0
            g1 = np.exp(-2 * A1) * p_prev1
            g2 = np.exp(-2 * A2) * p_now
            acc += (4.0 * ah / 3.0) * g1 + (ah / 3.0 if i == n else 2.0 * ah / 3.0) * g2
            A_prev2, d_prev2 = A2, d_now
        else:
            d_prev1, p_prev1 = d_now, p_now
    out = acc * spec.window(x, xi)
    if spec.wave:
        with np.errstate(divide="ignore"):
            out = out / xi ** 2
    out[~alive] = np.nan
    return out.reshape(shape)


def transport_symbol_pi(spec: TransportSpec, x=None, xi=None, *, on_chart_exit="raise") -> SymbolField:
    """Transport symbol sampled on a phase grid (default: the torus grid of ``spec``).

    The momentum chart is the grid's ``xi`` range.
    """
    if x is None or xi is None:
        x, xi = spec.phase_grid()
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    X, XI = np.meshgrid(x, xi, indexing="ij")
    xi_max = float(np.abs(xi).max())
    vals = transport_integral(spec, X, XI, xi_max=xi_max, on_chart_exit=on_chart_exit)
    return SymbolField(x, xi, spec.eps, vals)


def wigner_of_operator(K: OperatorKernel, eps) -> SymbolField:
    """Weyl symbol of a torus-grid operator; exact inverse of ``weyl_quantize``."""
    return kernel_to_symbol(K, eps)


# ---------------------------------------------------------------------------
# quantized system and comparison
# ---------------------------------------------------------------------------

def quantized_system(spec: TransportSpec):
    """``(GeneralSystem, L, grid)`` for the quantized generator and forcing covariance kernel."""
    n = spec.n_grid
    L_len = spec.length
    x, xi = torus_phase_grid(n, L_len, spec.eps)
    X, XI = np.meshgrid(x, xi, indexing="ij")
    H0 = weyl_quantize(SymbolField(x, xi, spec.eps, spec.hamiltonian.value(X, XI)))
    D = weyl_quantize(SymbolField(x, xi, spec.eps, spec.damping_fn()(X, XI)))
    M = (1j / spec.eps) * H0.matrix + D.matrix
    sys = GeneralSystem.from_matrix(M)
    l_sym = SymbolField(x, xi, spec.eps, spec.amplitude(X, XI))
    t0 = None if spec.sigma0 is None else spec.eps * spec.sigma0
    source = NoiseSpec.filtered(l_sym, t0=t0)
    Lk = build_L_operator(sys, source)
    if spec.wave:
        if np.any(l_sym.values[:, XI[0] == 0] != 0):
            raise InvalidArgument("wave sources must vanish at xi = 0, where Op(|xi|) is not invertible")
        # Op(|xi|)^{-1} is a Fourier multiplier; the xi = 0 mode is dropped
        inv = np.where(XI[0] != 0, 1.0 / np.where(XI[0] != 0, np.abs(XI[0]), 1.0), 0.0)
        m = np.fft.ifftshift(inv)
        F = np.fft.fft(np.eye(n), axis=0)
        Minv = np.fft.ifft(m[:, None] * F, axis=0)
        Lk = Minv @ Lk @ Minv.conj().T
    return sys, Lk, (x, xi)


def stationary_symbol(spec: TransportSpec) -> SymbolField:
    """Weyl symbol of the exact stationary covariance of the quantized system."""
    sys, Lk, (x, xi) = quantized_system(spec)
    Pi = lyapunov_pi(sys, Lk, hermitian=True)
    h = x[1] - x[0]
    return wigner_of_operator(OperatorKernel(x, np.full(x.size, h), Pi), spec.eps)


def shell_mask(xi, lo=0.2, hi=0.8):
    """Middle band ``lo*xi_N <= |xi| <= hi*xi_N`` of the momentum lattice."""
    xi_n = np.abs(xi).max()
    a = np.abs(xi)
    return (a >= lo * xi_n) & (a <= hi * xi_n)


@dataclass
class LadderEntry:
    eps: float
    n_grid: int
    error: float
    shell_points: int
    masked_points: int
    source_symbol_error: float | None
    seconds: float


@dataclass
class SemiclassicalReport:
    name: str
    entries: list = field(default_factory=list)
    alpha: float | None = None

    @property
    def errors(self):
        return [e.error for e in self.entries]

    def nonincreasing(self, allowance=0.0) -> bool:
        errs = self.errors
        return all(b <= a * (1 + allowance) for a, b in zip(errs, errs[1:]))

    def as_dict(self) -> dict:
        return {"name": self.name, "alpha": self.alpha,
                "ladder": [vars(e) for e in self.entries]}


def source_symbol_error(spec: TransportSpec, Lk, grid, mask) -> float:
    """Relative sup error of the forcing-covariance symbol vs ``|l|^2 * window`` on ``mask``."""
    x, xi = grid
    h = x[1] - x[0]
    sym = wigner_of_operator(OperatorKernel(x, np.full(x.size, h), Lk), spec.eps).values.real
    X, XI = np.meshgrid(x, xi, indexing="ij")
    ref = spec.power(X, XI) * spec.window(X, XI)
    return float(np.abs(sym - ref)[mask].max() / np.abs(ref[mask]).max())


def verify_semiclassical_pi(spec: TransportSpec, eps_ladder=None, *, name="transport") -> SemiclassicalReport:
    """Compare the symbol of ``Pi`` with the transport integral on the middle shell.

    For each ``eps`` the relative sup error ``max|sym(Pi) - pi| / max|pi|``
    is taken over the shell points whose reference ray stayed inside the
    momentum chart. ``alpha`` is the fitted slope of ``log error`` against
    ``log eps``.
    """
    ladder = [spec.eps] if eps_ladder is None else list(eps_ladder)
    report = SemiclassicalReport(name)
    for eps in ladder:
        t_start = time.perf_counter()
        s = spec.with_eps(eps)
        sys, Lk, (x, xi) = quantized_system(s)
        Pi = lyapunov_pi(sys, Lk, hermitian=True)
        h = x[1] - x[0]
        sym = wigner_of_operator(OperatorKernel(x, np.full(x.size, h), Pi), eps).values.real
        X, XI = np.meshgrid(x, xi, indexing="ij")
        shell = np.broadcast_to(shell_mask(xi)[None, :], X.shape)
        ref = np.full(X.shape, np.nan)
        ref[shell] = transport_integral(s, X[shell], XI[shell], xi_max=float(np.abs(xi).max()),
                                        on_chart_exit="mask")
        valid = shell & np.isfinite(ref)
        if not np.any(valid):
            raise ChartError("every shell ray left the momentum chart")
        err = float(np.abs(sym - ref)[valid].max() / np.abs(ref[valid]).max())
        src_err = source_symbol_error(s, Lk, (x, xi), shell) if s.sigma0 is not None else None
        report.entries.append(LadderEntry(eps, x.size, err, int(valid.sum()), int((shell & ~valid).sum()),
                                          src_err, time.perf_counter() - t_start))
    if len(report.entries) >= 2:
        e = np.array([(en.eps, en.error) for en in report.entries])
        if np.all(e[:, 1] > 0):
            report.alpha = float(np.polyfit(np.log(e[:, 0]), np.log(e[:, 1]), 1)[0])
    return report
