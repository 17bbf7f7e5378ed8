"""Deterministic and stochastic evolution with exact per-step transitions.

Both simulators advance the state by the exact Gaussian transition of the
linear SDE over one step, so stationary first and second moments carry no
time-discretization bias. Long scalar recursions are run through
``scipy.signal.lfilter`` instead of a Python loop.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.signal import lfilter

from .errors import InvalidArgument, ResolutionError
from .modal import GeneralSystem, ModalModel, damped_cos_sinc
from .noise import NoiseSpec, OperatorKernel, realization_rng
from .storage import read_array_bundle, write_array_bundle

_PSD_TOL = 1e-10
_RESOLUTION = 0.2


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Probe samples ``[steps, probes, channels]`` at times ``0, dt, ..., T - dt``."""

    probes: np.ndarray
    dt: float
    samples: np.ndarray
    seed: int | None = None
    spec_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise InvalidArgument("samples must have shape [steps, probes, channels]")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgument("trajectory contains non-finite samples")

    @property
    def steps(self) -> int:
        return self.samples.shape[0]

    @property
    def T(self) -> float:
        return self.steps * self.dt

    def probe(self, index, channel=0) -> np.ndarray:
        return self.samples[:, index, channel]

    def save(self, stem):
        meta = {
            "dt": self.dt,
            "T": self.T,
            "probes": np.asarray(self.probes).tolist(),
            "seed": self.seed,
            "spec_hash": self.spec_hash,
            "meta": self.meta,
        }
        return write_array_bundle(stem, self.samples, meta)

    @classmethod
    def load(cls, stem) -> "Trajectory":
        arr, meta = read_array_bundle(stem)
        return cls(np.asarray(meta["probes"]), float(meta["dt"]), arr,
                   seed=meta.get("seed"), spec_hash=meta.get("spec_hash", ""),
                   meta=meta.get("meta", {}))


def propagator_kernel(sys: GeneralSystem, t) -> OperatorKernel:
    """``Omega(t) = exp(-t H)`` on index points with unit weights."""
    if t < 0:
        raise InvalidArgument("the semigroup is defined for t >= 0 only")
    idx = np.arange(sys.n)
    return OperatorKernel(idx, np.ones(sys.n), sys.propagator(t))


def _psd_sqrt(Q):
    """Factor ``S`` with ``S @ S.conj().T == Q`` for a Hermitian PSD ``Q``."""
    w, U = np.linalg.eigh(Q)
    if w.min() < -_PSD_TOL * max(1.0, abs(w).max()):
        raise InvalidArgument(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return U * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# damped wave equation, one mode at a time
# ---------------------------------------------------------------------------

def mode_transition(lam, a, dt) -> np.ndarray:
    """Exact one-step map of ``(u, u_t + a u)`` for ``u'' + 2a u' + lam u = 0``."""
    c, s = damped_cos_sinc(lam - a * a, dt, a)
    c, s = float(c), float(s)
    return np.array([[c, s], [-(lam - a * a) * s, c]])


def _van_loan(A, B, dt):
    """``int_0^dt exp(sA) B exp(sA)^T ds`` for the SDE ``dX = A X dt + dW`` with cov ``B``."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = B
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * dt)
    Phi = E[n:, n:].T
    return Phi @ E[:n, n:]


def mode_step_covariance(lam, a, dt) -> np.ndarray:
    """Covariance of the noise accumulated over one step by a single mode.

    Uses the stationary covariance ``P`` of ``(u, v)``,
    ``Var u = 1/(4 a lam)``, ``Cov(u, v) = 1/(4 lam)``,
    ``Var v = 1/(4a) + a/(4 lam)``, through ``Q = P - Phi P Phi^T``. For
    ``lam = 0`` there is no stationary law and the integral is evaluated by
    the Van Loan block exponential.
    """
    if lam <= 1e-12 * max(a * a, 1.0):
        A = np.array([[-a, 1.0], [-(lam - a * a), -a]])
        return _van_loan(A, np.diag([0.0, 1.0]), dt)
    P = np.array([[1 / (4 * a * lam), 1 / (4 * lam)],
                  [1 / (4 * lam), 1 / (4 * a) + a / (4 * lam)]])
    Phi = mode_transition(lam, a, dt)
    Q = P - Phi @ P @ Phi.T
    return 0.5 * (Q + Q.T)


def _mode_path(lam, a, dt, n_total, rng, scale, init):
    """``u`` of one mode on ``n_total`` steps, starting at ``init = (u0, v0)``."""
    Phi = mode_transition(lam, a, dt)
    tr = Phi[0, 0] + Phi[1, 1]
    det = Phi[0, 0] * Phi[1, 1] - Phi[0, 1] * Phi[1, 0]
    den = [1.0, -tr, det]
    u = np.zeros(n_total)
    if scale != 0.0:
        S = _psd_sqrt(mode_step_covariance(lam, a, dt))
        xi = rng.standard_normal((n_total, 2)) @ S.T * scale
        # AR(2) form of the 2-state recursion for the first component
        u += lfilter([0.0, 1.0, -Phi[1, 1]], den, xi[:, 0])
        u += lfilter([0.0, 0.0, Phi[0, 1]], den, xi[:, 1])
    if init is not None and (init[0] != 0 or init[1] != 0):
        t = np.arange(n_total) * dt
        c, s = damped_cos_sinc(lam - a * a, t, a)
        u += c * init[0] + s * init[1]
    return u


def check_resolution(lam_max, dt):
    if dt > _RESOLUTION / math.sqrt(max(lam_max, 1e-300)):
        raise ResolutionError(
            f"dt = {dt:g} does not resolve the highest mode: need dt <= {_RESOLUTION}/sqrt(lambda_max) "
            f"= {_RESOLUTION / math.sqrt(lam_max):.4g}")


def simulate_wave(model: ModalModel, a, spec: NoiseSpec, probes, dt, T, seed, *,
                  initial=None, noise_scale=1.0, burn_in=None, threads=1) -> Trajectory:
    """Sample ``u_tt + 2a u_t - Delta u = f`` at probe points.

    Parameters
    ----------
    model : ModalModel
        Retained modes; all of them are simulated.
    a : float
        Damping, must be positive.
    spec : NoiseSpec
        White (independent unit noise per channel) or twisted
        (``L0 @ w``). Spatially filtered noise is not a modal-white source;
        use :func:`simulate_first_order` on :func:`wave_first_order_system`.
    probes : array_like
        Probe locations accepted by ``model.eigenfunctions``.
    dt, T : float
        Step and recorded duration; ``round(T/dt)`` samples are kept.
    seed : int
        Mode ``j`` of channel ``c`` uses the stream ``(seed, c, j)``.
    initial : tuple of arrays, optional
        Modal ``(u_j(0), u_t(0) + a u_j(0))`` at the start of the burn-in.
    noise_scale : float
        Multiplies the forcing; 0 gives the deterministic evolution.
    burn_in : float, optional
        Discarded lead time, default ``10/a``.
    """
    if not a > 0:
        raise InvalidArgument("stationarity requires damping: a must be > 0")
    if not dt > 0 or not T > 0:
        raise InvalidArgument("dt and T must be positive")
    if spec.kind == "filtered":
        raise InvalidArgument("filtered sources are simulated through the first-order path")
    lam = np.asarray(model.eigenvalues, dtype=float)
    check_resolution(lam.max(), dt)
    if burn_in is None:
        burn_in = 10.0 / a
    n_keep = int(round(T / dt))
    n_burn = int(math.ceil(burn_in / dt - 1e-9))
    n_total = n_burn + n_keep
    phi = np.asarray(model.eigenfunctions(np.asarray(probes)), dtype=float).T  # (J, P)
    if model.is_real is False:
        raise InvalidArgument("the wave simulator needs a real modal basis")
    if np.any(lam <= 0):
        warnings.warn("modes with lambda = 0 have no stationary law; their paths grow with time")
    init_u = init_v = None
    if initial is not None:
        init_u, init_v = (np.asarray(v, dtype=float) for v in initial)
    n_ch = spec.channels

    def run_channel(ch):
        def one(j):
            init = None if init_u is None else (init_u[j], init_v[j])
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), ch, j]))
            return _mode_path(lam[j], a, dt, n_total, rng, noise_scale, init)[n_burn:]
        acc = np.zeros((n_keep, phi.shape[1]))
        js = range(model.n_modes)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                paths = pool.map(one, js)
                for j, u in zip(js, paths):
                    acc += np.outer(u, phi[j])
        else:
            for j in js:
                acc += np.outer(one(j), phi[j])
        return acc

    indep = np.stack([run_channel(ch) for ch in range(n_ch)], axis=-1)
    samples = indep if spec.kind == "white" else indep @ spec.L0.T
    if spec.kind != "white" and np.all(np.imag(spec.L0) == 0):
        samples = samples.real
    meta = {"a": a, "burn_in": n_burn * dt, "noise_scale": noise_scale, "n_modes": model.n_modes}
    return Trajectory(np.asarray(probes), float(dt), samples, seed=seed,
                      spec_hash=spec.spec_hash(), meta=meta)


# ---------------------------------------------------------------------------
# first-order systems
# ---------------------------------------------------------------------------

def check_covariance(L):
    L = np.asarray(L, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise InvalidArgument("forcing covariance must be square")
    scale = max(1.0, abs(L).max())
    if abs(L - L.conj().T).max() > _PSD_TOL * scale:
        raise InvalidArgument("forcing covariance is not Hermitian")
    if np.linalg.eigvalsh(0.5 * (L + L.conj().T)).min() < -_PSD_TOL * scale:
        raise InvalidArgument("forcing covariance is not positive semidefinite")
    return L


def step_noise_covariance(sys: GeneralSystem, L, dt) -> np.ndarray:
    """``int_0^dt Omega(s) L Omega(s)^* ds`` (eigenbasis closed form when available)."""
    if sys.diagonalizable:
        mu, V, Vi = sys.eigvals, sys.eigvecs, sys.eigvecs_inv
        Lt = Vi @ L @ Vi.conj().T
        den = mu[:, None] + mu.conj()[None, :]
        M = Lt * (-np.expm1(-dt * den)) / den
        Q = V @ M @ V.conj().T
    else:
        n = sys.n
        M = np.zeros((2 * n, 2 * n), dtype=complex)
        M[:n, :n] = sys.matrix
        M[:n, n:] = L
        M[n:, n:] = -sys.matrix.conj().T
        E = scipy.linalg.expm(M * dt)
        Phi = E[n:, n:].conj().T
        Q = Phi @ E[:n, n:]
    return 0.5 * (Q + Q.conj().T)


def simulate_first_order(sys: GeneralSystem, L, dt, T, seed, probes=None, *,
                         initial=None, burn_in=None) -> Trajectory:
    """Exact Ornstein-Uhlenbeck sampling of ``u' = -H u + f``, ``E f f^* = L delta``.

    Records the components listed in ``probes`` (default: all) at
    ``round(T/dt)`` times after a burn-in of ``10/k`` by default.
    The noise is real when ``H`` and ``L`` are real and circular complex
    otherwise.
    """
    if not dt > 0 or not T > 0:
        raise InvalidArgument("dt and T must be positive")
    L = check_covariance(L)
    if L.shape[0] != sys.n:
        raise InvalidArgument("forcing covariance size does not match the system")
    probes = np.arange(sys.n) if probes is None else np.asarray(probes, dtype=int)
    if burn_in is None:
        burn_in = 10.0 / sys.margin
    n_keep = int(round(T / dt))
    n_burn = int(math.ceil(burn_in / dt - 1e-9))
    n_total = n_burn + n_keep
    real = np.all(sys.matrix.imag == 0) and np.all(L.imag == 0)
    rng = np.random.default_rng(seed)
    Q = step_noise_covariance(sys, L, dt)
    S = _psd_sqrt(Q.real if real else Q)
    if real:
        xi = rng.standard_normal((n_total, sys.n)) @ S.T
    else:
        z = (rng.standard_normal((n_total, sys.n)) + 1j * rng.standard_normal((n_total, sys.n))) / math.sqrt(2)
        xi = z @ S.T
    u0 = np.zeros(sys.n) if initial is None else np.asarray(initial)
    if sys.diagonalizable:
        mu, V, Vi = sys.eigvals, sys.eigvecs, sys.eigvecs_inv
        eta = xi @ Vi.T
        rho = np.exp(-mu * dt)
        y = np.empty((n_total, sys.n), dtype=complex)
        y0 = Vi @ u0
        steps = np.arange(n_total)
        for j in range(sys.n):
            y[:, j] = lfilter([0.0, 1.0], [1.0, -rho[j]], eta[:, j])
            if y0[j] != 0:
                y[:, j] += y0[j] * rho[j] ** steps
        u = y[n_burn:] @ V[probes].T
    else:
        Om = sys.propagator(dt)
        u = np.empty((n_total, sys.n), dtype=complex)
        state = u0.astype(complex)
        for i in range(n_total):
            u[i] = state
            state = Om @ state + xi[i]
        u = u[n_burn:, probes]
    if real:
        u = u.real
    meta = {"burn_in": n_burn * dt, "margin": sys.margin}
    return Trajectory(probes, float(dt), u[:, :, None], seed=seed, meta=meta)


def wave_first_order_system(model: ModalModel, a):
    """Generator and white-noise forcing of the wave equation in modal ``(u, u_t + a u)``.

    The state is ``[u_1..u_J, v_1..v_J]`` with ``v = u_t + a u``. Returns
    ``(GeneralSystem, L)`` where ``L = diag(0, I)``.
    """
    lam = np.asarray(model.eigenvalues, dtype=float)
    J = lam.size
    H = np.zeros((2 * J, 2 * J))
    idx = np.arange(J)
    H[idx, idx] = a
    H[idx, J + idx] = -1.0
    H[J + idx, idx] = lam - a * a
    H[J + idx, J + idx] = a
    L = np.zeros((2 * J, 2 * J))
    L[J + idx, J + idx] = 1.0
    return GeneralSystem.from_matrix(H), L
