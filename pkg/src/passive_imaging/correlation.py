"""Two-point correlations: estimation from records and exact evaluation.

Negative lags always follow ``C_AB(-tau) = C_BA(tau)^*``; for a matrix
valued series over channels this is ``C(-tau) = C(tau)^H``.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import FormatError, InvalidArgument, RangeError, ResonanceError
from .modal import GeneralSystem, ModalModel, damped_cos_sinc
from .noise import NoiseSpec

_RESONANCE_TOL = 1e-12
_MAX_EXP = 700.0


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrelationSeries:
    """``values[l]`` is the ``N x N`` matrix ``C(lags[l])``; ``stderr`` matches in shape."""

    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=float)
        if lags.ndim != 1 or lags.size < 1:
            raise InvalidArgument("lags must be a non-empty 1D grid")
        if not np.allclose(lags, -lags[::-1], rtol=0, atol=1e-9 * max(1.0, abs(lags).max())):
            raise InvalidArgument("lag grid is not symmetric about 0")
        if lags.size > 2 and not np.allclose(np.diff(lags), lags[1] - lags[0], rtol=1e-9, atol=0):
            raise InvalidArgument("lag grid is not uniform")
        vals = np.asarray(self.values)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        se = np.zeros(vals.shape) if self.stderr is None else np.asarray(self.stderr, dtype=float)
        if se.ndim == 1:
            se = se[:, None, None]
        if vals.shape[0] != lags.size or se.shape != vals.shape:
            raise InvalidArgument("values/stderr shapes do not match the lag grid")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", vals.astype(complex))
        object.__setattr__(self, "stderr", se)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def entry(self, i=0, j=0) -> np.ndarray:
        return self.values[:, i, j]

    def swapped(self) -> "CorrelationSeries":
        """Series of the swapped pair ``C_BA`` from ``C_BA(tau) = C_AB(-tau)^H``."""
        vals = np.conj(np.swapaxes(self.values[::-1], 1, 2))
        se = np.swapaxes(self.stderr[::-1], 1, 2)
        return CorrelationSeries(self.lags, vals, se, dict(self.meta))

    def _columns(self):
        n = self.channels
        names = ["tau"]
        for i in range(n):
            for j in range(n):
                names += [f"re_C_{i}{j}", f"im_C_{i}{j}", f"stderr_{i}{j}"]
        return names

    def to_csv(self, path, sidecar=True) -> None:
        path = Path(path)
        n = self.channels
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self._columns())
            for l, tau in enumerate(self.lags):
                row = [repr(float(tau))]
                for i in range(n):
                    for j in range(n):
                        z = self.values[l, i, j]
                        row += [repr(float(z.real)), repr(float(z.imag)), repr(float(self.stderr[l, i, j]))]
                w.writerow(row)
        if sidecar:
            path.with_suffix(".json").write_text(json.dumps(self.meta, sort_keys=True, indent=1, default=_jsonable))

    @classmethod
    def from_csv(cls, path) -> "CorrelationSeries":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "tau":
            raise FormatError(f"{path}: missing header")
        n = int(round(math.sqrt((len(rows[0]) - 1) / 3)))
        if 1 + 3 * n * n != len(rows[0]):
            raise FormatError(f"{path}: unexpected column count {len(rows[0])}")
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        lags = data[:, 0]
        body = data[:, 1:].reshape(len(lags), n, n, 3)
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(lags, body[..., 0] + 1j * body[..., 1], body[..., 2], meta)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def lag_grid(dt, tau_max) -> np.ndarray:
    """Symmetric grid of integer multiples of ``dt`` covering ``[-tau_max, tau_max]``."""
    K = int(math.floor(tau_max / dt + 1e-9))
    return np.arange(-K, K + 1) * dt


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def _segment_xcorr(x, y, K):
    """Unbiased lag products ``mean_t x(t) y(t - k)^*`` for ``k = -K..K``."""
    M = x.shape[0]
    nfft = 1 << int(math.ceil(math.log2(M + K + 1)))
    X = np.fft.fft(x, nfft, axis=0)
    Y = np.fft.fft(y, nfft, axis=0)
    n = x.shape[1]
    out = np.empty((2 * K + 1, n, n), dtype=complex)
    counts = M - np.abs(np.arange(-K, K + 1))
    for i in range(n):
        for j in range(n):
            r = np.fft.ifft(X[:, i] * np.conj(Y[:, j]))
            out[:, i, j] = np.concatenate([r[nfft - K:], r[:K + 1]]) / counts
    return out


def empirical_correlation(traj_a, traj_b, tau_max, segments, probe_a=0, probe_b=0) -> CorrelationSeries:
    """Segmented lag-domain estimate of ``C_AB(tau)`` with inter-segment standard errors.

    The record is cut into ``segments`` contiguous blocks; each block gives
    an unbiased raw lag average (no taper). The result is the block mean and
    the standard error is the block standard deviation over
    ``sqrt(segments)``.
    """
    if not math.isclose(traj_a.dt, traj_b.dt, rel_tol=1e-12) or traj_a.steps != traj_b.steps:
        raise InvalidArgument("trajectories must share dt and duration")
    if segments < 2:
        raise InvalidArgument("need at least 2 segments for a standard error")
    dt = traj_a.dt
    T = traj_a.T
    if tau_max > T / 10 * (1 + 1e-12):
        raise InvalidArgument(f"tau_max = {tau_max:g} exceeds T/10 = {T / 10:g}")
    K = int(math.floor(tau_max / dt + 1e-9))
    M = traj_a.steps // segments
    if M <= 2 * K:
        raise InvalidArgument("segments are too short for the requested lag range")
    xa = traj_a.samples[:, probe_a, :]
    xb = traj_b.samples[:, probe_b, :]
    blocks = np.array([_segment_xcorr(xa[s * M:(s + 1) * M], xb[s * M:(s + 1) * M], K)
                       for s in range(segments)])
    mean = blocks.mean(axis=0)
    se_re = blocks.real.std(axis=0, ddof=1)
    se_im = blocks.imag.std(axis=0, ddof=1)
    se = np.sqrt(se_re ** 2 + se_im ** 2) / math.sqrt(segments)
    meta = {"estimator": "segmented-raw", "segments": segments, "segment_length": M,
            "T": T, "dt": dt, "probe_a": probe_a, "probe_b": probe_b}
    return CorrelationSeries(np.arange(-K, K + 1) * dt, mean, se, meta)


# ---------------------------------------------------------------------------
# exact formulas for first-order systems
# ---------------------------------------------------------------------------

def lyapunov_pi(sys: GeneralSystem, L, hermitian=True) -> np.ndarray:
    """Solve ``H Pi + Pi H^* = L``, the stationary covariance ``int_0^inf Omega L Omega^* ds``.

    In the eigenbasis ``H = V diag(mu) V^{-1}`` the solution is
    ``Pi~_jk = L~_jk / (mu_j + conj(mu_k))`` with ``L~ = V^{-1} L V^{-*}``.
    Defective systems fall back to ``scipy.linalg.solve_continuous_lyapunov``.
    """
    L = np.asarray(L, dtype=complex)
    if L.shape != sys.matrix.shape:
        raise InvalidArgument("L has the wrong size for this system")
    mu = sys.eigvals
    den = mu[:, None] + mu.conj()[None, :]
    if np.abs(den).min() < _RESONANCE_TOL:
        raise ResonanceError("mu_j + conj(mu_k) vanishes: no stationary covariance")
    if sys.diagonalizable:
        V, Vi = sys.eigvecs, sys.eigvecs_inv
        Pi = V @ ((Vi @ L @ Vi.conj().T) / den) @ V.conj().T
    else:
        Pi = scipy.linalg.solve_continuous_lyapunov(sys.matrix, L)
    if hermitian:
        Pi = 0.5 * (Pi + Pi.conj().T)
    return Pi


def _gauss_legendre(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def build_L_operator(sys: GeneralSystem, spec: NoiseSpec, *, weights=None, nodes=64) -> np.ndarray:
    """Forcing covariance ``L`` (as a kernel matrix) seen by the system.

    White and twisted sources are delta-correlated in time, so ``L`` is the
    spatial factor itself: ``diag(1/w_g)`` tensored with ``K0``, state index
    ``g * N + c``. A filtered source contributes the kernel of ``L L^*``;
    with a time window it becomes ``int kappa(t) Omega(-t) dt @ [L L^*]``,
    computed by Gauss-Legendre on each half of ``[-t0, t0]``.
    """
    if spec.kind in ("white", "twisted"):
        K0 = spec.K0
        G = sys.n // K0.shape[0]
        if G * K0.shape[0] != sys.n:
            raise InvalidArgument("system size is not a multiple of the channel count")
        w = np.ones(G) if weights is None else np.asarray(weights, dtype=float)
        return np.kron(np.diag(1.0 / w), K0)
    LL = spec.spatial_covariance().kernel
    if LL.shape != sys.matrix.shape:
        raise InvalidArgument("filtered source grid does not match the system size")
    if spec.t0 is None:
        return LL
    t0 = spec.t0
    growth = t0 * max(0.0, float(np.max(sys.eigvals.real)))
    if growth > _MAX_EXP:
        raise RangeError(f"Omega(-t) overflows over the source support (exponent {growth:.3g})")
    ts, ws = zip(*(_gauss_legendre(lo, hi, nodes) for lo, hi in ((-t0, 0.0), (0.0, t0))))
    ts, ws = np.concatenate(ts), np.concatenate(ws) * spec.time_profile(np.concatenate(ts))
    if sys.diagonalizable:
        b = np.exp(np.outer(sys.eigvals, ts)) @ ws
        B = (sys.eigvecs * b) @ sys.eigvecs_inv
    else:
        B = sum(w * sys.propagator(-t) for t, w in zip(ts, ws))
    return B @ LL


def analytic_correlation(sys: GeneralSystem, Pi, tau) -> np.ndarray:
    """``Omega(tau) Pi`` for ``tau >= 0`` and ``(Omega(-tau) Pi)^H`` otherwise.

    ``tau`` may be an array, in which case the result is stacked along
    axis 0.
    """
    Pi = np.asarray(Pi)
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.empty((taus.size,) + Pi.shape, dtype=complex)
    for i, t in enumerate(taus):
        C = sys.propagator(abs(t)) @ Pi
        out[i] = C if t >= 0 else C.conj().T
    return out[0] if np.ndim(tau) == 0 else out


def analytic_series(sys: GeneralSystem, Pi, lags, meta=None) -> CorrelationSeries:
    vals = analytic_correlation(sys, Pi, np.asarray(lags))
    return CorrelationSeries(lags, vals, None, dict(meta or {}, source="analytic"))


# ---------------------------------------------------------------------------
# damped wave equation
# ---------------------------------------------------------------------------

def wave_correlation_modes(model: ModalModel, a, tau, A, B) -> np.ndarray:
    """Per-mode terms ``e^{-a|tau|}/(4 lam)[c/a + s(|tau|)] phi(A) phi(B)``, shape ``(len(tau), J)``.

    Modes with ``lam = 0`` are set to zero (the closed form divides by
    ``lam``); a warning is issued if any are present.
    """
    if not a > 0:
        raise InvalidArgument("the closed form needs a > 0")
    lam = np.asarray(model.eigenvalues, dtype=float)
    tau = np.abs(np.atleast_1d(np.asarray(tau, dtype=float)))
    phiA = model.eigenfunctions(np.atleast_1d(A))[0]
    phiB = model.eigenfunctions(np.atleast_1d(B))[0]
    keep = lam > 0
    if not np.all(keep):
        warnings.warn("modes with lambda = 0 are excluded from the closed-form wave correlation")
    z = (lam - a * a)[None, :]
    c, s = damped_cos_sinc(z, tau[:, None], a)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (c / a + s) / (4 * lam[None, :]) * np.real(phiA * np.conj(phiB))[None, :]
    terms[:, ~keep] = 0.0
    return terms


def closed_form_wave_correlation(model: ModalModel, a, tau, A, B):
    """Field correlation of the damped wave equation driven by unit white noise."""
    out = wave_correlation_modes(model, a, tau, A, B).sum(axis=1)
    return out[0] if np.ndim(tau) == 0 else out


def wave_series(model: ModalModel, a, lags, A, B) -> CorrelationSeries:
    return CorrelationSeries(lags, closed_form_wave_correlation(model, a, np.asarray(lags), A, B), None,
                             {"source": "closed-form", "a": a, "A": A, "B": B})


def band_model(model: ModalModel, omega_min) -> ModalModel:
    """Restriction of ``model`` to modes with ``lam >= omega_min**2``."""
    from dataclasses import replace
    lam = np.asarray(model.eigenvalues)
    keep = np.flatnonzero(lam >= omega_min ** 2)
    if keep.size == 0:
        raise InvalidArgument(f"no modes with frequency >= {omega_min:g}")
    basis = model._basis
    return replace(model, eigenvalues=lam[keep], _basis=lambda pts: basis(pts)[:, keep])


@dataclass(frozen=True)
class DerivativeResidual:
    tau: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    relative: float


def derivative_relation_residual(model: ModalModel, a, tau, A, B, omega_min, green="undamped") -> DerivativeResidual:
    """Compare ``d/dtau C`` with ``(e^{-a|tau|}/4a)(G(-tau) - G(tau))`` on a frequency band.

    ``green="undamped"`` uses the causal Green function of the undamped
    equation, ``Y(t) sin(t sqrt(lam))/sqrt(lam)``; this is the high
    frequency approximation and degrades at low frequency.
    ``green="shifted"`` uses ``Y(t) sin(t P)/P`` with ``P^2 = lam - a^2``,
    for which the relation holds exactly and the residual is pure
    finite-difference error. The derivative is a centered difference.
    """
    sub = band_model(model, omega_min)
    tau = np.asarray(tau, dtype=float)
    lam = np.asarray(sub.eigenvalues, dtype=float)
    h = 1e-3 / math.sqrt(lam.max())
    lhs = (closed_form_wave_correlation(sub, a, tau + h, A, B)
           - closed_form_wave_correlation(sub, a, tau - h, A, B)) / (2 * h)
    phi = np.real(sub.eigenfunctions(np.atleast_1d(A))[0] * np.conj(sub.eigenfunctions(np.atleast_1d(B))[0]))
    if green == "undamped":
        z = lam
    elif green == "shifted":
        z = lam - a * a
    else:
        raise InvalidArgument(f"unknown Green function variant {green!r}")
    _, s = damped_cos_sinc(z[None, :], np.abs(tau)[:, None], 0.0)
    g_abs = s @ phi
    # G(-tau) - G(tau) = -sign(tau) g(|tau|) for the causal kernel
    rhs = np.exp(-a * np.abs(tau)) / (4 * a) * (-np.sign(tau) * g_abs)
    res = lhs - rhs
    rel = float(np.linalg.norm(res) / max(np.linalg.norm(rhs), 1e-300))
    return DerivativeResidual(tau, lhs, rhs, res, rel)


def fit_log_slope(tau, values) -> float:
    """Least-squares slope of ``log|values|`` against ``tau``."""
    tau = np.asarray(tau, dtype=float)
    y = np.log(np.abs(np.asarray(values, dtype=float)))
    return float(np.polyfit(tau, y, 1)[0])


def low_frequency_slope(lam, a, tau) -> float:
    """Fitted decay rate of a single mode's correlation term over ``tau``.

    For ``lam < a^2`` the term behaves like ``e^{(r - a)|tau|}``,
    ``r = sqrt(a^2 - lam)``.
    """
    from .modal import build_interval_modes
    # a unit-normalized single mode with the requested eigenvalue
    length = math.pi / math.sqrt(lam)
    model = build_interval_modes(1, length)
    mid = length / 2
    terms = wave_correlation_modes(model, a, tau, mid, mid)[:, 0]
    return fit_log_slope(tau, terms)


def time_reversal_residual(series: CorrelationSeries) -> float:
    """``max_tau |C(-tau) - conj C(tau)| / max |C|``."""
    V = series.values
    diff = np.abs(V[::-1] - np.conj(V)).max()
    return float(diff / max(np.abs(V).max(), 1e-300))


def time_reversal_stderr(series: CorrelationSeries) -> float:
    """Standard error of the quantity bounded by :func:`time_reversal_residual`, same normalization."""
    S = series.stderr
    agg = np.sqrt(S ** 2 + S[::-1] ** 2).max()
    return float(agg / max(np.abs(series.values).max(), 1e-300))


# ---------------------------------------------------------------------------
# twisted white noise in the diagonal gauge
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwistedReport:
    """Per mode: ``Pi_j = diag(K0)/(2a) + R_j``; ``slope`` is the log-log fit of ``|R_j|`` vs ``p_j``."""

    p: np.ndarray
    pi: np.ndarray
    remainder: np.ndarray
    remainder_norm: np.ndarray
    slope: float
    fit_pmin: float


def twisted_pi_analysis(model: ModalModel, a, K0, fit_pmin=None) -> TwistedReport:
    """Stationary covariance of each high mode in the frame ``Omega = e^{-at} diag(e^{itp}, e^{-itp})``.

    ``K0`` is the 2x2 source covariance in that frame. The slope is fitted
    over modes with ``p_j >= fit_pmin`` (default ``10 a``) where the
    asymptotic regime applies; if fewer than 2 modes qualify all high modes
    are used.
    """
    if not a > 0:
        raise InvalidArgument("a must be positive")
    K0 = np.asarray(K0, dtype=complex)
    if K0.shape != (2, 2):
        raise InvalidArgument("K0 must be 2x2 in the gauge frame")
    lam = np.asarray(model.eigenvalues, dtype=float)
    p = np.sqrt(lam[lam > a * a] - a * a)
    if p.size == 0:
        raise InvalidArgument("no modes above the damping frequency")
    diag = np.diag(np.diag(K0)) / (2 * a)
    pis, rems = [], []
    for pj in p:
        sys = GeneralSystem.from_matrix(np.diag([a - 1j * pj, a + 1j * pj]))
        Pi = lyapunov_pi(sys, K0, hermitian=False)
        pis.append(Pi)
        rems.append(Pi - diag)
    rems = np.array(rems)
    norms = np.linalg.norm(rems, ord=2, axis=(1, 2))
    pmin = 10 * a if fit_pmin is None else fit_pmin
    sel = p >= pmin
    if sel.sum() < 2:
        sel = np.ones(p.size, bool)
    slope = float("nan")
    if np.all(norms[sel] > 0):
        slope = float(np.polyfit(np.log(p[sel]), np.log(norms[sel]), 1)[0])
    return TwistedReport(p, np.array(pis), rems, norms, slope, pmin)
