"""Full quantum model of the pointer: two engine qubits and the ladder.

The Hilbert space is ``C^2 (cold) x C^2 (hot) x C^d (ladder)`` with basis
index ``n_c * 2d + n_h * d + k``. Superoperators act on column-stacked
density matrices, ``vec(A X B) = (B^T kron A) vec(X)``.

The evolution conditioned on no photon emission is

    d rho / dt = -i (K rho - rho K^dag) + sum_j L_j rho L_j^dag,

with ``K = H_eff - (i/2) sum_j L_j^dag L_j`` and ``H_eff = H0 + H_int + H_se``.
Its trace ``P0(t)`` is the probability that no tick has occurred yet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .exceptions import NonDecaying, SingularGenerator, StepFailure, TailDominated
from .model import ClockParams, TickStatistics

FRAMES = ("lab", "rotating")
BASIS_TAG = "index=n_c*2d+n_h*d+k"
VEC_TAG = "column-stacking"

_SIGMA = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))  # |0><1|
_I2 = sp.identity(2, format="csr")


@dataclass(frozen=True)
class JumpOperator:
    name: str
    op: sp.csr_matrix  # bare operator, without the rate
    rate: float

    @property
    def scaled(self) -> sp.csr_matrix:
        return math.sqrt(self.rate) * self.op


@dataclass(frozen=True, eq=False)
class PointerOperators:
    """Hamiltonian pieces and thermal jump operators of the pointer."""

    params: ClockParams
    H0: sp.csr_matrix
    H_int: sp.csr_matrix
    H_se: sp.csr_matrix
    jumps: tuple[JumpOperator, ...]

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def H_eff(self) -> sp.csr_matrix:
        return (self.H0 + self.H_int + self.H_se).tocsr()

    @cached_property
    def top_projector_diag(self) -> np.ndarray:
        """Boolean mask of basis states with the ladder in its top level."""
        d = self.params.d
        return (np.arange(self.dim) % d) == d - 1


def _ladder_ops(d):
    k = np.arange(d, dtype=float)
    raise_ = sp.diags(np.ones(d - 1), -1, shape=(d, d), format="csr")  # |k+1><k|
    top = sp.csr_matrix(([1.0], ([d - 1], [d - 1])), shape=(d, d))
    return sp.diags(k, format="csr"), raise_, top


def _on(c, h, w):
    return sp.kron(c, sp.kron(h, w, format="csr"), format="csr")


def build_operators(params: ClockParams) -> PointerOperators:
    """Assemble ``H0``, ``H_int``, ``H_se`` and the four qubit jump operators."""
    p = params
    d = p.d
    Id = sp.identity(d, format="csr")
    n_op = (_SIGMA.T @ _SIGMA).tocsr()  # |1><1|
    k_op, raise_w, top = _ladder_ops(d)

    H0 = p.E_c * _on(n_op, _I2, Id) + p.E_h * _on(_I2, n_op, Id) + p.E_w * _on(_I2, _I2, k_op)
    # |1_c 0_h k+1><0_c 1_h k| + h.c.
    up = _on(_SIGMA.T, _SIGMA, raise_w)
    H_int = (p.g * (up + up.T)).tocsr()
    H_int.eliminate_zeros()
    H_se = (-0.5j * p.Gamma) * _on(_I2, _I2, top)

    sigma_h = _on(_I2, _SIGMA, Id)
    sigma_c = _on(_SIGMA, _I2, Id)
    jumps = (
        JumpOperator("sigma_h", sigma_h, p.gamma_h),
        JumpOperator("sigma_h_dag", sigma_h.T.tocsr(), p.gamma_h * math.exp(-p.beta_h * p.E_h)),
        JumpOperator("sigma_c", sigma_c, p.gamma_c),
        JumpOperator("sigma_c_dag", sigma_c.T.tocsr(), p.gamma_c * math.exp(-p.beta_c * p.E_c)),
    )
    return PointerOperators(
        params=p,
        H0=H0.tocsr().astype(complex),
        H_int=H_int.tocsr().astype(complex),
        H_se=H_se.tocsr(),
        jumps=jumps,
    )


@dataclass(frozen=True)
class ConditionalState:
    """Unnormalized density matrix of the no-click subensemble at time ``t``."""

    rho: np.ndarray
    t: float = 0.0

    @property
    def survival(self) -> float:
        return float(np.real(np.trace(self.rho)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))[0])


def _qubit_gibbs(E, beta):
    w = math.exp(-beta * E)
    return np.array([1.0, w]) / (1.0 + w)


def initial_state(params: ClockParams) -> ConditionalState:
    """Qubits thermal at their bath temperatures, ladder in the ground state."""
    d = params.d
    pc = _qubit_gibbs(params.E_c, params.beta_c)
    ph = _qubit_gibbs(params.E_h, params.beta_h)
    ladder = np.zeros(d)
    ladder[0] = 1.0
    diag = np.kron(pc, np.kron(ph, ladder))
    return ConditionalState(np.diag(diag).astype(complex), 0.0)


class NoclickGenerator:
    """Generator of the conditional (no-click) master equation.

    Parameters
    ----------
    ops : PointerOperators
    frame : {"lab", "rotating"}
        ``"rotating"`` drops ``H0``. Since ``H0`` commutes with ``H_int``,
        ``H_se`` and every dissipator, this is the interaction picture with
        respect to ``H0``; populations, the trace and ``W(t)`` are identical in
        both frames.
    scale : float
        Overall time-scale factor multiplying the generator.
    """

    def __init__(self, ops: PointerOperators, frame: str = "lab", scale: float = 1.0):
        if frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}")
        self.ops = ops
        self.frame = frame
        self.scale = float(scale)
        H = ops.H_int + ops.H_se
        if frame == "lab":
            H = H + ops.H0
        drain = sum(j.rate * (j.op.T @ j.op) for j in ops.jumps)
        self._K = (H - 0.5j * drain).tocsr()
        self._Kdag = self._K.conj().T.tocsr()
        self._L = [j.scaled.astype(complex).tocsr() for j in ops.jumps if j.rate > 0]
        self._Ldag = [L.conj().T.tocsr() for L in self._L]
        self._k_diag = np.asarray(self._K.diagonal())
        self._jump_rates = tuple(j.rate for j in ops.jumps)

    @property
    def dim(self) -> int:
        return self.ops.dim

    @property
    def Gamma(self) -> float:
        return self.scale * self.ops.params.Gamma

    def scaled(self, c: float) -> "NoclickGenerator":
        return NoclickGenerator(self.ops, self.frame, self.scale * c)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Matrix-free action on a ``4d x 4d`` density matrix.

        Works on the ``(c, h, k, c', h', k')`` tensor view of ``rho``; every
        operator is either diagonal or a shifted block copy, so the cost is
        ``O(d^2)``.
        """
        d = self.ops.params.d
        R = rho.reshape(2, 2, d, 2, 2, d)
        kd = self._k_diag
        out = -1j * kd[:, None] * rho + 1j * rho * kd.conj()[None, :]
        O = out.reshape(2, 2, d, 2, 2, d)
        g = self.ops.params.g
        if g != 0.0:
            # -i g (U + U^dag) rho, with U = |1_c 0_h k+1><0_c 1_h k|
            O[1, 0, 1:] -= 1j * g * R[0, 1, :-1]
            O[0, 1, :-1] -= 1j * g * R[1, 0, 1:]
            # +i g rho (U + U^dag)
            O[:, :, :, 0, 1, :-1] += 1j * g * R[:, :, :, 1, 0, 1:]
            O[:, :, :, 1, 0, 1:] += 1j * g * R[:, :, :, 0, 1, :-1]
        r_hd, r_hu, r_cd, r_cu = self._jump_rates
        # sigma rho sigma^dag moves population/coherence between qubit levels
        O[:, 0, :, :, 0, :] += r_hd * R[:, 1, :, :, 1, :]
        O[:, 1, :, :, 1, :] += r_hu * R[:, 0, :, :, 0, :]
        O[0, :, :, 0, :, :] += r_cd * R[1, :, :, 1, :, :]
        O[1, :, :, 1, :, :] += r_cu * R[0, :, :, 0, :, :]
        if self.scale != 1.0:
            out *= self.scale
        return out

    def apply_sparse(self, rho: np.ndarray) -> np.ndarray:
        """Same action as :meth:`apply`, through sparse operator products."""
        out = -1j * (self._K @ rho - (self._Kdag.T @ rho.T).T)
        for L, Ld in zip(self._L, self._Ldag):
            out += L @ (Ld.T @ rho.T).T
        if self.scale != 1.0:
            out *= self.scale
        return out

    @cached_property
    def matrix(self) -> sp.csc_matrix:
        """Explicit sparse superoperator of dimension ``(4d)^2``."""
        n = self.dim
        I = sp.identity(n, format="csr", dtype=complex)
        K = self._K
        G = -1j * sp.kron(I, K) + 1j * sp.kron(K.conj(), I)
        for L in self._L:
            G = G + sp.kron(L.conj(), L)
        return (self.scale * G).tocsc()

    @cached_property
    def trace_row(self) -> np.ndarray:
        """Vector ``t`` with ``t @ vec(rho) = tr(rho)``."""
        n = self.dim
        row = np.zeros(n * n)
        row[np.arange(n) * (n + 1)] = 1.0
        return row

    def emission_density(self, rho: np.ndarray) -> float:
        """``W = Gamma * (top-level population)``, equal to ``-d tr(rho)/dt``."""
        top = self.ops.top_projector_diag
        return self.Gamma * float(np.real(np.diagonal(rho)[top].sum()))


def noclick_generator(ops: PointerOperators, frame: str = "lab") -> NoclickGenerator:
    return NoclickGenerator(ops, frame)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape(n, n, order="F")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_HAT = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B - _B_HAT


@dataclass
class WaitingTimeDensity:
    """Samples of the survival probability and waiting-time density.

    ``dW`` holds the exact time derivative of ``W`` at each sample, which the
    moment quadrature uses for cubic Hermite interpolation.
    """

    t: np.ndarray
    P0: np.ndarray
    W: np.ndarray
    dW: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def tail_mass(self) -> float:
        return float(self.P0[-1])

    def integral(self) -> float:
        """Quadrature of ``W`` over the recorded grid."""
        return _hermite_integral(self.t, self.W, self.dW)

    def total_mass(self) -> float:
        """Integrated density plus the probability not yet emitted."""
        return self.integral() + self.tail_mass


def _hermite_integral(t, f, df):
    h = np.diff(t)
    return float(np.sum(0.5 * h * (f[:-1] + f[1:]) + h**2 / 12.0 * (df[:-1] - df[1:])))


def default_horizon(params: ClockParams) -> float:
    """Time by which any operational clock has lost survival probability.

    Scales with the slowest positive rate, including the engine's ``p_up``
    which goes as ``g**2``.
    """
    from .model import engine_rates

    p_up, _ = engine_rates(params, warn=False)
    rates = [r for r in (p_up / params.d, params.g, params.Gamma, params.gamma_h, params.gamma_c) if r > 0]
    return 1e4 / min(rates)


EVOLVE_METHODS = ("auto", "dopri5", "radau")
# fast/slow rate ratio above which "auto" switches to the implicit solver
STIFFNESS_THRESHOLD = 50.0


def stiffness_ratio(params: ClockParams) -> float:
    """Qubit relaxation rate over the fastest ladder rate; large means stiff."""
    from .model import engine_rates

    fast = params.gamma_h * params.Z_h + params.gamma_c * params.Z_c
    slow = max(*engine_rates(params, warn=False), params.g, 1e-300)
    if params.Gamma > 0:
        slow = max(slow, min(params.Gamma, fast))
    return fast / slow


class _Recorder:
    """Accumulates the waiting-time samples and worst-case physicality values."""

    def __init__(self, G: NoclickGenerator, check_physicality: bool):
        n = G.dim
        self.n = n
        self.diag = np.arange(n) * (n + 1)
        self.top = np.flatnonzero(G.ops.top_projector_diag) * (n + 1)
        self.gamma = G.Gamma
        self.check = check_physicality
        self.t, self.P0, self.W, self.dW = [], [], [], []
        self.worst = {"max_hermiticity_error": 0.0, "min_eigenvalue": math.inf, "max_trace_increase": 0.0}

    def survival(self, v) -> float:
        return float(np.real(v[self.diag].sum()))

    def add(self, t, v, f):
        P0 = self.survival(v)
        if self.check:
            state = ConditionalState(unvec(v, self.n), t)
            w = self.worst
            w["max_hermiticity_error"] = max(w["max_hermiticity_error"], state.hermiticity_error())
            w["min_eigenvalue"] = min(w["min_eigenvalue"], state.min_eigenvalue())
            if self.P0:
                w["max_trace_increase"] = max(w["max_trace_increase"], P0 - self.P0[-1])
        self.t.append(float(t))
        self.P0.append(P0)
        self.W.append(self.gamma * float(np.real(v[self.top].sum())))
        self.dW.append(self.gamma * float(np.real(f[self.top].sum())))

    def check_decay(self, horizon):
        if self.t[-1] >= horizon and self.P0[-1] > 1.0 - 1e-6:
            raise NonDecaying(
                f"P0 = {self.P0[-1]:.12g} still above 1 - 1e-6 at t = {self.t[-1]:.6g}; "
                "the clock does not tick"
            )

    def result(self, metadata, final) -> WaitingTimeDensity:
        metadata = dict(metadata)
        metadata["t_cutoff"] = self.t[-1]
        metadata["tail_mass"] = self.P0[-1]
        metadata["final_state"] = unvec(final, self.n)
        if self.check:
            metadata.update(self.worst)
        return WaitingTimeDensity(
            t=np.array(self.t), P0=np.array(self.P0), W=np.array(self.W),
            dW=np.array(self.dW), metadata=metadata,
        )


def evolve(
    G: NoclickGenerator,
    state: ConditionalState,
    t_end: float = math.inf,
    tol: float = 1e-8,
    atol: float = 1e-12,
    eps: float = 1e-9,
    nondecay_horizon: float | None = None,
    max_steps: int = 5_000_000,
    check_physicality: bool = True,
    method: str = "auto",
    matrix_free: bool = False,
) -> WaitingTimeDensity:
    """Integrate the no-click equation and sample ``P0(t)`` and ``W(t)``.

    ``method="dopri5"`` is an explicit Dormand-Prince 5(4) pair whose step
    follows a PI controller on the embedded error estimate (weighted RMS norm
    with weights ``atol + tol * |rho|``). ``method="radau"`` hands the
    real-valued form of the same linear system to scipy's implicit Radau IIA
    solver with the sparse generator as exact Jacobian; it is far cheaper in
    the weak-coupling regime, where the qubits relax much faster than the
    ladder moves. ``"auto"`` picks Radau when :func:`stiffness_ratio` exceeds
    ``STIFFNESS_THRESHOLD``.

    Integration stops once ``P0 < eps`` or ``t_end`` is reached.

    Parameters
    ----------
    G : NoclickGenerator
        Usually built in the ``"rotating"`` frame, which removes the fast
        ``H0`` oscillations.
    state : ConditionalState
    t_end : float
    tol, atol : float
        Relative and absolute local error tolerances.
    eps : float
        Survival probability below which integration stops.
    nondecay_horizon : float, optional
        If ``P0`` is still above ``1 - 1e-6`` at this time, the clock is
        declared non-decaying. Defaults to :func:`default_horizon`.
    max_steps : int
    check_physicality : bool
        Track Hermiticity, positivity and trace monotonicity at every
        accepted step; the worst values land in ``metadata``.
    method : {"auto", "dopri5", "radau"}
    matrix_free : bool
        dopri5 only: evaluate the right-hand side with
        :meth:`NoclickGenerator.apply` instead of the sparse superoperator.

    Raises
    ------
    StepFailure
        If the error tolerance cannot be met or ``max_steps`` is exceeded.
    NonDecaying
        If the survival probability does not move away from 1.
    """
    if tol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    if method not in EVOLVE_METHODS:
        raise ValueError(f"method must be one of {EVOLVE_METHODS}")
    if method == "auto":
        stiff = stiffness_ratio(G.ops.params) > STIFFNESS_THRESHOLD
        method = "radau" if stiff else "dopri5"
    if nondecay_horizon is None:
        nondecay_horizon = default_horizon(G.ops.params)
    rec = _Recorder(G, check_physicality)
    y0 = vec(np.array(state.rho, dtype=complex)).copy()
    opts = dict(t0=state.t, t_end=t_end, tol=tol, atol=atol, eps=eps,
                horizon=nondecay_horizon, max_steps=max_steps)
    if method == "dopri5":
        meta, final = _dopri5(G, y0, rec, matrix_free=matrix_free, **opts)
    else:
        meta, final = _radau(G, y0, rec, **opts)
    meta.update({"frame": G.frame, "rtol": tol, "atol": atol, "eps": eps})
    return rec.result(meta, final)


def _dopri5(G, y, rec, t0, t_end, tol, atol, eps, horizon, max_steps, matrix_free):
    n = G.dim
    if matrix_free:
        def rhs(v):
            return vec(G.apply(unvec(v, n)))
    else:
        M = G.matrix.tocsr()

        def rhs(v):
            return M @ v

    safety, fac_min, fac_max = 0.9, 0.2, 10.0
    alpha, beta = 0.7 / 5.0, 0.4 / 5.0

    t = t0
    f = rhs(y)
    # Hairer's starting step heuristic
    scale = atol + tol * np.abs(y)
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    d2 = _rms((rhs(y + h * f) - f) / scale) / h
    big = max(d1, d2)
    h1 = max(1e-6, h * 1e-3) if big <= 1e-15 else (0.01 / big) ** 0.2
    h = min(100 * h, h1)

    rec.add(t, y, f)
    err_prev = 1.0
    n_acc = n_rej = 0
    reason = "t_end"
    k = [None] * 7
    while True:
        if rec.P0[-1] < eps:
            reason = "eps"
            break
        if t >= t_end:
            break
        rec.check_decay(horizon)
        if n_acc + n_rej >= max_steps:
            raise StepFailure(f"max_steps = {max_steps} exceeded at t = {t}")
        h = min(h, t_end - t)
        if t < horizon:
            h = min(h, horizon - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepFailure(f"step size underflow (h = {h:.3g}) at t = {t:.6g}")

        k[0] = f
        for i in range(1, 7):
            acc = _A[i][0] * k[0]
            for j in range(1, i):
                if _A[i][j] != 0.0:
                    acc = acc + _A[i][j] * k[j]
            k[i] = rhs(y + h * acc)
        y_new = y + h * sum(_B[i] * k[i] for i in range(6) if _B[i] != 0.0)
        err_vec = h * sum(_E[i] * k[i] for i in range(7) if _E[i] != 0.0)
        scale = atol + tol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / scale)
        if not math.isfinite(err):
            h *= fac_min
            n_rej += 1
            continue

        if err <= 1.0:
            t = t + h
            y = y_new
            f = k[6]  # FSAL
            n_acc += 1
            rec.add(t, y, f)
            err = max(err, 1e-10)
            factor = safety * err**-alpha * err_prev**beta
            h *= min(fac_max, max(fac_min, factor))
            err_prev = err
        else:
            n_rej += 1
            h *= max(fac_min, safety * err**-alpha)
    meta = {"method": "dopri5-pi", "stop_reason": reason, "n_accepted": n_acc, "n_rejected": n_rej}
    return meta, y


def _radau(G, y0, rec, t0, t_end, tol, atol, eps, horizon, max_steps):
    from scipy.integrate import Radau

    n = G.dim
    M = G.matrix.tocsr()
    m = M.shape[0]
    A, B = M.real.tocsr(), M.imag.tocsr()
    Mr = sp.bmat([[A, -B], [B, A]], format="csr")
    solver = Radau(
        lambda t, x: Mr @ x, t0, np.concatenate([y0.real, y0.imag]),
        t_bound=t_end if math.isfinite(t_end) else 1e300,
        rtol=tol, atol=atol, jac=Mr,
    )

    def cplx(x):
        return x[:m] + 1j * x[m:]

    y = y0
    rec.add(t0, y, M @ y)
    reason = "t_end"
    steps = 0
    while True:
        if rec.P0[-1] < eps:
            reason = "eps"
            break
        if solver.status == "finished":
            break
        rec.check_decay(horizon)
        if steps >= max_steps:
            raise StepFailure(f"max_steps = {max_steps} exceeded at t = {solver.t}")
        message = solver.step()
        if solver.status == "failed":
            raise StepFailure(f"Radau step failed at t = {solver.t:.6g}: {message}")
        steps += 1
        y = cplx(solver.y)
        rec.add(solver.t, y, M @ y)
    meta = {"method": "radau-scipy", "stop_reason": reason, "n_accepted": steps, "n_rejected": None,
            "n_lu": solver.nlu}
    return meta, y


def _rms(x):
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


TAIL_LIMIT = 1e-3


def tail_decay_rate(wtd: WaitingTimeDensity) -> float:
    """Decay rate of the slowest mode, fitted to ``log P0`` over the final decade."""
    P0 = wtd.P0
    mask = P0 <= 10.0 * P0[-1]
    mask &= P0 > 0
    if np.count_nonzero(mask) >= 3 and P0[mask][0] >= 5.0 * P0[-1]:
        slope = np.polyfit(wtd.t[mask], np.log(P0[mask]), 1)[0]
        if slope < 0:
            return float(-slope)
    if wtd.W[-1] > 0 and P0[-1] > 0:
        return float(wtd.W[-1] / P0[-1])
    raise TailDominated("cannot estimate the tail decay rate")


def tick_moments_quadrature(wtd: WaitingTimeDensity) -> TickStatistics:
    """Mean and spread of the waiting time by quadrature over the recorded grid.

    Integrands ``t^m W(t)`` are integrated with the cubic Hermite rule on
    each step, using the exact derivative of ``W``. Mass beyond the last
    sample is added assuming a single exponential tail.

    Raises
    ------
    TailDominated
        If more than ``1e-3`` of the probability lies beyond the grid.
    """
    t, W, dW = wtd.t, wtd.W, wtd.dW
    tail = wtd.tail_mass
    if tail > TAIL_LIMIT:
        raise TailDominated(f"tail mass {tail:.3g} exceeds {TAIL_LIMIT}")
    m1 = _hermite_integral(t, t * W, W + t * dW)
    m2 = _hermite_integral(t, t**2 * W, 2 * t * W + t**2 * dW)
    if tail > 0:
        lam = tail_decay_rate(wtd)
        T = t[-1]
        m1 += tail * (T + 1.0 / lam)
        m2 += tail * (T**2 + 2.0 * T / lam + 2.0 / lam**2)
    return TickStatistics.from_moments(m1, m2)


# smallest LU pivot, in units of eps * |M|, still treated as nonsingular
PIVOT_FLOOR = 100.0


def _as_matrix(G):
    if isinstance(G, NoclickGenerator):
        return G.matrix
    return sp.csc_matrix(G)


def _refined_solve(lu, M, M_norm, rhs, rtol, max_refine=3):
    """Solve with iterative refinement until the normwise backward error
    ``|r| / (|M| |x| + |b|)`` (infinity norms) is at most ``rtol``."""
    x = lu.solve(rhs)
    b_norm = np.linalg.norm(rhs, np.inf)
    for _ in range(max_refine + 1):
        if not np.all(np.isfinite(x)):
            raise SingularGenerator("non-finite solution")
        r = rhs - M @ x
        err = np.linalg.norm(r, np.inf) / (M_norm * np.linalg.norm(x, np.inf) + b_norm)
        if err <= rtol:
            return x
        x = x + lu.solve(r)
    raise SingularGenerator(f"backward error {err:.3g} exceeds {rtol}")


def tick_moments_resolvent(G, state0: ConditionalState, rtol: float = 1e-10) -> TickStatistics:
    """Exact waiting-time moments from two sparse solves with the generator.

    With ``G x1 = vec(rho0)`` and ``G x2 = x1`` the mean waiting time is
    ``-tr(x1)`` and the second moment ``2 tr(x2)``.

    Parameters
    ----------
    G : NoclickGenerator or sparse matrix
    state0 : ConditionalState
    rtol : float
        Maximum accepted normwise backward error of each solve.

    Raises
    ------
    SingularGenerator
        If the factorization fails or the result is not physical.
    """
    M = _as_matrix(G)
    n = state0.rho.shape[0]
    b = vec(state0.rho).astype(complex)
    tr = np.zeros(n * n)
    tr[np.arange(n) * (n + 1)] = 1.0
    try:
        lu = splu(M.astype(complex).tocsc())
    except RuntimeError as exc:
        raise SingularGenerator(f"factorization failed: {exc}") from exc
    M_norm = float(abs(M).sum(axis=1).max())
    # an exactly singular generator still factors, with round-off pivots
    pivot = float(np.min(np.abs(lu.U.diagonal())))
    if pivot <= PIVOT_FLOOR * np.finfo(float).eps * M_norm:
        raise SingularGenerator(f"pivot {pivot:.3g} at round-off level; no certain emission (g = 0 or Gamma = 0?)")
    x1 = _refined_solve(lu, M, M_norm, b, rtol)
    x2 = _refined_solve(lu, M, M_norm, x1, rtol)
    mean = -float(np.real(tr @ x1))
    second = 2.0 * float(np.real(tr @ x2))
    if not (mean > 0 and second > mean**2):
        raise SingularGenerator(f"non-physical moments: mean={mean}, second={second}")
    return TickStatistics.from_moments(mean, second)


def simulate(
    params: ClockParams,
    tol: float = 1e-8,
    atol: float = 1e-12,
    eps: float = 1e-9,
    t_end: float = math.inf,
    check_physicality: bool = True,
    method: str = "auto",
) -> WaitingTimeDensity:
    """Waiting-time density for ``params``, integrated in the rotating frame."""
    ops = build_operators(params)
    G = NoclickGenerator(ops, frame="rotating")
    return evolve(
        G, initial_state(params), t_end=t_end, tol=tol, atol=atol, eps=eps,
        check_physicality=check_physicality, method=method,
    )


def resolvent_statistics(params: ClockParams) -> TickStatistics:
    """Reference tick statistics of the full quantum model."""
    ops = build_operators(params)
    return tick_moments_resolvent(NoclickGenerator(ops, frame="lab"), initial_state(params))


def dump_operator(M, path, name: str = "G", frame: str = "lab") -> None:
    """Write a sparse operator as text triplets ``row col real imag``.

    The header records the dimension, nonzero count, basis ordering and
    vectorization convention so dumps can be diffed across implementations.
    Entries are sorted by (row, col) and printed with 17 significant digits.
    """
    coo = sp.coo_matrix(M)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# autoclock sparse operator v1\n")
        fh.write(
            f"# name={name} dim={coo.shape[0]}x{coo.shape[1]} nnz={coo.nnz} "
            f"basis={BASIS_TAG} vec={VEC_TAG} frame={frame}\n"
        )
        fh.write("# row col real imag\n")
        for i in order:
            v = complex(coo.data[i])
            fh.write(f"{coo.row[i]} {coo.col[i]} {v.real:.17g} {v.imag:.17g}\n")


def load_operator(path) -> sp.csr_matrix:
    """Read a matrix written by :func:`dump_operator`."""
    rows, cols, vals = [], [], []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("dim="):
                        r, c = token[4:].split("x")
                        shape = (int(r), int(c))
                continue
            r, c, re_, im = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re_), float(im)))
    if shape is None:
        raise ValueError(f"{path}: missing dim header")
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
