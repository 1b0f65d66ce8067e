"""Discretization of the continuous bath into a small set of oscillator modes.

Midpoint rule on frequency windows: mode k sits at the window midpoint and
carries g_k^2 = J(omega_k) * dw_k, so sums over modes approximate integrals
over J.  The ``resonance_refined`` grid concentrates half of the modes in a
narrow window around the resonance so that golden-rule decay is resolved
before the Poincare recurrence of the discrete comb.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .spectral import SpectralModel, gamma_perp, thermal_occupation

# Hard cap on 2 * (n_max + 1)^M, keeps exact propagation desk-scale.
DIMENSION_GUARD = 16384

GRID_KINDS = ("linear", "resonance_refined")


@dataclass(frozen=True)
class BathDiscretization:
    """M oscillator modes with frequencies, couplings and Fock cutoff.

    frequencies are strictly increasing inside (0, omega_c]; widths are the
    frequency windows each mode represents (g_k^2 = J(omega_k) * width_k).
    """

    frequencies: np.ndarray
    couplings: np.ndarray
    widths: np.ndarray
    n_max: int
    beta: float = math.inf
    grid: str = "linear"

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "couplings", np.asarray(self.couplings, dtype=float))
        object.__setattr__(self, "widths", np.asarray(self.widths, dtype=float))
        if freqs.size:
            if np.any(freqs <= 0.0):
                raise ConfigError("bath mode frequencies must be positive")
            if np.any(np.diff(freqs) <= 0.0):
                raise ConfigError("bath mode frequencies must be strictly increasing")
        if self.n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {self.n_max}")

    def check_dimension_guard(self) -> None:
        """Enforced wherever a spin x bath state or operator is materialized.

        Large-M discretizations remain legal for coupling-sum checks, which
        never build the Hilbert space.
        """
        if self.total_dimension > DIMENSION_GUARD:
            raise ConfigError(
                f"total dimension {self.total_dimension} exceeds the guard "
                f"{DIMENSION_GUARD} (M={self.mode_count}, n_max={self.n_max})"
            )

    @property
    def mode_count(self) -> int:
        return int(self.frequencies.size)

    @property
    def hilbert_dimension(self) -> int:
        """Dimension of the bath factor, (n_max + 1)^M."""
        return (self.n_max + 1) ** self.mode_count

    @property
    def total_dimension(self) -> int:
        """Spin times bath dimension."""
        return 2 * self.hilbert_dimension

    def occupations(self) -> np.ndarray:
        """Mean thermal occupation n_k per mode."""
        if math.isinf(self.beta):
            return np.zeros(self.mode_count)
        return np.array([thermal_occupation(self.beta, w) for w in self.frequencies])

    # -- operators ---------------------------------------------------------

    def _mode_op(self, k: int, local: np.ndarray) -> sp.csr_matrix:
        d = self.n_max + 1
        op = sp.identity(1, dtype=complex, format="csr")
        for j in range(self.mode_count):
            factor = sp.csr_matrix(local) if j == k else sp.identity(d, dtype=complex)
            op = sp.kron(op, factor, format="csr")
        return op

    def bath_hamiltonian(self) -> sp.csr_matrix:
        """Sum_k omega_k n_k on the bath factor."""
        self.check_dimension_guard()
        d = self.n_max + 1
        h = sp.csr_matrix((self.hilbert_dimension, self.hilbert_dimension), dtype=complex)
        number = np.diag(np.arange(d, dtype=float)).astype(complex)
        for k, w in enumerate(self.frequencies):
            h = h + w * self._mode_op(k, number)
        return h.tocsr()

    def coupling_operator(self) -> sp.csr_matrix:
        """Sum_k g_k (a_k + a_k^dagger) on the bath factor."""
        self.check_dimension_guard()
        d = self.n_max + 1
        x = np.zeros((d, d), dtype=complex)
        for n in range(d - 1):
            x[n, n + 1] = x[n + 1, n] = math.sqrt(n + 1)
        op = sp.csr_matrix((self.hilbert_dimension, self.hilbert_dimension), dtype=complex)
        for k, g in enumerate(self.couplings):
            op = op + g * self._mode_op(k, x)
        return op.tocsr()

    def top_level_mask(self) -> np.ndarray:
        """Boolean mask over bath basis states with any mode at n_max."""
        self.check_dimension_guard()
        d = self.n_max + 1
        dim = self.hilbert_dimension
        idx = np.arange(dim)
        mask = np.zeros(dim, dtype=bool)
        for _ in range(self.mode_count):
            mask |= idx % d == self.n_max
            idx //= d
        return mask

    # -- discrete analogues of the continuum rate integrals -----------------

    def lambda0_sum(self, omega0: float) -> float:
        """Sum_k g_k^2 (2 n_k + 1) [1/(w0 - w_k) + 1/(w0 + w_k)]."""
        w = self.frequencies
        if np.any(np.abs(omega0 - w) < 1e-12):
            raise ConfigError("a bath mode sits exactly at the evaluation frequency")
        th = 2.0 * self.occupations() + 1.0
        g2 = self.couplings**2
        return float(np.sum(g2 * th * (1.0 / (omega0 - w) + 1.0 / (omega0 + w))))

    def virtual_kernel_sum(self, b0: float) -> float:
        """Sum_k g_k^2 (2 n_k + 1) [1/(b0 - w_k)^2 + 1/(b0 + w_k)^2]."""
        w = self.frequencies
        th = 2.0 * self.occupations() + 1.0
        g2 = self.couplings**2
        return float(np.sum(g2 * th * (1.0 / (b0 - w) ** 2 + 1.0 / (b0 + w) ** 2)))

    def prob_vt_sum(self, b0: float, theta: float) -> float:
        """Discrete virtual-transition probability."""
        return math.sin(theta) ** 2 * self.virtual_kernel_sum(b0)

    def gamma_perp_local(self, omega0: float) -> float:
        """Golden-rule rate pi * (g_k^2 / dw_k) (2 n_k + 1) at the nearest mode.

        Zero when omega0 falls outside the discretized support.
        """
        k = int(np.argmin(np.abs(self.frequencies - omega0)))
        if abs(self.frequencies[k] - omega0) > 0.5 * self.widths[k]:
            return 0.0
        j_local = self.couplings[k] ** 2 / self.widths[k]
        th = 2.0 * self.occupations()[k] + 1.0
        return math.pi * j_local * th

    def recurrence_time(self) -> float:
        """Poincare recurrence estimate 2 pi / (minimal mode spacing)."""
        if self.mode_count < 2:
            return math.inf
        return 2.0 * math.pi / float(np.min(np.diff(self.frequencies)))


def _midpoint_segment(model: SpectralModel, lo: float, hi: float, m: int):
    dw = (hi - lo) / m
    w = lo + (np.arange(m) + 0.5) * dw
    g = np.sqrt(model.weight(w) * dw)
    return w, g, np.full(m, dw)


def discretize_bath(
    model: SpectralModel,
    mode_count: int,
    grid: str = "linear",
    n_max: int = 2,
    b0: float | None = None,
    omega_min: float = 0.0,
    window_factor: float = 5.0,
) -> BathDiscretization:
    """Midpoint-rule bath modes on [omega_min, omega_c].

    grid="linear": uniform windows.  grid="resonance_refined": half the modes
    are clustered inside +- window_factor * gamma_perp(b0) around b0 (b0 is
    then required and the window must fit strictly inside the support); the
    remaining modes cover the flanks proportionally to their length.
    """
    if mode_count < 1:
        raise ConfigError(f"mode_count must be >= 1, got {mode_count}")
    if grid not in GRID_KINDS:
        raise ConfigError(f"unknown grid {grid!r}; expected one of {GRID_KINDS}")
    wc = model.omega_c
    if not 0.0 <= omega_min < wc:
        raise ConfigError(f"omega_min must lie in [0, omega_c), got {omega_min}")

    if grid == "linear":
        w, g, dw = _midpoint_segment(model, omega_min, wc, mode_count)
        return BathDiscretization(w, g, dw, n_max=n_max, beta=model.beta, grid=grid)

    if b0 is None:
        raise ConfigError("resonance_refined grid needs the resonance frequency b0")
    half_width = window_factor * gamma_perp(model, b0)
    if half_width <= 0.0:
        raise ConfigError(
            "resonance_refined grid needs gamma_perp(b0) > 0; "
            "use a linear grid when the resonance lies outside the support"
        )
    lo_win, hi_win = b0 - half_width, b0 + half_width
    if lo_win <= omega_min or hi_win >= wc:
        raise ConfigError(
            f"refinement window [{lo_win:g}, {hi_win:g}] must fit strictly inside "
            f"({omega_min:g}, {wc:g})"
        )
    m_res = max(mode_count // 2, 1)
    m_out = mode_count - m_res
    len_lo = lo_win - omega_min
    len_hi = wc - hi_win
    m_lo = int(round(m_out * len_lo / (len_lo + len_hi)))
    m_lo = min(max(m_lo, 1 if m_out else 0), m_out)
    m_hi = m_out - m_lo
    parts = []
    if m_lo:
        parts.append(_midpoint_segment(model, omega_min, lo_win, m_lo))
    parts.append(_midpoint_segment(model, lo_win, hi_win, m_res))
    if m_hi:
        parts.append(_midpoint_segment(model, hi_win, wc, m_hi))
    w = np.concatenate([p[0] for p in parts])
    g = np.concatenate([p[1] for p in parts])
    dw = np.concatenate([p[2] for p in parts])
    return BathDiscretization(w, g, dw, n_max=n_max, beta=model.beta, grid=grid)
