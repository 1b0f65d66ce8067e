"""Drive protocol, instantaneous eigenframe and Hamiltonian builders.

The magnetic field precesses at fixed polar angle theta with angular
velocity Omega; the co-moving eigenframe turns the free spin problem into a
static splitting omega0 = b0 - Omega cos(theta) that already contains the
geometric phase.  Eigenvector phases follow the symmetric half-angle
convention exp(-i phi/2) cos(theta/2), ... so Berry connections are
reproducible rather than gauge noise from a numeric eigensolver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENT_2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class FieldProtocol:
    """Cyclic drive: field magnitude b0, polar angle theta, precession rate Omega.

    Units: b0 sets the frequency scale (b0 = 1 is the documented convention).
    Adiabaticity requires 0 < Omega < b0; the effective splitting
    omega0 = b0 - Omega cos(theta) must stay positive.
    """

    b0: float
    theta: float
    omega_drive: float

    def __post_init__(self):
        if not self.b0 > 0:
            raise ConfigError(f"b0 must be > 0, got {self.b0}")
        if not 0.0 <= self.theta <= math.pi:
            raise ConfigError(f"theta must lie in [0, pi], got {self.theta}")
        if not 0.0 <= self.omega_drive < self.b0:
            raise ConfigError(
                f"adiabaticity requires 0 <= Omega < b0, got Omega={self.omega_drive}, b0={self.b0}"
            )
        if not self.omega0 > 0:
            raise ConfigError(f"effective splitting omega0 = {self.omega0} must be > 0")

    @property
    def omega0(self) -> float:
        return self.b0 - self.omega_drive * math.cos(self.theta)

    @property
    def period(self) -> float:
        """Cycle period T = 2 pi / Omega."""
        if self.omega_drive == 0.0:
            return math.inf
        return 2.0 * math.pi / self.omega_drive

    def phi(self, t: float) -> float:
        """Azimuthal angle of the field at time t."""
        return self.omega_drive * t

    def field_vector(self, t: float) -> np.ndarray:
        """Lab-frame field b0 (sin(theta) cos(Omega t), sin(theta) sin(Omega t), cos(theta))."""
        st, ct = math.sin(self.theta), math.cos(self.theta)
        p = self.phi(t)
        return self.b0 * np.array([st * math.cos(p), st * math.sin(p), ct])


def effective_splitting(protocol: FieldProtocol) -> float:
    """omega0 = b0 - Omega cos(theta)."""
    return protocol.omega0


def instantaneous_eigenstates(theta: float, phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors of n.sigma with eigenvalues +1 and -1.

    Half-angle convention with symmetric exp(-+ i phi / 2) phases:
        up   = (e^{-i phi/2} cos(theta/2),  e^{+i phi/2} sin(theta/2))
        down = (e^{-i phi/2} sin(theta/2), -e^{+i phi/2} cos(theta/2))
    """
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    em = np.exp(-0.5j * phi)
    ep = np.exp(0.5j * phi)
    up = np.array([em * c, ep * s])
    down = np.array([em * s, -ep * c])
    return up, down


def berry_connection(theta: float, phi_dot: float) -> float:
    """Geometric connection of the upper eigenstate, (phi_dot / 2) cos(theta).

    The lower eigenstate carries the opposite sign.
    """
    return 0.5 * phi_dot * math.cos(theta)


def ideal_berry_phase(theta: float) -> float:
    """Closed-system geometric phase difference over one cycle, 2 pi cos(theta)."""
    return 2.0 * math.pi * math.cos(theta)


def superposition_state(theta: float, phi: float = 0.0) -> np.ndarray:
    """Equal-weight superposition of the two instantaneous eigenstates."""
    up, down = instantaneous_eigenstates(theta, phi)
    return (up + down) / math.sqrt(2.0)


def hermiticity_defect(matrix) -> float:
    """max |M - M^dagger|, vanishes for a valid Hamiltonian (tol 1e-12)."""
    if sp.issparse(matrix):
        diff = (matrix - matrix.conj().T).tocoo()
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
    return float(np.max(np.abs(matrix - matrix.conj().T)))


def build_lab_hamiltonian(protocol: FieldProtocol, t: float, bath=None):
    """Lab-frame H(t) = (1/2) B(t).sigma x 1 + 1 x H_bath + sigma_z x coupling.

    With bath=None the bare 2x2 spin Hamiltonian is returned as a dense
    array; with a bath the spin x bath promotion comes back sparse (CSR),
    sized by the bath's dimension guard.
    """
    bx, by, bz = protocol.field_vector(t)
    h_spin = 0.5 * (bx * SIGMA_X + by * SIGMA_Y + bz * SIGMA_Z)
    if bath is None or bath.mode_count == 0:
        return h_spin
    eye_bath = sp.identity(bath.hilbert_dimension, dtype=complex, format="csr")
    h = sp.kron(sp.csr_matrix(h_spin), eye_bath, format="csr")
    h = h + sp.kron(sp.csr_matrix(IDENT_2), bath.bath_hamiltonian(), format="csr")
    h = h + sp.kron(sp.csr_matrix(SIGMA_Z), bath.coupling_operator(), format="csr")
    return h.tocsr()


def build_adiabatic_hamiltonian(protocol: FieldProtocol, bath=None):
    """Time-independent co-moving frame Hamiltonian.

    (omega0/2) sigma_z x 1 + 1 x H_bath
    + (sigma_z cos(theta) - sigma_x sin(theta)) x coupling,
    the axis rotation [cos(theta) sigma_z + sin(theta) sigma_x] -> sigma_z
    having been applied once at construction.
    """
    h_spin = 0.5 * protocol.omega0 * SIGMA_Z
    if bath is None or bath.mode_count == 0:
        return h_spin
    ct, st = math.cos(protocol.theta), math.sin(protocol.theta)
    eye_bath = sp.identity(bath.hilbert_dimension, dtype=complex, format="csr")
    h = sp.kron(sp.csr_matrix(h_spin), eye_bath, format="csr")
    h = h + sp.kron(sp.csr_matrix(IDENT_2), bath.bath_hamiltonian(), format="csr")
    h = h + sp.kron(
        sp.csr_matrix(ct * SIGMA_Z - st * SIGMA_X), bath.coupling_operator(), format="csr"
    )
    return h.tocsr()
