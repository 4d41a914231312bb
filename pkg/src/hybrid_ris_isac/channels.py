"""Array geometry, steering vectors, pathloss, and random channel generation.

Conventions used throughout the package:

* The RIS is a uniform planar array of N = Nx * Ny elements; element
  (nx, ny) sits at index nx * Ny + ny (Kronecker ordering, x-major).
* The BS->RIS channel ``G`` is stored with shape (M, N): column n is the
  M-vector of gains between the BS array and RIS element n, so the signal
  arriving at the RIS is ``G^H x`` and the BS-side image of an
  RIS-weighted vector s is ``G s``.
* All channels are pure functions of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig

TWO_PI = 2.0 * np.pi


def pathloss_gain(d: float, alpha_exp: float, cfg: SystemConfig) -> float:
    """Power-law link gain k0 * (d/d0)^(-alpha); raises for d <= 0."""
    if np.any(np.asarray(d) <= 0):
        raise ValueError("distance must be > 0")
    p = cfg.pathloss
    return p.k0 * (np.asarray(d, dtype=float) / p.d0) ** (-alpha_exp)


def upa_response(ux: float, uy: float, cfg: SystemConfig) -> np.ndarray:
    """RIS array response for direction cosines (ux, uy) along x and y.

    Element (nx, ny) gets phase 2*pi*(nx*dx*ux + ny*dy*uy)/lambda; the
    result is the Kronecker product of the x-axis and y-axis vectors.
    """
    kx = TWO_PI * cfg.dx * ux / cfg.wavelength
    ky = TWO_PI * cfg.dy * uy / cfg.wavelength
    ax = np.exp(1j * kx * np.arange(cfg.Nx))
    ay = np.exp(1j * ky * np.arange(cfg.Ny))
    return np.kron(ax, ay)


def steering_vector(theta: float, phi: float, cfg: SystemConfig) -> np.ndarray:
    """RIS steering vector toward azimuth theta / elevation phi (rad).

    Direction cosines are (sin(theta)cos(phi), sin(theta)sin(phi)); every
    entry is unit-modulus and the squared norm is exactly N.
    """
    return upa_response(np.sin(theta) * np.cos(phi),
                        np.sin(theta) * np.sin(phi), cfg)


def bs_array_response(ux: float, cfg: SystemConfig) -> np.ndarray:
    """BS response for direction cosine ux; half-wavelength ULA on the x-axis."""
    return np.exp(1j * np.pi * ux * np.arange(cfg.M))


@dataclass
class ChannelSet:
    """One channel realization plus the target steering vectors."""

    G: np.ndarray          # (M, N) BS->RIS
    h_bu: np.ndarray       # (K, M) BS->CU direct links
    h_iu: np.ndarray       # (K, N) RIS->CU links
    a_tar: np.ndarray      # (L, N) target steering vectors
    seed: int

    def validate(self, cfg: SystemConfig) -> None:
        M, N, K, L = cfg.M, cfg.N, cfg.K, cfg.L
        if self.G.shape != (M, N):
            raise ValueError(f"G must be (M, N)=({M}, {N}), got {self.G.shape}")
        if self.h_bu.shape != (K, M):
            raise ValueError("h_bu must be (K, M)")
        if self.h_iu.shape != (K, N):
            raise ValueError("h_iu must be (K, N)")
        if self.a_tar.shape != (L, N):
            raise ValueError("a_tar must be (L, N)")
        if not np.allclose(np.abs(self.a_tar), 1.0, atol=1e-12):
            raise ValueError("steering entries must be unit-modulus")


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian with unit variance per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channels(cfg: SystemConfig, seed: int) -> ChannelSet:
    """Draw one channel realization; deterministic for a given seed.

    BS->RIS and RIS->CU links are Rician with factor kappa (LoS component
    from array geometry, NLoS i.i.d. complex Gaussian); BS->CU links are
    Rayleigh. Each link is scaled by the square root of its pathloss gain.
    Draw order is fixed: G, then h_iu for k = 0..K-1, then h_bu.
    """
    rng = np.random.default_rng(seed)
    kappa = cfg.rician_factor
    w_los = np.sqrt(kappa / (1.0 + kappa))
    w_nlos = np.sqrt(1.0 / (1.0 + kappa))
    p = cfg.pathloss

    # BS -> RIS
    d_br = np.linalg.norm(cfg.ris_pos - cfg.bs_pos)
    u_bs_to_ris = (cfg.ris_pos - cfg.bs_pos) / d_br
    u_ris_to_bs = -u_bs_to_ris
    a_bs = bs_array_response(u_bs_to_ris[0], cfg)
    a_ris = upa_response(u_ris_to_bs[0], u_ris_to_bs[1], cfg)
    los_g = np.outer(a_bs, a_ris.conj())
    G = np.sqrt(pathloss_gain(d_br, p.alpha_bs_ris, cfg)) * (
        w_los * los_g + w_nlos * _cn(rng, (cfg.M, cfg.N))
    )

    # RIS -> CU
    h_iu = np.empty((cfg.K, cfg.N), dtype=complex)
    for k in range(cfg.K):
        d_ru = np.linalg.norm(cfg.cu_pos[k] - cfg.ris_pos)
        u = (cfg.cu_pos[k] - cfg.ris_pos) / d_ru
        los = upa_response(u[0], u[1], cfg)
        h_iu[k] = np.sqrt(pathloss_gain(d_ru, p.alpha_ris_cu, cfg)) * (
            w_los * los + w_nlos * _cn(rng, cfg.N)
        )

    # BS -> CU (Rayleigh)
    h_bu = np.empty((cfg.K, cfg.M), dtype=complex)
    for k in range(cfg.K):
        d_bu = np.linalg.norm(cfg.cu_pos[k] - cfg.bs_pos)
        h_bu[k] = np.sqrt(pathloss_gain(d_bu, p.alpha_bs_cu, cfg)) * _cn(rng, cfg.M)

    a_tar = np.stack([
        steering_vector(th, ph, cfg) for th, ph in cfg.target_angles
    ])
    ch = ChannelSet(G=G, h_bu=h_bu, h_iu=h_iu, a_tar=a_tar, seed=seed)
    ch.validate(cfg)
    return ch


@dataclass
class RisConfiguration:
    """Per-element mode bits, amplitudes, and phases of the RIS.

    Invariants: q binary; passive elements (q=0) have beta exactly 1;
    active elements have 0 <= beta <= beta_max; phases lie in (0, 2*pi].
    """

    q: np.ndarray       # (N,) in {0, 1}
    beta: np.ndarray    # (N,) amplitudes
    theta: np.ndarray   # (N,) phases in (0, 2*pi]

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)

    @property
    def phi(self) -> np.ndarray:
        """Complex reflection coefficients beta * exp(j * theta)."""
        return self.beta * np.exp(1j * self.theta)

    @property
    def n_active(self) -> int:
        return int(np.round(self.q.sum()))

    def validate(self, beta_max: float) -> None:
        if not np.all(np.isin(self.q, (0.0, 1.0))):
            raise ValueError("mode vector q must be binary")
        if self.q.shape != self.beta.shape or self.q.shape != self.theta.shape:
            raise ValueError("q, beta, theta must share shape")
        passive = self.q == 0
        if not np.allclose(self.beta[passive], 1.0, atol=1e-9):
            raise ValueError("passive elements must have beta = 1")
        active = ~passive
        if np.any(self.beta[active] < -1e-12) or np.any(
            self.beta[active] > beta_max * (1 + 1e-12)
        ):
            raise ValueError("active amplitudes must lie in [0, beta_max]")
        if np.any(self.theta <= 0) or np.any(self.theta > TWO_PI * (1 + 1e-12)):
            raise ValueError("phases must lie in (0, 2*pi]")


def all_passive(cfg: SystemConfig, theta: np.ndarray | None = None) -> RisConfiguration:
    """All elements passive with the given (or zero-ish) phases."""
    if theta is None:
        theta = np.full(cfg.N, TWO_PI)
    return RisConfiguration(
        q=np.zeros(cfg.N), beta=np.ones(cfg.N), theta=np.asarray(theta, dtype=float)
    )


def wrap_phase(angle: np.ndarray) -> np.ndarray:
    """Map arbitrary angles into the representative interval (0, 2*pi]."""
    t = np.mod(np.asarray(angle, dtype=float), TWO_PI)
    return np.where(t == 0.0, TWO_PI, t)


def reflection_matrices(ris: RisConfiguration, beta_max: float = np.inf):
    """Diagonal reflection matrix Phi and mode-selection matrix Q.

    Validates the configuration invariants first.
    """
    ris.validate(beta_max)
    return np.diag(ris.phi), np.diag(ris.q)
