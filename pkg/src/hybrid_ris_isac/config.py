"""Scenario configuration: scalars, geometry, thresholds, and unit conversions.

All quantities are stored in SI / linear units internally (watts, meters,
radians, linear power ratios). The JSON loader accepts the usual dB/dBm
forms through explicitly suffixed keys (``p_ris_max_dbm``, ``gamma_db``, ...).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_HZ = 3.5e9


def dbm_to_watts(x_dbm: float) -> float:
    """Convert a power in dBm to watts: 10^((x - 30)/10)."""
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(x_db: float) -> float:
    """Convert a dB ratio to a linear ratio: 10^(x/10)."""
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def watts_to_dbm(x_w: float) -> float:
    return 10.0 * np.log10(np.asarray(x_w, dtype=float)) + 30.0


@dataclass(frozen=True)
class PathlossModel:
    """Power-law pathloss: gain(d) = k0 * (d / d0)^(-alpha)."""

    k0: float = 1e-3           # reference gain at d0 (linear, -30 dB)
    d0: float = 1.0            # reference distance (m)
    alpha_ris_cu: float = 2.5
    alpha_bs_ris: float = 2.5
    alpha_bs_cu: float = 2.2


@dataclass
class SystemConfig:
    """One ISAC scenario: BS/RIS geometry, budgets, thresholds, targets.

    Defaults reproduce the baseline evaluation scenario: an 8-antenna BS at
    (0, 0, 2.5) m, an 8x8 hybrid RIS at (20, 5, 2.5) m, two CUs, and two
    sensing targets at (-60deg, 60deg) and (-30deg, 30deg).
    """

    M: int = 8                       # BS antennas
    Nx: int = 8                      # RIS elements along x
    Ny: int = 8                      # RIS elements along y
    K: int = 2                       # communication users
    L: int = 2                       # sensing targets
    P0: float = 0.3                  # BS power budget (W)
    P_ris_max: float = dbm_to_watts(-3.0)     # RIS output power budget (W)
    xi_ris_max: float = dbm_to_watts(-10.0)   # per-target RIS-noise cap (W)
    sigma2_ris: float = dbm_to_watts(-70.0)   # active-element noise power (W)
    sigma2_cu: np.ndarray = None     # per-CU receiver noise power (W), shape (K,)
    Gamma: np.ndarray = None         # per-CU SINR threshold (linear), shape (K,)
    beta_max: float = 10.0           # active amplitude cap (linear, > 1)
    wavelength: float = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ
    dx: float = None                 # element spacing along x (m), default lambda/2
    dy: float = None                 # element spacing along y (m), default lambda/2
    bs_pos: np.ndarray = None        # (3,) BS coordinates (m)
    ris_pos: np.ndarray = None       # (3,) RIS coordinates (m)
    cu_pos: np.ndarray = None        # (K, 3) CU coordinates (m)
    target_angles: np.ndarray = None  # (L, 2) azimuth/elevation pairs (rad)
    rician_factor: float = 0.5
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    tol_feas: float = 1e-5           # relative feasibility tolerance for audits

    def __post_init__(self):
        if self.dx is None:
            self.dx = self.wavelength / 2.0
        if self.dy is None:
            self.dy = self.wavelength / 2.0
        if self.sigma2_cu is None:
            self.sigma2_cu = np.full(self.K, dbm_to_watts(-80.0))
        if self.Gamma is None:
            self.Gamma = np.full(self.K, db_to_linear(5.0))
        if self.bs_pos is None:
            self.bs_pos = np.array([0.0, 0.0, 2.5])
        if self.ris_pos is None:
            self.ris_pos = np.array([20.0, 5.0, 2.5])
        if self.cu_pos is None:
            self.cu_pos = np.array(
                [[25.0, 5.0 * (k + 1), 1.5] for k in range(self.K)]
            )
        if self.target_angles is None:
            base = np.deg2rad([[-60.0, 60.0], [-30.0, 30.0]])
            self.target_angles = np.array(
                [base[l % 2] for l in range(self.L)]
            )
        self.sigma2_cu = np.atleast_1d(np.asarray(self.sigma2_cu, dtype=float))
        if self.sigma2_cu.size == 1:
            self.sigma2_cu = np.full(self.K, float(self.sigma2_cu[0]))
        self.Gamma = np.atleast_1d(np.asarray(self.Gamma, dtype=float))
        if self.Gamma.size == 1:
            self.Gamma = np.full(self.K, float(self.Gamma[0]))
        self.bs_pos = np.asarray(self.bs_pos, dtype=float)
        self.ris_pos = np.asarray(self.ris_pos, dtype=float)
        self.cu_pos = np.asarray(self.cu_pos, dtype=float).reshape(self.K, 3)
        self.target_angles = np.asarray(
            self.target_angles, dtype=float
        ).reshape(self.L, 2)
        self.validate()

    @property
    def N(self) -> int:
        return self.Nx * self.Ny

    def validate(self) -> None:
        """Check the structural invariants; raise ValueError on violation."""
        if min(self.M, self.Nx, self.Ny, self.L) < 1:
            raise ValueError("M, Nx, Ny, L must all be >= 1")
        if self.K < 0:  # K = 0 is the degenerate sensing-only scenario
            raise ValueError("K must be >= 0")
        for name in ("P0", "P_ris_max", "xi_ris_max", "sigma2_ris"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if np.any(self.sigma2_cu <= 0):
            raise ValueError("sigma2_cu must be > 0")
        if np.any(self.Gamma <= 0):
            raise ValueError("Gamma must be > 0")
        if self.beta_max <= 1:
            raise ValueError("beta_max must be > 1")
        if self.dx <= 0 or self.dy <= 0 or self.wavelength <= 0:
            raise ValueError("dx, dy, wavelength must be > 0")
        if self.sigma2_cu.shape != (self.K,) or self.Gamma.shape != (self.K,):
            raise ValueError("sigma2_cu / Gamma must have shape (K,)")

    def replace(self, **kwargs) -> "SystemConfig":
        """Copy with selected fields overridden.

        Per-CU and per-target arrays are regenerated when K or L change
        without an explicit override.
        """
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        if kwargs.get("K", self.K) != self.K:
            for name in ("sigma2_cu", "Gamma", "cu_pos"):
                d[name] = None
        if kwargs.get("L", self.L) != self.L:
            d["target_angles"] = None
        d.update(kwargs)
        return SystemConfig(**d)

    def to_dict(self) -> dict:
        return {
            "m": self.M, "nx": self.Nx, "ny": self.Ny, "k": self.K, "l": self.L,
            "p0_watts": self.P0,
            "p_ris_max_dbm": float(watts_to_dbm(self.P_ris_max)),
            "xi_ris_max_dbm": float(watts_to_dbm(self.xi_ris_max)),
            "sigma2_ris_dbm": float(watts_to_dbm(self.sigma2_ris)),
            "sigma2_cu_dbm": [float(watts_to_dbm(s)) for s in self.sigma2_cu],
            "gamma_db": [float(10 * np.log10(g)) for g in self.Gamma],
            "beta_max": self.beta_max,
            "wavelength_m": self.wavelength,
            "dx_m": self.dx, "dy_m": self.dy,
            "bs_pos_m": self.bs_pos.tolist(),
            "ris_pos_m": self.ris_pos.tolist(),
            "cu_pos_m": self.cu_pos.tolist(),
            "target_angles_deg": np.rad2deg(self.target_angles).tolist(),
            "rician_factor": self.rician_factor,
            "pathloss": {
                "k0_db": float(10 * np.log10(self.pathloss.k0)),
                "d0_m": self.pathloss.d0,
                "alpha_ris_cu": self.pathloss.alpha_ris_cu,
                "alpha_bs_ris": self.pathloss.alpha_bs_ris,
                "alpha_bs_cu": self.pathloss.alpha_bs_cu,
            },
            "tol_feas": self.tol_feas,
        }

    def config_hash(self) -> str:
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(d: dict) -> SystemConfig:
    """Build a SystemConfig from a JSON-style dict with unit-suffixed keys.

    Recognized keys (all optional, defaults above): m, nx, ny, k, l,
    p0_watts | p0_dbm, p_ris_max_dbm | p_ris_max_watts, xi_ris_max_dbm,
    sigma2_ris_dbm, sigma2_cu_dbm (scalar or list), gamma_db (scalar or list),
    beta_max, wavelength_m | carrier_hz, dx_m, dy_m, bs_pos_m, ris_pos_m,
    cu_pos_m, target_angles_deg, rician_factor, pathloss {k0_db, d0_m,
    alpha_ris_cu, alpha_bs_ris, alpha_bs_cu}, tol_feas.
    """
    kw = {}
    simple = {"m": "M", "nx": "Nx", "ny": "Ny", "k": "K", "l": "L",
              "beta_max": "beta_max", "rician_factor": "rician_factor",
              "tol_feas": "tol_feas", "dx_m": "dx", "dy_m": "dy"}
    for src, dst in simple.items():
        if src in d:
            kw[dst] = d[src]
    if "p0_watts" in d:
        kw["P0"] = float(d["p0_watts"])
    elif "p0_dbm" in d:
        kw["P0"] = float(dbm_to_watts(d["p0_dbm"]))
    if "p_ris_max_dbm" in d:
        kw["P_ris_max"] = float(dbm_to_watts(d["p_ris_max_dbm"]))
    elif "p_ris_max_watts" in d:
        kw["P_ris_max"] = float(d["p_ris_max_watts"])
    if "xi_ris_max_dbm" in d:
        kw["xi_ris_max"] = float(dbm_to_watts(d["xi_ris_max_dbm"]))
    if "sigma2_ris_dbm" in d:
        kw["sigma2_ris"] = float(dbm_to_watts(d["sigma2_ris_dbm"]))
    if "sigma2_cu_dbm" in d:
        kw["sigma2_cu"] = dbm_to_watts(np.asarray(d["sigma2_cu_dbm"]))
    if "gamma_db" in d:
        kw["Gamma"] = db_to_linear(np.asarray(d["gamma_db"]))
    if "wavelength_m" in d:
        kw["wavelength"] = float(d["wavelength_m"])
    elif "carrier_hz" in d:
        kw["wavelength"] = SPEED_OF_LIGHT / float(d["carrier_hz"])
    for src, dst in {"bs_pos_m": "bs_pos", "ris_pos_m": "ris_pos",
                     "cu_pos_m": "cu_pos"}.items():
        if src in d:
            kw[dst] = np.asarray(d[src], dtype=float)
    if "target_angles_deg" in d:
        kw["target_angles"] = np.deg2rad(np.asarray(d["target_angles_deg"]))
    if "pathloss" in d:
        p = d["pathloss"]
        kw["pathloss"] = PathlossModel(
            k0=db_to_linear(p.get("k0_db", -30.0)),
            d0=p.get("d0_m", 1.0),
            alpha_ris_cu=p.get("alpha_ris_cu", 2.5),
            alpha_bs_ris=p.get("alpha_bs_ris", 2.5),
            alpha_bs_cu=p.get("alpha_bs_cu", 2.2),
        )
    return SystemConfig(**kw)


def load_config(path: str) -> SystemConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def default_config() -> SystemConfig:
    return SystemConfig()
