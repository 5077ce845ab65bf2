"""System configuration, entity placement, and large-scale fading.

Every downstream module consumes the fully resolved scene built here: a
validated :class:`SystemConfig`, a :class:`Geometry` with tagged user
positions, and a :class:`LargeScale` gain table.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

MODES = ("star", "reflect-only-pair", "no-ris")

# placement boxes, metres
AP_X = (-500.0, -250.0)
AP_Y = (250.0, 500.0)
REFL_X = (-325.0, -125.0)
REFL_Y = (-325.0, -125.0)
TRANS_X = (125.0, 325.0)
TRANS_Y = (-325.0, -125.0)
UE_HEIGHT = 1.5  # m
RIS_HEIGHT = 30.0  # m
AP_HEIGHT = 12.5  # m


class ConfigError(Exception):
    """Raised when a configuration value violates a model constraint."""


class ZeroDistance(Exception):
    """Raised when two entities coincide and the pathloss law degenerates."""


@dataclass
class SystemConfig:
    M: int = 16            # access points
    L: int = 4             # antennas per AP
    N: int = 16            # surface elements (perfect square)
    K_T: int = 3           # users in the transmission space
    K_R: int = 3           # users in the reflection space
    tau_p: int = 3         # pilot length (channel uses)
    tau_c: int = 100       # coherence block length (channel uses)
    rho: float = 1.0       # downlink power budget per AP (W)
    p: float = 0.2         # pilot power (W)
    gamma_T: float = 0.9   # AP hardware quality factor
    gamma_R: float = 0.9   # UE hardware quality factor
    vartheta: float = 3.0  # Von Mises concentration of surface phase errors
    f_c: float = 2e9       # carrier frequency (Hz)
    c_phi: float = 1e-18   # AP oscillator constant
    c_psi: float = 1e-18   # UE oscillator constant
    T_s: float = 1e-5      # symbol duration (s)
    d_H: float = 0.0375    # element width (m), quarter wavelength
    d_V: float = 0.0375    # element height (m)
    sigma2: float = 3.1622776601683797e-13  # noise power (W): -95 dBm
    seed: int = 1          # master RNG seed
    mode: str = "star"     # star | reflect-only-pair | no-ris
    iota_db: float = 10.0  # Rician factor of the surface-user link (dB)
    wavelength: float = 0.15          # carrier wavelength (m)
    angular_std_deg: float = 15.0     # AP local-scattering angular spread
    direct_blockage_db: float = 0.0   # extra attenuation on direct links (dB)
    ris_gain_offset_db: float = 0.0   # gain offset per cascade segment (dB)

    @property
    def K(self):
        return self.K_T + self.K_R

    @property
    def iota(self):
        """Rician factor, linear scale."""
        return 10.0 ** (self.iota_db / 10.0)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("M", "L", "N", "tau_p", "tau_c"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.K_T < 0 or self.K_R < 0 or self.K < 1:
            raise ConfigError("need at least one user and no negative counts")
        root = math.isqrt(self.N)
        if root * root != self.N:
            raise ConfigError(f"N must be a perfect square, got {self.N}")
        if self.mode == "reflect-only-pair" and root % 2 != 0:
            raise ConfigError(
                "reflect-only-pair needs an even grid side to split the surface"
            )
        if not self.tau_p <= self.K <= self.tau_c:
            raise ConfigError(
                f"need tau_p <= K_T+K_R <= tau_c, got {self.tau_p}, "
                f"{self.K}, {self.tau_c}"
            )
        for name in ("gamma_T", "gamma_R"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1], got {val}")
        if self.vartheta < 0.0:
            raise ConfigError("vartheta must be nonnegative")
        for name in ("rho", "p", "sigma2", "f_c", "T_s", "d_H", "d_V",
                     "wavelength"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        for name in ("c_phi", "c_psi", "angular_std_deg", "direct_blockage_db"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        return self


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(SystemConfig)}


def parse_config(text):
    """Parse ``key = value`` lines into a validated SystemConfig.

    Blank lines and ``#`` comments are ignored; unknown keys are errors so
    typos never silently fall back to defaults.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind in (int, "int"):
                values[key] = int(val)
            elif kind in (float, "float"):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return SystemConfig(**values).validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(config):
    """Render a config back to the ``key = value`` file format."""
    lines = []
    for f in dataclasses.fields(SystemConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"


@dataclass
class Geometry:
    ap_positions: np.ndarray   # (M, 3) metres
    ue_positions: np.ndarray   # (K, 3) metres, reflection users first
    ue_sides: tuple            # per-user tag, "R" or "T"
    ris_position: np.ndarray   # (3,) metres


@dataclass
class LargeScale:
    beta_d: np.ndarray  # (M, K) direct-link gain, linear
    xi: np.ndarray      # (M,) AP-surface gain, linear
    alpha: np.ndarray   # (K,) surface-user gain, linear
    iota: np.ndarray    # (K,) Rician factor, linear


def _uniform_box(rng, n, xr, yr, height):
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(xr[0], xr[1], size=n)
    pts[:, 1] = rng.uniform(yr[0], yr[1], size=n)
    pts[:, 2] = height
    return pts


def place_entities(config, rng):
    """Drop APs and users uniformly into their service regions.

    Reflection-space users come first in the user ordering; the surface sits
    at the origin of the ground plane.
    """
    aps = _uniform_box(rng, config.M, AP_X, AP_Y, AP_HEIGHT)
    refl = _uniform_box(rng, config.K_R, REFL_X, REFL_Y, UE_HEIGHT)
    trans = _uniform_box(rng, config.K_T, TRANS_X, TRANS_Y, UE_HEIGHT)
    ues = np.vstack([refl, trans])
    sides = ("R",) * config.K_R + ("T",) * config.K_T
    ris = np.array([0.0, 0.0, RIS_HEIGHT])
    return Geometry(ap_positions=aps, ue_positions=ues, ue_sides=sides,
                    ris_position=ris)


def pathloss_db(distance):
    """Log-distance pathloss in dB."""
    return -30.5 - 36.7 * np.log10(distance)


def _gain(distance, extra_db=0.0):
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0.0):
        raise ZeroDistance("coincident entities make the pathloss singular")
    return 10.0 ** ((pathloss_db(d) - extra_db) / 10.0)


def large_scale_fading(geometry, config):
    """Large-scale gains for every link from the placed geometry.

    The surface segments carry ``ris_gain_offset_db`` each and direct links
    ``-direct_blockage_db``, so obstructed-scene studies only touch config.
    In no-ris mode the AP-surface gains are forced to zero, which removes
    the cascaded path everywhere downstream.
    """
    d_direct = np.linalg.norm(
        geometry.ap_positions[:, None, :] - geometry.ue_positions[None, :, :],
        axis=2,
    )
    d_ap_ris = np.linalg.norm(
        geometry.ap_positions - geometry.ris_position[None, :], axis=1
    )
    d_ris_ue = np.linalg.norm(
        geometry.ue_positions - geometry.ris_position[None, :], axis=1
    )
    beta_d = _gain(d_direct, extra_db=config.direct_blockage_db)
    xi = _gain(d_ap_ris, extra_db=-config.ris_gain_offset_db)
    alpha = _gain(d_ris_ue, extra_db=-config.ris_gain_offset_db)
    if config.mode == "no-ris":
        xi = np.zeros_like(xi)
    iota = np.full(config.K, config.iota)
    return LargeScale(beta_d=beta_d, xi=xi, alpha=alpha, iota=iota)
