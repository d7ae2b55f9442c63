"""Cell-free MIMO deployments: AP/user placement, correlated channels, noise.

All internal quantities are linear SI units (watts, metres); dB/dBm only
appear at the conversion helpers below.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCENARIO_SCHEMA = 1
MIN_DISTANCE_M = 1.0
PSD_TOL = 1e-10


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_watt(x_dbm):
    return db_to_linear(np.asarray(x_dbm, dtype=float) - 30.0)


def watt_to_dbm(x_w):
    return linear_to_db(x_w) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Deployment parameters. ``per_ap_power`` is in watts (one per AP, or a
    scalar broadcast to all APs)."""

    num_aps: int
    antennas_per_ap: int
    num_users: int
    per_ap_power: tuple = 0.01
    area_side: float = 500.0
    bandwidth_hz: float = 2.0e7
    shadow_std_db: float = 10.0
    pathloss_offset_db: float = -34.53
    pathloss_exponent_db_per_decade: float = 38.0
    correlation: str = "local_scattering"
    angular_spread_deg: float = 15.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_aps", "antennas_per_ap", "num_users"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        p = np.atleast_1d(np.asarray(self.per_ap_power, dtype=float))
        if p.size == 1:
            p = np.full(self.num_aps, p[0])
        if p.shape != (self.num_aps,):
            raise ValueError(
                f"per_ap_power must have length num_aps={self.num_aps}, got {p.size}"
            )
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("per_ap_power entries must be finite and > 0")
        object.__setattr__(self, "per_ap_power", tuple(float(x) for x in p))
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be > 0")
        if not self.area_side > 0:
            raise ValueError("area_side must be > 0")
        if self.shadow_std_db < 0:
            raise ValueError("shadow_std_db must be >= 0")
        if self.correlation not in ("uncorrelated", "local_scattering"):
            raise ValueError(
                "correlation must be 'uncorrelated' or 'local_scattering', "
                f"got {self.correlation!r}"
            )
        if not self.angular_spread_deg >= 0:
            raise ValueError("angular_spread_deg must be >= 0")
        seed = int(self.seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", seed)

    @property
    def power_w(self) -> np.ndarray:
        return np.array(self.per_ap_power)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_ap_power"] = list(self.per_ap_power)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scenario:
    config: ScenarioConfig
    ap_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (K, 2)
    channels: np.ndarray  # (K, M, N) complex
    noise_power: np.ndarray  # (K,) watts
    large_scale_db: np.ndarray = field(default=None, repr=False)  # (K, M)

    def __post_init__(self):
        c = self.config
        K, M, N = c.num_users, c.num_aps, c.antennas_per_ap
        self.channels = np.asarray(self.channels, dtype=complex)
        self.noise_power = np.asarray(self.noise_power, dtype=float)
        self.ap_positions = np.asarray(self.ap_positions, dtype=float)
        self.user_positions = np.asarray(self.user_positions, dtype=float)
        if self.channels.shape != (K, M, N):
            raise ValueError(f"channel tensor shape {self.channels.shape} != {(K, M, N)}")
        if self.noise_power.shape != (K,):
            raise ValueError(f"noise_power shape {self.noise_power.shape} != {(K,)}")
        if self.ap_positions.shape != (M, 2) or self.user_positions.shape != (K, 2):
            raise ValueError("position arrays have wrong shape")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("channel entries must be finite")
        if np.any(self.noise_power <= 0):
            raise ValueError("noise powers must be > 0")

    @property
    def M(self) -> int:
        return self.config.num_aps

    @property
    def N(self) -> int:
        return self.config.antennas_per_ap

    @property
    def K(self) -> int:
        return self.config.num_users

    @property
    def power(self) -> np.ndarray:
        return self.config.power_w

    @property
    def joint_channels(self) -> np.ndarray:
        """h_k stacked over APs, shape (K, M*N)."""
        return self.channels.reshape(self.K, self.M * self.N)

    def replace(self, channels=None, noise_power=None, per_ap_power=None) -> "Scenario":
        cfg = self.config
        if per_ap_power is not None:
            d = cfg.to_dict()
            d["per_ap_power"] = list(np.broadcast_to(per_ap_power, (cfg.num_aps,)))
            cfg = ScenarioConfig.from_dict(d)
        return Scenario(
            config=cfg,
            ap_positions=self.ap_positions,
            user_positions=self.user_positions,
            channels=self.channels if channels is None else channels,
            noise_power=self.noise_power if noise_power is None else noise_power,
            large_scale_db=self.large_scale_db,
        )

    def equals(self, other: "Scenario") -> bool:
        return (
            self.config == other.config
            and np.array_equal(self.ap_positions, other.ap_positions)
            and np.array_equal(self.user_positions, other.user_positions)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.noise_power, other.noise_power)
        )


def large_scale_fading_db(
    distance_m,
    shadow_db=0.0,
    offset_db: float = -34.53,
    exponent_db_per_decade: float = 38.0,
):
    """Path loss plus shadowing in dB; distances below 1 m are clamped."""
    d = np.asarray(distance_m, dtype=float)
    s = np.asarray(shadow_db, dtype=float)
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(s))):
        raise ValueError("distance and shadowing must be finite")
    d = np.maximum(d, MIN_DISTANCE_M)
    out = offset_db - exponent_db_per_decade * np.log10(d) + s
    return float(out) if out.ndim == 0 else out


def noise_power_dbm(bandwidth_hz: float) -> float:
    if not bandwidth_hz > 0:
        raise ValueError("bandwidth must be > 0")
    return -174.0 + 10.0 * np.log10(bandwidth_hz)


def correlation_factor(R: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Return L with L @ L^H == R; works for singular R (eigen-based)."""
    R = np.asarray(R, dtype=complex)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("R must be square")
    scale = max(1.0, float(np.max(np.abs(R)))) if R.size else 1.0
    if np.max(np.abs(R - R.conj().T), initial=0.0) > tol * scale:
        raise ValueError("R is not Hermitian")
    lam, U = np.linalg.eigh(R)
    if lam.size and lam.min() < -tol * scale:
        raise ValueError(f"R is not PSD (min eigenvalue {lam.min():.3e})")
    return U * np.sqrt(np.clip(lam, 0.0, None))


def sample_channel(gain_linear: float, R: np.ndarray, rng: np.random.Generator,
                   factor: np.ndarray | None = None) -> np.ndarray:
    """Draw sqrt(gain) * L z with z ~ CN(0, I)."""
    if gain_linear < 0:
        raise ValueError("gain must be >= 0")
    L = correlation_factor(R) if factor is None else factor
    n = L.shape[0]
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    return np.sqrt(gain_linear) * (L @ z)


def local_scattering_correlation(
    num_antennas: int,
    nominal_angle: float,
    angular_spread_deg: float,
    rng: np.random.Generator,
    num_paths: int = 200,
) -> np.ndarray:
    """Half-wavelength ULA correlation averaged over Gaussian-perturbed angles."""
    sd = np.deg2rad(angular_spread_deg)
    theta = nominal_angle + sd * rng.standard_normal(num_paths)
    a = np.arange(num_antennas)
    steer = np.exp(1j * np.pi * np.outer(np.sin(theta), a))  # (S, N)
    return steer.T @ steer.conj() / num_paths


def generate_scenario(config: ScenarioConfig) -> Scenario:
    rng = np.random.default_rng(config.seed)
    M, N, K = config.num_aps, config.antennas_per_ap, config.num_users
    side = config.area_side
    ap_pos = rng.uniform(0.0, side, size=(M, 2))
    user_pos = rng.uniform(0.0, side, size=(K, 2))
    shadow = config.shadow_std_db * rng.standard_normal((K, M))

    diff = user_pos[:, None, :] - ap_pos[None, :, :]  # (K, M, 2)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    beta_db = large_scale_fading_db(
        dist, shadow, config.pathloss_offset_db, config.pathloss_exponent_db_per_decade
    )
    gain = db_to_linear(beta_db)

    channels = np.empty((K, M, N), dtype=complex)
    identity_factor = np.eye(N, dtype=complex)
    for k in range(K):
        for m in range(M):
            if config.correlation == "local_scattering":
                angle = np.arctan2(diff[k, m, 1], diff[k, m, 0])
                R = local_scattering_correlation(N, angle, config.angular_spread_deg, rng)
                factor = correlation_factor(R)
            else:
                factor = identity_factor
            channels[k, m] = sample_channel(gain[k, m], None, rng, factor=factor)

    sigma2 = float(dbm_to_watt(noise_power_dbm(config.bandwidth_hz)))
    return Scenario(
        config=config,
        ap_positions=ap_pos,
        user_positions=user_pos,
        channels=channels,
        noise_power=np.full(K, sigma2),
        large_scale_db=beta_db,
    )


# -- persistence ------------------------------------------------------------

def scenario_to_dict(scenario: Scenario) -> dict:
    ch = scenario.channels
    return {
        "schema_version": SCENARIO_SCHEMA,
        "config": scenario.config.to_dict(),
        "ap_positions": scenario.ap_positions.tolist(),
        "user_positions": scenario.user_positions.tolist(),
        "channels": np.stack([ch.real, ch.imag], axis=-1).tolist(),
        "noise_power_w": scenario.noise_power.tolist(),
    }


_SCENARIO_KEYS = {"schema_version", "config", "ap_positions", "user_positions", "channels",
                  "noise_power_w"}


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema_version") != SCENARIO_SCHEMA:
        raise ValueError(f"unsupported scenario schema_version {d.get('schema_version')!r}")
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    cfg = ScenarioConfig.from_dict(d["config"])
    ch = np.asarray(d["channels"], dtype=float)
    expected = (cfg.num_users, cfg.num_aps, cfg.antennas_per_ap, 2)
    if ch.shape != expected:
        raise ValueError(f"channels array has shape {ch.shape}, expected {expected}")
    return Scenario(
        config=cfg,
        ap_positions=np.asarray(d["ap_positions"], dtype=float).reshape(-1, 2),
        user_positions=np.asarray(d["user_positions"], dtype=float).reshape(-1, 2),
        channels=ch[..., 0] + 1j * ch[..., 1],
        noise_power=np.asarray(d["noise_power_w"], dtype=float),
    )


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario)) + "\n")


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
