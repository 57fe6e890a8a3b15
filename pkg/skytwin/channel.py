"""Module for the BS-UAV and UAV-GU link budgets.

Large-scale fading is free-space path loss plus a LoS/NLoS shadowing constant; small-scale fading
is Rician for LoS links and Rayleigh for NLoS links. All internal math is in watts and linear
power gains; dBm inputs are converted once by :meth:`ChannelParams.from_config`.
"""

import math
import numpy as np
import pandas as pd
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .common import db_to_linear, dbm_to_watt

CHANNEL_DEFAULTS = {
    "f_c": 2.0e9,
    "bandwidth_B": 1.0e7,
    "p_b_dbm": 40.0,
    "p_u_dbm": 10.0,
    "noise_dbm": -75.0,
    "gamma_los_db": 0.1,
    "gamma_nlos_db": 21.0,
    "rician_K_db": 15.0,
    "light_speed_c": 3.0e8,
    "freeze_fading": False,
}


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants; powers in watts."""

    f_c: float = 2.0e9
    bandwidth_B: float = 1.0e7
    p_b: float = 10.0
    p_u: float = 0.01
    noise_N0: float = dbm_to_watt(-75.0)
    gamma_los_db: float = 0.1
    gamma_nlos_db: float = 21.0
    rician_K_db: float = 15.0
    light_speed_c: float = 3.0e8
    freeze_fading: bool = False

    def __post_init__(self):
        for name in ("f_c", "bandwidth_B", "p_b", "p_u", "noise_N0", "light_speed_c"):
            if getattr(self, name) <= 0:
                raise ValueError(f"channel.{name} must be positive.")
        if self.gamma_los_db < 0 or not self.gamma_nlos_db > self.gamma_los_db:
            raise ValueError("channel.gamma_nlos_db must exceed channel.gamma_los_db >= 0.")

    @classmethod
    def from_config(cls, cfg=None) -> "ChannelParams":
        """Builds the parameters from the ``channel`` config section (powers in dBm).

        Args:
            cfg (dict | box.Box, optional): The config section. Defaults to the reference-scale values.

        Returns:
            ChannelParams: The parameters with powers converted to watts.
        """
        values = dict(CHANNEL_DEFAULTS)
        if cfg is not None:
            values.update(cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg))
        return cls(
            f_c=float(values["f_c"]),
            bandwidth_B=float(values["bandwidth_B"]),
            p_b=dbm_to_watt(values["p_b_dbm"]),
            p_u=dbm_to_watt(values["p_u_dbm"]),
            noise_N0=dbm_to_watt(values["noise_dbm"]),
            gamma_los_db=float(values["gamma_los_db"]),
            gamma_nlos_db=float(values["gamma_nlos_db"]),
            rician_K_db=float(values["rician_K_db"]),
            light_speed_c=float(values["light_speed_c"]),
            freeze_fading=bool(values["freeze_fading"]),
        )


@dataclass(frozen=True)
class LinkBudget:
    """One drawn link: distance, LoS flag, fading terms, power gain and rate (bit/s)."""

    distance: float
    los_flag: int
    lsf_db: float
    ssf_mag2: float
    gain_h_mag2: float
    rate: float


def free_space_path_loss_db(d: float, f_c: float, light_speed_c: Optional[float] = 3.0e8) -> float:
    """Free-space path loss ``20log10(d) + 20log10(f_c) + 20log10(4*pi/c)``.

    Args:
        d (float): The link distance in meters.
        f_c (float): The carrier frequency in Hz.
        light_speed_c (float, optional): The speed of light. Defaults to 3e8 m/s.

    Raises:
        ValueError: If ``d <= 0``.

    Returns:
        float: The path loss in dB.
    """
    if d <= 0:
        raise ValueError(f"Path loss requires a positive distance, got {d}.")
    return (
        20.0 * math.log10(d)
        + 20.0 * math.log10(f_c)
        + 20.0 * math.log10(4.0 * math.pi / light_speed_c)
    )


def large_scale_fading_db(d: float, f_c: float, los: int, params: ChannelParams) -> float:
    """Path loss plus the LoS or NLoS shadowing constant, in dB."""
    shadowing = params.gamma_los_db if los else params.gamma_nlos_db
    return free_space_path_loss_db(d, f_c, params.light_speed_c) + shadowing


def sample_small_scale(
    los: int,
    params: ChannelParams,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> Union[float, np.ndarray]:
    """Draws the small-scale power gain ``|SSF|^2`` with unit mean.

    LoS links use ``SSF = sqrt(K/(K+1)) + sqrt(1/(K+1)) * CN(0, 1)``; NLoS links use
    ``SSF ~ CN(0, 1)``. With ``params.freeze_fading`` the gain is pinned to 1.

    Args:
        los (int): 1 for LoS, 0 for NLoS.
        params (ChannelParams): The channel parameters (Rician factor in dB).
        rng (numpy.random.Generator): The caller-owned stream.
        size (int, optional): Draw a vector of this length instead of a scalar. Defaults to None.

    Returns:
        float | numpy.ndarray: The power gain(s).
    """
    if params.freeze_fading:
        return 1.0 if size is None else np.ones(size)

    shape = 1 if size is None else size
    scatter = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    if los:
        k = db_to_linear(params.rician_K_db)
        ssf = math.sqrt(k / (k + 1.0)) + math.sqrt(1.0 / (k + 1.0)) * scatter
    else:
        ssf = scatter
    gain = np.abs(ssf) ** 2
    return float(gain[0]) if size is None else gain


def link_rate(p_tx: float, gain_h_mag2: float, params: ChannelParams) -> float:
    """Shannon rate ``B * log2(1 + p_tx * |h|^2 / N0)`` in bit/s."""
    if gain_h_mag2 < 0:
        raise ValueError("The channel power gain must be non-negative.")
    return params.bandwidth_B * math.log2(1.0 + p_tx * gain_h_mag2 / params.noise_N0)


def effective_rate(r_bu: float, r_uk: float) -> float:
    """Relay bottleneck: the smaller of the BS-UAV and UAV-GU rates."""
    if r_bu < 0 or r_uk < 0:
        raise ValueError("Rates must be non-negative.")
    return min(r_bu, r_uk)


def slot_data(r_eff: float, delta2: float) -> float:
    """Bits delivered to a GU during the UAV-GU sub-slot of length ``delta2``."""
    if r_eff < 0:
        raise ValueError("The effective rate must be non-negative.")
    return r_eff * delta2


def build_link(
    d: float,
    los: int,
    p_tx: float,
    params: ChannelParams,
    rng: Optional[np.random.Generator] = None,
    ssf_mag2: Optional[float] = None,
) -> LinkBudget:
    """Assembles a link budget for one slot.

    Args:
        d (float): The link distance in meters.
        los (int): The LoS flag; BS-UAV links are always called with 1.
        p_tx (float): The transmit power in watts.
        params (ChannelParams): The channel parameters.
        rng (numpy.random.Generator, optional): The fading stream. Required unless the fading is
            frozen or ``ssf_mag2`` is given.
        ssf_mag2 (float, optional): Forces the small-scale gain. Defaults to None.

    Returns:
        LinkBudget: A mutually consistent record.
    """
    lsf_db = large_scale_fading_db(d, params.f_c, los, params)
    if ssf_mag2 is None:
        if rng is None and not params.freeze_fading:
            raise ValueError("A random stream is required to draw small-scale fading.")
        ssf_mag2 = sample_small_scale(los, params, rng)
    gain = 10.0 ** (-lsf_db / 10.0) * ssf_mag2
    return LinkBudget(
        distance=float(d),
        los_flag=int(los),
        lsf_db=lsf_db,
        ssf_mag2=float(ssf_mag2),
        gain_h_mag2=gain,
        rate=link_rate(p_tx, gain, params),
    )


def link_budget_table(
    distances: Sequence[float],
    params: Optional[ChannelParams] = None,
) -> pd.DataFrame:
    """Deterministic link-budget table over a distance sweep (fading pinned to its mean).

    Args:
        distances (list): Distances in meters.
        params (ChannelParams, optional): The parameters. Defaults to the reference-scale values.

    Returns:
        pandas.DataFrame: One row per distance with path loss, LoS/NLoS fading and rates.
    """
    params = params or ChannelParams()
    rows = []
    for d in distances:
        bs_link = build_link(d, 1, params.p_b, params, ssf_mag2=1.0)
        los_link = build_link(d, 1, params.p_u, params, ssf_mag2=1.0)
        nlos_link = build_link(d, 0, params.p_u, params, ssf_mag2=1.0)
        rows.append(
            {
                "distance_m": float(d),
                "path_loss_db": free_space_path_loss_db(d, params.f_c, params.light_speed_c),
                "lsf_los_db": los_link.lsf_db,
                "lsf_nlos_db": nlos_link.lsf_db,
                "rate_bs_uav_bps": bs_link.rate,
                "rate_uav_gu_los_bps": los_link.rate,
                "rate_uav_gu_nlos_bps": nlos_link.rate,
            }
        )
    return pd.DataFrame(rows)
