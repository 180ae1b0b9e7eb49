"""Free-space (exponent 2) link budget for the direct and backscatter links."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 15.0
    tx_gain_dbi: float = 0.0
    bd_gain_dbi: float = 0.0
    rx_gain_dbi: float = 0.0
    wavelength: float = SPEED_OF_LIGHT / 486e6
    d_tx_bd: float = 1.0
    d_bd_rx: float = 1.0
    d_tx_rx: float = 1.0
    modulation_loss_db: float = 0.0

    def __post_init__(self):
        for name in ("wavelength", "d_tx_bd", "d_bd_rx", "d_tx_rx"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def at_frequency(cls, freq_hz: float, **kw) -> LinkBudget:
        return cls(wavelength=SPEED_OF_LIGHT / freq_hz, **kw)


def path_gain_db(wavelength: float, distance: float) -> float:
    """``20 log10(lambda / (4 pi d))`` (negative of the free-space path loss)."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    return float(20 * np.log10(wavelength / (4 * np.pi * distance)))


def link_budget(lb: LinkBudget) -> tuple[float, float]:
    """(direct, backscatter) received powers in dBm."""
    direct = lb.tx_power_dbm + lb.tx_gain_dbi + lb.rx_gain_dbi + path_gain_db(lb.wavelength, lb.d_tx_rx)
    backscatter = (
        lb.tx_power_dbm
        + lb.tx_gain_dbi
        + 2 * lb.bd_gain_dbi
        + lb.rx_gain_dbi
        + path_gain_db(lb.wavelength, lb.d_tx_bd)
        + path_gain_db(lb.wavelength, lb.d_bd_rx)
        + lb.modulation_loss_db
    )
    return float(direct), float(backscatter)


@dataclass(frozen=True)
class Corridor:
    """RX points along a straight corridor (x axis); TX and BD sit in side rooms.

    Coordinates in metres. Defaults: 17 points 1 m apart, the TX room near
    the left end and the BD room near the right end, both 3 m off the
    corridor axis.
    """

    n_points: int = 17
    spacing: float = 1.0
    tx_xy: tuple[float, float] = (2.0, 3.0)
    bd_xy: tuple[float, float] = (13.0, 3.0)

    def rx_positions(self) -> np.ndarray:
        x = np.arange(self.n_points) * self.spacing
        return np.column_stack([x, np.zeros_like(x)])


def corridor_budget(base: LinkBudget, corridor: Corridor = Corridor()) -> list[dict]:
    """Direct and backscatter power at every corridor RX point."""
    tx = np.array(corridor.tx_xy, dtype=float)
    bd = np.array(corridor.bd_xy, dtype=float)
    d_tx_bd = float(np.hypot(*(bd - tx)))
    rows = []
    for i, rx in enumerate(corridor.rx_positions()):
        lb = LinkBudget(
            base.tx_power_dbm, base.tx_gain_dbi, base.bd_gain_dbi, base.rx_gain_dbi, base.wavelength,
            d_tx_bd, float(np.hypot(*(rx - bd))), float(np.hypot(*(rx - tx))), base.modulation_loss_db,
        )
        direct, back = link_budget(lb)
        rows.append({"position": i, "x_m": float(rx[0]), "d_bd_rx": lb.d_bd_rx, "d_tx_rx": lb.d_tx_rx,
                     "direct_dbm": direct, "backscatter_dbm": back})
    return rows
