"""Vehicle and tire parameter sets for the 1/10-scale IWD platform."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Drivetrain(str, enum.Enum):
    IWD = "IWD"
    RWD = "RWD"
    AWD = "AWD"


@dataclass(frozen=True)
class VehicleParams:
    """Rigid-body and geometry constants.

    Mass, wheelbase (lf + lr), track, wheel radius and steering limit are the
    published platform values. Iz, h_cg and the lf/lr split are estimates.
    """

    m: float = 4.84
    Iz: float = 0.062
    lf: float = 0.175
    lr: float = 0.175
    T: float = 0.26
    R: float = 0.0565
    h_cg: float = 0.05
    delta_max: float = 0.46
    g: float = 9.81
    drivetrain: Drivetrain = Drivetrain.IWD

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "T", "R", "h_cg", "delta_max", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be positive")
        object.__setattr__(self, "drivetrain", Drivetrain(self.drivetrain))

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


@dataclass(frozen=True)
class TireParams:
    """Magic-formula coefficients: stiffness B, shape C, peak friction D."""

    B: float = 0.9
    C: float = 2.25
    D: float = 0.35

    def __post_init__(self):
        if not (self.B > 0 and self.C > 0 and self.D > 0):
            raise ValueError("tire coefficients must be positive")

    def as_array(self, n: int | None = None) -> np.ndarray:
        row = np.array([self.B, self.C, self.D], dtype=np.float64)
        if n is None:
            return row
        return np.tile(row, (n, 1))
