"""Truncated-Gaussian exogenous inputs and their time schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError, HorizonExceeded
from .measure import OpinionPartition

__all__ = [
    "TruncatedGaussianInput",
    "Phase",
    "InputSchedule",
    "make_truncated_gaussian",
    "input_window_moments",
    "schedule_at",
    "assumption2_check",
]

TRUNCATION = 3.0
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
# normalizer of the standard normal restricted to [-3, 3]
_Z = math.erf(TRUNCATION / _SQRT2)


@dataclass(frozen=True)
class TruncatedGaussianInput:
    """Gaussian bump of total mass ``weight`` cut to ``mean +/- 3 sigma``."""

    mean: float
    sigma: float
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"weight must be positive, got {self.weight}")
        if not math.isfinite(self.mean):
            raise ValueError("mean must be finite")

    @property
    def support(self) -> tuple[float, float]:
        half = TRUNCATION * self.sigma
        return self.mean - half, self.mean + half

    def density(self, z):
        z = np.asarray(z, dtype=float)
        s = (z - self.mean) / self.sigma
        d = self.weight * _INV_SQRT2PI * np.exp(-0.5 * s * s) / (self.sigma * _Z)
        return np.where(np.abs(s) <= TRUNCATION, d, 0.0)

    def window_moments(self, a, b):
        """Mass and first moment on ``[a, b]`` in closed form."""
        lo, hi = self.support
        a = np.maximum(np.asarray(a, dtype=float), lo)
        b = np.minimum(np.asarray(b, dtype=float), hi)
        inside = a < b
        alpha = (np.where(inside, a, 0.0) - self.mean) / self.sigma
        beta = (np.where(inside, b, 0.0) - self.mean) / self.sigma
        dphi_cdf = 0.5 * (erf(beta / _SQRT2) - erf(alpha / _SQRT2))
        dphi_pdf = _INV_SQRT2PI * (np.exp(-0.5 * alpha * alpha) - np.exp(-0.5 * beta * beta))
        scale = self.weight / _Z
        mass = np.where(inside, scale * dphi_cdf, 0.0)
        moment = np.where(inside, scale * (self.mean * dphi_cdf + self.sigma * dphi_pdf), 0.0)
        return mass, moment

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sigma": self.sigma, "weight": self.weight}


def make_truncated_gaussian(mean: float, sigma: float, weight: float = 1.0) -> TruncatedGaussianInput:
    return TruncatedGaussianInput(float(mean), float(sigma), float(weight))


def input_window_moments(u: TruncatedGaussianInput, a, b):
    """Mass and first moment of ``u`` on the closed window ``[a, b]``."""
    if np.any(np.asarray(a) > np.asarray(b)):
        raise ValueError("window needs a <= b")
    mass, moment = u.window_moments(a, b)
    if mass.ndim == 0:
        return float(mass), float(moment)
    return mass, moment


@dataclass(frozen=True)
class Phase:
    """Input used for steps ``t <= until_step`` (after the previous phase).

    Exactly one of ``mean`` or ``tracking_range`` is set. A tracking phase
    centers the input at ``x_min(t) + tracking_range / 2``, where
    ``tracking_range`` is the length of the input's attraction range.
    """

    until_step: int
    sigma: float
    weight: float = 1.0
    mean: float | None = None
    tracking_range: float | None = None

    def __post_init__(self) -> None:
        if (self.mean is None) == (self.tracking_range is None):
            raise ValueError("phase needs exactly one of mean or tracking_range")
        if self.until_step < 0:
            raise ValueError("until_step must be nonnegative")
        # validates sigma and weight
        TruncatedGaussianInput(0.0, self.sigma, self.weight)

    def resolve(self, support: tuple[float, float]) -> TruncatedGaussianInput:
        mean = self.mean if self.mean is not None else support[0] + 0.5 * self.tracking_range
        return TruncatedGaussianInput(float(mean), self.sigma, self.weight)

    def to_dict(self) -> dict:
        mean = self.mean if self.mean is not None else {"tracking_range": self.tracking_range}
        return {"until_step": self.until_step, "mean": mean, "sigma": self.sigma, "weight": self.weight}


@dataclass(frozen=True)
class InputSchedule:
    """Input policy over time: ``none``, ``constant`` or ``phased``."""

    kind: str = "none"
    constant: TruncatedGaussianInput | None = None
    phases: tuple[Phase, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.kind not in ("none", "constant", "phased"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.constant is None:
            raise ValueError("constant schedule needs an input")
        if self.kind == "phased":
            if not self.phases:
                raise ValueError("phased schedule needs at least one phase")
            ends = [p.until_step for p in self.phases]
            if any(b <= a for a, b in zip(ends, ends[1:])):
                raise ValueError("phase until_step values must be strictly increasing")

    @property
    def horizon(self) -> int | None:
        return self.phases[-1].until_step if self.kind == "phased" else None

    @classmethod
    def none(cls) -> InputSchedule:
        return cls("none")

    @classmethod
    def constant_input(cls, u: TruncatedGaussianInput) -> InputSchedule:
        return cls("constant", constant=u)

    @classmethod
    def direct(cls, mean: float, sigma: float, horizon: int, weight: float = 1.0) -> InputSchedule:
        """Positive mean broadcast for the whole horizon."""
        return cls("phased", phases=(Phase(horizon, sigma, weight, mean=mean),))

    @classmethod
    def distracting(
        cls,
        first_mean: float | None,
        second_mean: float,
        sigma: float,
        horizon: int,
        alpha: float,
        weight: float = 1.0,
        tracking_range: float | None = None,
    ) -> InputSchedule:
        """First phase for ``t <= alpha * horizon``, second phase afterwards.

        Pass ``tracking_range`` instead of ``first_mean`` to center the first
        phase at ``x_min(t) + tracking_range / 2``.
        """
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        switch = int(math.floor(alpha * horizon + 1e-9))
        if not 0 <= switch < horizon:
            raise ValueError("switch step must fall inside the horizon")
        first = Phase(switch, sigma, weight, mean=first_mean, tracking_range=tracking_range)
        return cls("phased", phases=(first, Phase(horizon, sigma, weight, mean=second_mean)))

    def inputs(self) -> list[Phase] | list[TruncatedGaussianInput]:
        if self.kind == "constant":
            return [self.constant]
        return list(self.phases)

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"type": "none"}
        if self.kind == "constant":
            return {"type": "constant", **self.constant.to_dict()}
        return {"type": "phased", "phases": [p.to_dict() for p in self.phases]}

    @classmethod
    def from_dict(cls, spec: dict | None) -> InputSchedule:
        if spec is None:
            return cls.none()
        kind = spec.get("type")
        try:
            if kind == "none":
                return cls.none()
            if kind == "constant":
                return cls.constant_input(
                    make_truncated_gaussian(spec["mean"], spec["sigma"], spec.get("weight", 1.0))
                )
            if kind == "phased":
                phases = []
                for i, p in enumerate(spec.get("phases", [])):
                    mean = p["mean"]
                    kw = {"tracking_range": float(mean["tracking_range"])} if isinstance(mean, dict) else {"mean": float(mean)}
                    phases.append(Phase(int(p["until_step"]), float(p["sigma"]), float(p.get("weight", 1.0)), **kw))
                return cls("phased", phases=tuple(phases))
        except KeyError as exc:
            raise ConfigError("schedule", f"missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError("schedule", str(exc)) from None
        raise ConfigError("schedule.type", f"expected none, constant or phased, got {kind!r}")


def schedule_at(
    s: InputSchedule, t: int, current_support: tuple[float, float] | None = None
) -> TruncatedGaussianInput | None:
    """Input acting at step ``t``; tracking phases read ``x_min`` from the support."""
    if t < 0:
        raise HorizonExceeded(f"negative step {t}")
    if s.kind == "none":
        return None
    if s.kind == "constant":
        return s.constant
    if t > s.horizon:
        raise HorizonExceeded(f"step {t} beyond schedule horizon {s.horizon}")
    for phase in s.phases:
        if t <= phase.until_step:
            if phase.tracking_range is not None and current_support is None:
                raise ValueError("tracking phase needs the current support")
            return phase.resolve(current_support)
    raise AssertionError("unreachable")


def assumption2_check(u: TruncatedGaussianInput | None, part: OpinionPartition) -> bool:
    """Whether the input support lies inside the closed support of ``part``."""
    if u is None:
        return True
    lo, hi = part.support
    a, b = u.support
    # mean +/- 3 sigma is rounded; allow a few ulps at a touching boundary
    slack = 4 * np.finfo(float).eps * max(abs(lo), abs(hi), abs(a), abs(b), 1.0)
    return lo - slack <= a and b <= hi + slack
