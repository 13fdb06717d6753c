"""Mapping common diffusion parameterizations onto x0 prediction under the VE process.

A model trained on (process, target) is viewed as the denoiser::

    x0_hat(x, s) = c_skip(s) * x + c_out(s) * F(c_in(s) * x, c_noise(s))

acting on VE-coordinate inputs x = x0 + s * eps, where s = sigma / alpha_sigma
is the VE noise scale. Its native per-step loss equals ``w(s)`` times the x0
prediction loss, and its native noise schedule induces a density over s.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from optloss.core import DiffusionProcess, ProcessKind
from optloss.errors import DomainError, UnsupportedError

__all__ = [
    "Target",
    "Preconditioners",
    "FormulationSpec",
    "SPEC_NAMES",
    "DEFAULT_CONSTANTS",
    "to_ve_sigma",
    "from_ve_sigma",
    "preconditioners",
    "loss_weight_native",
    "convert_loss_to_x0_ve",
    "native_sigma_density",
    "sigma_hat_support",
    "ddpm_sigma_hat",
    "ddpm_time",
]


class Target(str, enum.Enum):
    SCORE = "score"
    EPS = "eps"
    X0 = "x0"
    V = "v"
    F = "F"


DEFAULT_CONSTANTS = {
    "sigma_data": 0.5,
    "p_mean": -1.2,
    "p_std": 1.2,
    "beta_min": 0.1,
    "beta_max": 20.0,
    "eps_t": 1e-5,
    "sigma_min": 0.002,
    "sigma_max": 80.0,
    "num_steps": 1000,
}

# name -> (process, target, schedule)
SPEC_NAMES = {
    "vp-eps": (ProcessKind.VP, Target.EPS, "ddpm"),
    "ve-F": (ProcessKind.VE, Target.F, "edm"),
    "ve-eps": (ProcessKind.VE, Target.EPS, "ncsn"),
    "fm-v": (ProcessKind.FM, Target.V, "uniform_t"),
    "fm-v-sd3": (ProcessKind.FM, Target.V, "logit_normal"),
    "fm-eps": (ProcessKind.FM, Target.EPS, "uniform_t"),
    "fm-x0": (ProcessKind.FM, Target.X0, "uniform_t"),
}

_REQUIRED = {
    "ddpm": ("beta_min", "beta_max", "eps_t", "num_steps"),
    "edm": ("sigma_data", "p_mean", "p_std"),
    "ncsn": ("sigma_min", "sigma_max"),
    "uniform_t": (),
    "logit_normal": (),
}


@dataclass(frozen=True)
class Preconditioners:
    c_skip: float
    c_out: float
    c_in: float
    c_noise: float

    def denoise(self, x, net_out):
        """x0 prediction from a raw network output."""
        return self.c_skip * x + self.c_out * net_out

    def network_target(self, x, x0):
        """The raw network output that reproduces ``x0``; inverse of :meth:`denoise`."""
        return (x0 - self.c_skip * x) / self.c_out


@dataclass(frozen=True)
class FormulationSpec:
    """One supported (process, target, schedule) row plus its constants."""

    name: str
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SPEC_NAMES:
            raise UnsupportedError(
                f"unsupported formulation {self.name!r}; choose from {sorted(SPEC_NAMES)}"
            )
        merged = dict(DEFAULT_CONSTANTS)
        merged.update(self.constants)
        object.__setattr__(self, "constants", merged)
        c = merged
        if self.schedule == "ddpm":
            if not (0 < c["eps_t"] < 1 and c["beta_min"] > 0 and c["beta_max"] >= c["beta_min"]):
                raise DomainError("DDPM needs 0 < eps_t < 1 and 0 < beta_min <= beta_max")
        if self.schedule == "edm" and not (c["sigma_data"] > 0 and c["p_std"] > 0):
            raise DomainError("EDM needs sigma_data > 0 and p_std > 0")
        if self.schedule == "ncsn" and not (0 < c["sigma_min"] < c["sigma_max"]):
            raise DomainError("NCSN needs 0 < sigma_min < sigma_max")

    @classmethod
    def from_pair(cls, process, target, **constants) -> FormulationSpec:
        if isinstance(process, str):
            process = process.upper()
        process, target = ProcessKind(process), Target(target)
        for name, (p, t, _) in SPEC_NAMES.items():
            if (p, t) == (process, target):
                return cls(name, constants)
        raise UnsupportedError(f"no supported formulation for {process.value}-{target.value}")

    @property
    def process(self) -> DiffusionProcess:
        return DiffusionProcess(SPEC_NAMES[self.name][0])

    @property
    def target(self) -> Target:
        return SPEC_NAMES[self.name][1]

    @property
    def schedule(self) -> str:
        return SPEC_NAMES[self.name][2]


def _as_process(process) -> DiffusionProcess:
    if isinstance(process, DiffusionProcess):
        return process
    if isinstance(process, FormulationSpec):
        return process.process
    return DiffusionProcess(ProcessKind(process))


def to_ve_sigma(process, native_sigma: float) -> float:
    """sigma / alpha_sigma."""
    proc = _as_process(process)
    s = proc.check(native_sigma)
    if proc.kind is ProcessKind.VE:
        return s
    if proc.kind is ProcessKind.VP:
        return s / math.sqrt((1.0 - s) * (1.0 + s))
    return s / (1.0 - s)


def from_ve_sigma(process, sigma_hat: float) -> float:
    proc = _as_process(process)
    if not sigma_hat > 0 or not math.isfinite(sigma_hat):
        raise DomainError(f"sigma_hat must be positive and finite, got {sigma_hat!r}")
    if proc.kind is ProcessKind.VE:
        return float(sigma_hat)
    if proc.kind is ProcessKind.VP:
        return sigma_hat / math.sqrt(1.0 + sigma_hat * sigma_hat)
    return sigma_hat / (1.0 + sigma_hat)


def _ddpm_exponent(t: float, c: dict) -> float:
    return c["beta_min"] * t + 0.5 * (c["beta_max"] - c["beta_min"]) * t * t


def ddpm_sigma_hat(t: float, constants: dict | None = None) -> float:
    """VE noise scale of the DDPM schedule at time t."""
    c = {**DEFAULT_CONSTANTS, **(constants or {})}
    return math.sqrt(math.expm1(_ddpm_exponent(t, c)))


def ddpm_time(sigma_hat: float, constants: dict | None = None) -> float:
    """Invert :func:`ddpm_sigma_hat`; the exponent is quadratic in t, so solve it directly."""
    c = {**DEFAULT_CONSTANTS, **(constants or {})}
    target = math.log1p(sigma_hat * sigma_hat)
    hi_val = _ddpm_exponent(1.0, c)
    if not 0 < target <= hi_val:
        raise DomainError(f"sigma_hat={sigma_hat!r} outside the DDPM range")
    delta = c["beta_max"] - c["beta_min"]
    # Cancellation-free root of beta_min*t + delta*t^2/2 = target.
    return 2.0 * target / (c["beta_min"] + math.sqrt(c["beta_min"] ** 2 + 2.0 * delta * target))


def _check_sigma_hat(sigma_hat):
    if not sigma_hat > 0 or not math.isfinite(sigma_hat):
        raise DomainError(f"sigma_hat must be positive and finite, got {sigma_hat!r}")
    return float(sigma_hat)


def preconditioners(spec: FormulationSpec, sigma_hat: float) -> Preconditioners:
    s = _check_sigma_hat(sigma_hat)
    c = spec.constants
    name = spec.name
    if name == "vp-eps":
        t = ddpm_time(s, c)
        return Preconditioners(1.0, -s, 1.0 / math.sqrt(1.0 + s * s), (c["num_steps"] - 1) * t)
    if name == "ve-F":
        sd = c["sigma_data"]
        r = math.sqrt(s * s + sd * sd)
        return Preconditioners(sd * sd / (s * s + sd * sd), s * sd / r, 1.0 / r, 0.25 * math.log(s))
    if name == "ve-eps":
        return Preconditioners(1.0, s, 1.0, math.log(s / 2.0))
    t = s / (1.0 + s)
    if name in ("fm-v", "fm-v-sd3"):
        return Preconditioners(1.0 / (1.0 + s), -t, 1.0 / (1.0 + s), t)
    if name == "fm-eps":
        return Preconditioners(1.0, -s, 1.0 / (1.0 + s), t)
    if name == "fm-x0":
        return Preconditioners(0.0, 1.0, 1.0 / (1.0 + s), t)
    raise UnsupportedError(name)


def loss_weight_native(spec: FormulationSpec, sigma_hat: float) -> float:
    """Factor w with native per-step loss = w * (x0 prediction loss under VE)."""
    s = _check_sigma_hat(sigma_hat)
    name = spec.name
    if name in ("vp-eps", "ve-eps", "fm-eps"):
        return 1.0 / (s * s)
    if name == "ve-F":
        sd = spec.constants["sigma_data"]
        return (s * s + sd * sd) / (s * sd) ** 2
    if name in ("fm-v", "fm-v-sd3"):
        return ((1.0 + s) / s) ** 2
    if name == "fm-x0":
        return 1.0
    raise UnsupportedError(name)


def convert_loss_to_x0_ve(spec: FormulationSpec, sigma_hat: float, native_loss: float) -> float:
    if not native_loss >= 0:
        raise DomainError(f"native loss must be nonnegative, got {native_loss!r}")
    return native_loss / loss_weight_native(spec, sigma_hat)


def sigma_hat_support(spec: FormulationSpec) -> tuple[float, float]:
    """Closed support of the induced sigma_hat density (may be (0, inf))."""
    c = spec.constants
    if spec.schedule == "ddpm":
        return ddpm_sigma_hat(c["eps_t"], c), ddpm_sigma_hat(1.0, c)
    if spec.schedule == "ncsn":
        return c["sigma_min"], c["sigma_max"]
    return 0.0, math.inf


def _normal_pdf(x, mu, sd):
    z = (x - mu) / sd
    return math.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))


def native_sigma_density(spec: FormulationSpec, sigma_hat: float) -> float:
    """Density of sigma_hat induced by the formulation's native training schedule."""
    s = _check_sigma_hat(sigma_hat)
    c = spec.constants
    sched = spec.schedule
    if sched == "edm":
        return _normal_pdf(math.log(s), c["p_mean"], c["p_std"]) / s
    if sched == "logit_normal":
        return _normal_pdf(math.log(s), 0.0, 1.0) / s
    if sched == "uniform_t":
        return 1.0 / (1.0 + s) ** 2
    if sched == "ncsn":
        lo, hi = c["sigma_min"], c["sigma_max"]
        if not lo <= s <= hi:
            return 0.0
        return 1.0 / (s * math.log(hi / lo))
    if sched == "ddpm":
        lo, hi = sigma_hat_support(spec)
        if not lo <= s <= hi:
            return 0.0
        t = ddpm_time(s, c)
        rate = c["beta_min"] + (c["beta_max"] - c["beta_min"]) * t
        dt_ds = 2.0 * s / ((1.0 + s * s) * rate)
        return dt_ds / (1.0 - c["eps_t"])
    raise UnsupportedError(spec.name)
