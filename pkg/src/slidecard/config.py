"""Sketch parameters and the key-value parameter file.

Parameter files hold one ``key = value`` pair per line; ``#`` starts a
comment. Unknown keys are rejected so typos do not silently fall back to
defaults::

    # detection
    theta = 1024
    eta = 8
    q = 17
    r = 5
    delta = 5
    # estimation
    q_prime = 17
    r_prime = 5
    delta_prime = 16
    eta_prime = 16384
    seed = 42
    k = 300
    slice_duration = 1.0
    anet = 10.0.0.0/8, 192.168.0.0/16
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ADDRESS_WIDTH = 32
COUNTER_MAX = 65535
MAX_WINDOW = COUNTER_MAX - 1
DEFAULT_SEED = 0x5EED
DEFAULT_TUPLE_CAP = 1 << 22

#: occupancy-fraction threshold for hot estimators, kept as the exact expression
RHO = 0.99 * (1.0 - math.exp(-1.0 / 3.0))


def sampling_threshold(theta: int, eta: int) -> int:
    """Smallest integer tau with ``eta * 2**tau >= theta``, i.e. ceil(log2(theta/eta))."""
    if theta < 1 or eta < 1:
        raise ConfigError("theta and eta must be positive")
    if theta <= eta:
        return 0
    tau = 0
    while eta << tau < theta:
        tau += 1
    return tau


@dataclass(frozen=True)
class SketchParams:
    theta: int = 1024
    eta: int = 8
    q: int = 17
    r: int = 5
    delta: int = 5
    q_prime: int = 17
    r_prime: int = 5
    delta_prime: int = 16
    eta_prime: int = 1 << 14
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.theta < self.eta:
            raise ConfigError(f"theta ({self.theta}) must be >= eta ({self.eta})")
        if self.eta < 1 or self.eta_prime < 1:
            raise ConfigError("eta and eta_prime must be positive")
        if not 1 <= self.delta < self.q:
            raise ConfigError(f"delta must satisfy 1 <= delta < q, got delta={self.delta}, q={self.q}")
        if self.r < 3:
            raise ConfigError(f"r must be >= 3, got {self.r}")
        if (self.r - 2) * self.delta + self.q < ADDRESS_WIDTH:
            raise ConfigError(
                f"(r-2)*delta+q = {(self.r - 2) * self.delta + self.q} < {ADDRESS_WIDTH}: "
                "addresses would not be recoverable"
            )
        if self.q > ADDRESS_WIDTH or self.q_prime > ADDRESS_WIDTH:
            raise ConfigError("q and q_prime must be <= 32")
        if self.q_prime < 0 or self.r_prime < 1:
            raise ConfigError("q_prime must be >= 0 and r_prime >= 1")
        if not 0 < self.delta_prime <= self.eta_prime:
            raise ConfigError(
                f"delta_prime must satisfy 0 < delta_prime <= eta_prime, got {self.delta_prime}"
            )

    @property
    def tau(self) -> int:
        return sampling_threshold(self.theta, self.eta)

    @property
    def rho(self) -> float:
        return RHO

    @property
    def slea_row_length(self) -> int:
        return (1 << self.q_prime) * self.delta_prime + self.eta_prime - self.delta_prime

    @property
    def memory_reduction_rate(self) -> float:
        return 1.0 - self.slea_row_length / (self.eta_prime * (1 << self.q_prime))

    @classmethod
    def from_mapping(cls, values: dict) -> "SketchParams":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                continue
            try:
                kwargs[key] = int(value, 0) if isinstance(value, str) else int(value)
            except ValueError:
                raise ConfigError(f"parameter {key!r} must be an integer, got {value!r}") from None
        return cls(**kwargs)


PARAM_KEYS = {
    "theta", "eta", "q", "r", "delta", "q_prime", "r_prime", "delta_prime", "eta_prime",
    "seed", "k", "slice_duration", "t0", "anet", "mode", "reinit", "tuple_cap",
    "reorder_tolerance_us", "workers",
}


def parse_param_text(text: str, source: str = "<params>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in PARAM_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown parameter {key!r}")
        values[key] = value
    return values


def load_param_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read parameter file {path}: {exc}") from None
    return parse_param_text(text, str(path))
