"""Solver configuration: flat ``key=value`` files with experiment defaults."""

import math
from dataclasses import dataclass, fields


class ConfigError(Exception):
    """Base class for configuration problems."""


class UnknownKey(ConfigError):
    """A key outside the accepted set."""


class MalformedLine(ConfigError):
    """A non-comment line without a ``key=value`` structure."""


class NonNumericValue(ConfigError):
    """A value that does not parse as a number."""


class ConstraintViolation(ConfigError):
    """A numeric value outside its admissible range."""


_INT_KEYS = frozenset({
    "dict_atoms", "patch_size", "patch_stride", "sparsity_eps",
    "max_outer", "max_inner", "dict_seed",
})


@dataclass
class SolverConfig:
    """Weights, step sizes and budgets for all subsolvers.

    ``sparsity_eps`` defaults to ``floor(0.7 * dict_atoms)`` and
    ``patch_stride`` to ``patch_size // 2`` when left unset.
    """

    lambda1: float = 0.003
    lambda2: float = 0.0001
    lambda3: float = 0.001
    lambda4: float = 0.001
    lambda5: float = 0.001
    lambda6: float = 0.0001
    eps_outer: float = 0.001
    sigma_recon: float = 0.05
    tau_recon: float = 0.05
    theta_recon: float = 1.0
    sigma_sparse: float = 0.99
    tau_sparse: float = 0.99
    sigma_flow: float = 0.5
    tau_flow: float = 0.25
    dict_atoms: int = 1024
    patch_size: int = 16
    patch_stride: int = None
    sparsity_eps: int = None
    max_outer: int = 20
    max_inner: int = 150
    dict_seed: int = 1

    def __post_init__(self):
        if self.patch_stride is None:
            self.patch_stride = max(1, self.patch_size // 2)
        if self.sparsity_eps is None:
            self.sparsity_eps = max(1, math.floor(0.7 * self.dict_atoms))
        self.validate()

    def validate(self):
        for i in range(1, 7):
            v = getattr(self, f"lambda{i}")
            if v < 0:
                raise ConstraintViolation(f"lambda{i} must be >= 0, got {v}")
        for key in ("eps_outer", "sigma_recon", "tau_recon", "sigma_sparse",
                    "tau_sparse", "sigma_flow", "tau_flow"):
            v = getattr(self, key)
            if v <= 0:
                raise ConstraintViolation(f"{key} must be > 0, got {v}")
        if not 0.0 <= self.theta_recon <= 1.0:
            raise ConstraintViolation(
                f"theta_recon must be in [0, 1], got {self.theta_recon}")
        for key in ("dict_atoms", "patch_size", "patch_stride", "sparsity_eps"):
            v = getattr(self, key)
            if v < 1:
                raise ConstraintViolation(f"{key} must be >= 1, got {v}")
        if self.patch_stride > self.patch_size:
            raise ConstraintViolation(
                "patch_stride must not exceed patch_size (full pixel coverage)")
        if self.sparsity_eps > self.dict_atoms:
            raise ConstraintViolation(
                f"sparsity_eps must be <= dict_atoms, got "
                f"{self.sparsity_eps} > {self.dict_atoms}")
        for key in ("max_outer", "max_inner"):
            if getattr(self, key) < 0:
                raise ConstraintViolation(f"{key} must be >= 0")

    def replace(self, **overrides):
        """Copy with some fields changed (re-validated)."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(overrides)
        return SolverConfig(**values)


_KNOWN_KEYS = frozenset(f.name for f in fields(SolverConfig))


def parse_config(path):
    """Parse a ``key=value`` config file; missing keys take the defaults.

    Lines may carry ``#`` comments; blank lines are ignored. Unknown keys,
    malformed lines, non-numeric values and out-of-range values raise the
    corresponding :class:`ConfigError` subclass.
    """
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MalformedLine(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _KNOWN_KEYS:
                raise UnknownKey(f"{path}:{lineno}: unknown key {key!r}")
            try:
                num = float(value)
            except ValueError:
                raise NonNumericValue(
                    f"{path}:{lineno}: {key}={value!r} is not numeric") from None
            if not math.isfinite(num):
                raise ConstraintViolation(f"{path}:{lineno}: {key} must be finite")
            if key in _INT_KEYS:
                if num != int(num):
                    raise ConstraintViolation(
                        f"{path}:{lineno}: {key} must be an integer, got {value}")
                num = int(num)
            overrides[key] = num
    return SolverConfig(**overrides)
