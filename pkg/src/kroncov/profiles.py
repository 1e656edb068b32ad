"""Named eigenvalue families used for diagonal Kronecker truths."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError

PROFILE_NAMES = ("constant", "linear", "exponential", "spiked")


def eigen_profile(name: str, p: int, *, q: int = 1, a: float = 1.0, b: float = 1.0) -> np.ndarray:
    """Eigenvalues of one ``p``-dimensional factor.

    ``exponential`` is ``(e^1, ..., e^p)`` divided by ``e^p``; every consumer
    (relative losses, angles, equivariant estimators) is scale invariant, and
    the division keeps large ``p`` finite.
    """
    if p < 1:
        raise ConfigError(f"profile dimension must be positive, got {p}")
    j = np.arange(1, p + 1, dtype=float)
    if name == "constant":
        return np.ones(p)
    if name == "linear":
        return j
    if name == "exponential":
        return np.exp(j - p)
    if name == "spiked":
        if not 0 < q <= p:
            raise ConfigError(f"spiked profile needs 0 < q <= p, got q={q}, p={p}")
        if a < 0 or b <= 0:
            raise ConfigError("spiked profile needs a >= 0 and b > 0")
        out = np.full(p, float(b))
        out[:q] += a
        return out
    raise ConfigError(f"unknown eigenvalue profile {name!r}; choose from {PROFILE_NAMES}")


def resolve_spectrum(spec, p: int) -> np.ndarray:
    """A profile name, a ``{"name": ..., ...}`` table, or an explicit list."""
    if isinstance(spec, str):
        return eigen_profile(spec, p)
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("name", None)
        if name is None:
            raise ConfigError("profile table needs a 'name' key")
        unknown = set(spec) - {"q", "a", "b"}
        if unknown:
            raise ConfigError(f"unknown profile key {sorted(unknown)[0]!r}")
        return eigen_profile(name, p, **spec)
    values = np.asarray(spec, dtype=float)
    if values.shape != (p,):
        raise ConfigError(f"explicit spectrum has length {values.size}, expected {p}")
    return values


def profile_label(spec) -> str:
    if isinstance(spec, str):
        return spec
    if isinstance(spec, dict):
        extra = ",".join(f"{k}={spec[k]}" for k in sorted(spec) if k != "name")
        return f"{spec.get('name')}({extra})"
    return "explicit"
