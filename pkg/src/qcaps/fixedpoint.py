"""Fixed-point formats and the three rounding schemes (TRN, RTN, SR).

Quantization is *simulated*: values stay in float64 and are snapped onto
the grid {k * 2**-nf} of the target format, then saturated to the two's
complement range of the format. No bit-packing happens here.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


class RoundingScheme(enum.Enum):
    """How a real value is mapped onto the fixed-point grid."""

    TRN = "trn"  # truncation: floor to the next grid point below
    RTN = "rtn"  # round-to-nearest, halves rounded up
    SR = "sr"    # stochastic rounding, unbiased, needs a RandomStream

    @property
    def is_deterministic(self) -> bool:
        return self is not RoundingScheme.SR

    @classmethod
    def parse(cls, text: str) -> "RoundingScheme":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown rounding scheme {text!r}, expected one of "
                             f"{[s.value for s in cls]}") from None


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed two's-complement format with `ni` integer bits (sign included)
    and `nf` fractional bits; wordlength is ni + nf."""

    ni: int
    nf: int

    def __post_init__(self) -> None:
        if self.ni < 1:
            raise ValueError(f"ni must be >= 1 (sign bit), got {self.ni}")
        if self.nf < 0:
            raise ValueError(f"nf must be >= 0, got {self.nf}")

    @property
    def wordlength(self) -> int:
        return self.ni + self.nf

    @property
    def epsilon(self) -> float:
        """Grid step 2**-nf."""
        return 2.0 ** -self.nf

    @property
    def representable_range(self) -> tuple[float, float]:
        """[-2**(ni-1), 2**(ni-1) - 2**-nf]."""
        hi = 2.0 ** (self.ni - 1)
        return (-hi, hi - self.epsilon)


def epsilon(fmt: FixedPointFormat) -> float:
    return fmt.epsilon


def representable_range(fmt: FixedPointFormat) -> tuple[float, float]:
    return fmt.representable_range


class RandomStream:
    """Deterministic uniform [0,1) source keyed by (seed, stream_id).

    The same key always yields the same sequence, which is what makes
    stochastic rounding reproducible and safe to use concurrently: every
    consumer owns its stream, nothing is shared.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = [self.seed & _MASK64, self.stream_id & _MASK64]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))

    def uniform(self, shape: int | tuple[int, ...]) -> np.ndarray:
        """Next uniform draws in [0,1); fills C-order (row-major)."""
        return self._gen.random(size=shape)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


def quantize_value(x: float, fmt: FixedPointFormat, scheme: RoundingScheme,
                   rng: RandomStream | None = None) -> float:
    """Round a single value to the format's grid, then saturate.

    TRN: floor(x/eps)*eps.  RTN: floor(x/eps + 1/2)*eps.  SR: floor with
    probability 1-frac, next grid point up with probability frac, where
    frac is the position of x between the two neighbours.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    eps = fmt.epsilon
    y = x / eps
    if scheme is RoundingScheme.TRN:
        k = math.floor(y)
    elif scheme is RoundingScheme.RTN:
        k = math.floor(y + 0.5)
    else:
        if rng is None:
            raise ValueError("stochastic rounding requires a RandomStream")
        lo = math.floor(y)
        frac = y - lo
        k = lo + (1 if rng.uniform(1)[0] < frac else 0)
    lo_v, hi_v = fmt.representable_range
    return min(max(k * eps, lo_v), hi_v)


def quantize_tensor(t: np.ndarray, fmt: FixedPointFormat, scheme: RoundingScheme,
                    rng: RandomStream | None = None) -> np.ndarray:
    """Elementwise quantize_value; SR draws one uniform per element in
    row-major order, so the result is independent of any chunking."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("cannot quantize tensor with non-finite entries")
    eps = fmt.epsilon
    y = t / eps
    if scheme is RoundingScheme.TRN:
        k = np.floor(y)
    elif scheme is RoundingScheme.RTN:
        k = np.floor(y + 0.5)
    else:
        if rng is None:
            raise ValueError("stochastic rounding requires a RandomStream")
        lo = np.floor(y)
        frac = y - lo
        k = lo + (rng.uniform(t.shape) < frac)
    lo_v, hi_v = fmt.representable_range
    return np.clip(k * eps, lo_v, hi_v)


@dataclass(frozen=True)
class Quantizer:
    """A (format, scheme) pair, handy to thread through layer code."""

    fmt: FixedPointFormat
    scheme: RoundingScheme

    def tensor(self, t: np.ndarray, rng: RandomStream | None = None) -> np.ndarray:
        return quantize_tensor(t, self.fmt, self.scheme, rng)

    def value(self, x: float, rng: RandomStream | None = None) -> float:
        return quantize_value(x, self.fmt, self.scheme, rng)
