"""Reference-point quantization codec.

Coordinates are stochastically rounded onto the grid ``k * spacing`` and
only ``k mod 2**b`` is transmitted. The receiver recovers ``k`` by picking
the congruent grid point nearest to its own decoding key, so decoding is
exact whenever the key lies within half a window of the rounded vector.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

HEADER_BITS = 128
_HEADER = struct.Struct("<IBdB2x")
assert _HEADER.size * 8 == HEADER_BITS

LATTICE_CODEC_ID = 1
LOSSLESS_CODEC_ID = 0
LOSSLESS_BITS = 32


class QuantizationFailure(RuntimeError):
    """Raised in strict mode when a decode disagrees with the encoder."""

    def __init__(self, t: int, who: str, message: str = ""):
        self.t = t
        self.who = who
        super().__init__(message or f"decode failure at server step {t} ({who})")


@dataclass(frozen=True)
class GridSpec:
    bits_per_coord: int
    spacing: float
    dim: int

    def __post_init__(self):
        if not isinstance(self.bits_per_coord, (int, np.integer)) or not 1 <= self.bits_per_coord <= 32:
            raise ValueError(f"bits_per_coord must be in [1, 32], got {self.bits_per_coord!r}")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"spacing must be positive and finite, got {self.spacing!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim!r}")

    @property
    def levels(self) -> int:
        return 1 << self.bits_per_coord

    @property
    def window(self) -> float:
        return self.levels * self.spacing


@dataclass(frozen=True)
class TheoremParams:
    eta: float
    R: float
    gamma: float
    gamma_q: float


@dataclass
class EncodedMessage:
    """Wire payload plus the encoder's rounded vector.

    ``rounded`` never goes on the wire; the simulator keeps it so that
    decode failures can be detected after the fact.
    """

    codec_id: int
    dim: int
    bits_per_coord: int
    spacing: float
    residues: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    rounded: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def bit_len(self) -> int:
        return bits_accounting(self)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(self.dim, self.bits_per_coord, self.spacing, self.codec_id)
        if self.codec_id == LOSSLESS_CODEC_ID:
            return header + np.asarray(self.values, dtype="<f4").tobytes()
        return header + _pack_residues(self.residues, self.bits_per_coord)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedMessage":
        dim, b, spacing, codec_id = _HEADER.unpack_from(data)
        body = data[_HEADER.size:]
        if codec_id == LOSSLESS_CODEC_ID:
            values = np.frombuffer(body, dtype="<f4", count=dim).astype(np.float64)
            return cls(codec_id, dim, b, spacing, values=values)
        if codec_id != LATTICE_CODEC_ID:
            raise ValueError(f"unknown codec id {codec_id}")
        return cls(codec_id, dim, b, spacing, residues=_unpack_residues(body, dim, b))


def _pack_residues(residues: np.ndarray, b: int) -> bytes:
    r = np.asarray(residues, dtype=np.uint64)
    bits = ((r[:, None] >> np.arange(b, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def _unpack_residues(body: bytes, dim: int, b: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="little")
    bits = bits[: dim * b].reshape(dim, b).astype(np.uint64)
    return (bits << np.arange(b, dtype=np.uint64)).sum(axis=1).astype(np.int64)


def make_grid(b: int, gamma_q: float, d: int) -> GridSpec:
    return GridSpec(bits_per_coord=b, spacing=float(gamma_q), dim=d)


def theorem_params(T, n, d, K, sigma, G, L, f0_gap) -> TheoremParams:
    """Learning rate and quantizer resolution for a T-step convergence guarantee.

    ``gamma_q`` is the per-coordinate spacing that makes the cubic codec's
    l2 error bound ``gamma_q * sqrt(d)`` equal ``(R**2 + 7) * gamma``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if L <= 0:
        raise ValueError("L must be positive")
    if min(n, d, K) < 1 or min(sigma, G, f0_gap) < 0:
        raise ValueError("n, d, K must be >= 1 and sigma, G, f0_gap nonnegative")
    eta = (n + 1) / math.sqrt(T)
    R = 2.0 + T ** (3.0 / d)
    scale = R * R + 7.0
    gamma = eta / scale * math.sqrt(sigma**2 + 2 * K * G**2 + f0_gap / L)
    return TheoremParams(eta=eta, R=R, gamma=gamma, gamma_q=scale * gamma / math.sqrt(d))


def _check_vector(x, dim: int, what: str) -> np.ndarray:
    if type(x) is not np.ndarray or x.dtype != np.float64:
        x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ValueError(f"{what} has shape {x.shape}, expected ({dim},)")
    if not np.isfinite(x).all():
        raise ValueError(f"{what} has non-finite coordinates")
    return x


def _round_indices(grid: GridSpec, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # stochastic rounding; works row-wise on any (..., dim) array
    scaled = x / grid.spacing
    lower = np.floor(scaled)
    k = lower.astype(np.int64)
    k += rng.random(x.shape) < scaled - lower
    return k


def _nearest_congruent(grid: GridSpec, key: np.ndarray, residues) -> np.ndarray:
    m = grid.levels
    # k = r + m * ceil((key / spacing - m/2 - r) / m), computed in place
    k = key / grid.spacing
    k -= m / 2
    k -= residues
    k /= m
    np.ceil(k, out=k)
    k *= m
    k += residues
    k *= grid.spacing
    return k


def encode(grid: GridSpec, x, rng: np.random.Generator) -> EncodedMessage:
    x = _check_vector(x, grid.dim, "x")
    k = _round_indices(grid, x, rng)
    return EncodedMessage(
        LATTICE_CODEC_ID,
        grid.dim,
        grid.bits_per_coord,
        grid.spacing,
        residues=k & (grid.levels - 1),  # two's complement: equals k mod 2**b
        rounded=k * grid.spacing,
    )


def decode(grid: GridSpec, key, msg: EncodedMessage) -> np.ndarray:
    """Grid point congruent to each residue inside ``[key - W/2, key + W/2)``."""
    if type(key) is not np.ndarray:
        key = np.asarray(key, dtype=np.float64)
    if key.shape != (grid.dim,):
        raise ValueError(f"key has shape {key.shape}, expected ({grid.dim},)")
    return _nearest_congruent(grid, key, msg.residues)


def decode_with_oracle(grid: GridSpec, key, msg: EncodedMessage, truth) -> tuple[np.ndarray, bool]:
    out = decode(grid, key, msg)
    return out, bool((out != truth).any())


def bits_accounting(msg: EncodedMessage) -> int:
    return msg.dim * msg.bits_per_coord + HEADER_BITS


class LatticeCodec:
    """Codec object wrapping a fixed :class:`GridSpec`."""

    lossless = False

    def __init__(self, grid: GridSpec):
        self.grid = grid

    @property
    def error_bound(self) -> float:
        """Hard l2 bound on ``decode - x`` for a non-failed call."""
        return self.grid.spacing * math.sqrt(self.grid.dim)

    def message_bits(self, dim: Optional[int] = None) -> int:
        return self.grid.dim * self.grid.bits_per_coord + HEADER_BITS

    def encode(self, x, rng) -> EncodedMessage:
        return encode(self.grid, x, rng)

    def decode(self, key, msg) -> np.ndarray:
        return decode(self.grid, key, msg)

    def decode_with_oracle(self, key, msg) -> tuple[np.ndarray, bool]:
        return decode_with_oracle(self.grid, key, msg, msg.rounded)

    def transmit_rows(self, values: np.ndarray, keys: np.ndarray, rng):
        """Encode each row of ``values`` and decode it against the matching row of ``keys``.

        Same result as ``encode`` + ``decode_with_oracle`` per row, in one
        pass; returns ``(decoded, failed)`` with one flag per row.
        """
        g = self.grid
        if values.shape[-1] != g.dim or not np.isfinite(values).all():
            raise ValueError("values must be finite rows of length dim")
        k = _round_indices(g, values, rng)
        out = _nearest_congruent(g, keys, k & (g.levels - 1))
        return out, (out != k * g.spacing).any(axis=-1)

    def __repr__(self):
        g = self.grid
        return f"LatticeCodec(b={g.bits_per_coord}, spacing={g.spacing!r}, dim={g.dim})"


class LosslessCodec:
    """Identity codec, charged as 32 bits per coordinate."""

    lossless = True
    error_bound = 0.0

    def __init__(self, dim: int = 0):
        self.dim = dim

    def message_bits(self, dim: Optional[int] = None) -> int:
        return LOSSLESS_BITS * (self.dim if dim is None else dim) + HEADER_BITS

    def encode(self, x, rng=None) -> EncodedMessage:
        x = np.array(x, dtype=np.float64)
        return EncodedMessage(LOSSLESS_CODEC_ID, x.size, LOSSLESS_BITS, 0.0, values=x, rounded=x)

    def decode(self, key, msg) -> np.ndarray:
        return msg.values.copy()

    def decode_with_oracle(self, key, msg) -> tuple[np.ndarray, bool]:
        return self.decode(key, msg), False

    def transmit_rows(self, values: np.ndarray, keys: np.ndarray, rng=None):
        return values.copy(), np.zeros(values.shape[:-1], dtype=bool)

    def __repr__(self):
        return "LosslessCodec()"


def lossless_codec(dim: int = 0) -> LosslessCodec:
    return LosslessCodec(dim)
