"""Reference solver, error metrics and seeded synthetic inputs.

The reference projection here works directly on up-set masks with
multiplicative updates. It shares nothing with the optimizer kernels, so
agreement between the two is meaningful evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OracleError
from .poset_basis import Basis, build_incidence
from .tensor_core import NormalizedTensor, RawTensor, check_shape


def reference_projection(
    p: NormalizedTensor, basis: Basis, tol: float = 1e-10, max_sweeps: int = 100_000
) -> NormalizedTensor:
    """KL projection of ``p`` onto the model of ``basis`` by iterative scaling.

    Starts from the uniform distribution and visits every basis member in
    turn. Visiting ``v`` rescales the up-set of ``v`` by
    ``eta_hat_v / eta_v`` and its complement by
    ``(1 - eta_hat_v) / (1 - eta_v)``, which matches the single moment
    exactly and keeps the total mass at 1.
    """
    if len(basis.space) > 10_000 or len(basis) > 64:
        raise ValueError("reference projection is meant for small instances")
    if not p.space.same_as(basis.space):
        raise ValueError("input and basis live on different sample spaces")
    masks = build_incidence(basis).dense()
    target = np.array([p.probs[m].sum() for m in masks])
    q = np.full(len(p.space), 1.0 / len(p.space))
    for _ in range(max_sweeps):
        eta = np.array([q[m].sum() for m in masks])
        if len(eta) == 0 or np.max(np.abs(eta - target)) <= tol:
            return NormalizedTensor(p.space, q, p.total_mass)
        for m, want in zip(masks, target):
            have = q[m].sum()
            if have <= 0.0 and want > 0.0:
                raise OracleError("model assigns no mass to an up-set the input populates")
            rest = 1.0 - have
            if rest <= 0.0 and want < 1.0:
                raise OracleError("model puts all mass in an up-set the input does not fill")
            up = want / have if have > 0 else 0.0
            down = (1.0 - want) / rest if rest > 0 else 0.0
            q = np.where(m, q * up, q * down)
            q /= q.sum()
    raise OracleError(f"iterative scaling did not reach tolerance {tol} in {max_sweeps} sweeps")


def rmse(x: RawTensor, x_hat: RawTensor) -> float:
    """Root mean squared error over every grid cell."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    diff = x.values - x_hat.values
    return math.sqrt(float(np.mean(diff * diff)))


@dataclass
class EvalReport:
    rmse: float
    kl: float
    parameter_count: int
    wall_time: float

    CSV_HEADER = "rmse,kl,params,time_ms"

    def csv_row(self) -> str:
        return f"{self.rmse!r},{self.kl!r},{self.parameter_count},{1000.0 * self.wall_time:.3f}"


# --------------------------------------------------------------- synthetic data

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class XorShift64Star:
    """Marsaglia/Vigna xorshift64* generator.

    The 64-bit state is seeded by one SplitMix64 step from ``seed`` (a zero
    state is replaced by SplitMix64's next output). Each draw is
    ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` followed by the output
    ``x * 0x2545F4914F6CDD1D mod 2**64``. Uniform doubles take the top 53
    bits of the output ``o`` as ``((o >> 11) + 0.5) / 2**53``, which lies
    strictly inside (0, 1).
    """

    def __init__(self, seed: int):
        state, out = _splitmix64(int(seed) & _MASK64)
        while out == 0:
            state, out = _splitmix64(state)
        self.state = out

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self, n: int) -> np.ndarray:
        x = self.state
        out = np.empty(n, dtype=np.uint64)
        for i in range(n):
            x ^= x >> 12
            x ^= (x << 25) & _MASK64
            x ^= x >> 27
            out[i] = ((x * 0x2545F4914F6CDD1D) & _MASK64) >> 11
        self.state = x
        return (out.astype(np.float64) + 0.5) * 2.0**-53


def synthetic_tensor(shape, seed: int = 0) -> RawTensor:
    """I.i.d. Uniform(0, 1) entries in row-major order from :class:`XorShift64Star`."""
    shape = check_shape(shape)
    values = XorShift64Star(seed).uniform(math.prod(shape))
    return RawTensor(values.reshape(shape))
