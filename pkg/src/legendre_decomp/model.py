"""Natural parameters theta, expectation parameters eta, and their geometry.

On a grid poset the zeta transform is a cumulative sum along every mode:

* ``log q_v + psi = sum_{u in B, u <= v} theta_u`` is the prefix sum of the
  grid holding ``theta`` at basis cells and 0 elsewhere;
* ``eta_v = sum_{u >= v} q_u`` is the suffix sum of ``q``.

Both cost O(N |Omega|) per evaluation instead of O(|B| |Omega|). The up-sets
of two cells intersect in the up-set of their componentwise maximum, so each
Fisher entry is a single lookup into the suffix-sum grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .poset_basis import Basis
from .tensor_core import NormalizedTensor


def _accumulate(out: np.ndarray, axis: int, reverse: bool) -> None:
    view = out[(slice(None),) * axis + (slice(None, None, -1),)] if reverse else out
    np.cumsum(view, axis=axis, out=view)


def prefix_sums(grid: np.ndarray) -> np.ndarray:
    """Sum over all cells ``u <= v`` for every ``v``."""
    out = np.array(grid, dtype=np.float64)
    # overflow surfaces as inf and is caught by the log-partition check
    with np.errstate(over="ignore", invalid="ignore"):
        for axis in range(out.ndim):
            _accumulate(out, axis, reverse=False)
    return out


def suffix_sums(grid: np.ndarray) -> np.ndarray:
    """Sum over all cells ``u >= v`` for every ``v``."""
    out = np.array(grid, dtype=np.float64)
    for axis in range(out.ndim):
        _accumulate(out, axis, reverse=True)
    return out


def _check_theta(basis: Basis, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (len(basis),):
        raise ValueError(f"theta has shape {theta.shape}, basis has {len(basis)} members")
    if not np.all(np.isfinite(theta)):
        raise NumericalError("theta contains non-finite values")
    return theta


def log_potentials(basis: Basis, theta) -> np.ndarray:
    """Unnormalized ``log q`` on the full grid (excluded cells included)."""
    theta = _check_theta(basis, theta)
    grid = np.zeros(basis.space.shape, dtype=np.float64)
    grid[basis.members0()] = theta
    return prefix_sums(grid)


def _softmax(logits: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalized ``exp(logits)`` and the log-partition, max-shifted.

    Dividing by the sum (rather than subtracting psi in the exponent) keeps
    a constant ``logits`` exactly uniform. Overwrites ``logits``.
    """
    shift = logits.max()
    if not np.isfinite(shift):
        raise NumericalError("log-potentials overflowed")
    w = logits
    w -= shift
    np.exp(w, out=w)
    total = w.sum()
    psi = float(shift + np.log(total))
    if not np.isfinite(psi):
        raise NumericalError("log-partition is not finite")
    w /= total
    return w, psi


def _log_partition(logits: np.ndarray) -> float:
    return _softmax(logits)[1]


def compute_psi(basis: Basis, theta) -> float:
    """Log-partition ``psi(theta)`` via a max-shifted log-sum-exp over Omega."""
    logits = log_potentials(basis, theta)[basis.space.mask]
    return _log_partition(logits)


def reconstruct_q(basis: Basis, theta, total_mass: float = 1.0) -> NormalizedTensor:
    """The fully decomposable distribution with parameters ``theta``."""
    logits = log_potentials(basis, theta)[basis.space.mask]
    probs, _ = _softmax(logits)
    return NormalizedTensor(basis.space, probs, total_mass)


def compute_eta(q: NormalizedTensor, basis: Basis) -> np.ndarray:
    """``eta_v = sum_{u in Omega, u >= v} q_u`` for every basis member ``v``."""
    if not q.space.same_as(basis.space):
        raise ValueError("distribution and basis live on different sample spaces")
    if not len(basis):
        return np.empty(0)
    return suffix_sums(q.dense())[basis.members0()]


def compute_eta_hat(p: NormalizedTensor, basis: Basis) -> np.ndarray:
    """Target expectation parameters: the eta coordinates of the input."""
    return compute_eta(p, basis)


def kl_divergence(p: NormalizedTensor, q: NormalizedTensor) -> float:
    """``sum_v p_v log(p_v / q_v)`` with ``0 log 0 = 0``.

    Returns ``inf`` if ``q`` vanishes where ``p`` does not.
    """
    if not p.space.same_as(q.space):
        raise ValueError("distributions live on different sample spaces")
    support = p.probs > 0
    pv, qv = p.probs[support], q.probs[support]
    if np.any(qv == 0):
        return float("inf")
    return max(float(np.dot(pv, np.log(pv) - np.log(qv))), 0.0)


@dataclass(frozen=True, eq=False)
class ModelState:
    """theta together with the psi, q and eta it determines.

    Build with :meth:`at`; every field is derived in one pass, so the
    coordinates can never be out of sync.
    """

    basis: Basis
    theta: np.ndarray
    psi: float
    q: NormalizedTensor
    eta: np.ndarray
    upper: np.ndarray

    @classmethod
    def at(cls, basis: Basis, theta, total_mass: float = 1.0) -> ModelState:
        theta = _check_theta(basis, theta).copy()
        space = basis.space
        grid = np.zeros(space.shape, dtype=np.float64)
        grid.ravel()[basis.flat] = theta
        logits = prefix_sums(grid)
        if space.is_full:
            upper, psi = _softmax(logits)
            probs = upper.ravel().copy()
        else:
            probs, psi = _softmax(logits[space.mask])
            upper = space.scatter(probs)
        q = NormalizedTensor._trusted(space, probs, total_mass)
        for axis in range(upper.ndim):
            _accumulate(upper, axis, reverse=True)
        eta = upper.ravel().take(basis.flat)
        for a in (theta, eta, upper):
            a.flags.writeable = False
        return cls(basis, theta, psi, q, eta, upper)

    def fisher(self) -> np.ndarray:
        return fisher_matrix(self)


def fisher_matrix(state: ModelState) -> np.ndarray:
    """``g_uv = sum_{w >= u, w >= v} q_w - eta_u eta_v`` at the current model.

    Equals the Jacobian of eta with respect to theta and the Hessian of the
    KL divergence; symmetric positive semidefinite.
    """
    if not len(state.basis):
        return np.zeros((0, 0))
    joint = state.upper.ravel().take(state.basis.join_flat)
    g = joint - np.outer(state.eta, state.eta)
    return 0.5 * (g + g.T)


def log_q_grid(basis: Basis, theta) -> np.ndarray:
    """``log q`` on the full grid, ``-inf`` outside Omega."""
    logits = log_potentials(basis, theta)
    psi = _log_partition(logits[basis.space.mask])
    out = logits - psi
    out[~basis.space.mask] = -np.inf
    return out


def parameter_matrix(basis: Basis, theta) -> np.ndarray:
    """Matrix ``T`` with ``log q = L T L^T`` for lower-triangular all-ones ``L``.

    Holds ``theta`` at basis cells and ``-psi`` at the least element. For a
    second-order basis confined to ``l`` rows that include the first, ``T``
    and hence ``log q`` have rank at most ``l``.
    """
    if basis.space.ndim != 2:
        raise ValueError("parameter matrix is defined for matrices only")
    t = np.zeros(basis.space.shape, dtype=np.float64)
    if len(basis):
        t[basis.members0()] = _check_theta(basis, theta)
    t[0, 0] = -compute_psi(basis, theta)
    return t
