"""Centralized label propagation without any cryptography.

This is the reference the protocol is checked against, so it favours the
most direct formulation: a dense solve of ``(I - alpha W) Z = Y`` and the
plain fixed-point iteration ``z <- alpha W z + y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from xclp.protocol import scores_to_assignment


class OracleError(RuntimeError):
    pass


@dataclass(eq=False)
class OracleResult:
    Z: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    trace: list[float] = field(default_factory=list)  # sup-norm step sizes, iterative solver only


def _dense(W) -> np.ndarray:
    return W.toarray() if sp.issparse(W) else np.asarray(W, dtype=np.float64)


def _result(Z: np.ndarray, trace=None) -> OracleResult:
    a = scores_to_assignment(Z)
    return OracleResult(Z, a.labels, a.confidences, list(trace or []))


def propagate_closed_form(W, Y, alpha: float) -> OracleResult:
    """``Z = (I - alpha W)^-1 Y`` by a dense LU solve."""
    W = _dense(W)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    n = W.shape[0]
    if Y.shape[0] != n:
        raise ValueError("Y must have one row per vertex")
    M = np.eye(n) - alpha * W
    Z = np.linalg.solve(M, Y)
    assert np.all(np.isfinite(Z)), "singular propagation system"
    return _result(Z)


def propagate_iterative(W, Y, alpha: float, tol: float = 1e-10, max_iters: int = 100_000) -> OracleResult:
    """Iterate from ``z_0 = 0`` until the sup-norm step is small enough.

    The loop stops at ``step <= tol * (1 - alpha)``: the iteration contracts
    by roughly ``alpha`` per step, so the remaining distance to the limit
    is then of order ``tol``.
    """
    Wd = W.tocsr() if sp.issparse(W) else np.asarray(W, dtype=np.float64)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    Z = np.zeros_like(Y)
    stop = tol * (1.0 - alpha)
    trace: list[float] = []
    for _ in range(max_iters):
        nxt = alpha * (Wd @ Z) + Y
        step = float(np.abs(nxt - Z).max()) if Z.size else 0.0
        trace.append(step)
        Z = nxt
        if step <= stop:
            return _result(Z, trace)
    raise OracleError(f"no convergence in {max_iters} iterations (last step {trace[-1]:.3e})")
