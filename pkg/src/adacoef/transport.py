"""Exact optimal-transport utilities: minibatch pairing and the empirical
Wasserstein-2 distance between equal-size point sets.

The assignment is solved exactly (scipy's Jonker-Volgenant shortest
augmenting path solver on the squared-Euclidean cost matrix); a brute-force
permutation oracle is provided for cross-checking at small n. The W2 loss is
differentiable in the second point set with the assignment held fixed per
forward pass (envelope treatment).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels as K
from .autodiff import Var


class TransportError(ValueError):
    pass


@dataclass
class Assignment:
    """Bijection i -> permutation[i] minimizing total squared cost."""

    permutation: np.ndarray
    cost: float


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise TransportError(
            f"point sets must share a (n, d) shape, got {a.shape} vs {b.shape}"
        )
    if len(a) < 1:
        raise TransportError("point sets must be non-empty")
    return a, b


def _cost_matrix(a, b):
    # ||a_i - b_j||^2 expanded; clip tiny negatives from cancellation
    c = K.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b), False, True)
    c *= -2.0
    c += (a * a).sum(axis=1)[:, None]
    c += (b * b).sum(axis=1)[None, :]
    return np.maximum(c, 0.0, out=c)


def ot_pair(a, b, method: str = "auto") -> Assignment:
    """Exact minimum-cost assignment under squared Euclidean cost.

    method: "auction" (compiled eps-scaling auction), "scipy" (shortest
    augmenting path), or "auto" (auction when compiled, else scipy). Both
    return a minimum-cost bijection; ties may be broken differently."""
    a, b = _check_pair(a, b)
    if method == "auto":
        method = "auction" if K.auction_assignment is not None else "scipy"
    cost_matrix = _cost_matrix(a, b)
    if method == "auction":
        if K.auction_assignment is None:
            raise TransportError("auction solver needs the compiled kernels")
        perm = K.auction_assignment(cost_matrix)
    elif method == "scipy":
        rows, cols = linear_sum_assignment(cost_matrix)
        perm = np.empty(len(a), dtype=np.intp)
        perm[rows] = cols
    else:
        raise TransportError(f"unknown assignment method '{method}'")
    cost = float(((a - b[perm]) ** 2).sum())
    return Assignment(permutation=perm, cost=cost)


def wasserstein2(a, b) -> float:
    """sqrt((1/n) sum_i ||a_i - b_{pi(i)}||^2) with the exact assignment."""
    a, b = _check_pair(a, b)
    assignment = ot_pair(a, b)
    return float(np.sqrt(assignment.cost / len(a)))


def wasserstein2_loss(a, b_var: Var) -> Var:
    """W2 between a fixed point set and endpoints on a tape.

    The assignment is recomputed from the current forward values each call;
    gradients flow only through the point coordinates of b_var (the
    assignment itself is treated as constant)."""
    tape = b_var.tape
    b_val = b_var.value
    a, _ = _check_pair(a, b_val)
    assignment = ot_pair(a, b_val)
    inv = np.empty_like(assignment.permutation)
    inv[assignment.permutation] = np.arange(len(a))
    matched = tape.constant(a[inv])  # row j of `matched` pairs with b_j
    diff = matched - b_var
    return tape.sqrt(tape.mean(tape.sum(tape.square(diff), axis=1)))


def bruteforce_assignment(a, b) -> Assignment:
    """Exhaustive minimum over all permutations; n <= 9, lowest-index ties."""
    a, b = _check_pair(a, b)
    n = len(a)
    if n > 9:
        raise TransportError(f"brute force limited to n <= 9, got {n}")
    cost_matrix = _cost_matrix(a, b)
    best_perm = None
    best_cost = np.inf
    for perm in permutations(range(n)):
        cost = cost_matrix[np.arange(n), perm].sum()
        if cost < best_cost:
            best_cost = cost
            best_perm = perm
    exact = float(((a - b[list(best_perm)]) ** 2).sum())
    return Assignment(permutation=np.asarray(best_perm, dtype=np.intp), cost=exact)
