"""Parameter-free propagation over the kNN GoG and its convergence checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, const_matmul
from .kernels import GoGraph, SimilarityMatrix, topk_neighbors


class PropagationError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationPlan:
    """Batch-induced sub-GoG with a row-stochastic (self-looped) adjacency."""

    sub_nodes: tuple[int, ...]
    row_norm_adj: sp.csr_matrix
    depth: int

    def __post_init__(self):
        m = self.row_norm_adj
        n = len(self.sub_nodes)
        if m.shape != (n, n):
            raise PropagationError(f"adjacency shape {m.shape} vs {n} sub nodes")
        row_sums = np.asarray(m.sum(axis=1)).ravel()
        if not np.allclose(row_sums, 1.0, atol=1e-12):
            raise PropagationError("rows of the propagation matrix must sum to 1")
        if np.any(m.diagonal() <= 0.0):
            raise PropagationError("propagation matrix needs positive self-loops")
        if self.depth < 0:
            raise PropagationError("propagation depth must be >= 0")

    @property
    def size(self) -> int:
        return len(self.sub_nodes)


def _row_normalized(adj: sp.csr_matrix) -> sp.csr_matrix:
    with_loops = adj + sp.identity(adj.shape[0], format="csr")
    inv_deg = 1.0 / np.asarray(with_loops.sum(axis=1)).ravel()
    return sp.diags(inv_deg).dot(with_loops).tocsr()


def batch_induced_subgraph(gog: GoGraph, batch, s: SimilarityMatrix, k: int,
                           depth: int = 0) -> PropagationPlan:
    """Plan over the batch plus each member's top-k most similar graphs.

    Pulled-in neighbors may be unlabeled val/test graphs (transductive); the
    sub-GoG keeps every GoG edge between selected nodes and row-normalizes
    A_sub + I.
    """
    batch = [int(i) for i in batch]
    if not batch:
        raise PropagationError("batch must be non-empty")
    for i in batch:
        if not (0 <= i < gog.num_nodes):
            raise PropagationError(f"batch index {i} outside [0,{gog.num_nodes})")

    sub_nodes = list(dict.fromkeys(batch))
    in_batch = set(sub_nodes)
    pulled = set()
    for i in sub_nodes:
        pulled.update(j for j in topk_neighbors(s.values, i, k) if j not in in_batch)
    sub_nodes.extend(sorted(pulled))

    position = {g: r for r, g in enumerate(sub_nodes)}
    n = len(sub_nodes)
    rows, cols = [], []
    for u, v in gog.edges:
        if u in position and v in position:
            rows += [position[u], position[v]]
            cols += [position[v], position[u]]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return PropagationPlan(sub_nodes=tuple(sub_nodes), row_norm_adj=_row_normalized(adj),
                           depth=depth)


def full_plan(gog: GoGraph, depth: int = 0) -> PropagationPlan:
    """Plan covering the entire GoG (used by the convergence checks)."""
    n = gog.num_nodes
    rows, cols = [], []
    for u, v in gog.edges:
        rows += [u, v]
        cols += [v, u]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return PropagationPlan(sub_nodes=tuple(range(n)), row_norm_adj=_row_normalized(adj),
                           depth=depth)


def propagate(reprs: Tensor, plan: PropagationPlan) -> Tensor:
    """Apply the row-stochastic sub-GoG matrix depth times; depth 0 is identity."""
    if reprs.shape[0] != plan.size:
        raise PropagationError(f"got {reprs.shape[0]} representation rows for {plan.size} sub nodes")
    x = reprs
    for _ in range(plan.depth):
        x = const_matmul(plan.row_norm_adj, x)
    return x


def connected_components(plan: PropagationPlan) -> list[list[int]]:
    """Components of the sub-GoG, as positions into plan.sub_nodes."""
    m = plan.row_norm_adj
    n = plan.size
    seen = [False] * n
    components = []
    for start in range(n):
        if seen[start]:
            continue
        comp = []
        stack = [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in m.indices[m.indptr[u]:m.indptr[u + 1]]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        components.append(sorted(comp))
    return components


@dataclass(frozen=True)
class ComponentStationary:
    nodes: tuple[int, ...]
    converged: bool
    stationary_vector: np.ndarray
    iterations: int


@dataclass(frozen=True)
class StationaryReport:
    components: tuple[ComponentStationary, ...]

    @property
    def converged(self) -> bool:
        return all(c.converged for c in self.components)


def stationary_check(plan: PropagationPlan, tol: float = 1e-6,
                     max_iters: int = 1000) -> StationaryReport:
    """Power the row-stochastic matrix per connected component until all rows agree.

    Self-loops make each component's chain aperiodic, so the powers approach
    a rank-one matrix whose shared row is the stationary distribution. Hitting
    max_iters reports converged=False instead of raising.
    """
    results = []
    dense = plan.row_norm_adj.toarray()
    for comp in connected_components(plan):
        m = dense[np.ix_(comp, comp)]
        powered = np.eye(len(comp))
        iterations = 0
        converged = False
        while iterations <= max_iters:
            spread = (powered.max(axis=0) - powered.min(axis=0)).max()
            if spread < tol:
                converged = True
                break
            if iterations == max_iters:
                break
            powered = powered @ m
            iterations += 1
        results.append(
            ComponentStationary(
                nodes=tuple(comp),
                converged=converged,
                stationary_vector=powered.mean(axis=0),
                iterations=iterations,
            )
        )
    return StationaryReport(components=tuple(results))


@dataclass(frozen=True)
class SmoothingBoundReport:
    lhs: np.ndarray
    rhs: np.ndarray
    satisfied: bool

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs


def smoothing_bound_check(plan: PropagationPlan, reprs: np.ndarray,
                          lipschitz_map: np.ndarray, atol: float = 1e-9) -> SmoothingBoundReport:
    """Check, per node, that mapped neighborhood-mean drift is within mu * ||step||.

    The map must be linear (given as a matrix); its Lipschitz constant is the
    spectral norm, and the second-order remainder vanishes exactly, so the
    bound should hold up to float slack for every node.
    """
    reprs = np.asarray(reprs, dtype=np.float64)
    w = np.asarray(lipschitz_map, dtype=np.float64)
    if reprs.shape[0] != plan.size:
        raise PropagationError("representation rows do not match plan size")
    if w.ndim != 2 or w.shape[0] != reprs.shape[1]:
        raise PropagationError("linear map shape does not match representations")
    mu = np.linalg.norm(w, 2)
    step = plan.row_norm_adj @ reprs - reprs
    mapped = reprs @ w
    drift = plan.row_norm_adj @ mapped - mapped
    lhs = np.linalg.norm(drift, axis=1)
    rhs = mu * np.linalg.norm(step, axis=1)
    return SmoothingBoundReport(lhs=lhs, rhs=rhs, satisfied=bool(np.all(lhs <= rhs + atol)))
