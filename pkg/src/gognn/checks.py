"""Numerical property checks: gradient suite, stationary convergence, smoothing bound.

Shared by the CLI `verify` command and the acceptance tests. Every check
returns a plain dict so results serialize straight to JSON.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, constant, parameter, softmax
from .kernels import GoGraph
from .nn import Mlp, softmax_cross_entropy
from .propagation import full_plan, propagate, smoothing_bound_check, stationary_check
from .training import self_consistency_loss, sharpen


def finite_difference_gradients(loss_value_fn, params: list[Tensor], step: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of loss_value_fn w.r.t. each parameter tensor."""
    grads = []
    for p in params:
        g = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_value_fn()
            flat[i] = orig - step
            lo = loss_value_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray],
                       floor: float = 1e-6) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradcheck(loss_builder, params: list[Tensor], step: float = 1e-4) -> float:
    """Max relative error between autodiff and central-difference gradients.

    loss_builder must rebuild the loss tensor from the params' current values
    so finite differences see the perturbed forward pass.
    """
    loss = loss_builder()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]
    numeric = finite_difference_gradients(lambda: loss_builder().item(), params, step)
    return max_relative_error(analytic, numeric)


def random_connected_gog(rng: np.random.Generator, num_nodes: int) -> GoGraph:
    """Random connected graph: a random spanning tree plus a few extra edges."""
    edges = set()
    for v in range(1, num_nodes):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    extra = int(rng.integers(0, num_nodes))
    for _ in range(extra):
        u, v = rng.integers(0, num_nodes, size=2)
        if u != v:
            edges.add((min(int(u), int(v)), max(int(u), int(v))))
    return GoGraph(num_nodes=num_nodes, edges=tuple(sorted(edges)), k=1)


def left_eigenvector_oracle(matrix: np.ndarray) -> np.ndarray:
    """Stationary row via dense eigendecomposition of the transposed matrix."""
    eigenvalues, eigenvectors = np.linalg.eig(matrix.T)
    idx = int(np.argmin(np.abs(eigenvalues - 1.0)))
    vec = np.real(eigenvectors[:, idx])
    return vec / vec.sum()


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def run_gradient_suite(seed: int = 0, tol: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    results = {}

    # GIN layer through its MLP parameters and the node features
    edges = ((0, 1), (1, 2), (0, 3))
    x = parameter(rng.normal(size=(4, 3)))
    mlp = Mlp(3, 5, 4, rng)
    weight = constant(rng.normal(size=(4, 4)))
    from .nn import gin_layer_forward

    def gin_loss():
        return (gin_layer_forward(x, edges, 0.25, mlp) * weight).sum()

    results["gin_layer"] = gradcheck(gin_loss, [x] + mlp.parameters())

    # sum readout
    xr = parameter(rng.normal(size=(5, 3)))
    wr = constant(rng.normal(size=3))

    def readout_loss():
        return (xr.sum(axis=0) * wr).sum()

    results["readout_sum"] = gradcheck(readout_loss, [xr])

    # propagation composed with a quadratic loss
    gog = random_connected_gog(rng, 7)
    plan = full_plan(gog, depth=3)
    xp = parameter(rng.normal(size=(7, 4)))

    def prop_loss():
        return (propagate(xp, plan) ** 2).sum()

    results["propagation"] = gradcheck(prop_loss, [xp])

    # softmax cross-entropy with class weights
    logits = parameter(rng.normal(size=(6, 3)))
    labels = rng.integers(0, 3, size=6)
    weights = rng.uniform(0.5, 2.0, size=3)

    def ce_loss():
        return softmax_cross_entropy(logits, labels, weights)

    results["softmax_cross_entropy"] = gradcheck(ce_loss, [logits])

    # self-consistency with the center as a fixed target (the default contract):
    # the finite-difference oracle must hold the same center fixed.
    logits_sc = parameter(rng.normal(size=(4, 3)))
    base_center = sharpen(softmax(logits_sc, axis=1).values.mean(axis=0), 0.5)

    def sc_loss_fixed_center():
        from .autodiff import l2norm_rows

        dists = softmax(logits_sc, axis=1)
        return l2norm_rows(constant(base_center) - dists).mean()

    results["self_consistency"] = gradcheck(sc_loss_fixed_center, [logits_sc])

    # and the full derivative when gradients do flow through the center
    logits_gtc = parameter(rng.normal(size=(4, 3)))

    def sc_loss_through_center():
        return self_consistency_loss(softmax(logits_gtc, axis=1), 0.5, grad_through_center=True)

    results["self_consistency_through_center"] = gradcheck(sc_loss_through_center, [logits_gtc])

    return {
        "checks": {name: {"max_rel_err": err, "passed": bool(err < tol)}
                   for name, err in results.items()},
        "passed": bool(all(err < tol for err in results.values())),
        "tolerance": tol,
    }


def run_stationary_suite(seed: int = 0, count: int = 50, tol: float = 1e-6,
                         max_iters: int = 1000) -> dict:
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    failures = []
    for i in range(count):
        n = int(rng.integers(5, 51))
        plan = full_plan(random_connected_gog(rng, n))
        report = stationary_check(plan, tol=tol, max_iters=max_iters)
        comp = report.components[0]
        if len(report.components) != 1 or not comp.converged:
            failures.append({"instance": i, "nodes": n, "reason": "did not converge"})
            continue
        oracle = left_eigenvector_oracle(plan.row_norm_adj.toarray())
        gap = float(np.max(np.abs(comp.stationary_vector - oracle)))
        worst_gap = max(worst_gap, gap)
        if gap > tol:
            failures.append({"instance": i, "nodes": n, "reason": f"oracle gap {gap:.3e}"})
    return {
        "instances": count,
        "worst_oracle_gap": worst_gap,
        "failures": failures,
        "passed": not failures,
        "tolerance": tol,
    }


def run_smoothing_suite(seed: int = 0, count: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    worst_violation = 0.0
    failures = []
    for i in range(count):
        n = int(rng.integers(5, 31))
        d = int(rng.integers(2, 8))
        q = int(rng.integers(1, 6))
        plan = full_plan(random_connected_gog(rng, n))
        reprs = rng.normal(size=(n, d))
        linear_map = rng.normal(size=(d, q))
        report = smoothing_bound_check(plan, reprs, linear_map)
        violation = float(np.max(report.lhs - report.rhs))
        worst_violation = max(worst_violation, violation)
        if not report.satisfied:
            failures.append({"instance": i, "nodes": n, "violation": violation})
    return {
        "instances": count,
        "worst_violation": worst_violation,
        "failures": failures,
        "passed": not failures,
    }


def run_all_checks(seed: int = 0, inject_fault: bool = False) -> dict:
    results = {
        "gradients": run_gradient_suite(seed),
        "stationary": run_stationary_suite(seed + 1),
        "smoothing_bound": run_smoothing_suite(seed + 2),
    }
    if inject_fault:
        results["injected_fault"] = {"passed": False, "reason": "fault injection requested"}
    results["passed"] = all(v.get("passed") for k, v in results.items() if k != "passed")
    return results
