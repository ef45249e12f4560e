"""Numerical graph values, scaling checks, and the order-n bound assembly.

The value of a (pairing) graph is the momentum integral

    |G| = int prod_t F(q_t) prod_blocks delta(...),
    F(q) = 1 / ((q^2 + 1) ln^4(q^2 + 2)),

reduced by the spanning tree to an integral over the l = n + 2 loop momenta.
Loop momenta are importance-sampled from the isotropic heavy-tailed density
g(q) = (1/pi^2) (1 + q^2)^{-2} (radius tan(theta) with theta ~ sin^2), which
is normalizable in 3D and heavier-tailed than F^2.

The torus variant integrates prod 1/(e(p)+E*) with loop momenta uniform on
T^3; its continuum surrogate replaces propagators by 1/(q^2+E*) over R^3 and
obeys the exact scaling value ~ (E*)^{1 - n/2}.

The bound assembly computes (4n)! E* (C(E*) lam^2 / sqrt(E*))^n with
C(E*) = K ln^9(e + 1/E*).  ln^9 E* changes sign for E* < 1 as literally
written, so the positive normalization ln^9(e + 1/E*) is used everywhere and
flagged in the assembly record.
"""

import csv
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .diagrams import (FeynmanGraph, classify_superficial_convergence,
                       spanning_tree_decomposition)
from .errors import NonIntegrableError, OutsideLifshitzWindowError
from .rng import substream
from .selfenergy import dispersion

__all__ = [
    "MCParams",
    "GraphValueEstimate",
    "propagator_log_damped",
    "graph_value",
    "radial_quadrature_two_line_value",
    "torus_pairing_integral",
    "continuum_pairing_integral",
    "BoundAssembly",
    "assemble_An_bound",
    "stopping_rule_holds_exact",
    "append_ledger",
]

# rational upper bound on e, for exact one-sided inequality checks
_E_UPPER = Fraction(27182818284590453, 10**16)


@dataclass(frozen=True)
class MCParams:
    samples: int = 100_000
    seed: int = 0
    stream: str = "graphvalue"

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("need at least 2 samples")


@dataclass(frozen=True)
class GraphValueEstimate:
    graph_id: str
    value: float
    stderr: float
    samples: int
    method: str  # "importance-MC" or "radial-quadrature"

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("estimate must be finite")
        if self.method == "importance-MC" and not self.stderr > 0:
            raise ValueError("MC stderr must be positive")


def propagator_log_damped(q2):
    """F(q) = 1 / ((q^2+1) ln^4(q^2+2)) as a function of |q|^2."""
    q2 = np.asarray(q2, dtype=float)
    return 1.0 / ((q2 + 1.0) * np.log(q2 + 2.0) ** 4)


def _sample_heavy_radius(rng, count, scale=1.0):
    """Radii with density ~ r^2/(scale^2 + r^2)^2 (rejection from sin^2)."""
    out = np.empty(count)
    have = 0
    while have < count:
        m = 2 * (count - have) + 16
        theta = rng.uniform(0.0, math.pi / 2.0, size=m)
        u = rng.uniform(0.0, 1.0, size=m)
        acc = theta[u < np.sin(theta) ** 2]
        take = min(count - have, acc.size)
        out[have:have + take] = np.tan(acc[:take])
        have += take
    return scale * out


def _sample_isotropic(rng, shape, scale=1.0):
    """Vectors from g(q) = (sqrt(scale2)/pi^2) (scale2 + q^2)^{-2}, scale2=scale^2."""
    count = int(np.prod(shape))
    r = _sample_heavy_radius(rng, count, scale)
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return (r[:, None] * d).reshape(*shape, 3)


def _proposal_density(q, scale=1.0):
    q2 = np.sum(q * q, axis=-1)
    return (scale / math.pi**2) / (scale * scale + q2) ** 2


def _loop_expansion(graph: FeynmanGraph):
    tree, loops, a = spanning_tree_decomposition(graph)
    return tree, loops, np.array(a, dtype=float) if tree else np.zeros((0, len(loops)))


def _mc_mean(rng_values):
    vals = np.asarray(rng_values)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
    return mean, stderr


def graph_value(graph: FeynmanGraph, mc: MCParams = MCParams()) -> GraphValueEstimate:
    """Importance-MC estimate of |G| for a superficially convergent graph."""
    report = classify_superficial_convergence(graph)
    if not report.superficially_convergent:
        raise NonIntegrableError(
            f"graph {graph.label()} is not superficially convergent; "
            "its momentum integral diverges"
        )
    tree, loops, a = _loop_expansion(graph)
    rng = substream(mc.seed, mc.stream, 0)
    w = _sample_isotropic(rng, (mc.samples, len(loops)))          # (m, l, 3)
    weights = propagator_log_damped(np.sum(w * w, axis=-1)) / _proposal_density(w)
    est = np.prod(weights, axis=1)
    if len(tree):
        u = np.einsum("ij,mjc->mic", a, w)                        # (m, k, 3)
        est = est * np.prod(propagator_log_damped(np.sum(u * u, axis=-1)), axis=1)
    value, stderr = _mc_mean(est)
    return GraphValueEstimate(graph_id=graph.label(), value=value, stderr=stderr,
                              samples=mc.samples, method="importance-MC")


def radial_quadrature_two_line_value() -> GraphValueEstimate:
    """Oracle for the two-vertex, two-line loop: int_R3 F(q)^2 d^3q by 1D quadrature."""
    from scipy.integrate import quad

    val = 4.0 * math.pi * quad(
        lambda r: r * r * propagator_log_damped(r * r) ** 2, 0.0, np.inf, limit=300
    )[0]
    return GraphValueEstimate(graph_id="two-line-loop", value=val, stderr=0.0,
                              samples=0, method="radial-quadrature")


def torus_pairing_integral(graph: FeynmanGraph, estar: float,
                           mc: MCParams = MCParams()) -> GraphValueEstimate:
    """Torus integral of prod 1/(e(p)+E*) over the graph's delta-constrained momenta."""
    if estar <= 0:
        raise ValueError("estar must be > 0")
    tree, loops, a = _loop_expansion(graph)
    rng = substream(mc.seed, mc.stream + ".torus", 0)
    w = rng.uniform(-0.5, 0.5, size=(mc.samples, len(loops), 3))
    est = np.prod(1.0 / (dispersion(w) + estar), axis=1)
    if len(tree):
        u = np.einsum("ij,mjc->mic", a, w)
        est = est * np.prod(1.0 / (dispersion(u) + estar), axis=1)
    value, stderr = _mc_mean(est)
    return GraphValueEstimate(graph_id=graph.label() + f"@torus(E*={estar:g})",
                              value=value, stderr=stderr, samples=mc.samples,
                              method="importance-MC")


def continuum_pairing_integral(graph: FeynmanGraph, estar: float,
                               mc: MCParams = MCParams()) -> GraphValueEstimate:
    """Continuum surrogate: propagators 1/(q^2+E*) over R^3 (exact scaling E*^{1-n/2})."""
    if estar <= 0:
        raise ValueError("estar must be > 0")
    tree, loops, a = _loop_expansion(graph)
    scale = math.sqrt(estar)
    rng = substream(mc.seed, mc.stream + ".continuum", 0)
    w = _sample_isotropic(rng, (mc.samples, len(loops)), scale=scale)
    q2 = np.sum(w * w, axis=-1)
    weights = (1.0 / (q2 + estar)) / _proposal_density(w, scale=scale)
    est = np.prod(weights, axis=1)
    if len(tree):
        u = np.einsum("ij,mjc->mic", a, w)
        est = est * np.prod(1.0 / (np.sum(u * u, axis=-1) + estar), axis=1)
    value, stderr = _mc_mean(est)
    return GraphValueEstimate(graph_id=graph.label() + f"@continuum(E*={estar:g})",
                              value=value, stderr=stderr, samples=mc.samples,
                              method="importance-MC")


def torus_continuum_constant(estar: float, grid: int = 64) -> float:
    """Fitted C = max over T^3 of (p^2+E*)/(e(p)+E*) (pointwise domination constant)."""
    k = np.arange(grid)
    x = (k + 0.5) / grid - 0.5
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    p2 = X**2 + Y**2 + Z**2
    e = 2.0 * (np.sin(np.pi * X) ** 2 + np.sin(np.pi * Y) ** 2 + np.sin(np.pi * Z) ** 2)
    return float(np.max((p2 + estar) / (e + estar)))


def log_damping_constant(estar: float, k_const: float = 1.0) -> float:
    """C(E*) = K ln^9(e + 1/E*), the positive normalization of K ln^9 E*."""
    if estar <= 0:
        raise ValueError("estar must be > 0")
    return k_const * math.log(math.e + 1.0 / estar) ** 9


@dataclass(frozen=True)
class BoundAssembly:
    """Order-n moment bound (4n)! E* ratio^n and the optimal stopping order."""

    n: int
    lam: float
    estar: float
    k_const: float
    c_of_estar: float
    ratio: float           # C(E*) lam^2 / sqrt(E*)
    bound_value: float
    log_bound_value: float
    chosen_N: int
    lambda_exponent: float  # B with ratio = lam^(B * epsilon) at epsilon = 1
    positive_log_normalization: bool = True

    def __post_init__(self):
        if self.bound_value < 0 or self.chosen_N < 1:
            raise ValueError("bound must be >= 0 and chosen_N >= 1")


def assemble_An_bound(n: int, lam: float, estar: float, k_const: float = 1.0,
                      epsilon: float = 1.0) -> BoundAssembly:
    """Assemble the order-n bound and the stopping order (4N)^4 = 1/ratio."""
    if not (0 < estar < 1):
        raise ValueError("estar must be in (0, 1)")
    if lam <= 0 or n < 1:
        raise ValueError("need lam > 0 and n >= 1")
    c_val = log_damping_constant(estar, k_const)
    ratio = c_val * lam**2 / math.sqrt(estar)
    if ratio >= 1.0:
        raise OutsideLifshitzWindowError(
            f"C(E*) lam^2 / sqrt(E*) = {ratio:.3g} >= 1: expansion gains nothing "
            f"(lam={lam:g}, estar={estar:g})"
        )
    log_bound = math.lgamma(4 * n + 1) + math.log(estar) + n * math.log(ratio)
    bound = math.exp(log_bound) if log_bound < 700 else math.inf
    chosen = max(1, math.ceil((1.0 / ratio) ** 0.25 / 4.0))
    b_exp = math.log(ratio) / (epsilon * math.log(lam)) if lam != 1.0 else math.nan
    return BoundAssembly(n=n, lam=lam, estar=estar, k_const=k_const,
                         c_of_estar=c_val, ratio=ratio, bound_value=bound,
                         log_bound_value=log_bound, chosen_N=chosen,
                         lambda_exponent=b_exp)


def bound_minimum(lam: float, estar: float, k_const: float = 1.0,
                  n_max: int = None):
    """(argmin_n, min log bound) of the order-n bound; minimum sits near chosen_N."""
    first = assemble_An_bound(1, lam, estar, k_const)
    if n_max is None:
        n_max = 4 * first.chosen_N
    best_n, best = 1, first.log_bound_value
    for n in range(2, n_max + 1):
        lb = assemble_An_bound(n, lam, estar, k_const).log_bound_value
        if lb < best:
            best_n, best = n, lb
    return best_n, best


def stopping_rule_holds_exact(ratio: float, chosen_N: int) -> bool:
    """Exact check of (4N)! ratio^N < e^{-N} via rational arithmetic.

    Replacing e by a rational upper bound only strengthens the inequality
    being verified, so a True verdict is rigorous for the given float ratio.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must be in (0, 1)")
    lhs = Fraction(math.factorial(4 * chosen_N)) * (Fraction(ratio) * _E_UPPER) ** chosen_N
    return lhs < 1


LEDGER_FIELDS = ["graph_id", "n", "method", "value", "stderr", "samples", "seed"]


def append_ledger(path, estimate: GraphValueEstimate, n: int, seed: int):
    """Append one MC result row to the CSV ledger, creating it with a header."""
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_FIELDS)
        if fresh:
            writer.writeheader()
        writer.writerow({
            "graph_id": estimate.graph_id, "n": n, "method": estimate.method,
            "value": repr(estimate.value), "stderr": repr(estimate.stderr),
            "samples": estimate.samples, "seed": seed,
        })
