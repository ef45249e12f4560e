import csv
import math
import os

import numpy as np
import pytest

from lifshitzlab import diagrams as dg
from lifshitzlab import graphvalues as gv
from lifshitzlab.errors import NonIntegrableError, OutsideLifshitzWindowError

A, B = frozenset({1}), frozenset({2})
TWO_LINE = dg.FeynmanGraph(n=0, partition=None, edges={1: (A, B), 2: (A, B)},
                           special_edges=())
GRAPH_F = dg.FeynmanGraph(n=0, partition=None,
                          edges={1: (A, B), 2: (A, B), 3: (A, B)},
                          special_edges=())


def _gate_free_graphs(n):
    parts = dg.enumerate_partitions(dg.IndexSet(n, n), pairings_only=True,
                                    gate_free=True)
    return [dg.build_feynman_graph(p) for p in parts]


def test_two_line_loop_matches_radial_quadrature():
    est = gv.graph_value(TWO_LINE, gv.MCParams(samples=200_000, seed=7))
    oracle = gv.radial_quadrature_two_line_value()
    assert oracle.method == "radial-quadrature"
    assert abs(est.value - oracle.value) < 3.0 * est.stderr


def test_graph_f_value_finite_and_stderr_shrinks():
    sizes = (25_000, 100_000, 400_000)
    errs = [gv.graph_value(GRAPH_F, gv.MCParams(samples=m, seed=11)).stderr
            for m in sizes]
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.75 < slope < -0.25  # ~ samples^{-1/2}
    assert all(e > 0 for e in errs)


@pytest.mark.parametrize("n,samples", [(2, 20_000), (3, 20_000), (4, 4_000)])
def test_k_to_the_n_fit_exists(n, samples):
    # every gate-free pairing value is finite and the envelope constant
    # K = max |G|^(1/n) is reported
    values = [gv.graph_value(g, gv.MCParams(samples=samples, seed=5)).value
              for g in _gate_free_graphs(n)]
    assert all(math.isfinite(v) and v > 0 for v in values)
    k_fit = max(v ** (1.0 / n) for v in values)
    assert math.isfinite(k_fit)
    print(f"\nfitted K at n={n}: {k_fit:.3f} over {len(values)} gate-free pairings")


def test_gate_graph_rejected_as_non_integrable():
    part = dg.Partition(dg.IndexSet(2, 2),
                        frozenset({frozenset({1, 2}), frozenset({4, 5})}))
    with pytest.raises(NonIntegrableError):
        gv.graph_value(dg.build_feynman_graph(part), gv.MCParams(samples=100))


def test_n1_full_graph_rejected():
    # div(G) = 2 - n = 1 at n = 1: polynomially divergent
    p1 = dg.enumerate_partitions(dg.IndexSet(1, 1), pairings_only=True)[0]
    with pytest.raises(NonIntegrableError):
        gv.graph_value(dg.build_feynman_graph(p1), gv.MCParams(samples=100))


def test_torus_pairing_integral_positive():
    for g in _gate_free_graphs(2):
        est = gv.torus_pairing_integral(g, 0.3, gv.MCParams(samples=20_000, seed=2))
        assert est.value > 0


def test_continuum_scaling_identity_n2():
    graph = _gate_free_graphs(2)[0]
    v1 = gv.continuum_pairing_integral(graph, 0.2, gv.MCParams(samples=150_000, seed=3))
    v2 = gv.continuum_pairing_integral(graph, 0.4, gv.MCParams(samples=150_000, seed=4))
    ratio = v1.value / v2.value
    err = ratio * math.hypot(v1.stderr / v1.value, v2.stderr / v2.value)
    assert abs(ratio - 1.0) < 3.0 * err  # 2^{n/2 - 1} = 1 at n = 2


def test_torus_dominated_by_continuum_times_constant():
    graph = _gate_free_graphs(2)[0]
    estar = 0.2
    t = gv.torus_pairing_integral(graph, estar, gv.MCParams(samples=50_000, seed=5))
    c = gv.continuum_pairing_integral(graph, estar, gv.MCParams(samples=50_000, seed=6))
    const = gv.torus_continuum_constant(estar)
    assert 0 < const <= 1.0 + 1e-12  # e(p) >= p^2 makes the constant <= 1
    assert t.value <= const ** 6 * (c.value + 3 * c.stderr)


def test_assemble_bound_fields_and_stopping_rule():
    ba = gv.assemble_An_bound(2, 1e-4, 0.5)
    assert ba.ratio < 1.0
    assert ba.c_of_estar == pytest.approx(math.log(math.e + 2.0) ** 9)
    assert ba.positive_log_normalization
    assert gv.stopping_rule_holds_exact(ba.ratio, ba.chosen_N)
    # lam -> 0 at fixed estar: the bound vanishes like lam^{2n}
    small = gv.assemble_An_bound(1, 1e-8, 0.5).bound_value
    assert small < gv.assemble_An_bound(1, 1e-4, 0.5).bound_value
    assert small < 1e-12


def test_assemble_outside_window_error():
    with pytest.raises(OutsideLifshitzWindowError):
        gv.assemble_An_bound(2, 0.5, 0.01)


def test_bound_minimum_near_chosen_order():
    ba = gv.assemble_An_bound(1, 1e-4, 0.5)
    n_min, _ = gv.bound_minimum(1e-4, 0.5)
    assert ba.chosen_N / 2 <= n_min <= 2 * ba.chosen_N


def test_lambda_exponent_reported_in_unit_interval_deep_regime():
    # at float-representable but physically absurd couplings the asymptotic
    # window opens and the reported exponent lands in (0, 1)
    ba = gv.assemble_An_bound(1, 1e-60, 1e-180)
    assert 0.0 < ba.lambda_exponent < 1.0


def test_mc_reproducible_bit_for_bit():
    a = gv.graph_value(TWO_LINE, gv.MCParams(samples=5_000, seed=42))
    b = gv.graph_value(TWO_LINE, gv.MCParams(samples=5_000, seed=42))
    assert a == b
    c = gv.graph_value(TWO_LINE, gv.MCParams(samples=5_000, seed=43))
    assert c.value != a.value


def test_ledger_append_schema(tmp_path):
    path = os.path.join(tmp_path, "ledger.csv")
    est = gv.graph_value(TWO_LINE, gv.MCParams(samples=2_000, seed=1))
    gv.append_ledger(path, est, n=2, seed=1)
    gv.append_ledger(path, est, n=2, seed=1)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert set(rows[0]) == set(gv.LEDGER_FIELDS)
    assert float(rows[0]["value"]) == est.value
