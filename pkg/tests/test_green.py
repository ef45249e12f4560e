import math
import os

import numpy as np
import pytest

from lifshitzlab import green as gr
from lifshitzlab import selfenergy as se
from lifshitzlab.errors import NonConvergenceError, PeriodizationError


def test_origin_value_equals_torus_integral():
    for estar in (0.05, 0.3, 1.0):
        assert gr.green_free((0, 0, 0), estar) == pytest.approx(
            se.torus_integral_I1(estar), rel=1e-10)


def test_sigma_identity_on_solved_context():
    ctx = se.solve_self_energy(0.3, 0.1)
    lhs = ctx.lam**2 * gr.green_free((0, 0, 0), ctx.estar)
    assert lhs == pytest.approx(ctx.sigma, rel=1e-8)


def test_positivity_across_energies():
    for estar in (1e-3, 1e-2, 1e-1):
        for x in ((0, 0, 0), (5, 0, 0), (10, 7, 3), (20, 0, 0), (12, 12, 12)):
            assert gr.green_free(x, estar) > 0.0


def test_wedge_symmetry_is_exact():
    v = gr.green_free((3, -1, 2), 0.2)
    assert v == gr.green_free((2, 3, 1), 0.2)  # sorted |components| identical


def test_fft_agrees_with_bessel_small():
    table_b = gr.green_table_bessel(0.2, radius=8)
    table_f = gr.green_free_fft(128, 0.2, radius=8)
    worst = max(abs(table_b.value(x) - table_f.value(x)) for x, _ in table_b.items())
    assert worst < 1e-10


def test_fft_reproduces_origin_at_unit_energy():
    table = gr.green_free_fft(128, 1.0, radius=4)
    assert table.value((0, 0, 0)) == pytest.approx(gr.green_free((0, 0, 0), 1.0),
                                                   abs=1e-8)


def test_fft_octahedral_symmetry_defect():
    table = gr.green_free_fft(64, 0.5, radius=8)
    assert table.symmetry_defect < 1e-12


def test_periodization_rejection():
    with pytest.raises(PeriodizationError) as err:
        gr.green_free_fft(64, 1e-3, radius=16)
    assert err.value.bound > 1e-8


def test_periodization_bound_is_conservative():
    # in an aliasing-dominated regime the measured error sits below the bound
    estar, m, radius = 0.05, 64, 20
    bound = gr.periodization_bound(m, radius, estar)
    assert bound > 1e-9  # aliasing well above double-precision noise here
    table = gr.green_free_fft(m, estar, radius=radius, tolerance=1e-6)
    worst = 0.0
    for x in ((radius, 0, 0), (14, 14, 0), (0, 0, radius), (11, 9, 7), (19, 5, 0)):
        worst = max(worst, abs(table.value(x) - gr.green_free(x, estar)))
    assert worst <= bound


def test_resolvent_identity_on_patch():
    table = gr.green_table_bessel(0.3, radius=6)
    assert gr.resolvent_identity_residual(table, patch_radius=2) < 1e-8


def test_monotone_decrease_in_estar():
    for x in ((0, 0, 0), (3, 2, 1), (7, 0, 0)):
        assert gr.green_free(x, 0.1) > gr.green_free(x, 0.2)


def test_envelope_constant_below_two():
    rep = gr.check_asymptotics(range(1, 41, 4), 0.01)
    assert rep.envelope_constant < 2.0
    table = gr.green_table_bessel(0.05, radius=6)
    assert table.fitted_envelope_constant() < 2.0


def test_asymptotics_moderate_range():
    rep = gr.check_asymptotics(range(12, 33, 4), 0.01)
    assert 0.9 < rep.rate_ratio < 1.1
    assert all(0.8 < r < 1.2 for r in rep.ratios)
    # fitted envelope dominates the observed deviations by construction
    for r, ratio in zip(rep.distances, rep.ratios):
        assert abs(ratio - 1.0) <= rep.c1 * math.sqrt(rep.estar) + rep.c2 / r + 1e-12


def test_quadrature_error_contract():
    with pytest.raises(NonConvergenceError):
        gr.green_free((2, 1, 0), 0.3, reltol=1e-16)


def test_table_csv_roundtrip(tmp_path):
    table = gr.green_table_bessel(0.4, radius=5)
    path = os.path.join(tmp_path, "table.csv")
    gr.write_table_csv(table, path)
    back = gr.read_table_csv(path)
    assert back.estar == table.estar and back.method == table.method
    for x, v in table.items():
        assert back.value(x) == v


def test_table_validate_positivity():
    table = gr.green_table_bessel(0.4, radius=4)
    table.validate()
    bad = gr.GreenTable(estar=0.4, radius=1, method="bessel-integral",
                        tolerance=1e-10, _data=np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        bad.validate()


def test_table_rejects_out_of_ball_lookup():
    table = gr.green_table_bessel(0.4, radius=3)
    with pytest.raises(KeyError):
        table.value((3, 3, 3))


def test_large_radius_needs_opt_in():
    with pytest.raises(ValueError):
        gr.green_table_bessel(0.4, radius=80)
    with pytest.raises(ValueError):
        gr.green_free_fft(256, 0.4, radius=100)
