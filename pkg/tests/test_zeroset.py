import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dbar
from dbar.errors import (
    ContourThroughZeroError,
    InvalidInputError,
    ResolutionError,
)
from dbar.grid import Field, OneForm
from dbar.zeroset import (
    CutoffSpec,
    _Interp,
    _ramp_profile,
    _rect_winding,
    _rounded,
    continuous_nth_root,
    count_zeros_slice,
    dbar_closedness_test,
    discriminant_h,
    distance_comparison,
    root_factor_bounds,
    track_zero_graphs,
    vanishing_order,
    weierstrass_reconstruct,
    winding_number,
)


# ---------------------------------------------------------------------------
# winding numbers


def test_winding_cube():
    g = dbar.disc_grid(0, 1.2, 128)
    f = Field.from_function(g, lambda z: z**3)
    assert winding_number(f, 0, 1.0) == 3


def test_winding_two_roots():
    g = dbar.disc_grid(0, 1.2, 128)
    f = Field.from_function(g, lambda z: (z - 0.3) * (z + 0.5j))
    assert winding_number(f, 0, 1.0) == 2


def test_winding_nonvanishing():
    g = dbar.disc_grid(0, 1.2, 128)
    f = Field.from_function(g, lambda z: np.exp(z))
    assert winding_number(f, 0, 1.0) == 0


def test_winding_rejects_zero_on_contour():
    g = dbar.disc_grid(0, 1.2, 128)
    f = Field.from_function(g, lambda z: z - 1.0)
    with pytest.raises(ContourThroughZeroError):
        winding_number(f, 0, 1.0)


def test_winding_additivity_exact():
    g = dbar.disc_grid(0, 1.2, 160)
    f = Field.from_function(g, lambda z: (z - 0.31) * (z + 0.47j) * (z + 0.2 - 0.2j))
    interp = _Interp(f)
    total = _rounded(_rect_winding(interp, -0.8, 0.8, -0.8, 0.8))
    quads = [(-0.8, 0.05, -0.8, 0.03), (0.05, 0.8, -0.8, 0.03),
             (-0.8, 0.05, 0.03, 0.8), (0.05, 0.8, 0.03, 0.8)]
    parts = [_rounded(_rect_winding(interp, *q)) for q in quads]
    assert sum(parts) == total == 3


@given(st.integers(0, 500))
@settings(max_examples=10, deadline=None)
def test_winding_matches_root_count(seed):
    rng = np.random.default_rng(seed)
    roots = rng.uniform(-0.4, 0.4, 2) + 1j * rng.uniform(-0.4, 0.4, 2)
    g = dbar.disc_grid(0, 1.2, 96)
    f = Field.from_function(g, lambda z: (z - roots[0]) * (z - roots[1]))
    assert winding_number(f, 0, 0.85) == 2


# ---------------------------------------------------------------------------
# slice roots


def test_count_zeros_pair():
    g = dbar.disc_grid(0, 1.25, 224)
    f = Field.from_function(g, lambda z: z**2 - 0.1)
    N, roots = count_zeros_slice(f, 0.8)
    assert N == 2
    got = sorted(r.real for r, _ in roots)
    assert got == pytest.approx([-np.sqrt(0.1), np.sqrt(0.1)], abs=1e-4)


def test_count_zeros_double():
    g = dbar.disc_grid(0, 1.25, 224)
    f = Field.from_function(g, lambda z: z**2)
    N, roots = count_zeros_slice(f, 0.8)
    assert N == 2
    assert len(roots) == 1 and roots[0][1] == 2
    assert abs(roots[0][0]) <= 2 * max(g.spacing)


def test_count_zeros_nonvanishing_factor():
    g = dbar.disc_grid(0, 1.25, 224)
    f = Field.from_function(g, lambda z: np.exp(np.conj(z)) * (z**2 - 0.1))
    N, roots = count_zeros_slice(f, 0.8)
    assert N == 2
    for r, m in roots:
        assert min(abs(r - np.sqrt(0.1)), abs(r + np.sqrt(0.1))) < 1e-4


def test_count_zeros_grid_must_cover():
    g = dbar.disc_grid(0, 1.0, 96)
    f = Field.from_function(g, lambda z: z)
    with pytest.raises(ResolutionError):
        count_zeros_slice(f, 0.9)


# ---------------------------------------------------------------------------
# graph tracking


def _parabola_chart(res=(16, 128)):
    g = dbar.polydisc_grid((0.28, 1.25), res)
    f = Field.from_function(g, lambda z1, z2: np.exp(np.conj(z2)) * (z2**2 - z1))
    return f, track_zero_graphs(f, eps0=0.8, param_radius=0.25)


def test_track_constant_graph():
    g = dbar.polydisc_grid((0.4, 1.0), (12, 96))
    f = Field.from_function(g, lambda z1, z2: z2 - 0.3)
    chart = track_zero_graphs(f, eps0=0.6, param_radius=0.35)
    assert chart.n_roots == 1
    assert np.abs(chart.roots[chart.param_mask] - 0.3).max() < 1e-9


def test_track_tilted_graph():
    g = dbar.polydisc_grid((0.3, 0.7), (12, 80))
    f = Field.from_function(g, lambda z1, z2: np.exp(np.conj(z2)) * (z2 - z1))
    chart = track_zero_graphs(f, eps0=0.42, param_radius=0.27)
    pc = chart.param_centers[chart.param_mask]
    rr = chart.roots[..., 0][chart.param_mask]
    assert np.abs(rr - pc).max() < 1e-6


def test_track_branch_pair():
    f, chart = _parabola_chart()
    assert chart.n_roots == 2
    pc = chart.param_centers[chart.param_mask]
    rt = chart.roots[chart.param_mask]
    err = 0.0
    for c, pair in zip(pc, rt):
        s = np.sqrt(c)
        for r in pair:
            err = max(err, min(abs(r - s), abs(r + s)))
    assert err < 1e-4


def test_chart_json_roundtrippable():
    import json

    f, chart = _parabola_chart(res=(10, 96))
    payload = json.loads(chart.to_json())
    assert payload["n_roots"] == 2
    assert len(payload["slices"]) == int(chart.param_mask.sum())
    assert payload["matchings"]


# ---------------------------------------------------------------------------
# vanishing order


def test_vanishing_order_parabola():
    g = dbar.polydisc_grid((1, 1), (17, 97))
    f = Field.from_function(g, lambda z1, z2: z2**2 - z1)
    vo = vanishing_order(f, (0, 0))
    assert vo.per_axis_order == (1, 2)
    assert vo.n_p == 1


def test_vanishing_order_linear():
    g = dbar.polydisc_grid((1, 1), (17, 97))
    f = Field.from_function(g, lambda z1, z2: z2)
    vo = vanishing_order(f, (0, 0))
    assert vo.n_p == 1


def test_vanishing_order_infinite():
    # both axis restrictions vanish identically although f does not
    g = dbar.polydisc_grid((1, 1), (17, 97))
    f = Field.from_function(g, lambda z1, z2: z1 * z2)
    vo = vanishing_order(f, (0, 0))
    assert vo.is_infinite
    assert vo.per_axis_order == (np.inf, np.inf)


# ---------------------------------------------------------------------------
# discriminant and reconstruction


def test_discriminant_parabola():
    f, chart = _parabola_chart()
    h = discriminant_h(chart)
    zc = chart.param_centers
    err = np.abs(h.values - (-4 * zc))[chart.param_mask].max()
    assert err < 1e-6


def test_discriminant_constant_roots():
    g = dbar.polydisc_grid((0.4, 1.0), (10, 96))
    f = Field.from_function(g, lambda z1, z2: (z2 - 0.1) * (z2 + 0.1))
    chart = track_zero_graphs(f, eps0=0.6, param_radius=0.35)
    h = discriminant_h(chart)
    assert np.abs(h.values - (-0.04))[chart.param_mask].max() < 1e-8


def test_discriminant_collision_zero():
    # roots +-z1 collide at the z1 = 0 slice: h = 0 there, -4 z1^2 elsewhere
    g = dbar.polydisc_grid((0.4, 1.0), (11, 96))
    f = Field.from_function(g, lambda z1, z2: z2**2 - z1**2)
    chart = track_zero_graphs(f, eps0=0.6, param_radius=0.35)
    h = discriminant_h(chart)
    mid = 5
    assert h.values[mid, mid] == 0.0  # the collision slice
    zc = chart.param_centers
    far = chart.param_mask & (np.abs(zc) > 4 * chart.z2_spacing)
    assert np.abs(h.values - (-4 * zc**2))[far].max() < 1e-6


def test_weierstrass_parabola():
    f, chart = _parabola_chart()
    res = weierstrass_reconstruct(chart)
    zc = chart.param_centers
    assert res.k == 2
    assert np.abs(res.coefficients[0].values[res.valid_mask]).max() < 1e-6
    assert np.abs(res.coefficients[1].values - (-zc))[res.valid_mask].max() < 1e-6
    assert max(res.dbar_residuals) < 1e-4


def test_weierstrass_constant_roots():
    g = dbar.polydisc_grid((0.4, 1.0), (10, 96))
    f = Field.from_function(g, lambda z1, z2: (z2 - 0.1) * (z2 + 0.1))
    chart = track_zero_graphs(f, eps0=0.6, param_radius=0.35)
    res = weierstrass_reconstruct(chart)
    # P = z2^2 - 0.01
    val = res.evaluate(0.1 + 0.1j, np.array([0.3 + 0j]))
    assert abs(val[0] - (0.3**2 - 0.01)) < 1e-9


def test_weierstrass_vanishes_on_chart():
    f, chart = _parabola_chart()
    res = weierstrass_reconstruct(chart)
    pc = chart.param_centers[chart.param_mask]
    rt = chart.roots[chart.param_mask]
    worst = 0.0
    for c, pair in zip(pc[::7], rt[::7]):
        for r in pair:
            worst = max(worst, abs(res.evaluate(c, np.array([r]))[0]))
    assert worst < 1e-6


def test_weierstrass_manufactured_square_graph():
    g = dbar.polydisc_grid((0.4, 1.0), (12, 96))
    f = Field.from_function(g, lambda z1, z2: z2 - z1**2)
    chart = track_zero_graphs(f, eps0=0.5, param_radius=0.35)
    res = weierstrass_reconstruct(chart)
    zc = chart.param_centers
    assert np.abs(res.coefficients[0].values - zc**2)[res.valid_mask].max() < 1e-6
    assert max(res.dbar_residuals) < 1e-4


# ---------------------------------------------------------------------------
# distance comparison


def test_distance_flat_graph():
    g = dbar.polydisc_grid((0.3, 0.5), (12, 48))
    f = Field.from_function(g, lambda z1, z2: z2)
    chart = track_zero_graphs(f, eps0=0.32, param_radius=0.27)
    d, dv, c1 = distance_comparison(f, chart)
    assert c1 == pytest.approx(1.0, abs=1e-9)
    z2 = g.coords()[1]
    sel = dv.mask
    assert np.abs(d.values.real - np.abs(z2))[sel].max() < 1e-9


def test_distance_tilted_graph():
    g = dbar.polydisc_grid((0.3, 0.52), (16, 56))
    f = Field.from_function(g, lambda z1, z2: z2 - z1)
    chart = track_zero_graphs(f, eps0=0.32, param_radius=0.28)
    d, dv, c1 = distance_comparison(f, chart)
    assert c1 == pytest.approx(np.sqrt(2.0), rel=0.02)
    sel = dv.mask
    assert np.all(d.values.real[sel] <= dv.values.real[sel] + 1e-14)


def test_distance_needs_single_graph():
    f, chart = _parabola_chart(res=(10, 96))
    with pytest.raises(InvalidInputError):
        distance_comparison(f, chart)


# ---------------------------------------------------------------------------
# cutoff pairing


def test_ramp_profile_constraints():
    ts = np.linspace(-0.2, 1.4, 4001)
    v = _ramp_profile(ts)
    assert np.all(v[ts < 0.25] == 0.0)
    assert np.all(v[ts > 1.0] == pytest.approx(1.0, abs=1e-12))
    slope = np.diff(v) / np.diff(ts)
    assert slope.max() < 2.0


def test_cutoff_gradient_bound():
    g = dbar.polydisc_grid((0.3, 0.3), (12, 64))
    z1, z2 = g.coords()
    dv = np.abs(z2 - z1)
    eps = 0.08
    chi = CutoffSpec(eps).values(dv)
    h = g.spacing[2]
    gx = np.abs(np.diff(chi, axis=2)) / h
    assert gx.max() <= 2.0 / eps


def _pairing_setup():
    g = dbar.polydisc_grid((0.3, 0.3), (20, 112))
    ones = Field.from_function(g, lambda z1, z2: np.ones_like(z1))
    zero = Field.from_function(g, lambda z1, z2: np.zeros_like(z1))
    pgrid = g.var_axis_grid(0)
    pmask = pgrid.mask
    roots = pgrid.coords()[0][..., None].copy()  # graph z2 = z1
    from dbar.zeroset import ZeroChart

    chart = ZeroChart(param_grid=pgrid, param_mask=pmask, roots=roots, eps0=0.2)
    return g, OneForm((zero, ones)), chart


def test_pairing_decays_for_closed_form():
    g, B, chart = _pairing_setup()
    h2 = g.spacing[2]
    eps = [0.024, 0.034, 0.048, 0.068, 0.096]
    assert min(eps) >= 4 * h2
    rep = dbar_closedness_test(B, chart, eps, phi_seeds=3)
    assert rep.passed
    assert rep.fitted_exponent >= 2 / (4 / 3) - 1 - 0.2  # p = 4 floor


def test_pairing_fails_for_jump():
    g, B, chart = _pairing_setup()
    z1, z2 = g.coords()
    jump = np.where((z2 - z1).real > 0, 1.0 + 0j, -1.0 + 0j)
    Bj = OneForm((B.components[0], Field(g, jump)))
    eps = [0.024, 0.034, 0.048, 0.068, 0.096]
    rep = dbar_closedness_test(Bj, chart, eps, phi_seeds=3)
    assert not rep.passed


def test_pairing_zero_form():
    g, B, chart = _pairing_setup()
    zero = Field.from_function(g, lambda z1, z2: np.zeros_like(z1))
    rep = dbar_closedness_test(OneForm((zero, zero)), chart,
                               [0.024, 0.048, 0.096], phi_seeds=2)
    assert np.all(rep.pairings == 0.0)


def test_pairing_flat_graph_is_divergence_noise():
    # for the flat graph the integrand is a pure z1-divergence: the pairing
    # vanishes identically and only quadrature noise remains
    g = dbar.polydisc_grid((0.3, 0.3), (24, 64))
    ones = Field.from_function(g, lambda z1, z2: np.ones_like(z1))
    zero = Field.from_function(g, lambda z1, z2: np.zeros_like(z1))
    pgrid = g.var_axis_grid(0)
    from dbar.zeroset import ZeroChart

    chart = ZeroChart(param_grid=pgrid, param_mask=pgrid.mask,
                      roots=np.zeros(pgrid.shape + (1,), complex), eps0=0.2)
    rep = dbar_closedness_test(OneForm((zero, ones)), chart,
                               [0.05, 0.07, 0.1], phi_seeds=2)
    from dbar.zeroset import _test_form

    _, d1, _ = _test_form(g, 1)
    noise_scale = np.abs(4 * d1 * g.weights()).sum()
    assert rep.pairings.max() <= 5e-3 * noise_scale


# ---------------------------------------------------------------------------
# roots of unity-free continuous branches


def test_continuous_sqrt():
    g = dbar.polydisc_grid((0.3, 0.9), (10, 64))
    f = Field.from_function(g, lambda z1, z2: (z2 - 0.1) ** 2)
    root = continuous_nth_root(f, 2, eps0=0.6)
    # one global branch away from the zero of f, where phases are reliable
    solid = f.mask & (np.abs(f.values) > 1e-4 * np.abs(f.values).max())
    diff = root.values - (g.coords()[1] - 0.1)
    summ = root.values + (g.coords()[1] - 0.1)
    branch = min(np.abs(diff)[solid].max(), np.abs(summ)[solid].max())
    assert branch < 1e-9
    # near the zero the root magnitude is tiny regardless of phase
    assert np.abs(root.values)[f.mask & ~solid].max() < 2e-2
    # the logarithmic derivative halves: dbar(root)/root = (1/2) dbar(f)/f
    from dbar.transforms import dbar as dbar_op

    i, j = 2, 3
    sub = Field(g.var_axis_grid(1), np.ascontiguousarray(root.values[i, j]),
                mask=np.ascontiguousarray(solid[i, j]))
    fsub = Field(g.var_axis_grid(1), np.ascontiguousarray(f.values[i, j]),
                 mask=np.ascontiguousarray(solid[i, j]))
    dr = dbar_op(sub).components[0].values
    df = dbar_op(fsub).components[0].values
    inner = solid[i, j] & ~dbar_op(sub).onesided_mask
    lhs = np.where(inner, dr / np.where(inner, sub.values, 1), 0)
    rhs = 0.5 * np.where(inner, df / np.where(inner, fsub.values, 1), 0)
    assert np.abs(lhs - rhs)[inner].max() < 1e-6


def test_root_factor_bounds():
    g = dbar.polydisc_grid((0.3, 0.7), (12, 80))
    f = Field.from_function(g, lambda z1, z2: np.exp(np.conj(z2)) * (z2 - z1))
    chart = track_zero_graphs(f, eps0=0.42, param_radius=0.27)
    sup_v, sup_inv = root_factor_bounds(f, chart)
    # v = exp(conj z2): modulus between e^-0.7 and e^0.7
    assert sup_v <= np.exp(0.7) * 1.1
    assert sup_inv <= np.exp(0.7) * 1.1
