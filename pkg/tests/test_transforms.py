import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dbar
from dbar.errors import NonContractiveError, UnsupportedExponentError
from dbar.grid import Field, lp_norm
from dbar.transforms import (
    BeltramiProblem,
    beltrami_solve,
    beurling_transform,
    cauchy_transform,
    dbar as dbar_op,
    ddz,
    verify_cauchy_estimates,
)
from conftest import seeded_smooth_field, smooth_bump

# adaptive-quadrature oracle for T(conj(xi)) on the unit disc, frozen from
# scipy.integrate.dblquad at epsabs 1e-10; each agrees with conj(z)^2/2 to
# better than 1e-12
_XI_BAR_PROBES = [
    (0.00 + 0.00j, -0.000000000000 + 0.000000000000j),
    (0.50 + 0.00j, +0.125000000000 + 0.000000000000j),
    (0.30 + 0.20j, +0.025000000000 - 0.060000000000j),
    (-0.40 + 0.10j, +0.075000000000 + 0.040000000000j),
    (0.00 + 0.60j, -0.180000000000 + 0.000000000000j),
    (-0.20 - 0.50j, -0.105000000000 - 0.100000000000j),
    (0.70 - 0.10j, +0.240000000000 + 0.070000000000j),
    (-0.60 - 0.30j, +0.135000000000 - 0.180000000000j),
    (0.15 + 0.45j, -0.090000000000 - 0.067500000000j),
    (-0.05 - 0.85j, -0.360000000000 - 0.042500000000j),
]


def _crop(tf: Field, grid) -> np.ndarray:
    return tf.values[: grid.shape[0], : grid.shape[1]]


# ---------------------------------------------------------------------------
# Cauchy transform


def test_cauchy_zero():
    g = dbar.disc_grid(0, 1.0, 64)
    f = Field.from_function(g, lambda z: np.zeros_like(z))
    tf = cauchy_transform(f)
    assert np.abs(tf.values).max() == 0.0


def test_cauchy_disc_potential():
    g = dbar.disc_grid(0, 1.0, 256)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    tf = cauchy_transform(f, expand=2)
    zt = tf.grid.coords()[0]
    truth = np.where(np.abs(zt) < 1, np.conj(zt), 1 / np.where(zt == 0, 1, zt))
    err = np.abs(tf.values - truth)
    err[np.abs(np.abs(zt) - 1) < 4 * g.spacing[0]] = 0
    assert err.max() < 0.01


def test_cauchy_oracle_probes():
    g = dbar.disc_grid(0, 1.0, 256)
    f = Field.from_function(g, lambda z: np.conj(z))
    tf = cauchy_transform(f)
    zt = tf.grid.coords()[0]
    h = g.spacing[0]
    for probe, want in _XI_BAR_PROBES:
        # oracle values agree with the closed form conj(z)^2 / 2
        assert abs(want - np.conj(probe) ** 2 / 2) < 1e-6
        i = np.argmin(np.abs(zt[:, 0].real - probe.real))
        j = np.argmin(np.abs(zt[0, :].imag - probe.imag))
        cell = zt[i, j]
        # allow the sub-cell offset between probe and lattice point
        assert abs(tf.values[i, j] - want) < 1e-3 + abs(probe) * h
        assert abs(tf.values[i, j] - np.conj(cell) ** 2 / 2) < 1e-3


def test_cauchy_linear():
    g = dbar.disc_grid(0, 1.0, 96)
    f1 = seeded_smooth_field(g, 1)
    f2 = seeded_smooth_field(g, 2)
    a, b = 1.3 - 0.2j, -0.4 + 2j
    lhs = cauchy_transform(Field(g, a * f1.values + b * f2.values))
    rhs = a * cauchy_transform(f1).values + b * cauchy_transform(f2).values
    assert np.abs(lhs.values - rhs).max() < 1e-12 * np.abs(rhs).max()


def test_dbar_cauchy_identity_refines():
    errs = []
    for res in (64, 128, 256):
        g = dbar.disc_grid(0, 1.0, res)
        f = seeded_smooth_field(g, 17)
        tf = cauchy_transform(f)
        df = dbar_op(tf).components[0]
        resid = _crop(df, g) - f.values
        w = g.weights()
        num = np.sqrt((np.abs(resid) ** 2 * w).sum())
        den = np.sqrt((np.abs(f.values) ** 2 * w).sum())
        errs.append(num / den)
    assert errs[-1] < 0.02
    order = np.polyfit(np.log([64, 128, 256]), np.log(errs), 1)[0]
    assert -order >= 1.0


def test_cauchy_holomorphic_off_support():
    g = dbar.disc_grid(0, 1.0, 192)
    f = seeded_smooth_field(g, 23, rho=0.3)
    tf = cauchy_transform(f)
    df = dbar_op(tf).components[0]
    z = g.coords()[0]
    outside = g.mask & (np.abs(z) > 0.55) & (np.abs(z) < 0.9)
    resid = np.abs(_crop(df, g))[outside].max()
    assert resid <= 0.2 * np.abs(f.values).max()
    assert resid <= 1e-3 * np.abs(f.values).max()  # measured headroom


# ---------------------------------------------------------------------------
# discrete Wirtinger derivative


def test_dbar_conjugate():
    g = dbar.disc_grid(0, 1.0, 96)
    f = Field.from_function(g, lambda z: np.conj(z))
    form = dbar_op(f)
    interior = f.mask & ~form.onesided_mask
    assert np.abs(form.components[0].values - 1)[interior].max() < 1e-12


def test_dbar_holomorphic():
    g = dbar.disc_grid(0, 1.0, 96)
    f = Field.from_function(g, lambda z: z**2)
    form = dbar_op(f)
    interior = f.mask & ~form.onesided_mask
    assert np.abs(form.components[0].values)[interior].max() < 1e-12


def test_dbar_exp_refinement():
    errs = []
    for res in (64, 128, 256):
        g = dbar.disc_grid(0, 1.0, res)
        f = Field.from_function(g, lambda z: np.exp(np.conj(z)))
        form = dbar_op(f)
        interior = f.mask & ~form.onesided_mask
        rel = np.abs(form.components[0].values - f.values)[interior].max()
        errs.append(rel / np.abs(f.values).max())
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert min(ratios) > 3.0  # second order gives about 4


def test_dbar_two_variables():
    g = dbar.polydisc_grid((1, 1), 20)
    f = Field.from_function(g, lambda z1, z2: np.conj(z1) + 2 * np.conj(z2))
    form = dbar_op(f)
    interior = f.mask & ~form.onesided_mask
    assert np.abs(form.components[0].values - 1)[interior].max() < 1e-12
    assert np.abs(form.components[1].values - 2)[interior].max() < 1e-12


# ---------------------------------------------------------------------------
# Beurling transform


def test_beurling_zero():
    g = dbar.disc_grid(0, 1.0, 64)
    f = Field.from_function(g, lambda z: np.zeros_like(z))
    assert np.abs(beurling_transform(f).values).max() == 0.0


def test_beurling_disc():
    g = dbar.disc_grid(0, 1.0, 256)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    sh = beurling_transform(f, expand=2)
    zs = sh.grid.coords()[0]
    truth = np.where(np.abs(zs) < 1, 0, -1 / np.where(zs == 0, 1, zs) ** 2)
    err = np.abs(sh.values - truth)
    err[np.abs(np.abs(zs) - 1) < 4 * g.spacing[0]] = 0
    assert err.max() < 0.02


def test_beurling_l2_bound():
    g = dbar.disc_grid(0, 1.0, 192)
    h = seeded_smooth_field(g, 13, rho=0.7)
    sh = beurling_transform(h, expand=2)
    n_out = np.sqrt((np.abs(sh.values) ** 2 * sh.grid.weights()).sum())
    assert n_out / lp_norm(h, 2) <= 1.02


def test_beurling_is_ddz_of_cauchy():
    g = dbar.disc_grid(0, 1.0, 192)
    h = seeded_smooth_field(g, 29)
    lhs = _crop(beurling_transform(h), g)
    tf = cauchy_transform(h)
    rhs = _crop(ddz(tf).components[0], g)
    inner = np.zeros(g.shape, dtype=bool)
    inner[2:-2, 2:-2] = True
    scale = np.abs(lhs).max()
    assert np.abs(lhs - rhs)[inner].max() < 5e-3 * scale


# ---------------------------------------------------------------------------
# estimate verification


def test_estimates_exponent_p4():
    g = dbar.disc_grid(0, 0.5, 192)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    rep = verify_cauchy_estimates(f, 4, deltas=np.geomspace(0.05, 0.4, 6))
    assert abs(rep.fitted_exponent - 0.5) <= 0.1
    assert len(rep.deltas) >= 4


def test_estimates_profile_sup_inf():
    g = dbar.disc_grid(0, 0.5, 192)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    rep = verify_cauchy_estimates(f, np.inf, deltas=[0.35, 0.39, 0.44, 0.4995])
    assert rep.profile_rel_error <= 0.10


def test_estimates_degenerate():
    g = dbar.disc_grid(0, 0.5, 96)
    f = Field.from_function(g, lambda z: np.zeros_like(z))
    rep = verify_cauchy_estimates(f, 4)
    assert rep.degenerate


def test_estimates_reject_small_p():
    g = dbar.disc_grid(0, 0.5, 96)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    with pytest.raises(UnsupportedExponentError):
        verify_cauchy_estimates(f, 2.0)


# ---------------------------------------------------------------------------
# Beltrami solver


def test_beltrami_alpha_zero_one_step():
    g = dbar.disc_grid(0, 1.0, 96)
    gg = seeded_smooth_field(g, 37, rho=0.5)
    alpha = Field.from_function(g, lambda z: np.zeros_like(z))
    sol = beltrami_solve(BeltramiProblem(alpha=alpha, g=gg))
    assert sol.iterations == 1
    assert np.array_equal(sol.u_zbar.values, gg.values)


def _cutoff_data(g, c0=0.3):
    """Manufactured plateau data: u = z^2 + 0.1 conj z under a smooth cutoff."""
    z = g.coords()[0]
    r = np.abs(z)

    def s(t):
        t = np.clip(t, 0, 1)
        return t * t * t * (t * (t * 6 - 15) + 10)

    def sd(t):
        tc = np.clip(t, 0, 1)
        return 30 * tc * tc * (tc - 1) * (tc - 1)

    chi = 1 - s((r - 0.45) / 0.35)
    chid = -sd((r - 0.45) / 0.35) / 0.35
    rsafe = np.where(r == 0, 1, r)
    u = z**2 + 0.1 * np.conj(z)
    wz = chi * 2 * z + u * chid * np.conj(z) / (2 * rsafe)
    wzb = chi * 0.1 + u * chid * z / (2 * rsafe)
    return wzb, wzb + c0 * wz, (r < 0.4)


def test_beltrami_manufactured_recovery():
    g = dbar.disc_grid(0, 1.0, 256)
    z = g.coords()[0]
    wzb, gv, plateau = _cutoff_data(g)
    sol = beltrami_solve(BeltramiProblem(
        alpha=Field(g, 0.3 * np.ones_like(z)), g=Field(g, gv)))
    sel = plateau & g.mask
    err = np.sqrt((np.abs(sol.u_zbar.values - wzb)[sel] ** 2).sum()
                  / (np.abs(wzb[sel]) ** 2).sum())
    assert err <= 0.01  # recovers d(chi u)/dz-bar = 0.1 on the plateau


def test_beltrami_ratio_bound():
    g = dbar.disc_grid(0, 1.0, 192)
    z = g.coords()[0]
    gg = seeded_smooth_field(g, 11, rho=0.5)
    sol = beltrami_solve(BeltramiProblem(
        alpha=Field(g, 0.3 * np.ones_like(z)), g=gg))
    assert sol.ratio <= 0.3 * 1.05


def test_beltrami_noncontractive():
    g = dbar.disc_grid(0, 1.0, 64)
    z = g.coords()[0]
    gg = seeded_smooth_field(g, 2)
    with pytest.raises(NonContractiveError):
        beltrami_solve(BeltramiProblem(alpha=Field(g, np.ones_like(z)), g=gg))


def test_beltrami_residuals_geometric():
    g = dbar.disc_grid(0, 1.0, 128)
    z = g.coords()[0]
    gg = seeded_smooth_field(g, 5, rho=0.5)
    sol = beltrami_solve(BeltramiProblem(
        alpha=Field(g, 0.25 * np.ones_like(z)), g=gg))
    res = np.array(sol.residuals[:-1])
    assert np.all(np.diff(np.log(res)) < 0)


@given(st.integers(0, 1000))
@settings(max_examples=8, deadline=None)
def test_cauchy_linearity_property(seed):
    g = dbar.disc_grid(0, 1.0, 48)
    rng = np.random.default_rng(seed)
    a = complex(rng.standard_normal(), rng.standard_normal())
    f1 = seeded_smooth_field(g, seed)
    f2 = seeded_smooth_field(g, seed + 1)
    lhs = cauchy_transform(Field(g, a * f1.values + f2.values)).values
    rhs = a * cauchy_transform(f1).values + cauchy_transform(f2).values
    scale = max(np.abs(rhs).max(), 1e-300)
    assert np.abs(lhs - rhs).max() < 1e-12 * scale
