"""Singular integral operators on one complex variable.

The Cauchy transform

    Tf(z) = (i / 2 pi) int_{|xi|<delta} f(xi) / (z - xi)  dxi ^ dxi-bar
          = (1 / pi)   int f(xi) / (z - xi)  dA(xi)

is a right inverse of the Wirtinger derivative d/dz-bar on compactly
supported data.  The Beurling transform S is the principal-value
convolution with -1/(pi z^2) and satisfies S = d/dz o T.  Both are
discretized with exact cell integrals (see `singular`) and applied by
padded FFT convolution, which preserves the scaling exponents that the
estimate verifier regresses.

`beltrami_solve` inverts 1 + alpha S by Neumann iteration; for
sup|alpha| = c0 < 1 the iteration contracts in L^2 because S has unit
L^2 norm in the continuum (the discrete norm is measured, not assumed).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    DivergenceError,
    InvalidInputError,
    NonContractiveError,
    UnsupportedExponentError,
)
from .grid import ComplexGrid, Field, OneForm, holder_norm, lp_norm
from .singular import (
    beurling_cell_kernel,
    cauchy_cell_kernel,
    convolve_lattice,
    lattice_kernel,
)

__all__ = [
    "EstimateReport",
    "BeltramiProblem",
    "BeltramiSolution",
    "cauchy_transform",
    "verify_cauchy_estimates",
    "dbar",
    "ddz",
    "beurling_transform",
    "beurling_norm_estimate",
    "beltrami_solve",
]


# ---------------------------------------------------------------------------
# discrete Wirtinger derivatives


def _diff_axis(values: np.ndarray, mask: np.ndarray, axis: int, h: float):
    """Second-order difference along one real axis, one-sided at the mask edge.

    Returns (derivative, onesided_flags).  Cells without enough masked
    neighbors fall back to first order or zero and are flagged.
    """
    v = np.where(mask, values, 0.0)
    m = mask
    up = np.roll(v, -1, axis=axis)
    dn = np.roll(v, 1, axis=axis)
    mu = np.roll(m, -1, axis=axis)
    md = np.roll(m, 1, axis=axis)
    # roll wraps around; edges of the array are never valid neighbors
    edge_lo = np.zeros_like(m)
    edge_hi = np.zeros_like(m)
    sl_lo = [slice(None)] * m.ndim
    sl_lo[axis] = 0
    sl_hi = [slice(None)] * m.ndim
    sl_hi[axis] = -1
    edge_lo[tuple(sl_lo)] = True
    edge_hi[tuple(sl_hi)] = True
    mu &= ~edge_hi
    md &= ~edge_lo

    up2 = np.roll(v, -2, axis=axis)
    dn2 = np.roll(v, 2, axis=axis)
    mu2 = np.roll(mu, -1, axis=axis) & ~edge_hi
    md2 = np.roll(md, 1, axis=axis) & ~edge_lo

    out = np.zeros_like(v)
    flags = np.zeros_like(m)

    centered = m & mu & md
    out[centered] = (up[centered] - dn[centered]) / (2 * h)

    fwd = m & mu & mu2 & ~centered
    out[fwd] = (-3 * v[fwd] + 4 * up[fwd] - up2[fwd]) / (2 * h)
    bwd = m & md & md2 & ~centered & ~fwd
    out[bwd] = (3 * v[bwd] - 4 * dn[bwd] + dn2[bwd]) / (2 * h)
    flags |= fwd | bwd

    f1 = m & mu & ~centered & ~fwd & ~bwd
    out[f1] = (up[f1] - v[f1]) / h
    b1 = m & md & ~centered & ~fwd & ~bwd & ~f1
    out[b1] = (v[b1] - dn[b1]) / h
    flags |= f1 | b1
    flags |= m & ~centered & ~fwd & ~bwd & ~f1 & ~b1  # isolated, derivative 0
    return out, flags


def _wirtinger(f: Field, conjugate: bool):
    comps = []
    flags = np.zeros(f.grid.shape, dtype=bool)
    sgn = 1j if conjugate else -1j
    for var in range(f.grid.nvars):
        dx, fl1 = _diff_axis(f.values, f.mask, 2 * var, f.grid.spacing[2 * var])
        dy, fl2 = _diff_axis(f.values, f.mask, 2 * var + 1, f.grid.spacing[2 * var + 1])
        comps.append(Field(f.grid, 0.5 * (dx + sgn * dy), mask=f.mask))
        flags |= fl1 | fl2
    return comps, flags


def dbar(f: Field) -> OneForm:
    """Discrete d/dz-bar per complex axis (centered, one-sided at edges)."""
    if not f.is_scalar:
        raise InvalidInputError("dbar expects a scalar field; apply per component")
    comps, flags = _wirtinger(f, conjugate=True)
    return OneForm(tuple(comps), onesided_mask=flags)


def ddz(f: Field) -> OneForm:
    """Discrete holomorphic derivative d/dz per complex axis."""
    if not f.is_scalar:
        raise InvalidInputError("ddz expects a scalar field; apply per component")
    comps, flags = _wirtinger(f, conjugate=False)
    return OneForm(tuple(comps), onesided_mask=flags)


# ---------------------------------------------------------------------------
# Cauchy / Beurling transforms


def _expanded_grid(g: ComplexGrid, expand: int) -> tuple[ComplexGrid, tuple]:
    """Aligned rectangle grid covering `expand` times the source extent."""
    if expand == 1:
        tgt = ComplexGrid(
            origin=g.origin,
            spacing=g.spacing,
            shape=g.shape,
            mask=np.ones(g.shape, dtype=bool),
            domain={"kind": "rect", "corners": _bbox_corners(g)},
        )
        return tgt, (0, 0)
    ex = ((expand - 1) * g.shape[0]) // 2
    ey = ((expand - 1) * g.shape[1]) // 2
    nx, ny = g.shape[0] + 2 * ex, g.shape[1] + 2 * ey
    origin = g.origin[0] - ex * g.spacing[0] - 1j * ey * g.spacing[1]
    tgt = ComplexGrid(
        origin=(origin,),
        spacing=g.spacing,
        shape=(nx, ny),
        mask=np.ones((nx, ny), dtype=bool),
        domain={"kind": "rect", "corners": None},
    )
    object.__setattr__(
        tgt, "domain",
        {"kind": "rect", "corners": _bbox_corners(tgt)},
    )
    return tgt, (-ex, -ey)


def _bbox_corners(g: ComplexGrid):
    ax = g.axes()
    return [[ax[0][0], ax[1][0]], [ax[0][-1], ax[1][-1]]]


def _apply_kernel(f: Field, builder, expand: int, scale: float):
    g = f.grid
    if g.nvars != 1:
        raise InvalidInputError("transform expects a field over one complex variable")
    if not np.any(f.mask):
        raise InvalidInputError("transform input has an empty mask")
    hx, hy = g.spacing
    tgt, offsets = _expanded_grid(g, expand)
    frac = g.weights() / g.cell_area  # partial boundary cells carry their area share
    ker = lattice_kernel(builder, g.shape, tgt.shape, offsets, hx, hy)

    def one(vals2d):
        return scale * convolve_lattice(vals2d * frac, ker, tgt.shape)

    if f.is_scalar:
        out = one(f.values)
    else:
        out = np.stack(
            [one(f.values[(Ellipsis,) + idx]) for idx in np.ndindex(f.value_shape)],
            axis=-1,
        ).reshape(tgt.shape + f.value_shape)
    return Field(tgt, out)


def cauchy_transform(f: Field, expand: int = 1) -> Field:
    """Area convolution with 1/(pi (z - xi)), entry by entry for matrices.

    The result lives on the full bounding rectangle (expand = 1) or an
    `expand`-times larger aligned rectangle, since Tf is defined off the
    source domain as well.
    """
    return _apply_kernel(f, cauchy_cell_kernel, expand, 1.0 / np.pi)


def beurling_transform(h: Field, expand: int = 1) -> Field:
    """Principal-value convolution with -1/(pi (z - xi)^2).

    Input is cut off smoothly if it does not vanish near the mask edge,
    since the p.v. pairing is defined for compactly supported data.
    """
    if not h.is_scalar:
        raise InvalidInputError("beurling_transform expects a scalar field")
    h = _ensure_compact_support(h)
    return _apply_kernel(h, beurling_cell_kernel, expand, -1.0 / np.pi)


def _ensure_compact_support(h: Field) -> Field:
    """Taper fields whose support runs into the lattice edge.

    Disc-masked fields already vanish inside the bounding rectangle and
    pass through untouched; only full-rectangle data with nonzero edge
    values gets the smooth collar cutoff.
    """
    if not h.mask.all():
        return h
    hmax = np.abs(h.values).max() if h.values.size else 0.0
    if hmax == 0:
        return h
    edge = np.zeros(h.grid.shape, dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    if not np.any(np.abs(h.values[edge]) > 1e-12 * hmax):
        return h
    from scipy import ndimage

    dist = ndimage.distance_transform_edt(~edge, sampling=h.grid.spacing)
    width = 4.0 * max(h.grid.spacing)
    t = np.clip(dist / width, 0.0, 1.0)
    taper = t * t * (3.0 - 2.0 * t)
    return Field(h.grid, h.values * taper, mask=h.mask)


def beurling_norm_estimate(grid: ComplexGrid, r: float, seeds: int = 6,
                           power_iters: int = 3) -> float:
    """Empirical L^r -> L^r norm of the discrete Beurling transform.

    Seeded smooth samples plus duality-map power iterations; the maximum
    observed ratio is reported.  Used as epsilon_r when r != 2.
    """
    if r <= 1:
        raise UnsupportedExponentError("r must exceed 1")
    z = grid.coords()[0]
    c = np.mean(z[grid.mask])
    rad = np.abs(z - c)[grid.mask].max()
    best = 0.0
    rng = np.random.default_rng(1234)
    for _ in range(seeds):
        coef = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        t = (z - c) / rad
        bump = np.exp(-1.0 / np.maximum(1 - np.abs(t) ** 2, 1e-12)) * (np.abs(t) < 1)
        vals = bump * (
            coef[0] + coef[1] * t + coef[2] * t**2 + coef[3] * np.conj(t)
            + coef[4] * t * np.conj(t) + coef[5] * np.conj(t) ** 2
        )
        h = Field(grid, vals)
        for _ in range(power_iters):
            sh = beurling_transform(h)
            sh_on = Field(grid, sh.values[: grid.shape[0], : grid.shape[1]])
            num = lp_norm(sh_on, r)
            den = lp_norm(h, r)
            if den == 0 or num == 0:
                break
            best = max(best, num / den)
            # duality map toward the maximizing direction
            w = sh_on.values
            h = Field(grid, np.abs(w) ** (r - 1) * np.exp(1j * np.angle(w)))
            h = _ensure_compact_support(h)
    return best


# ---------------------------------------------------------------------------
# estimate verification


@dataclass
class EstimateReport:
    """Scaling of sup|Tf| against the disc radius.

    measured_sup[i] = sup |T(f restricted to the delta_i disc)| divided by
    the L^p norm of f on that disc.  For finite p the log-log slope is
    compared to 1 - 2/p; for p = inf the profile delta (1 + |log delta|)
    is fitted (it is an upper envelope, so the fit window matters; both
    the profile and plain linear fit errors are reported).
    """

    p: float
    deltas: list
    measured_sup: list
    fitted_exponent: float
    fitted_constant: float
    holder_exponent_check: float
    profile_rel_error: float = float("nan")
    linear_rel_error: float = float("nan")
    degenerate: bool = False


def _rel_fit_error(data: np.ndarray, basis: np.ndarray) -> float:
    """RMS residual of the best one-coefficient fit, relative to the data."""
    denom = float(basis @ basis)
    if denom == 0:
        return float("nan")
    c = float(data @ basis) / denom
    res = data - c * basis
    return float(np.sqrt(res @ res) / np.sqrt(data @ data))


def verify_cauchy_estimates(f: Field, p: float, deltas=None) -> EstimateReport:
    """Measure sup|Tf| over nested sub-discs and regress the radius exponent.

    Requires a field on a disc grid; the sub-discs share the lattice, only
    the restriction mask shrinks.
    """
    if p <= 2:
        raise UnsupportedExponentError("estimates hold only for p > 2")
    g = f.grid
    if g.domain.get("kind") != "disc":
        raise InvalidInputError("estimate verification needs a disc grid")
    R = g.domain["radius"]
    center = complex(*g.domain["center"])
    if deltas is None:
        deltas = list(np.geomspace(R / 8, R * 0.999, 6))
    deltas = sorted(float(d) for d in deltas)
    if len(deltas) < 4:
        raise InvalidInputError("need at least 4 radius samples")
    z = g.coords()[0]
    rad = np.abs(z - center)
    sups = []
    norms = []
    for d in deltas:
        sub = (rad < d) & f.mask
        fd = Field(g, np.where(sub, f.values, 0), mask=f.mask)
        tf = cauchy_transform(fd)
        sups.append(float(np.abs(tf.values).max()))
        norms.append(lp_norm(f, p, region=sub) if p != np.inf
                     else lp_norm(f, np.inf, region=sub))
    sups = np.array(sups)
    norms = np.array(norms)
    if np.any(norms == 0) or np.any(sups == 0):
        return EstimateReport(
            p=p, deltas=deltas, measured_sup=[0.0] * len(deltas),
            fitted_exponent=float("nan"), fitted_constant=float("nan"),
            holder_exponent_check=0.0, degenerate=True,
        )
    ratio = sups / norms
    d_arr = np.array(deltas)
    if p == np.inf:
        profile = d_arr * (1.0 + np.abs(np.log(d_arr)))
        prof_err = _rel_fit_error(ratio, profile)
        lin_err = _rel_fit_error(ratio, d_arr)
        slope, intercept = np.polyfit(np.log(d_arr), np.log(ratio), 1)
        alpha_check = 1.0
        c_fit = float(ratio @ profile) / float(profile @ profile)
        exponent = float(slope)
    else:
        slope, intercept = np.polyfit(np.log(d_arr), np.log(ratio), 1)
        exponent = float(slope)
        c_fit = float(np.exp(intercept))
        prof_err = _rel_fit_error(ratio, d_arr ** (1.0 - 2.0 / p))
        lin_err = float("nan")
        alpha_check = 1.0 - 2.0 / p
    # Holder seminorm of Tf on the largest sub-disc, normalized by ||f||_p
    dmax = deltas[-1]
    sub = (rad < dmax) & f.mask
    fd = Field(g, np.where(sub, f.values, 0), mask=f.mask)
    tf = cauchy_transform(fd)
    tf_on = Field(g, tf.values[: g.shape[0], : g.shape[1]], mask=sub)
    hn = holder_norm(tf_on, min(alpha_check, 0.999)) / norms[-1]
    return EstimateReport(
        p=p,
        deltas=deltas,
        measured_sup=[float(x) for x in ratio],
        fitted_exponent=exponent,
        fitted_constant=c_fit,
        holder_exponent_check=float(hn),
        profile_rel_error=float(prof_err),
        linear_rel_error=float(lin_err),
        degenerate=False,
    )


# ---------------------------------------------------------------------------
# Beltrami solver


@dataclass
class BeltramiProblem:
    """Data for (1 + alpha S) h = g with |alpha| <= c0 < 1."""

    alpha: Field
    g: Field
    r: float = 2.0
    c0: float = dc_field(default=None)

    def __post_init__(self):
        if self.c0 is None:
            self.c0 = lp_norm(self.alpha, np.inf)


@dataclass
class BeltramiSolution:
    u_zbar: Field
    u: Field
    iterations: int
    ratio: float  # geometric-mean step contraction over the run
    residuals: list


def beltrami_solve(problem: BeltramiProblem, tol: float = 1e-10,
                   max_iter: int = 200) -> BeltramiSolution:
    """Neumann iteration h <- g - alpha S h for (1 + alpha S) h = g.

    Stops when the step (which equals the equation residual) drops below
    tol relative to ||g||.  u is recovered as T(u_zbar): for compactly
    supported data that is the unique solution decaying at infinity, and
    no further holomorphic correction is applied.
    """
    alpha, g = problem.alpha, problem.g
    if alpha.grid is not g.grid:
        raise InvalidInputError("alpha and g must share a grid")
    c0 = problem.c0
    if problem.r == 2.0:
        if c0 >= 1.0:
            raise NonContractiveError(f"sup|alpha| = {c0:.4f} >= 1")
    else:
        eps_r = beurling_norm_estimate(g.grid, problem.r)
        if c0 >= 1.0 / max(eps_r, 1e-12):
            raise NonContractiveError(
                f"sup|alpha| = {c0:.4f} >= 1/eps_r with measured eps_r = {eps_r:.4f}"
            )
    gv = g.values
    gnorm = lp_norm(g, 2)
    if gnorm == 0:
        zero = Field(g.grid, np.zeros_like(gv), mask=g.mask)
        return BeltramiSolution(zero, zero, 1, 0.0, [0.0])

    shape = g.grid.shape
    h = gv.copy()
    residuals = []
    prev_step = None
    for it in range(1, max_iter + 1):
        sh = beurling_transform(Field(g.grid, h, mask=g.mask))
        h_new = gv - alpha.values * sh.values[: shape[0], : shape[1]]
        h_new[~g.mask] = 0
        step = float(np.sqrt((np.abs(h_new - h) ** 2 * g.grid.weights()).sum()))
        residuals.append(step / gnorm)
        if step <= tol * gnorm:
            h = h_new
            break
        if prev_step is not None and step >= prev_step and step > 1e-6 * gnorm:
            raise DivergenceError(
                f"iteration stalled at step/||g|| = {step / gnorm:.3e}",
                history=residuals,
            )
        prev_step = step
        h = h_new
    else:
        raise DivergenceError(
            f"no convergence in {max_iter} iterations", history=residuals
        )
    if len(residuals) > 1 and residuals[0] > 0 and residuals[-1] > 0:
        ratio = float(
            (residuals[-1] / residuals[0]) ** (1.0 / (len(residuals) - 1))
        )
    else:
        ratio = 0.0
    u_zbar = Field(g.grid, h, mask=g.mask)
    u = cauchy_transform(u_zbar)
    u_on = Field(g.grid, u.values[: shape[0], : shape[1]], mask=g.mask)
    return BeltramiSolution(u_zbar, u_on, it, ratio, residuals)
