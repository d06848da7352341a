"""Integrating factors for d-bar equations df/dz-bar = A f.

A nonvanishing factor turns a continuous solution of the equation into a
holomorphic function: in the scalar case e^(-u) with u = T(A), in the
matrix case I + g with g the fixed point of

    g = -T((I + g) A),

which contracts in sup norm as soon as c * M * phi_p(delta) < 1/2 where
M bounds the entrywise L^p norms of A, phi_p(delta) = delta^(1 - 2/p)
(or delta (1 + |log delta|) for p = inf) and c is the transform's
operator constant on the working grid.  The constant is never assumed:
a calibration pass fits it from measured transform bounds and caches it
per grid and exponent.

The module also hosts the sharpness generator: a continuous field on
the half disc whose logarithmic-derivative coefficient lies in L^2 but
in no L^p with p > 2, with zeros accumulating at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    ContractionViolationError,
    DivergenceError,
    InvalidInputError,
    UnsupportedExponentError,
)
from .grid import ComplexGrid, Field, OneForm, lp_norm
from .transforms import cauchy_transform
from .zeroset import _Interp, _circle_winding, _newton_polish, _rounded


def _rounded_winding(interp, center, radius) -> int:
    return _rounded(_circle_winding(interp, center, radius))

__all__ = [
    "phi_p",
    "ContractionParams",
    "calibrate_transform_constant",
    "integrating_factor_scalar",
    "integrating_factor_matrix",
    "MatrixFactorResult",
    "ZeroReport",
    "check_isolated_zeros",
    "trivial_extension",
    "SliceBoundReport",
    "counterexample_field",
    "NormTable",
]

_ZERO_SET_REL = 1e-12  # cells with |f| below this share of max belong to f^{-1}(0)


def phi_p(p: float, delta: float) -> float:
    """Transform growth profile: delta^(1-2/p), log-corrected at p = inf."""
    if p == np.inf:
        return delta * (1.0 + abs(np.log(delta)))
    return delta ** (1.0 - 2.0 / p)


_CALIBRATION_CACHE: dict = {}


def _grid_key(grid: ComplexGrid):
    return (
        grid.domain.get("kind"),
        tuple(np.round(grid.spacing, 12)),
        grid.shape,
        str(grid.domain),
    )


def calibrate_transform_constant(grid: ComplexGrid, p: float, samples: int = 6) -> float:
    """Fitted constant c with sup|Ta| <= c * phi_p(delta) * ||a||_p on this grid.

    Seeded smooth samples; the max measured ratio is cached per (grid, p).
    These are empirical stand-ins for the existence-level constants, and
    are reported rather than claimed sharp.
    """
    key = (_grid_key(grid), p)
    if key in _CALIBRATION_CACHE:
        return _CALIBRATION_CACHE[key]
    if grid.domain.get("kind") != "disc":
        raise InvalidInputError("calibration expects a disc grid")
    delta = grid.domain["radius"]
    center = complex(*grid.domain["center"])
    z = grid.coords()[0]
    t = (z - center) / delta
    rng = np.random.default_rng(0xCA11B)
    best = 0.0
    for _ in range(samples):
        c = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        vals = (c[0] + c[1] * t + c[2] * np.conj(t)
                + c[3] * t * np.conj(t) + c[4] * t**2)
        a = Field(grid, vals)
        ta = cauchy_transform(a)
        sup = float(np.abs(ta.values).max())
        nrm = lp_norm(a, p)
        if nrm > 0:
            best = max(best, sup / (phi_p(p, delta) * nrm))
    _CALIBRATION_CACHE[key] = best
    return best


@dataclass
class ContractionParams:
    """Data controlling the fixed-point construction.

    Admissible iff c_pm * M * phi_p(delta) < 1/2; c_pm defaults to the
    calibrated scalar constant times the matrix dimension.
    """

    p: float
    delta: float
    M: float
    m: int = 1
    c_pm: float = None

    def __post_init__(self):
        if self.p <= 2:
            raise UnsupportedExponentError("contraction needs p > 2")
        if self.delta <= 0 or self.M < 0 or self.m < 1:
            raise InvalidInputError("bad contraction parameters")

    @property
    def phi(self) -> float:
        return phi_p(self.p, self.delta)

    def admissible(self) -> bool:
        if self.c_pm is None:
            raise InvalidInputError("c_pm not set; calibrate first")
        return self.c_pm * self.M * self.phi < 0.5

    @classmethod
    def calibrated(cls, grid: ComplexGrid, p: float, M: float, m: int = 1):
        c1 = calibrate_transform_constant(grid, p)
        delta = grid.domain["radius"]
        return cls(p=p, delta=delta, M=M, m=m, c_pm=m * c1)


# ---------------------------------------------------------------------------
# scalar and matrix factors


def _zero_set_mask(f: Field) -> np.ndarray:
    mag = np.abs(f.values)
    if not f.is_scalar:
        axes = tuple(range(len(f.grid.shape), mag.ndim))
        mag = np.sqrt((mag**2).sum(axis=axes))
    top = mag.max()
    return f.mask & (mag <= _ZERO_SET_REL * top)


def integrating_factor_scalar(f: Field, A: OneForm, params: ContractionParams):
    """Scalar factor e^(-u), u = T(A), with A zeroed on the zero set of f.

    Returns (u, F) with F = e^(-u) f; off the zero set dF/dz-bar is small
    whenever df/dz-bar = A f held for the input.
    """
    if params.p <= 2:
        raise UnsupportedExponentError("integrating factor needs p > 2")
    if f.grid.nvars != 1:
        raise InvalidInputError("scalar factor works on one complex variable")
    a = A.components[0]
    av = a.values.copy()
    av[_zero_set_mask(f)] = 0.0
    u_big = cauchy_transform(Field(f.grid, av, mask=a.mask))
    nx, ny = f.grid.shape
    u = Field(f.grid, u_big.values[:nx, :ny], mask=f.mask)
    F = Field(f.grid, np.exp(-u.values) * f.values, mask=f.mask)
    return u, F


@dataclass
class MatrixFactorResult:
    g: Field                 # (m, m) valued correction, I + g invertible
    F: Field                 # (I + g) f
    iterations: int
    ratio: float             # geometric-mean step contraction
    fixed_point_residual: float
    delta_used: float
    sup_bound: float         # 2 c_pm M phi_p(delta)


def _as_matrix_field(A, m: int) -> Field:
    if isinstance(A, OneForm):
        A = A.components[0]
    if A.is_scalar:
        if m != 1:
            raise InvalidInputError("scalar coefficient with matrix dimension > 1")
        return A.like(A.values.reshape(A.grid.shape + (1, 1)))
    if A.value_shape != (m, m):
        raise InvalidInputError(f"coefficient must be {m}x{m} valued")
    return A


def integrating_factor_matrix(f: Field, A, params: ContractionParams,
                              tol: float = 5e-9, max_iter: int = 200,
                              auto_shrink: bool = True) -> MatrixFactorResult:
    """Fixed point g of g + T((I+g)A) = 0 and the factored field (I+g)f.

    When the contraction bound fails and auto_shrink is set, the disc is
    halved (restriction to the concentric sub-disc) until admissible,
    mirroring the local nature of the construction; otherwise a
    contraction violation with the suggested radius is raised.
    """
    g = f.grid
    if g.nvars != 1:
        raise InvalidInputError("matrix factor works on one complex variable")
    m = params.m
    if params.c_pm is None:
        params.c_pm = m * calibrate_transform_constant(g, params.p)
    delta = params.delta
    work_mask = f.mask
    if not ContractionParams(params.p, delta, params.M, m, params.c_pm).admissible():
        suggestion = delta
        while suggestion > 0 and not ContractionParams(
            params.p, suggestion, params.M, m, params.c_pm
        ).admissible():
            suggestion /= 2.0
        if not auto_shrink:
            raise ContractionViolationError(
                f"c*M*phi = {params.c_pm * params.M * params.phi:.3f} >= 1/2; "
                f"try delta <= {suggestion:.4g}",
                suggested_delta=suggestion,
            )
        delta = suggestion
        center = complex(*g.domain["center"]) if g.domain.get("kind") == "disc" else 0
        z = g.coords()[0]
        work_mask = f.mask & (np.abs(z - center) < delta)
        if work_mask.sum() < 16:
            raise ContractionViolationError(
                "admissible radius below grid resolution", suggested_delta=delta
            )

    Af = _as_matrix_field(A, m)
    av = Af.values.copy()
    zs = _zero_set_mask(f)
    av[zs] = 0.0
    av[~work_mask] = 0.0
    eye = np.eye(m, dtype=np.complex128)
    nx, ny = g.shape

    gk = np.zeros(g.shape + (m, m), dtype=np.complex128)
    steps = []
    for it in range(1, max_iter + 1):
        prod = np.einsum("...ij,...jk->...ik", eye + gk, av)
        t = cauchy_transform(Field(g, prod, mask=work_mask))
        g_next = -t.values[:nx, :ny]
        g_next[~work_mask] = 0.0
        step = float(np.abs(g_next - gk).max())
        steps.append(step)
        gk = g_next
        if step <= tol:
            break
    else:
        raise DivergenceError(f"fixed point not reached in {max_iter} iterations",
                              history=steps)
    prod = np.einsum("...ij,...jk->...ik", eye + gk, av)
    t = cauchy_transform(Field(g, prod, mask=work_mask))
    residual = float(np.abs(gk + t.values[:nx, :ny])[work_mask].max())
    if len(steps) > 1 and steps[0] > 0 and steps[-1] > 0:
        ratio = float((steps[-1] / steps[0]) ** (1.0 / (len(steps) - 1)))
    else:
        ratio = 0.0
    if f.is_scalar:
        fv = f.values.reshape(g.shape + (1,))
    else:
        fv = f.values
    Fv = np.einsum("...ij,...j->...i", eye + gk, fv)
    if f.is_scalar:
        Fv = Fv.reshape(g.shape)
    bound = 2.0 * params.c_pm * params.M * phi_p(params.p, delta)
    return MatrixFactorResult(
        g=Field(g, gk, mask=work_mask),
        F=Field(g, Fv, mask=work_mask),
        iterations=it,
        ratio=ratio,
        fixed_point_residual=residual,
        delta_used=delta,
        sup_bound=bound,
    )


# ---------------------------------------------------------------------------
# zero-set verdicts


@dataclass
class ZeroReport:
    zero_locations: list
    multiplicities: list
    isolated: bool
    identically_zero: bool
    accumulation_flag: bool
    candidate_minima: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.identically_zero and self.zero_locations:
            raise InvalidInputError("identically zero excludes a nonempty zero list")
        if any(m < 1 for m in self.multiplicities):
            raise InvalidInputError("multiplicities must be at least 1")


def _local_minima(mag: np.ndarray, mask: np.ndarray) -> list:
    """Strict 8-neighborhood minima of |F| over masked cells.

    Unmasked neighbors count as +inf, so dips truncated by excluded
    singular cells still register as minima of the visible field.
    """
    work = np.where(mask, mag, np.inf)
    strict = mask.copy()
    strict[0, :] = strict[-1, :] = strict[:, 0] = strict[:, -1] = False
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            strict &= work < np.roll(np.roll(work, dx, 0), dy, 1)
    return [tuple(idx) for idx in np.argwhere(strict)]


def _accumulates(points: np.ndarray, spacing: float) -> bool:
    """Gap-contrast heuristic: nearest-neighbor chain with shrinking gaps.

    Walk the candidates greedily from the densest one; flag when the
    chain has at least five members and its small gaps are under half
    of its large gaps (spacings collapsing toward a cluster point).
    """
    if points.size < 5:
        return False
    pts = points.copy()
    d = np.abs(pts[:, None] - pts[None, :]) + np.diag([np.inf] * pts.size)
    start = int(np.argmin(d.min(axis=1)))
    order = [start]
    left = set(range(pts.size)) - {start}
    gaps = []
    cur = start
    while left:
        nxt = min(left, key=lambda j: abs(pts[j] - pts[cur]))
        gaps.append(abs(pts[nxt] - pts[cur]))
        left.remove(nxt)
        cur = nxt
        order.append(nxt)
    gaps = np.sort(np.array(gaps))
    small = np.median(gaps[:2])
    large = np.median(gaps[-2:])
    return bool(small <= 0.5 * large)


def check_isolated_zeros(f: Field, F: Field) -> ZeroReport:
    """Zeros of the factored field F by modulus minima plus winding.

    Candidates are strict local minima of |F|; each is confirmed by a
    small-circle winding count (the multiplicity).  Candidates whose
    winding is zero, as happens for real-signed fields that vanish
    without circulation, still feed the accumulation heuristic but are
    not listed as confirmed zeros.
    """
    if f.grid.nvars != 1:
        raise InvalidInputError("zero check works on one complex variable")
    mag = np.abs(F.values)
    scale = float(mag.max())
    if scale == 0.0:
        return ZeroReport([], [], isolated=False, identically_zero=True,
                          accumulation_flag=False)
    h = max(f.grid.spacing)
    z = f.grid.coords()[0]
    cand_idx = _local_minima(mag, F.mask)
    candidates = [complex(z[i, j]) for i, j in cand_idx]
    interp = _Interp(F)
    zeros = []
    mults = []
    for c in candidates:
        if abs(interp(np.array([c]))[0]) > 0.5 * scale:
            continue
        w = None
        for r in (3.5 * h, 5.0 * h, 2.5 * h):
            try:
                w = _rounded_winding(interp, c, r)
                break
            except Exception:
                continue
        if w is None or w < 1:
            continue
        loc = _newton_polish(interp, c) if w == 1 else c
        if any(abs(loc - zz) <= 2 * h for zz in zeros):
            continue
        zeros.append(loc)
        mults.append(int(w))
    if zeros:
        if len(zeros) == 1:
            isolated = True
        else:
            dd = min(
                abs(a - b) for i, a in enumerate(zeros) for b in zeros[i + 1:]
            )
            isolated = dd > 2 * h
    else:
        isolated = False
    accumulation = _accumulates(np.array(candidates), h) if candidates else False
    return ZeroReport(
        zero_locations=zeros,
        multiplicities=mults,
        isolated=isolated,
        identically_zero=False,
        accumulation_flag=accumulation,
        candidate_minima=candidates,
    )


# ---------------------------------------------------------------------------
# trivial extension with tube bounds


@dataclass
class SliceBoundReport:
    rows: list              # (axis, coordinate, eps, measured, bound, violated)
    any_violation: bool


def trivial_extension(f: Field, A: OneForm, p: float, M: float,
                      lines=None, eps_factors=(2, 4, 8)):
    """Extend A by zero across the zero set and check the tube bound.

    For lines parallel to the axis-j direction the component B_j must
    satisfy ||B_j||_{L^p(tube of sup-norm radius eps)} <= (pi eps^2)^(1/p) M
    in two variables; measured overshoots beyond 10 percent set the
    violation flag (reported, not raised).
    """
    g = f.grid
    if g.nvars != 2:
        raise InvalidInputError("tube bounds are a two-variable check")
    if p <= 1:
        raise UnsupportedExponentError("p must exceed 1")
    zs = _zero_set_mask(f)
    comps = []
    for c in A.components:
        v = c.values.copy()
        v[zs] = 0.0
        comps.append(Field(g, v, mask=c.mask))
    B = OneForm(tuple(comps))
    z1, z2 = g.coords()
    if lines is None:
        lines = []
        for axis in (1, 2):
            other = 1 - (axis - 1)
            c0 = complex(*_dom_center(g, other))
            r = g.domain["radii"][other] if g.domain.get("kind") == "polydisc" else 0.5
            for off in (0, 0.35 * r, -0.35 * r, 0.35j * r, -0.35j * r):
                lines.append((axis, c0 + off))
    h = max(g.spacing)
    rows = []
    any_bad = False
    for axis, coord in lines:
        other_var = 1 - (axis - 1)
        zo = z1 if other_var == 0 else z2
        comp = B.components[axis - 1]
        for kf in eps_factors:
            eps = kf * h
            tube = f.mask & (np.maximum(np.abs((zo - coord).real),
                                        np.abs((zo - coord).imag)) <= eps)
            measured = lp_norm(comp, p, region=tube & comp.mask)
            bound = (np.pi * eps**2) ** (1.0 / p) * M
            bad = measured > 1.1 * bound
            any_bad |= bad
            rows.append((axis, coord, eps, measured, bound, bool(bad)))
    return B, SliceBoundReport(rows=rows, any_violation=any_bad)


def _dom_center(g: ComplexGrid, var: int):
    if g.domain.get("kind") == "polydisc":
        c = g.domain["centers"][var]
        return c if isinstance(c, (list, tuple)) else [complex(c).real, complex(c).imag]
    ax = g.axes()
    return [(ax[2 * var][0] + ax[2 * var][-1]) / 2,
            (ax[2 * var + 1][0] + ax[2 * var + 1][-1]) / 2]


# ---------------------------------------------------------------------------
# sharpness generator


@dataclass
class NormTable:
    """Annulus norms ||a||_{L^p(rho < |z| < 1/2)}, rhos ascending.

    increments[i, j] is the |a|^p mass of the shell between rhos[j] and
    rhos[j+1] (the mass gained when rho drops one step); a Cauchy column
    has increments shrinking toward small rho, a divergent one growing.
    """

    ps: list
    rhos: list
    norms: np.ndarray       # (len(ps), len(rhos))
    increments: np.ndarray  # (len(ps), len(rhos) - 1)

    def monotone_growth(self, p: float) -> bool:
        """Norm strictly increases as rho decreases."""
        row = self.norms[self.ps.index(p)]
        return bool(np.all(np.diff(row) < 0))

    def cauchy_in_rho(self, p: float) -> bool:
        """Shell masses shrink toward rho -> 0 (differences tend to 0)."""
        inc = self.increments[self.ps.index(p)]
        return bool(np.all(np.diff(inc) > 0))


def counterexample_field(K: int, grid: ComplexGrid,
                         ps=(2, 3, 4), rhos=None):
    """Continuous field with log-derivative coefficient sharp at p = 2.

    f(z) = 1 / (log|z| * prod_k |log|z - a_k||^(1/k^2)), poles a_k = 1/(4k),
    truncated at K terms; the coefficient a of df/dz-bar = a f is sampled
    off singular cells.  The norm table integrates |a|^p over annuli
    rho < |z| < 1/2: the p = 2 column is Cauchy in rho while every p > 2
    column grows without bound as rho shrinks.
    """
    if K < 0:
        raise InvalidInputError("K must be nonnegative")
    if grid.nvars != 1:
        raise InvalidInputError("the generator lives on one complex variable")
    if rhos is None:
        rhos = [2.0 ** (-k) for k in range(3, 10)]
    rhos = sorted(float(r) for r in rhos)
    z = grid.coords()[0]
    h = max(grid.spacing)
    poles = [1.0 / (4 * (k + 1)) for k in range(K)]
    singular = np.abs(z) < 2 * h
    for a_k in poles:
        singular |= np.abs(z - a_k) < 2 * h
    ok = grid.mask & ~singular
    zf = z[ok]
    logz = np.log(np.abs(zf))
    log_prod = np.zeros(zf.shape)  # sum of log|log|z-a_k|| / k^2
    coeff = -1.0 / (2.0 * np.conj(zf) * logz)
    for k, a_k in enumerate(poles, start=1):
        w = zf - a_k
        lw = np.log(np.abs(w))
        log_prod += np.log(np.abs(lw)) / k**2
        coeff -= 1.0 / (2.0 * k**2 * np.conj(w) * lw)
    fvals = np.zeros(grid.shape, dtype=np.complex128)
    fvals[ok] = 1.0 / (logz * np.exp(log_prod))
    avals = np.zeros(grid.shape, dtype=np.complex128)
    avals[ok] = coeff
    f = Field(grid, fvals, mask=ok)
    a = OneForm((Field(grid, avals, mask=ok),))
    # annulus norms, rhos ascending: smaller rho means a larger annulus
    rad = np.abs(z)
    wts = grid.weights()
    norms = np.zeros((len(ps), len(rhos)))
    for i, p in enumerate(ps):
        mag_p = np.abs(avals) ** p
        for j, rho in enumerate(rhos):
            ann = ok & (rad > rho) & (rad < 0.5)
            norms[i, j] = float((mag_p[ann] * wts[ann]).sum()) ** (1.0 / p)
    masses = norms ** np.array(ps, dtype=float)[:, None]
    increments = masses[:, :-1] - masses[:, 1:]  # shell between rho_j, rho_{j+1}
    table = NormTable(ps=list(ps), rhos=rhos, norms=norms, increments=increments)
    return f, a, table
