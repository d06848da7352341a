"""Zero counting and zero-set geometry in one and two complex variables.

Zeros are counted by the argument principle: the winding number of f
over a contour equals the zero count inside, and it is invariant under
multiplication by nonvanishing factors like e^(z-bar), which is what
makes it usable for merely continuous solutions of d-bar inequalities.
Roots are isolated by recursive quadrisection on winding counts and
polished by Newton steps on a bicubic interpolant.

Two-variable machinery: per-slice root lists matched across the slice
lattice into graphs, a discriminant that vanishes where root clusters
collide, elementary-symmetric reconstruction of a monic polynomial with
those graphs as zero set, vertical-versus-euclidean distance comparison
for single graphs, and a cutoff pairing test that probes whether the
trivially extended logarithmic derivative is d-bar closed across the
graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.optimize import linear_sum_assignment

from .errors import (
    ContourThroughZeroError,
    DegenerateChartError,
    IndeterminateOrderError,
    InvalidInputError,
    ResolutionError,
)
from .grid import ComplexGrid, Field, OneForm
from .transforms import cauchy_transform, dbar

__all__ = [
    "ZeroChart",
    "VanishingOrder",
    "CutoffSpec",
    "winding_number",
    "count_zeros_slice",
    "track_zero_graphs",
    "vanishing_order",
    "discriminant_h",
    "weierstrass_reconstruct",
    "distance_comparison",
    "dbar_closedness_test",
    "continuous_nth_root",
    "root_factor_bounds",
]


# ---------------------------------------------------------------------------
# interpolation and contour winding


class _Interp:
    """Bicubic interpolant of a complex field over its full lattice."""

    def __init__(self, f: Field):
        if f.grid.nvars != 1:
            raise InvalidInputError("winding machinery works on 1-D complex grids")
        ax = f.grid.axes()
        kx = min(3, len(ax[0]) - 1)
        ky = min(3, len(ax[1]) - 1)
        self._re = RectBivariateSpline(ax[0], ax[1], f.values.real, kx=kx, ky=ky)
        self._im = RectBivariateSpline(ax[0], ax[1], f.values.imag, kx=kx, ky=ky)
        self.scale = float(np.abs(f.values).max()) or 1.0
        self.h = max(f.grid.spacing)
        self.bounds = (ax[0][0], ax[0][-1], ax[1][0], ax[1][-1])

    def __call__(self, z):
        z = np.asarray(z)
        return (self._re.ev(z.real, z.imag)
                + 1j * self._im.ev(z.real, z.imag)).reshape(z.shape)

    def jac(self, z):
        """d/dx and d/dy of the interpolant at z."""
        x, y = z.real, z.imag
        ux = self._re.ev(x, y, dx=1)
        uy = self._re.ev(x, y, dy=1)
        vx = self._im.ev(x, y, dx=1)
        vy = self._im.ev(x, y, dy=1)
        return ux, uy, vx, vy


def _phase_winding(w: np.ndarray, scale: float):
    # the interpolant floor near true zeros sits around 1e-7 of scale
    # (spline ringing), so the numerical-zero level is 1e-6
    mags = np.abs(w)
    if mags.min() <= 1e-6 * scale:
        raise ContourThroughZeroError("contour passes through a numerical zero")
    inc = np.angle(w[1:] / w[:-1])
    return float(inc.sum() / (2 * np.pi))


def _circle_winding(interp: _Interp, center: complex, radius: float) -> float:
    n = max(256, int(16 * radius / interp.h))
    th = np.linspace(0.0, 2 * np.pi, n + 1)
    z = center + radius * np.exp(1j * th)
    z[-1] = z[0]
    return _phase_winding(interp(z), interp.scale)


def _rect_winding(interp: _Interp, x0, x1, y0, y1) -> float:
    h = interp.h
    pts = []
    nx = max(8, int(4 * (x1 - x0) / h))
    ny = max(8, int(4 * (y1 - y0) / h))
    pts.append(x0 + np.linspace(x0, x1, nx, endpoint=False) - x0 + 1j * y0)
    pts.append(x1 + 1j * np.linspace(y0, y1, ny, endpoint=False))
    pts.append(np.linspace(x1, x0, nx, endpoint=False) + 1j * y1)
    pts.append(x0 + 1j * np.linspace(y1, y0, ny, endpoint=False))
    z = np.concatenate(pts + [np.array([x0 + 1j * y0])])
    return _phase_winding(interp(z), interp.scale)


def _rounded(value: float, slack: float = 0.1) -> int:
    n = int(np.rint(value))
    if abs(value - n) > slack:
        raise ResolutionError(
            f"winding increment {value:.3f} not within {slack} of an integer"
        )
    return n


def winding_number(f: Field, center: complex, radius: float) -> int:
    """Argument-principle count of zeros of f inside the circle.

    Pre: |f| exceeds 1e-9 of its max on the sampled circle.  The raw
    increment must land within 0.1 of an integer, else the grid cannot
    resolve the contour and a resolution error is raised.
    """
    interp = _Interp(f)
    return _rounded(_circle_winding(interp, complex(center), float(radius)))


# ---------------------------------------------------------------------------
# per-slice root isolation


def _best_split(interp: _Interp, lo, hi, other_lo, other_hi, vertical: bool):
    """Split coordinate near the middle that stays farthest from zeros."""
    mid = (lo + hi) / 2
    span = hi - lo
    candidates = mid + span * np.linspace(-0.18, 0.18, 9)
    t = np.linspace(other_lo, other_hi, 64)
    best, best_val = mid, -1.0
    for c in candidates:
        z = (c + 1j * t) if vertical else (t + 1j * c)
        m = float(np.abs(interp(z)).min())
        if m > best_val:
            best_val, best = m, c
    return best


def _subdivide(interp: _Interp, x0, x1, y0, y1, count, h, out, depth=0):
    if count == 0:
        return
    if max(x1 - x0, y1 - y0) <= 2 * h or depth > 40:
        cz = complex((x0 + x1) / 2, (y0 + y1) / 2)
        out.append((cz, count, x1 - x0))
        return
    xm = _best_split(interp, x0, x1, y0, y1, vertical=True)
    ym = _best_split(interp, y0, y1, x0, x1, vertical=False)
    quads = [
        (x0, xm, y0, ym),
        (xm, x1, y0, ym),
        (x0, xm, ym, y1),
        (xm, x1, ym, y1),
    ]
    counts = [_rounded(_rect_winding(interp, *q)) for q in quads]
    if sum(counts) != count:
        raise ResolutionError(
            f"winding additivity failed on a {x1 - x0:.3g} box"
        )
    for q, c in zip(quads, counts):
        _subdivide(interp, *q, c, h, out, depth + 1)


def _newton_polish(interp: _Interp, z0: complex, steps: int = 24) -> complex:
    z = z0
    for _ in range(steps):
        w = interp(np.array([z]))[0]
        ux, uy, vx, vy = interp.jac(np.array([z]))
        det = ux * vy - uy * vx
        if abs(det) < 1e-300:
            break
        dx = (w.real * vy - w.imag * uy) / det
        dy = (ux * w.imag - vx * w.real) / det
        step = complex(dx[0], dy[0])
        z = z - step
        if abs(step) < 1e-13 * max(1.0, abs(z)):
            break
    return z


def count_zeros_slice(f: Field, eps0: float):
    """Zeros of a 1-D field inside |z - center| < eps0, with multiplicity.

    The total N comes from the circle winding; roots are isolated by
    winding quadrisection down to cells of two grid spacings and simple
    roots are polished by Newton iteration on the interpolant.
    """
    g = f.grid
    if g.domain.get("kind") == "disc":
        center = complex(*g.domain["center"])
        reach = g.domain["radius"]
    else:
        ax = g.axes()
        center = complex((ax[0][0] + ax[0][-1]) / 2, (ax[1][0] + ax[1][-1]) / 2)
        reach = min(ax[0][-1] - ax[0][0], ax[1][-1] - ax[1][0]) / 2
    interp = _Interp(f)
    h = max(g.spacing)
    if eps0 * np.sqrt(2.0) > reach - 2 * h:
        raise ResolutionError(
            "grid must cover the square circumscribing the eps0 disc "
            f"(need extent >= {eps0 * np.sqrt(2.0) + 2 * h:.3f} around the center)"
        )
    N = None
    for attempt in range(5):
        r = eps0 + (0 if attempt == 0 else (-1) ** attempt * ((attempt + 1) // 2) * h)
        try:
            N = _rounded(_circle_winding(interp, center, r))
            break
        except ContourThroughZeroError:
            continue
    if N is None:
        raise ContourThroughZeroError(
            "zero on the counting circle even after radius jitter"
        )
    if N == 0:
        return 0, []
    # subdivide the circumscribing square with its own count; zeros in the
    # square but off the disc are filtered afterwards
    side = eps0 * 1.01
    box = (center.real - side, center.real + side,
           center.imag - side, center.imag + side)
    square_count = _rounded(_rect_winding(interp, *box))
    boxes: list = []
    _subdivide(interp, *box, square_count, h, boxes)
    roots = []
    total = 0
    for cz, mult, _size in boxes:
        if mult == 1:
            cz = _newton_polish(interp, cz)
        if abs(cz - center) <= eps0 + h:
            roots.append((cz, mult))
            total += mult
    if total != N:
        raise ResolutionError(
            f"isolated multiplicities sum to {total}, circle count is {N}"
        )
    roots.sort(key=lambda rm: (rm[0].real, rm[0].imag))
    return N, roots


# ---------------------------------------------------------------------------
# slice tracking over a two-variable grid


@dataclass
class ZeroChart:
    """Roots of the z2-slices of a C^2 field over the z1 lattice.

    roots[i, j, :] lists the N roots (counting multiplicity) of the slice
    at param_centers[i, j]; ordering is consistent with the matching
    sweep, so index g follows one graph where the matching allows it.
    """

    param_grid: ComplexGrid
    param_mask: np.ndarray
    roots: np.ndarray          # (n1x, n1y, N) complex
    eps0: float
    matchings: dict = dc_field(default_factory=dict)
    z2_spacing: float = None   # root-axis lattice step, for distinctness

    def __post_init__(self):
        if self.z2_spacing is None:
            self.z2_spacing = max(self.param_grid.spacing)

    @property
    def n_roots(self) -> int:
        return self.roots.shape[-1]

    def to_json(self) -> str:
        slices = []
        idx = np.argwhere(self.param_mask)
        for i, j in idx:
            slices.append({
                "index": [int(i), int(j)],
                "param": [self.param_centers[i, j].real,
                          self.param_centers[i, j].imag],
                "roots": [[r.real, r.imag] for r in self.roots[i, j]],
            })
        return json.dumps({
            "eps0": self.eps0,
            "n_roots": int(self.n_roots),
            "slices": slices,
            "matchings": {
                f"{a[0]},{a[1]}->{b[0]},{b[1]}": [list(map(int, p)) for p in pairs]
                for (a, b), pairs in self.matchings.items()
            },
        }, sort_keys=True)

    @property
    def param_centers(self) -> np.ndarray:
        return self.param_grid.coords()[0]


def track_zero_graphs(f: Field, eps0: float, param_radius: float | None = None) -> ZeroChart:
    """Match per-slice roots across the z1 lattice into graphs.

    Roots of adjacent slices are paired by minimal total displacement
    (optimal assignment, lexicographic tie-break), sweeping the lattice
    row-major.  Every slice must report the same total N.
    """
    g = f.grid
    if g.nvars != 2:
        raise InvalidInputError("track_zero_graphs expects a field over C^2")
    pgrid = g.var_axis_grid(0)
    centers = pgrid.coords()[0]
    c1 = complex(*_domain_center(g, 0))
    pmask = pgrid.mask.copy()
    if param_radius is not None:
        pmask &= np.abs(centers - c1) <= param_radius
    n1x, n1y = pmask.shape
    N = None
    roots = None
    matchings = {}
    order = [(i, j) for i in range(n1x) for j in range(n1y) if pmask[i, j]]
    done = np.zeros_like(pmask)
    for (i, j) in order:
        sub = Field(
            g.var_axis_grid(1),
            np.ascontiguousarray(f.values[i, j]),
            mask=np.ascontiguousarray(f.mask[i, j]),
        )
        try:
            n_slice, rm = count_zeros_slice(sub, eps0)
        except (ContourThroughZeroError, ResolutionError) as exc:
            raise type(exc)(f"slice ({i},{j}) at z1={centers[i, j]}: {exc}")
        expanded = []
        for r, m in rm:
            expanded.extend([r] * m)
        if N is None:
            N = n_slice
            roots = np.zeros((n1x, n1y, N), dtype=np.complex128)
        if n_slice != N:
            raise InvalidInputError(
                f"slice ({i},{j}) at z1={centers[i, j]} has N={n_slice}, expected {N}"
            )
        cur = np.array(sorted(expanded, key=lambda z: (z.real, z.imag)))
        ref = None
        ref_idx = None
        if j > 0 and done[i, j - 1]:
            ref_idx = (i, j - 1)
        elif i > 0 and done[i - 1, j]:
            ref_idx = (i - 1, j)
        if ref_idx is not None:
            ref = roots[ref_idx]
            cost = np.abs(ref[:, None] - cur[None, :])
            rr, cc = linear_sum_assignment(cost)
            perm = np.empty(N, dtype=int)
            perm[rr] = cc
            cur = cur[perm]
            matchings[(ref_idx, (i, j))] = [(int(a), int(b)) for a, b in zip(rr, perm[rr])]
        roots[i, j] = cur
        done[i, j] = True
    if N is None:
        raise InvalidInputError("no slices selected")
    return ZeroChart(param_grid=_with_mask(pgrid, pmask), param_mask=pmask,
                     roots=roots, eps0=eps0, matchings=matchings,
                     z2_spacing=max(g.spacing[2], g.spacing[3]))


def _domain_center(g: ComplexGrid, var: int):
    kind = g.domain.get("kind")
    if kind == "polydisc":
        c = g.domain["centers"][var]
        return c if isinstance(c, (list, tuple)) else [complex(c).real, complex(c).imag]
    ax = g.axes()
    return [(ax[2 * var][0] + ax[2 * var][-1]) / 2,
            (ax[2 * var + 1][0] + ax[2 * var + 1][-1]) / 2]


def _with_mask(g: ComplexGrid, mask: np.ndarray) -> ComplexGrid:
    out = ComplexGrid(
        origin=g.origin, spacing=g.spacing, shape=g.shape,
        mask=mask, domain=g.domain,
    )
    return out


# ---------------------------------------------------------------------------
# vanishing order


@dataclass
class VanishingOrder:
    point: tuple
    per_axis_order: tuple     # int or inf per complex axis
    n_p: float                # min over axes; inf only if all restrictions vanish

    @property
    def is_infinite(self) -> bool:
        return not np.isfinite(self.n_p)


def _slice_through(f: Field, axis: int, point):
    """1-D field along `axis` through the lattice cell nearest to `point`."""
    g = f.grid
    fixed = 1 - (axis - 1)
    ax = g.axes()
    xs, ys = ax[2 * fixed], ax[2 * fixed + 1]
    coord = point[fixed]
    ix = int(np.argmin(np.abs(xs - coord.real)))
    iy = int(np.argmin(np.abs(ys - coord.imag)))
    sel = (ix, iy, slice(None), slice(None)) if fixed == 0 else (
        slice(None), slice(None), ix, iy)
    sub = g.var_axis_grid(axis - 1)
    return Field(sub, np.ascontiguousarray(f.values[sel]),
                 mask=np.ascontiguousarray(f.mask[sel]))


def _corrected_slice(sub: Field) -> Field:
    """Divide out the integrating factor of the slice's own coefficient.

    a = dbar(g)/g off the zero set, u = T(a), F = exp(-u) g; for inputs
    like exp(conj z) * (holomorphic) this strips the nonholomorphic
    factor so the log-slope regression sees clean vanishing orders.
    """
    mx = np.abs(sub.values).max()
    if mx == 0:
        return sub
    df = dbar(sub).components[0].values
    safe = np.abs(sub.values) > 1e-6 * mx
    a = np.where(safe, df / np.where(safe, sub.values, 1.0), 0.0)
    u = cauchy_transform(Field(sub.grid, a, mask=sub.mask))
    uv = u.values[: sub.grid.shape[0], : sub.grid.shape[1]]
    return Field(sub.grid, np.exp(-uv) * sub.values, mask=sub.mask)


def vanishing_order(f: Field, point) -> VanishingOrder:
    """Order of vanishing of f at a lattice point, per coordinate line.

    Per axis the restriction is corrected by its 1-D integrating factor
    and log|F| is regressed against log t along rays from the point; the
    order is the rounded slope (deviation beyond 0.25 raises).  The
    order is infinite when the restriction vanishes identically.
    """
    g = f.grid
    if g.nvars != 2:
        raise InvalidInputError("vanishing_order expects a field over C^2")
    point = tuple(complex(p) for p in point)
    gmax = np.abs(f.values).max()
    orders = []
    for axis in (1, 2):
        sub = _slice_through(f, axis, point)
        if np.abs(sub.values).max() <= 1e-12 * max(gmax, 1e-300):
            orders.append(np.inf)
            continue
        F = _corrected_slice(sub)
        interp = _Interp(F)
        h = max(sub.grid.spacing)
        p0 = point[axis - 1]
        lo, hi = 3 * h, min(0.35 * _extent(sub.grid), 30 * h)
        if hi <= lo:
            raise ResolutionError("grid too coarse for slope regression")
        ts = np.geomspace(lo, hi, 10)
        slopes = []
        for th in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            z = p0 + ts * np.exp(1j * th)
            vals = np.abs(interp(z))
            good = vals > 1e-14 * interp.scale
            if good.sum() < 4:
                continue
            slope = np.polyfit(np.log(ts[good]), np.log(vals[good]), 1)[0]
            slopes.append(slope)
        if not slopes:
            orders.append(np.inf)
            continue
        med = float(np.median(slopes))
        n = int(np.rint(med))
        if abs(med - n) > 0.25:
            raise IndeterminateOrderError(
                f"axis {axis}: slope {med:.3f} not within 0.25 of an integer"
            )
        orders.append(max(n, 0))
    finite = [o for o in orders if np.isfinite(o)]
    n_p = float(min(finite)) if finite else np.inf
    return VanishingOrder(point=point, per_axis_order=tuple(orders), n_p=n_p)


def _extent(g: ComplexGrid) -> float:
    ax = g.axes()
    return min(ax[0][-1] - ax[0][0], ax[1][-1] - ax[1][0])


# ---------------------------------------------------------------------------
# discriminant and reconstruction


def _distinct_reps(roots_slice: np.ndarray, tol: float):
    """Greedy clustering of a slice's roots; returns cluster means."""
    reps: list = []
    counts: list = []
    for r in roots_slice:
        for idx, rep in enumerate(reps):
            if abs(r - rep) <= tol:
                counts[idx] += 1
                reps[idx] = rep + (r - rep) / counts[idx]
                break
        else:
            reps.append(r)
            counts.append(1)
    return reps, counts


def _z2_spacing(chart: ZeroChart) -> float:
    return chart.z2_spacing


def discriminant_h(chart: ZeroChart, distinct_tol: float | None = None) -> Field:
    """Product of ordered differences of the k distinct root representatives.

    k is the maximal distinct-root count over slices (distinctness at
    4 lattice spacings); slices with fewer than k distinct roots get 0.
    A single-graph chart has the empty product, identically 1.
    """
    tol = 4 * _z2_spacing(chart) if distinct_tol is None else distinct_tol
    pm = chart.param_mask
    reps_all = {}
    k = 0
    for i, j in np.argwhere(pm):
        reps, _ = _distinct_reps(chart.roots[i, j], tol)
        reps_all[(i, j)] = reps
        k = max(k, len(reps))
    vals = np.zeros(pm.shape, dtype=np.complex128)
    for (i, j), reps in reps_all.items():
        if len(reps) < k:
            vals[i, j] = 0.0
        else:
            prod = 1.0 + 0j
            for a in range(k):
                for b in range(k):
                    if a != b:
                        prod *= reps[a] - reps[b]
            vals[i, j] = prod
    return Field(chart.param_grid, vals, mask=pm)


@dataclass
class WeierstrassResult:
    coefficients: list          # e_1..e_k as fields over the z1 lattice
    dbar_residuals: list        # max |dbar e_j| over the interior, per j
    k: int
    valid_mask: np.ndarray      # slices with the full k distinct roots

    def evaluate(self, z1: complex, z2) -> np.ndarray:
        """P(z1, z2) using the nearest valid slice's representatives."""
        centers = self._centers
        d = np.abs(centers - z1)
        d[~self.valid_mask] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        z2 = np.asarray(z2, dtype=np.complex128)
        out = np.ones_like(z2)
        for r in self._reps[(i, j)]:
            out = out * (z2 - r)
        return out

    _centers: np.ndarray = None
    _reps: dict = None


def weierstrass_reconstruct(chart: ZeroChart, distinct_tol: float | None = None) -> WeierstrassResult:
    """Elementary symmetric functions of the distinct root representatives.

    P(z2) = z2^k - e1 z2^(k-1) + e2 z2^(k-2) - ...; each e_j is reported
    as a field over the z1 lattice masked to slices where all k distinct
    roots exist, together with the max discrete d-bar residual of e_j as
    holomorphy evidence.
    """
    tol = 4 * _z2_spacing(chart) if distinct_tol is None else distinct_tol
    pm = chart.param_mask
    reps_all = {}
    k = 0
    for i, j in np.argwhere(pm):
        reps, _ = _distinct_reps(chart.roots[i, j], tol)
        reps_all[(i, j)] = reps
        k = max(k, len(reps))
    if k == 0:
        raise DegenerateChartError("chart holds no roots")
    valid = np.zeros(pm.shape, dtype=bool)
    coeffs = [np.zeros(pm.shape, dtype=np.complex128) for _ in range(k)]
    for (i, j), reps in reps_all.items():
        if len(reps) < k:
            continue
        valid[i, j] = True
        poly = np.poly(np.array(reps))  # [1, c1, ..., ck], cj = (-1)^j e_j
        for m in range(1, k + 1):
            coeffs[m - 1][i, j] = (-1) ** m * poly[m]
    if not valid.any():
        raise DegenerateChartError("no slice carries the full distinct root count")
    fields = [Field(chart.param_grid, c, mask=valid) for c in coeffs]
    residuals = []
    for fld in fields:
        form = dbar(fld)
        interior = valid & ~form.onesided_mask
        res = np.abs(form.components[0].values)[interior]
        residuals.append(float(res.max()) if res.size else 0.0)
    out = WeierstrassResult(
        coefficients=fields, dbar_residuals=residuals, k=k, valid_mask=valid,
    )
    out._centers = chart.param_centers
    out._reps = reps_all
    return out


# ---------------------------------------------------------------------------
# distance comparison (single graph)


def distance_comparison(f: Field, chart: ZeroChart, chunk: int = 64):
    """Euclidean versus vertical distance to a single-root graph.

    d(z) is the distance to the sampled graph point set, d_v(z) the
    vertical displacement |z2 - r(z1)|; c1 = max d_v/d over masked cells
    with d above two lattice spacings.  d <= d_v holds cell for cell
    because the vertical candidate is one of the sampled points.
    """
    if chart.n_roots != 1:
        raise InvalidInputError("distance comparison needs a single-graph chart")
    g = f.grid
    if g.nvars != 2:
        raise InvalidInputError("distance comparison expects a field over C^2")
    z1, z2 = g.coords()
    pm = chart.param_mask
    pw = chart.param_centers[pm]
    pr = chart.roots[..., 0][pm]
    rmap = np.zeros(pm.shape, dtype=np.complex128)
    rmap[pm] = pr
    # vertical distance uses the cell's own slice when charted
    dvc = np.abs(z2 - rmap[:, :, None, None])
    charted = pm[:, :, None, None] & np.ones(g.shape, dtype=bool)
    dv = np.where(charted, dvc, np.nan)
    # flattened running minimum over the sampled graph points
    a1, b1 = z1.real.ravel(), z1.imag.ravel()
    a2, b2 = z2.real.ravel(), z2.imag.ravel()
    d2 = np.full(a1.shape, np.inf)
    for w, r in zip(pw, pr):
        q = (a1 - w.real) ** 2 + (b1 - w.imag) ** 2
        q += (a2 - r.real) ** 2 + (b2 - r.imag) ** 2
        np.minimum(d2, q, out=d2)
    d = np.sqrt(d2).reshape(g.shape)
    hmax = 2 * max(g.spacing)
    sel = f.mask & charted & (d > hmax)
    c1 = float((dv[sel] / d[sel]).max()) if np.any(sel) else float("nan")
    d_f = Field(g, d.astype(np.complex128), mask=f.mask)
    dv_f = Field(g, np.where(np.isnan(dv), 0, dv).astype(np.complex128),
                 mask=f.mask & charted)
    return d_f, dv_f, c1


# ---------------------------------------------------------------------------
# cutoff pairing test


def _ramp_profile(t: np.ndarray) -> np.ndarray:
    """Smooth profile: 0 below 1/4, 1 above 1, slope bounded by 5/3.

    Integral of a smoothed trapezoid over [1/4, 1]; the plateau keeps the
    maximal slope at 1/(0.6) * ramp shape <= 5/3, inside the |chi'| < 2
    requirement.
    """
    t = np.asarray(t, dtype=float)
    a, w = 0.25, 0.15  # ramp start and smoothing width; plateau to 1 - w

    def S(u):  # integral of the cubic smoothstep 3u^2 - 2u^3
        u = np.clip(u, 0.0, 1.0)
        return u**3 - 0.5 * u**4

    # psi rises on [a, a+w], is 1 on [a+w, 1-w], falls on [1-w, 1]
    mass = w * 0.5 + (1 - w - (a + w)) + w * 0.5
    up = w * S((t - a) / w)
    mid = np.clip(t - (a + w), 0.0, 1 - w - (a + w))
    down = w * (0.5 - S((1 - t) / w))
    down = np.where(t > 1 - w, down, 0.0)
    val = (up + mid + down) / mass
    return np.clip(val, 0.0, 1.0)


@dataclass
class CutoffSpec:
    """Graph-collar cutoff chi(d/eps) with the profile above."""

    eps: float

    def values(self, dist: np.ndarray) -> np.ndarray:
        if self.eps <= 0:
            raise InvalidInputError("eps must be positive")
        return _ramp_profile(np.asarray(dist) / self.eps)


@dataclass
class DecayReport:
    eps: list
    pairings: np.ndarray        # (seeds, eps)
    fitted_exponent: float
    per_seed_pass: list
    passed: bool


def _test_form(grid2, seed: int):
    """Seeded smooth bump times polynomial supported in the 1/4 polydisc.

    Returns phi and its analytic conjugate derivatives (no stencils).
    """
    rng = np.random.default_rng(seed)
    z1, z2 = grid2.coords()
    c1 = (rng.uniform(-0.05, 0.05) + 1j * rng.uniform(-0.05, 0.05))
    c2 = (rng.uniform(-0.05, 0.05) + 1j * rng.uniform(-0.05, 0.05))
    rho = 0.16
    s = (np.abs(z1 - c1) ** 2 + np.abs(z2 - c2) ** 2) / rho**2
    inside = s < 1.0
    bump = np.zeros_like(s)
    bump[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    dbump_ds = np.zeros_like(s)
    dbump_ds[inside] = -bump[inside] / (1.0 - s[inside]) ** 2
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    poly = a[0] + a[1] * z1 + a[2] * z2
    phi = bump * poly
    # conjugate derivatives: poly is holomorphic, only the bump contributes
    d1 = poly * dbump_ds * (z1 - c1) / rho**2
    d2 = poly * dbump_ds * (z2 - c2) / rho**2
    return phi, d1, d2


def dbar_closedness_test(B: OneForm, chart: ZeroChart, eps_seq,
                         phi_seeds: int = 3) -> DecayReport:
    """Pairing |int chi_eps B ^ dbar(phi)| against shrinking collars.

    The cutoff excises a collar around the graph measured in vertical
    distance (comparable to euclidean distance by c1).  For a d-bar
    closed extension the pairing must decay as the collar shrinks; the
    verdict requires a monotone drop to a tenth of the first value for
    every seeded test form.  eps values must stay above four vertical
    lattice spacings and decrease.
    """
    g = B.grid
    if g.nvars != 2:
        raise InvalidInputError("pairing test expects forms over C^2")
    eps_seq = sorted((float(e) for e in eps_seq), reverse=True)
    hz2 = max(g.spacing[2], g.spacing[3])
    if eps_seq[-1] < 4 * hz2:
        raise ResolutionError(
            f"smallest eps {eps_seq[-1]} below 4 vertical spacings ({4 * hz2})"
        )
    if chart.n_roots != 1:
        raise InvalidInputError("pairing test needs a single-graph chart")
    z1, z2 = g.coords()
    pm = chart.param_mask
    if pm.shape != g.shape[:2]:
        raise InvalidInputError(
            "chart parameter lattice must match the form's z1 lattice"
        )
    rmap = np.zeros(pm.shape, dtype=np.complex128)
    rmap[pm] = chart.roots[..., 0][pm]
    dv = np.abs(z2 - rmap[:, :, None, None])
    w = g.weights()
    b1 = B.components[0].values
    b2 = B.components[1].values
    pairings = np.zeros((phi_seeds, len(eps_seq)))
    for s in range(phi_seeds):
        _, d1, d2 = _test_form(g, seed=s + 1)
        integrand = 4.0 * (b1 * d2 - b2 * d1) * w
        for k, eps in enumerate(eps_seq):
            chi = CutoffSpec(eps).values(dv)
            pairings[s, k] = abs((integrand * chi).sum())
    exps = []
    per_seed = []
    for s in range(phi_seeds):
        p = pairings[s]
        ok = bool(np.all(np.diff(p) <= 1e-14 + p[:-1] * 1.05)
                  and p[-1] <= 0.1 * p[0] + 1e-300)
        dec = bool(np.all(p[1:] <= p[:-1] * 1.001 + 1e-300))
        per_seed.append(ok and dec)
        good = p > 0
        if good.sum() >= 2:
            exps.append(np.polyfit(np.log(np.array(eps_seq)[good]),
                                   np.log(p[good]), 1)[0])
    return DecayReport(
        eps=list(eps_seq),
        pairings=pairings,
        fitted_exponent=float(np.median(exps)) if exps else float("nan"),
        per_seed_pass=per_seed,
        passed=all(per_seed),
    )


# ---------------------------------------------------------------------------
# continuous roots and factor bounds


def continuous_nth_root(f: Field, N: int, eps0: float) -> Field:
    """Slice-coherent N-th root via phase unwrapping from a fixed anchor.

    Each z2-slice is unwrapped from the anchor point z2 = eps0/2 (real
    axis); anchors are unwrapped across the z1 lattice first, so the
    root agrees with one continuous branch over the whole chart.
    """
    g = f.grid
    if g.nvars != 2:
        raise InvalidInputError("continuous_nth_root expects a field over C^2")
    if N < 1:
        raise InvalidInputError("N must be a positive integer")
    ax2 = g.axes()[2]
    ax3 = g.axes()[3]
    ai = int(np.argmin(np.abs(ax2 - eps0 / 2)))
    aj = int(np.argmin(np.abs(ax3 - 0.0)))
    theta = np.angle(f.values)
    mag = np.abs(f.values)
    # the anchor must avoid zeros of f on every slice; walk it outward if not
    floor0 = 1e-6 * float(mag.max())
    for shift in range(0, ax2.size - ai):
        if mag[:, :, ai + shift, aj].min() > floor0:
            ai += shift
            break
    else:
        raise InvalidInputError("no zero-free anchor column for the root")
    # unwrap anchor phases across the z1 lattice, row-major
    anchor = theta[:, :, ai, aj].copy()
    n1x, n1y = anchor.shape
    for i in range(n1x):
        for j in range(n1y):
            if i == 0 and j == 0:
                continue
            ref = anchor[i, j - 1] if j > 0 else anchor[i - 1, j]
            k = np.rint((ref - anchor[i, j]) / (2 * np.pi))
            anchor[i, j] += 2 * np.pi * k
    out = np.zeros_like(f.values)
    scale = float(mag.max())
    for i in range(n1x):
        for j in range(n1y):
            th = _unwrap_slice(theta[i, j], (ai, aj), anchor[i, j],
                               mag[i, j], 1e-6 * scale)
            out[i, j] = mag[i, j] ** (1.0 / N) * np.exp(1j * th / N)
    return Field(g, out, mask=f.mask)


def _unwrap_slice(theta: np.ndarray, anchor_idx, anchor_val: float,
                  mag: np.ndarray, floor: float) -> np.ndarray:
    """BFS unwrap over the 4-neighbor lattice starting at the anchor.

    Cells with modulus below the floor carry unreliable phases; the main
    sweep routes around them and they are patched afterwards from their
    unwrapped neighbors (their root values are tiny anyway).
    """
    from collections import deque

    nx, ny = theta.shape
    out = theta.copy()
    k0 = np.rint((anchor_val - out[anchor_idx]) / (2 * np.pi))
    out[anchor_idx] += 2 * np.pi * k0
    seen = np.zeros(theta.shape, dtype=bool)
    seen[anchor_idx] = True
    solid = mag > floor
    q = deque([anchor_idx])
    while q:
        i, j = q.popleft()
        for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= a < nx and 0 <= b < ny and not seen[a, b] and solid[a, b]:
                k = np.rint((out[i, j] - out[a, b]) / (2 * np.pi))
                out[a, b] += 2 * np.pi * k
                seen[a, b] = True
                q.append((a, b))
    # patch the low-modulus cells from any unwrapped neighbor
    remaining = deque(map(tuple, np.argwhere(~seen)))
    guard = 0
    while remaining and guard < 4 * nx * ny:
        i, j = remaining.popleft()
        guard += 1
        for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= a < nx and 0 <= b < ny and seen[a, b]:
                k = np.rint((out[a, b] - out[i, j]) / (2 * np.pi))
                out[i, j] += 2 * np.pi * k
                seen[i, j] = True
                break
        else:
            remaining.append((i, j))
    return out


def root_factor_bounds(f: Field, chart: ZeroChart, collar: float | None = None):
    """Bounds of v and 1/v for f = (z2 - r(z1)) v on a single-graph chart.

    Measured on cells with vertical distance above the collar (default
    four lattice spacings); continuity of v is not asserted, only the
    sampled boundedness of v and 1/v.
    """
    if chart.n_roots != 1:
        raise InvalidInputError("factor bounds need a single-graph chart")
    g = f.grid
    z1, z2 = g.coords()
    pm = chart.param_mask
    rmap = np.zeros(pm.shape, dtype=np.complex128)
    rmap[pm] = chart.roots[..., 0][pm]
    dv = np.abs(z2 - rmap[:, :, None, None])
    cw = 4 * max(g.spacing) if collar is None else collar
    sel = f.mask & pm[:, :, None, None] & (dv > cw)
    denom = z2 - rmap[:, :, None, None]
    v = np.where(sel, f.values / np.where(sel, denom, 1.0), 0.0)
    mags = np.abs(v[sel])
    if mags.size == 0:
        raise InvalidInputError("no cells outside the collar")
    return float(mags.max()), float(1.0 / mags.min())
