"""Local polynomial fit of the second-moment surface from pair products.

For curves observed as Y_ij = X_i(T_ij) + U_ij, the off-diagonal products
Y_ij * Y_ik (k != j) have conditional mean G(T_ij, T_ik) = E[X(s)X(t)]:
measurement noise cancels because U_ij and U_ik are independent.  Products
with j = k would instead target G(t, t) + rho^2, so the raw scatter used
here excludes them; that exclusion is the entire trick for separating the
surface from the noise floor.

Both orientations of each pair enter the design, making the scatter
symmetric about the diagonal.  A degree-1 fit in raw centred monomials
returns the surface value and both first partials directly.  Diagonal
quantities combine the two partials, D'(t) = d/dt G(t,t), evaluated a hair
inside the triangle to keep the arithmetic one-sided.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EstimationFailedError,
    SingularFitError,
    SparseWindowError,
    ValidationError,
)
from .kernels import EPANECHNIKOV, KernelSpec
from .meanfit import MAX_WIDEN, WIDEN_FACTOR, fit_mean_at, solve_wls
from .observe import SparseObservations

# diagonal evaluation offset, as a fraction of the bandwidth
DIAG_EPS_FACTOR = 1e-3


@dataclass(frozen=True)
class PairScatter:
    """Flattened product scatter: response p at design point (u, v)."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    includes_diagonal: bool = False

    @property
    def size(self) -> int:
        return self.u.size


def pair_scatter(obs: SparseObservations, include_diagonal: bool = False) -> PairScatter:
    """All ordered within-curve pairs; j = k products only on request."""
    us, vs, ps = [], [], []
    for sl in obs.curve_slices():
        T = obs.t[sl]
        Y = obs.y[sl]
        r = T.size
        uu = np.repeat(T, r)
        vv = np.tile(T, r)
        pp = np.repeat(Y, r) * np.tile(Y, r)
        if not include_diagonal:
            keep = np.repeat(np.arange(r), r) != np.tile(np.arange(r), r)
            uu, vv, pp = uu[keep], vv[keep], pp[keep]
        us.append(uu)
        vs.append(vv)
        ps.append(pp)
    return PairScatter(
        u=np.concatenate(us),
        v=np.concatenate(vs),
        p=np.concatenate(ps),
        includes_diagonal=include_diagonal,
    )


def _monomial_exponents(d: int) -> list[tuple[int, int]]:
    return [(p, q) for total in range(d + 1) for p in range(total, -1, -1) for q in [total - p]]


@dataclass
class CovEstimate:
    """Surface fit over the upper triangle of an evaluation grid.

    Square arrays are indexed [i, j] for the pair (eval_times[i],
    eval_times[j]) with i <= j; the lower triangle holds NaN.  Diagonal
    arrays carry D_hat and its derivative along the diagonal.
    """

    eval_times: np.ndarray
    G2: np.ndarray
    ds2: np.ndarray
    dt2: np.ndarray
    pair_flags: np.ndarray  # bool, True = failed fit
    D_hat: np.ndarray
    dD_hat: np.ndarray
    diag_flags: np.ndarray
    degree: int
    bandwidth: float
    kernel: KernelSpec
    eps_diag: float


def default_bandwidth_cov(obs: SparseObservations, d: int = 1) -> float:
    """Surface bandwidth c * (n * rbar^2)^(-1/(2d+4)), clamped like the mean rule."""
    counts = obs.counts()
    n = counts.size
    rbar = float(counts.mean())
    t_sorted = np.sort(obs.t)
    rng = float(t_sorted[-1] - t_sorted[0])
    if rng <= 0:
        raise ValidationError("design has zero time range")
    h = 0.5 * rng * (n * rbar**2) ** (-1.0 / (2 * d + 4))
    gaps = np.diff(t_sorted)
    gaps = gaps[gaps > 0]
    lo = 3.0 * float(np.median(gaps)) if gaps.size else 0.0
    return min(max(h, lo), 0.5)


def fit_cov_at(
    scatter: PairScatter,
    s: float,
    t: float,
    d: int = 1,
    h_G: float | None = None,
    kernel: KernelSpec = EPANECHNIKOV,
) -> tuple[float, float, float]:
    """Surface fit at one point; returns (G_hat, dsG_hat, dtG_hat).

    Product-kernel weights with a common bandwidth in both directions; the
    window widens by 1.5x (at most five times) when it holds fewer usable
    pairs than the monomial basis has columns.
    """
    if d < 1:
        raise ValidationError("need degree >= 1 for surface derivatives")
    if h_G is None:
        raise ValidationError("h_G is required at this level")
    if h_G <= 0:
        raise ValidationError("bandwidth must be positive")
    expo = _monomial_exponents(d)
    ncols = len(expo)
    u, v, p = scatter.u, scatter.v, scatter.p
    h = float(h_G)
    for _ in range(MAX_WIDEN + 1):
        a = (u - s) / h
        b = (v - t) / h
        w = kernel.values(a) * kernel.values(b) / (h * h)
        active = np.flatnonzero(w > 0)
        if active.size >= ncols:
            aa = a[active]
            bb = b[active]
            basis = np.empty((active.size, ncols))
            for col, (pe, qe) in enumerate(expo):
                basis[:, col] = aa**pe * bb**qe
            try:
                beta, _ = solve_wls(basis, w[active], p[active])
            except SingularFitError:
                pass
            else:
                return float(beta[0]), float(beta[1] / h), float(beta[2] / h)
        h *= WIDEN_FACTOR
    raise SparseWindowError((s, t))


def fit_diag(
    scatter: PairScatter,
    t: float,
    d: int = 1,
    h_G: float | None = None,
    kernel: KernelSpec = EPANECHNIKOV,
) -> tuple[float, float]:
    """Diagonal level and derivative: (D_hat(t), dD_hat(t)).

    The level is the surface fit at (t, t).  The derivative combines both
    first partials, dD = dsG + dtG, evaluated at (t - eps, t + eps) with
    eps = 1e-3 * h_G, a hair inside the triangle.
    """
    if h_G is None or h_G <= 0:
        raise ValidationError("need a positive h_G")
    eps = DIAG_EPS_FACTOR * h_G
    lo = max(t - eps, 0.0)
    hi = min(t + eps, 1.0)
    D, _, _ = fit_cov_at(scatter, t, t, d, h_G, kernel)
    _, dsG, dtG = fit_cov_at(scatter, lo, hi, d, h_G, kernel)
    return D, dsG + dtG


def fit_cov_grid(
    obs: SparseObservations,
    eval_times: np.ndarray,
    d: int = 1,
    h_G: float | None = None,
    kernel: KernelSpec = EPANECHNIKOV,
    max_flagged_frac: float = 0.2,
    scatter: PairScatter | None = None,
) -> CovEstimate:
    """Fit the surface on every grid pair s <= t plus the diagonal arrays."""
    eval_times = np.asarray(eval_times, dtype=float)
    if h_G is None:
        h_G = default_bandwidth_cov(obs, d)
    if scatter is None:
        scatter = pair_scatter(obs)
    nt = eval_times.size
    G2 = np.full((nt, nt), np.nan)
    ds2 = np.full((nt, nt), np.nan)
    dt2 = np.full((nt, nt), np.nan)
    flags = np.zeros((nt, nt), dtype=bool)
    eps = DIAG_EPS_FACTOR * h_G
    D_hat = np.full(nt, np.nan)
    dD_hat = np.full(nt, np.nan)
    diag_flags = np.zeros(nt, dtype=bool)

    for i in range(nt):
        try:
            D_hat[i], dD_hat[i] = fit_diag(scatter, float(eval_times[i]), d, h_G, kernel)
        except SparseWindowError:
            diag_flags[i] = True
        for j in range(i, nt):
            if j == i:
                # diagonal pair reuses the diagonal fit so downstream
                # quadrature sees one consistent value there
                if not diag_flags[i]:
                    G2[i, i] = D_hat[i]
                    try:
                        _, dsG, dtG = fit_cov_at(
                            scatter,
                            max(eval_times[i] - eps, 0.0),
                            min(eval_times[i] + eps, 1.0),
                            d,
                            h_G,
                            kernel,
                        )
                        ds2[i, i], dt2[i, i] = dsG, dtG
                    except SparseWindowError:
                        flags[i, i] = True
                else:
                    flags[i, i] = True
                continue
            try:
                G2[i, j], ds2[i, j], dt2[i, j] = fit_cov_at(
                    scatter, float(eval_times[i]), float(eval_times[j]), d, h_G, kernel
                )
            except SparseWindowError:
                flags[i, j] = True

    n_cells = nt * (nt + 1) // 2
    n_bad = int(flags[np.triu_indices(nt)].sum())
    if n_bad > max_flagged_frac * n_cells:
        raise EstimationFailedError(f"{n_bad}/{n_cells} surface cells failed")
    return CovEstimate(
        eval_times=eval_times,
        G2=G2,
        ds2=ds2,
        dt2=dt2,
        pair_flags=flags,
        D_hat=D_hat,
        dD_hat=dD_hat,
        diag_flags=diag_flags,
        degree=d,
        bandwidth=float(h_G),
        kernel=kernel,
        eps_diag=eps,
    )


def fit_diagonal_inclusive(
    obs: SparseObservations,
    eval_times: np.ndarray,
    h: float | None = None,
    kernel: KernelSpec = EPANECHNIKOV,
) -> np.ndarray:
    """1-D smooth of the squared observations Y_ij^2 along the diagonal.

    This is the fit that does NOT exclude same-index products, so it
    estimates D(t) + rho^2 rather than D(t).  It serves as the biased
    control in diagnostics and as an ingredient of the noise variance
    estimate.
    """
    sq = replace_responses(obs, obs.y**2)
    eval_times = np.asarray(eval_times, dtype=float)
    out = np.empty(eval_times.size)
    for i, t in enumerate(eval_times):
        out[i], _ = fit_mean_at(sq, float(t), d=1, h_m=h, kernel=kernel)
    return out


def replace_responses(obs: SparseObservations, new_y: np.ndarray) -> SparseObservations:
    return replace(obs, y=np.asarray(new_y, dtype=float))


def noise_variance_estimate(
    obs: SparseObservations,
    cov_est: CovEstimate,
    kernel: KernelSpec = EPANECHNIKOV,
) -> tuple[float, bool]:
    """Measurement noise variance rho^2 and a flag marking a zero floor.

    E[Y^2 | T = t] = D(t) + rho^2, so the average gap between the
    diagonal-inclusive smooth of Y^2 and the diagonal-excluding D_hat,
    taken over all observation times, estimates rho^2.  Negative averages
    are floored at zero and flagged.
    """
    grid = cov_est.eval_times
    ok = ~cov_est.diag_flags
    if ok.sum() < 2:
        raise EstimationFailedError("too few diagonal values for noise estimate")
    V = fit_diagonal_inclusive(obs, grid, h=None, kernel=kernel)
    V_at = np.interp(obs.t, grid, V)
    D_at = np.interp(obs.t, grid[ok], cov_est.D_hat[ok])
    rho2 = float(np.mean(V_at - D_at))
    if rho2 < 0:
        return 0.0, True
    return rho2, False
