"""Sparse, noisy observation scheme on simulated or external curves.

Each curve i is seen at r_i >= 2 random design times T_i1 < ... < T_ir on
the normalised interval [0, 1], contaminated with iid centred noise:

    Y_ij = X_i(T_ij) + U_ij,   Var(U_ij) = rho^2.

Design times, measurement noise and the driving paths all use disjoint
child streams of the master seed, so swapping the noise seed perturbs only
the U contributions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvParseError, DesignRangeError, ValidationError
from .simulate import SamplePathSet

_STREAM_DESIGN = 2
_STREAM_NOISE = 3

# bounded re-draw before deterministic tie-breaking in draw_design
_MAX_REDRAW = 100
_TIE_EPS = 1e-12


class UniformDesign:
    """Uniform design density on [0, 1]."""

    min_density = 1.0

    def sample(self, rng: np.random.Generator, r: int) -> np.ndarray:
        return rng.random(r)

    def describe(self) -> str:
        return "uniform"


class ClippedLinearDesign:
    """Density proportional to max(2t, floor) on [0, 1].

    The floor keeps the density bounded away from zero, which the theory
    requires; sampling is by the exact piecewise inverse CDF.
    """

    def __init__(self, floor: float = 0.1):
        if not 0 < floor <= 2:
            raise ValidationError("floor must lie in (0, 2]")
        self.floor = float(floor)
        self._Z = 1.0 + self.floor**2 / 4.0
        self.min_density = self.floor / self._Z

    def sample(self, rng: np.random.Generator, r: int) -> np.ndarray:
        q = rng.random(r)
        split = (self.floor**2 / 2.0) / self._Z
        out = np.empty(r)
        low = q < split
        out[low] = q[low] * self._Z / self.floor
        out[~low] = np.sqrt(q[~low] * self._Z - self.floor**2 / 4.0)
        return out

    def describe(self) -> str:
        return f"clipped-linear(floor={self.floor})"


_NOISE_KINDS = ("gaussian", "uniform")


@dataclass(frozen=True)
class DesignConfig:
    """Observation scheme: points per curve, design law, noise law."""

    r: int
    noise_sd: float
    design_law: object = field(default_factory=UniformDesign)
    noise_law: str = "gaussian"

    def __post_init__(self):
        if self.r < 2:
            raise ValidationError("need r >= 2 observations per curve")
        if not (math.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise ValidationError("noise_sd must be finite and >= 0")
        if self.noise_law not in _NOISE_KINDS:
            raise ValidationError(f"unknown noise law {self.noise_law!r}")


@dataclass
class SparseObservations:
    """Long-format observations: one (curve, time, value) triple per row.

    Rows are grouped by curve, strictly increasing in time within a curve.
    """

    curve_id: np.ndarray
    t: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return int(self.curve_id[-1]) + 1 if self.curve_id.size else 0

    @property
    def total(self) -> int:
        return self.t.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.curve_id, minlength=self.n)

    def curve_slices(self) -> list[slice]:
        bounds = np.flatnonzero(np.diff(self.curve_id)) + 1
        starts = np.concatenate(([0], bounds))
        stops = np.concatenate((bounds, [self.total]))
        return [slice(int(a), int(b)) for a, b in zip(starts, stops)]

    def validate(self) -> None:
        if self.t.size == 0:
            raise ValidationError("no observations")
        if not (self.curve_id.size == self.t.size == self.y.size):
            raise ValidationError("column lengths differ")
        if np.any(np.diff(self.curve_id) < 0):
            raise ValidationError("curve ids must be grouped in ascending order")
        if np.any(self.t < 0) or np.any(self.t > 1):
            raise ValidationError("observation times must lie in [0, 1]")
        if not np.all(np.isfinite(self.y)):
            raise ValidationError("observation values must be finite")
        for i, sl in enumerate(self.curve_slices()):
            if sl.stop - sl.start < 2:
                raise ValidationError(f"curve {i} has fewer than 2 observations")
            if np.any(np.diff(self.t[sl]) <= 0):
                raise ValidationError(f"curve {i} times are not strictly increasing")

    def subset(self, curve_ids) -> "SparseObservations":
        """New observation set from the given curves, renumbered 0..k-1.

        Repeats are allowed (bootstrap resamples duplicate curves).
        """
        slices = self.curve_slices()
        cid, tt, yy = [], [], []
        for new_id, old in enumerate(curve_ids):
            sl = slices[int(old)]
            k = sl.stop - sl.start
            cid.append(np.full(k, new_id))
            tt.append(self.t[sl])
            yy.append(self.y[sl])
        return SparseObservations(
            curve_id=np.concatenate(cid), t=np.concatenate(tt), y=np.concatenate(yy)
        )


def draw_design(design_law, r: int, rng: np.random.Generator) -> np.ndarray:
    """r strictly increasing design points in [0, 1].

    Sorted draws are re-taken while exact ties occur (bounded at 100
    attempts, astronomically unlikely to recur for a continuous law); as a
    last resort ties are broken by a deterministic epsilon stagger so the
    routine cannot loop forever on a degenerate law.
    """
    for _ in range(_MAX_REDRAW):
        pts = np.sort(design_law.sample(rng, r))
        if np.all(np.diff(pts) > 0):
            return pts
    pts = np.sort(design_law.sample(rng, r))
    pts = np.minimum(pts + np.arange(r) * _TIE_EPS, 1.0)
    if np.any(np.diff(pts) <= 0):
        raise ValidationError("design law cannot produce distinct points")
    return pts


def observe(
    paths: SamplePathSet,
    cfg: DesignConfig,
    seed: int,
    design_seed: int | None = None,
    noise_seed: int | None = None,
) -> SparseObservations:
    """Sample the observation scheme on every path of the ensemble.

    Normalised design times are mapped affinely onto the path grid's span
    before interpolating the path values.
    """
    design_rng = np.random.default_rng(
        np.random.SeedSequence([seed, _STREAM_DESIGN])
        if design_seed is None
        else design_seed
    )
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([seed, _STREAM_NOISE])
        if noise_seed is None
        else noise_seed
    )
    g = paths.grid
    n = paths.n
    cid = np.repeat(np.arange(n), cfg.r)
    tt = np.empty(n * cfg.r)
    yy = np.empty(n * cfg.r)
    for i in range(n):
        T = draw_design(cfg.design_law, cfg.r, design_rng)
        abs_t = g.t0 + (g.t1 - g.t0) * T
        if abs_t[0] < g.t0 - 1e-12 or abs_t[-1] > g.t1 + 1e-12:
            raise DesignRangeError(
                f"design time outside simulated span [{g.t0}, {g.t1}]"
            )
        U = _draw_noise(noise_rng, cfg, cfg.r)
        sl = slice(i * cfg.r, (i + 1) * cfg.r)
        tt[sl] = T
        yy[sl] = paths.path_at(i, abs_t) + U
    obs = SparseObservations(curve_id=cid, t=tt, y=yy)
    obs.validate()
    return obs


def _draw_noise(rng: np.random.Generator, cfg: DesignConfig, size: int) -> np.ndarray:
    if cfg.noise_sd == 0:
        return np.zeros(size)
    if cfg.noise_law == "gaussian":
        return cfg.noise_sd * rng.standard_normal(size)
    # centred uniform with unit variance, then scaled
    return cfg.noise_sd * rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)


def export_observations_csv(obs: SparseObservations, dest) -> None:
    """Write long format curve_id,t,y; floats via repr so ingest round-trips."""
    with open(dest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve_id", "t", "y"])
        for c, t, y in zip(obs.curve_id, obs.t, obs.y):
            writer.writerow([int(c), repr(float(t)), repr(float(y))])


def ingest_csv(source, time_span=None) -> SparseObservations:
    """Read long-format curve_id,t,y observations.

    Rows are sorted by time within each curve; malformed rows raise
    CsvParseError with the 1-based line number.  Files whose times live on
    some other interval [t0, t1] are supported by passing time_span=(t0, t1);
    the times are mapped affinely onto [0, 1] before validation.
    """
    rows = []
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(1, "empty file") from None
        if [h.strip() for h in header] != ["curve_id", "t", "y"]:
            raise CsvParseError(1, f"expected header curve_id,t,y got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise CsvParseError(lineno, f"expected 3 columns, got {len(row)}")
            try:
                rows.append((int(row[0]), float(row[1]), float(row[2])))
            except ValueError as exc:
                raise CsvParseError(lineno, str(exc)) from None
    if not rows:
        raise CsvParseError(2, "no data rows")
    raw_ids = sorted({r[0] for r in rows})
    remap = {old: new for new, old in enumerate(raw_ids)}
    rows.sort(key=lambda r: (remap[r[0]], r[1]))
    cid = np.array([remap[r[0]] for r in rows], dtype=int)
    tt = np.array([r[1] for r in rows])
    yy = np.array([r[2] for r in rows])
    if time_span is not None:
        t0, t1 = float(time_span[0]), float(time_span[1])
        if not t1 > t0:
            raise ValidationError(f"time span needs t1 > t0, got [{t0}, {t1}]")
        tt = (tt - t0) / (t1 - t0)
    obs = SparseObservations(curve_id=cid, t=tt, y=yy)
    obs.validate()
    return obs


def ingest_wide_csv(source) -> SparseObservations:
    """Read a wide table: one row per curve, one column per grid point.

    Columns are interpreted as an equally spaced design with midpoint
    convention t_j = (j - 0.5) / ncols (day j of 365 lands on (j-0.5)/365).
    A leading non-numeric id column is allowed; empty cells mark missing
    values and are skipped.
    """
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(1, "empty file") from None
        data_rows = [row for row in reader if row]
    if not data_rows:
        raise CsvParseError(2, "no data rows")

    def _is_number(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    has_id = not _is_number(data_rows[0][0])
    first_col = 1 if has_id else 0
    ncols = len(header) - first_col
    if ncols < 2:
        raise CsvParseError(1, "need at least 2 value columns")
    times = (np.arange(ncols) + 0.5) / ncols

    cid, tt, yy = [], [], []
    for i, row in enumerate(data_rows):
        lineno = i + 2
        if len(row) != len(header):
            raise CsvParseError(lineno, f"expected {len(header)} columns, got {len(row)}")
        for j, cell in enumerate(row[first_col:]):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                val = float(cell)
            except ValueError:
                raise CsvParseError(lineno, f"bad value {cell!r}") from None
            cid.append(i)
            tt.append(times[j])
            yy.append(val)
    obs = SparseObservations(
        curve_id=np.array(cid, dtype=int), t=np.array(tt), y=np.array(yy)
    )
    obs.validate()
    return obs
