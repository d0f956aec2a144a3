"""Circuit geometry in the spatial domain.

A track is a sampled center line over arc length s: curvature, lateral
half-widths, slope and banking angles, plus the position-measurement
markers that bound the mini-sectors and an optional pit segment.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    MalformedFile,
    MissingMinisector,
    NegativeLoss,
    NoPitLane,
    NonMonotoneArcLength,
    OutOfRange,
    SelfIntersectingBoundary,
    TooCoarse,
)

TRACK_COLUMNS = ["s", "kappa", "w_left", "w_right", "theta", "phi", "minisector", "pit"]

#: default pit-lane speed limit, 60 km/h
PIT_SPEED_LIMIT = 60.0 / 3.6


@dataclass(frozen=True)
class PitLane:
    """Pit segment along the lap, traversed at a fixed speed limit."""

    s_in: float
    s_out: float
    offset: float = 4.0
    speed_limit: float = PIT_SPEED_LIMIT

    @property
    def length(self) -> float:
        return self.s_out - self.s_in


@dataclass(frozen=True)
class TrackModel:
    """Immutable sampled circuit. All channels share the s_grid abscissae."""

    s_grid: np.ndarray
    kappa: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    minisectors: np.ndarray  # marker positions, [0, ..., s_lap]
    pit: Optional[PitLane] = None

    def __post_init__(self):
        for name in ("s_grid", "kappa", "w_left", "w_right", "theta", "phi", "minisectors"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self):
        s = self.s_grid
        if s.ndim != 1 or len(s) < 2:
            raise MalformedFile("track needs at least two samples")
        if s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise NonMonotoneArcLength("arc length must start at 0 and be strictly increasing")
        for name in ("kappa", "w_left", "w_right", "theta", "phi"):
            if getattr(self, name).shape != s.shape:
                raise MalformedFile(f"channel {name} length mismatch")
        if np.any(np.abs(self.kappa) * (self.w_left + self.w_right) >= 1.0):
            raise SelfIntersectingBoundary("curvature too high for the track width")
        m = self.minisectors
        if len(m) < 2 or np.any(np.diff(m) <= 0):
            raise MissingMinisector("need at least markers at 0 and s_lap, strictly ordered")
        if m[0] != 0.0:
            raise MissingMinisector("no marker at s = 0")
        if m[-1] != s[-1]:
            raise MissingMinisector("no marker at s = s_lap")
        if self.pit is not None:
            if not (0.0 <= self.pit.s_in < self.pit.s_out <= self.s_lap):
                raise MalformedFile("pit segment out of lap range")
            if self.pit.speed_limit <= 0:
                raise MalformedFile("pit speed limit must be positive")

    @property
    def s_lap(self) -> float:
        return float(self.s_grid[-1])

    @property
    def n_sectors(self) -> int:
        """Number of mini-sectors J."""
        return len(self.minisectors) - 1

    def interp(self, s: np.ndarray, channel: str) -> np.ndarray:
        """Linear interpolation of one channel at arbitrary s."""
        return np.interp(s, self.s_grid, getattr(self, channel))


def load_track(path, pit_offset: float = 4.0, pit_speed_limit: float = PIT_SPEED_LIMIT) -> TrackModel:
    """Read a track CSV (columns s,kappa,w_left,w_right,theta,phi,minisector,pit).

    theta/phi columns may be empty strings, which default to zero. Raises
    MalformedFile / NonMonotoneArcLength / SelfIntersectingBoundary /
    MissingMinisector on invalid content.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    return _parse_track_csv(text, pit_offset, pit_speed_limit)


def _parse_track_csv(text: str, pit_offset: float, pit_speed_limit: float) -> TrackModel:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedFile("empty track file") from None
    header = [h.strip() for h in header]
    if header != TRACK_COLUMNS:
        raise MalformedFile(f"expected header {','.join(TRACK_COLUMNS)}, got {','.join(header)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(TRACK_COLUMNS):
            raise MalformedFile(f"line {lineno}: expected {len(TRACK_COLUMNS)} fields")
        try:
            vals = [float(c) if c.strip() != "" else 0.0 for c in row]
        except ValueError as exc:
            raise MalformedFile(f"line {lineno}: {exc}") from exc
        rows.append(vals)
    if len(rows) < 2:
        raise MalformedFile("track needs at least two samples")
    data = np.asarray(rows, dtype=float)
    s = data[:, 0]
    if s[0] != 0.0 or np.any(np.diff(s) <= 0):
        raise NonMonotoneArcLength("s column must start at 0 and be strictly increasing")
    marker_flags = data[:, 6] != 0.0
    if not marker_flags[-1]:
        raise MissingMinisector("no marker at s = s_lap")
    if not marker_flags[0]:
        raise MissingMinisector("no marker at s = 0")
    pit_flags = data[:, 7] != 0.0
    pit = None
    if np.any(pit_flags):
        idx = np.flatnonzero(pit_flags)
        if np.any(np.diff(idx) != 1):
            raise MalformedFile("pit rows must be contiguous")
        pit = PitLane(s_in=float(s[idx[0]]), s_out=float(s[idx[-1]]),
                      offset=pit_offset, speed_limit=pit_speed_limit)
    return TrackModel(
        s_grid=s,
        kappa=data[:, 1],
        w_left=data[:, 2],
        w_right=data[:, 3],
        theta=data[:, 4],
        phi=data[:, 5],
        minisectors=s[marker_flags],
        pit=pit,
    )


def save_track(track: TrackModel, path) -> None:
    """Write the CSV form consumed by load_track."""
    markers = set(np.round(track.minisectors, 9))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_COLUMNS)
        for i, s in enumerate(track.s_grid):
            in_pit = 0
            if track.pit is not None and track.pit.s_in <= s <= track.pit.s_out:
                in_pit = 1
            writer.writerow([
                repr(float(s)),
                repr(float(track.kappa[i])),
                repr(float(track.w_left[i])),
                repr(float(track.w_right[i])),
                repr(float(track.theta[i])),
                repr(float(track.phi[i])),
                1 if round(float(s), 9) in markers else 0,
                in_pit,
            ])


def resample(track: TrackModel, n: int) -> TrackModel:
    """Resample onto a uniform grid of n intervals (n+1 nodes).

    Channels are linearly interpolated; every mini-sector marker is snapped
    to its nearest node. Raises TooCoarse when n < 2*J or when two markers
    would snap to the same node.
    """
    j = track.n_sectors
    if n < 2 * j:
        raise TooCoarse(f"n={n} below 2*J={2 * j}")
    s_new = np.linspace(0.0, track.s_lap, n + 1)
    ds = track.s_lap / n
    marker_nodes = np.rint(track.minisectors / ds).astype(int)
    if len(np.unique(marker_nodes)) != len(marker_nodes):
        raise TooCoarse("two mini-sector markers snap to the same node")
    return replace(
        track,
        s_grid=s_new,
        kappa=np.interp(s_new, track.s_grid, track.kappa),
        w_left=np.interp(s_new, track.s_grid, track.w_left),
        w_right=np.interp(s_new, track.s_grid, track.w_right),
        theta=np.interp(s_new, track.s_grid, track.theta),
        phi=np.interp(s_new, track.s_grid, track.phi),
        minisectors=marker_nodes * ds,
    )


def minisector_of(track: TrackModel, s: float) -> int:
    """Sector index j with s in [s_j, s_{j+1}); s = s_lap maps to J-1."""
    if s < 0.0 or s > track.s_lap:
        raise OutOfRange(f"s={s} outside [0, {track.s_lap}]")
    j = int(np.searchsorted(track.minisectors, s, side="right")) - 1
    return min(j, track.n_sectors - 1)


def pit_lane_time(track: TrackModel, reference_lap, t_stopgo: float = 0.0) -> float:
    """Time lost by traversing the pit lane instead of racing past it.

    reference_lap must expose node arrays .s and .t covering the pit
    segment. The loss is the limited-speed traversal plus the fixed
    entry/exit penalty, minus the racing-line time over the same arc.
    """
    if track.pit is None:
        raise NoPitLane("track has no pit segment")
    pit = track.pit
    s_arr = np.asarray(reference_lap.s, dtype=float)
    t_arr = np.asarray(reference_lap.t, dtype=float)
    if s_arr[0] > pit.s_in or s_arr[-1] < pit.s_out:
        raise ValueError("reference lap does not cover the pit segment")
    t_in, t_out = np.interp([pit.s_in, pit.s_out], s_arr, t_arr)
    loss = pit.length / pit.speed_limit + t_stopgo - (t_out - t_in)
    if loss < -1e-9:
        raise NegativeLoss(f"pit traversal faster than racing line by {-loss:.3g} s")
    return max(loss, 0.0)


def synthetic_oval(
    straight: float = 300.0,
    radius: float = 60.0,
    half_width: float = 6.0,
    ramp: float = 15.0,
    spacing: float = 1.0,
    pit_bounds: Optional[Sequence[float]] = (40.0, 240.0),
    pit_speed_limit: float = PIT_SPEED_LIMIT,
) -> TrackModel:
    """Closed oval: two straights and two constant-radius left arcs.

    Curvature ramps linearly over `ramp` meters at each arc entry/exit so
    the profile is continuous; arc lengths are chosen so the total turning
    per corner is exactly pi (the lap closes). Mini-sector markers sit at
    the start line, both corner entries, and the back-straight start (J=4).
    """
    kmax = 1.0 / radius
    if ramp <= 0 or 2 * ramp >= np.pi / kmax:
        raise ValueError("ramp must be positive and shorter than the corner")
    # plateau length so that integral of kappa over one corner equals pi
    arc_plateau = np.pi / kmax - ramp
    corner = arc_plateau + 2 * ramp
    s_lap = 2 * straight + 2 * corner
    n = int(round(s_lap / spacing))
    s = np.linspace(0.0, s_lap, n + 1)

    def corner_kappa(u):
        # u: distance into the corner, 0..corner
        up = np.minimum(np.minimum(u / ramp, (corner - u) / ramp), 1.0)
        return kmax * np.clip(up, 0.0, 1.0)

    kappa = np.zeros_like(s)
    c1_in, c1_out = straight, straight + corner
    c2_in, c2_out = 2 * straight + corner, 2 * straight + 2 * corner
    m1 = (s >= c1_in) & (s <= c1_out)
    kappa[m1] = corner_kappa(s[m1] - c1_in)
    m2 = (s >= c2_in) & (s <= c2_out)
    kappa[m2] = corner_kappa(s[m2] - c2_in)

    markers = np.array([0.0, c1_in, c1_out, c2_in, s_lap])
    # snap markers onto grid nodes so file round-trips keep them exact
    markers = np.round(markers / (s_lap / n)) * (s_lap / n)
    pit = None
    if pit_bounds is not None:
        pit = PitLane(s_in=float(pit_bounds[0]), s_out=float(pit_bounds[1]),
                      speed_limit=pit_speed_limit)
    return TrackModel(
        s_grid=s,
        kappa=kappa,
        w_left=np.full_like(s, half_width),
        w_right=np.full_like(s, half_width),
        theta=np.zeros_like(s),
        phi=np.zeros_like(s),
        minisectors=markers,
        pit=pit,
    )
