"""Single-agent lap solves and lap-time-vs-energy tables."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleBudget, MaxIterations, SolverNoise
from .nlp import NlpProblem, NlpResult, SolverOptions, solve_nlp
from .track import TrackModel
from .transcription import (
    IE, IFBF, IFBR, IFEM, IFLAT, IPSI, IT, IV, IY, NV,
    CouplingData, LapBoundary, LapTranscription, profile_guess,
)
from .vehicle import VehicleParams, WakeParams

log = logging.getLogger(__name__)


@dataclass
class LapSolution:
    """Discretized one-lap trajectory on the N-node grid."""

    s: np.ndarray
    v: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    t: np.ndarray
    E_b: np.ndarray
    F_em: np.ndarray
    F_brake_f: np.ndarray
    F_brake_r: np.ndarray
    F_lat: np.ndarray
    lap_time: float
    energy_used: float
    solver_status: str
    kkt_residual: float
    objective: float
    z: Optional[np.ndarray] = None       # scaled decision vector (warm starts)
    y_mult: Optional[np.ndarray] = None  # constraint multipliers (warm starts)

    @classmethod
    def from_result(cls, trans: LapTranscription, res: NlpResult) -> "LapSolution":
        phys = trans.unpack(res.x)
        t = phys[:, IT]
        e = phys[:, IE]
        return cls(
            s=trans.track.s_grid.copy(),
            v=phys[:, IV], y=phys[:, IY], psi=phys[:, IPSI], t=t, E_b=e,
            F_em=phys[:, IFEM], F_brake_f=phys[:, IFBF],
            F_brake_r=phys[:, IFBR], F_lat=phys[:, IFLAT],
            lap_time=float(t[-1] - t[0]),
            energy_used=float(e[0] - e[-1]),
            solver_status=res.status,
            kkt_residual=res.kkt_residual,
            objective=trans.raw_objective(res.x),
            z=res.x.copy(),
            y_mult=res.y.copy(),
        )


def transcribe_single(track: TrackModel, vp: VehicleParams, wake: WakeParams,
                      budget: float, boundary: LapBoundary,
                      opponent: Optional[CouplingData] = None,
                      w_pos: float = 100.0, k_pos: float = 10.0,
                      t_gap_min: float = 0.1, y_gap_min: float = 1.5,
                      x0: Optional[np.ndarray] = None,
                      name: str = "lap") -> NlpProblem:
    """Build the single-agent lap NLP (opponent, if given, is frozen)."""
    trans = LapTranscription(track, vp, wake, budget, boundary,
                             w_pos=w_pos, k_pos=k_pos, t_gap_min=t_gap_min,
                             y_gap_min=y_gap_min, coupling=opponent)
    if x0 is None:
        x0 = trans.pack(profile_guess(track, vp, budget, boundary))
    problem = trans.to_nlp_problem(x0, name=name)
    problem.transcription = trans
    return problem


def min_time_lap(track: TrackModel, vp: VehicleParams, wake: WakeParams,
                 budget: float, boundary: LapBoundary,
                 warm: Optional[LapSolution] = None,
                 opts: SolverOptions = SolverOptions(),
                 opponent: Optional[CouplingData] = None) -> LapSolution:
    """Solve one agent's lap at the given net energy budget."""
    problem = transcribe_single(track, vp, wake, budget, boundary,
                                opponent=opponent)
    y0 = None
    if warm is not None and warm.z is not None and len(warm.z) == problem.n_vars:
        problem.x0 = warm.z.copy()
        if warm.y_mult is not None and len(warm.y_mult) == problem.n_cons:
            y0 = warm.y_mult
    res = solve_nlp(problem, opts, y0=y0)
    trans = problem.transcription
    if res.status == "infeasible":
        c = trans.constraints(res.x)
        if c[trans.off_budget] < -opts.tol_feas:
            raise InfeasibleBudget(
                f"budget {budget:.4g} J below the minimum feasible net spend")
        raise MaxIterations("lap solve converged to an infeasible point")
    return LapSolution.from_result(trans, res)


def reference_boundary(track: TrackModel, vp: VehicleParams, wake: WakeParams,
                       budget: float, opts: SolverOptions = SolverOptions()
                       ) -> LapBoundary:
    """Start-line state from a cyclic free-stream lap.

    The lap wraps (v, y, psi) so repeated laps are self-consistent; the
    returned boundary fixes those values for every subsequent solve, which
    makes the lap map depend only on budgets and the time gap.
    """
    bd = LapBoundary(v0=0.0, E_b0=vp.E_b_max, cyclic=True)
    guess_bd = replace(bd, cyclic=False, v0=40.0)
    trans = LapTranscription(track, vp, wake, budget, bd)
    x0 = trans.pack(profile_guess(track, vp, budget, replace(bd, v0=40.0)))
    problem = trans.to_nlp_problem(x0, name="reference-lap")
    res = solve_nlp(problem, opts)
    phys = trans.unpack(res.x)
    if res.status != "optimal":
        raise MaxIterations("reference boundary solve did not converge")
    return LapBoundary(v0=float(phys[0, IV]), y0=float(phys[0, IY]),
                       psi0=float(phys[0, IPSI]), E_b0=vp.E_b_max, t0=0.0)


@dataclass
class LapTimeTable:
    """Free-stream lap time per energy budget, with linear interpolation."""

    budgets: np.ndarray
    times: np.ndarray

    def time(self, budget) -> float:
        return float(np.interp(budget, self.budgets, self.times))

    def min_budget(self) -> float:
        return float(self.budgets[0])

    def max_budget(self) -> float:
        return float(self.budgets[-1])


def lap_time_curve(track: TrackModel, vp: VehicleParams, wake: WakeParams,
                   budgets: Sequence[float], boundary: LapBoundary,
                   opts: SolverOptions = SolverOptions(),
                   tol_mono: float = 1e-3) -> LapTimeTable:
    """Solve the lap per budget and tabulate T(dE).

    Budgets must be ascending. Lap time must come out non-increasing and
    convex in the budget up to tol_mono; larger violations raise
    SolverNoise, smaller ones are flattened isotonically.
    """
    budgets = np.asarray(budgets, dtype=float)
    if np.any(np.diff(budgets) <= 0):
        raise ValueError("budgets must be strictly ascending")
    times = np.empty_like(budgets)
    warm = None
    for i, b in enumerate(budgets):
        warm = min_time_lap(track, vp, wake, b, boundary, warm=warm, opts=opts)
        times[i] = warm.lap_time
    rises = np.diff(times)
    if np.any(rises > tol_mono):
        raise SolverNoise(
            f"lap time increased by {rises.max():.4g} s along the budget axis")
    times = np.minimum.accumulate(times)
    if len(times) >= 3:
        curv = np.diff(times, 2)
        if np.any(curv < -10 * tol_mono):
            raise SolverNoise("lap-time table strongly non-convex")
    return LapTimeTable(budgets=budgets, times=times)


def save_lap(lap: LapSolution, csv_path, summary_path=None,
             config_hash: str = "") -> None:
    """Write the node table and a JSON summary next to it."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "v", "y", "psi", "t", "E_b",
                         "F_em", "F_brake_f", "F_brake_r", "F_lat"])
        for i in range(len(lap.s)):
            writer.writerow([repr(float(arr[i])) for arr in
                             (lap.s, lap.v, lap.y, lap.psi, lap.t, lap.E_b,
                              lap.F_em, lap.F_brake_f, lap.F_brake_r, lap.F_lat)])
    if summary_path is not None:
        summary = {
            "lap_time": lap.lap_time,
            "energy_used": lap.energy_used,
            "status": lap.solver_status,
            "kkt_residual": lap.kkt_residual,
            "objective": lap.objective,
            "config_hash": config_hash,
        }
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
