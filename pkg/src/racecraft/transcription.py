"""Direct transcription of the single-lap problem in the spatial domain.

Trapezoidal collocation on a uniform N-interval grid. Decision vector per
node: (v, y, psi, t, E_b, F_em, F_brake_f, F_brake_r, F_lat), all scaled
to O(1). The relative-position channel enters as frozen per-node data (the
wake gate and the collision-ellipse right-hand side), matching the
piecewise-constant position semantics; it is refreshed by the outer
fixed-point loop in the game layer.

A transcription can stand alone (free-stream lap), face a frozen opponent
trajectory (best response), or expose live coupling columns with respect
to the opponent's time/lateral variables (stacked equilibrium solve).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import vehicle as vh
from .errors import BadBoundary
from .nlp import NlpProblem
from .track import TrackModel
from .vehicle import VehicleParams, WakeParams

# per-node variable slots
IV, IY, IPSI, IT, IE, IFEM, IFBF, IFBR, IFLAT = range(9)
NV = 9
NX = 5  # dynamic states (v, y, psi, t, E_b)

V_MIN = 3.0
V_MAX = 150.0
PSI_MAX = 0.6
T_BOX = 1000.0


@dataclass(frozen=True)
class LapBoundary:
    """Start-line state of a lap solve.

    cyclic replaces the (v, y, psi) start fixings with wrap-around
    equalities; used once to compute the reference start-line state that
    all other solves then fix.
    """

    v0: float
    y0: float = 0.0
    psi0: float = 0.0
    E_b0: float = 45e6
    t0: float = 0.0
    cyclic: bool = False


@dataclass
class CouplingData:
    """Per-node two-car coupling data for one (ego) agent."""

    t_opp: np.ndarray   # opponent elapsed time per node [s]
    y_opp: np.ndarray   # opponent lateral offset per node [m]
    gate: np.ndarray    # 1.0 where the ego agent receives wake
    rhs: np.ndarray     # collision ellipse right-hand side for the ego
    live: bool = False  # expose Jacobian columns w.r.t. the opponent


class LapTranscription:
    """Scaled NLP functions for one agent's lap."""

    def __init__(self, track: TrackModel, vp: VehicleParams, wake: WakeParams,
                 budget: float, boundary: LapBoundary, w_pos: float = 100.0,
                 k_pos: float = 10.0, t_gap_min: float = 0.1,
                 y_gap_min: float = 1.5, coupling: Optional[CouplingData] = None,
                 w_energy: float = 1e-3, obj_scale: float = 10.0):
        self.track = track
        self.vp = vp
        self.wake = wake
        self.budget = float(budget)
        self.boundary = boundary
        self.w_pos = w_pos
        self.k_pos = k_pos
        self.t_gap_min = t_gap_min
        self.y_gap_min = y_gap_min
        self.coupling = coupling
        self.w_energy = w_energy
        self.obj_scale = obj_scale

        if budget < 0 or budget > boundary.E_b0:
            raise BadBoundary(f"budget {budget:.3g} outside [0, E_b0]")
        if boundary.E_b0 > vp.E_b_max * (1 + 1e-9):
            raise BadBoundary("E_b0 exceeds capacity")

        self.n_nodes = len(track.s_grid)
        self.n_int = self.n_nodes - 1
        self.ds = track.s_lap / self.n_int
        self.kappa = track.kappa
        self.theta = track.theta
        self.phi = track.phi
        self.n_vars = NV * self.n_nodes

        # scales
        self.x_scale = np.array([50.0, 2.0, 0.2, 30.0, vp.E_b_max])
        self.f_scale = vp.mu0 * vp.m * vh.G
        self.s9 = np.concatenate([self.x_scale, np.full(4, self.f_scale)])

        self._build_bounds()
        self._build_rows()
        self._build_jac_structure()

    # --- layout -----------------------------------------------------------

    def _build_bounds(self):
        nn = self.n_nodes
        vp, tr = self.vp, self.track
        lo = np.empty((nn, NV))
        hi = np.empty((nn, NV))
        lo[:, IV], hi[:, IV] = V_MIN, V_MAX
        lo[:, IY] = -(tr.w_right - vp.width / 2.0)
        hi[:, IY] = tr.w_left - vp.width / 2.0
        lo[:, IPSI], hi[:, IPSI] = -PSI_MAX, PSI_MAX
        lo[:, IT], hi[:, IT] = -T_BOX, T_BOX
        lo[:, IE], hi[:, IE] = 0.0, vp.E_b_max
        lo[:, IFEM], hi[:, IFEM] = -vp.F_em_max, vp.F_em_max
        brake_box = 3.0 * vp.mu0 * vp.m * vh.G
        lo[:, IFBF], hi[:, IFBF] = -brake_box, 0.0
        lo[:, IFBR], hi[:, IFBR] = -brake_box, 0.0
        lo[:, IFLAT], hi[:, IFLAT] = -brake_box, brake_box
        self.x_lower = (lo / self.s9).ravel()
        self.x_upper = (hi / self.s9).ravel()

    def _build_rows(self):
        n_int, nn = self.n_int, self.n_nodes
        self.n_defect = NX * n_int
        self.n_bound = 5
        self.n_eq = self.n_defect + self.n_bound
        self.off_tire = self.n_eq
        self.off_power = self.off_tire + 2 * nn
        self.off_budget = self.off_power + 2 * nn
        self.off_coll = self.off_budget + 1
        self.n_coll = nn if self.coupling is not None else 0
        self.n_cons = self.off_coll + self.n_coll
        self.c_lower = np.zeros(self.n_cons)
        self.c_upper = np.zeros(self.n_cons)
        self.c_upper[self.n_eq:] = np.inf

    def eq_mask(self) -> np.ndarray:
        m = np.zeros(self.n_cons, dtype=bool)
        m[: self.n_eq] = True
        return m

    # --- packing ----------------------------------------------------------

    def pack(self, phys: np.ndarray) -> np.ndarray:
        """Scale a (n_nodes, 9) physical array into a decision vector."""
        return (phys / self.s9).ravel()

    def unpack(self, z: np.ndarray) -> np.ndarray:
        """Decision vector back to a (n_nodes, 9) physical array."""
        return z.reshape(self.n_nodes, NV) * self.s9

    # --- shared evaluation ------------------------------------------------

    def _phys(self, z, z_opp=None):
        p = self.unpack(z)
        cols = dict(v=p[:, IV], y=p[:, IY], psi=p[:, IPSI], t=p[:, IT],
                    e=p[:, IE], fem=p[:, IFEM], fbf=p[:, IFBF], fbr=p[:, IFBR],
                    flat=p[:, IFLAT])
        if self.coupling is not None:
            if self.coupling.live and z_opp is not None:
                po = z_opp.reshape(self.n_nodes, NV) * self.s9
                t_opp, y_opp = po[:, IT], po[:, IY]
            else:
                t_opp, y_opp = self.coupling.t_opp, self.coupling.y_opp
            w, dwdt, dwdy = vh.wake_gaussian(cols["t"] - t_opp,
                                             cols["y"] - y_opp, self.wake)
            g = self.coupling.gate
            weff = g * w
            cols.update(
                t_opp=t_opp, y_opp=y_opp,
                drag_mult=1.0 - self.wake.delta_drag * weff,
                down_mult=1.0 - self.wake.delta_down * weff,
                ddm_dt=-self.wake.delta_drag * g * dwdt,
                ddm_dy=-self.wake.delta_drag * g * dwdy,
                dlm_dt=-self.wake.delta_down * g * dwdt,
                dlm_dy=-self.wake.delta_down * g * dwdy,
            )
        else:
            ones = np.ones(self.n_nodes)
            cols.update(drag_mult=ones, down_mult=ones)
        return cols

    def _rhs(self, c):
        return vh.dyn_rhs_vec(self.vp, self.kappa, self.theta, c["v"], c["y"],
                              c["psi"], c["fem"], c["fbf"], c["fbr"], c["flat"],
                              c["drag_mult"])

    def constraints(self, z, z_opp=None) -> np.ndarray:
        c = self._phys(z, z_opp)
        out = np.zeros(self.n_cons)
        f = np.stack(self._rhs(c), axis=1) / self.x_scale  # (nn, 5) scaled
        xs = z.reshape(self.n_nodes, NV)[:, :NX]
        defect = (xs[1:] - xs[:-1]) - 0.5 * self.ds * (f[:-1] + f[1:])
        out[: self.n_defect] = defect.ravel()
        out[self.n_defect: self.n_eq] = self._boundary_rows(z)
        res = vh.tire_residuals_vec(self.vp, self.theta, self.phi, c["v"],
                                    c["fem"], c["fbf"], c["fbr"], c["flat"],
                                    c["down_mult"])
        out[self.off_tire: self.off_power] = -res.ravel()
        p_m = c["fem"] * c["v"]
        out[self.off_power: self.off_budget: 2] = \
            (self.vp.P_em_max - p_m) / self.vp.P_em_max
        out[self.off_power + 1: self.off_budget: 2] = \
            (p_m + self.vp.P_regen_max) / self.vp.P_regen_max
        e_s = self.x_scale[IE]
        out[self.off_budget] = (z[NV * self.n_int + IE] - z[IE]
                                + self.budget / e_s)
        if self.coupling is not None:
            dt = c["t"] - c["t_opp"]
            dy = c["y"] - c["y_opp"]
            out[self.off_coll:] = ((dt / self.t_gap_min) ** 2
                                   + (dy / self.y_gap_min) ** 2
                                   - self.coupling.rhs)
        return out

    def _boundary_rows(self, z) -> np.ndarray:
        b = self.boundary
        rows = np.empty(5)
        i_n = NV * self.n_int
        rows[0] = z[IT] - b.t0 / self.x_scale[IT]
        rows[1] = z[IE] - b.E_b0 / self.x_scale[IE]
        if b.cyclic:
            rows[2] = z[i_n + IV] - z[IV]
            rows[3] = z[i_n + IY] - z[IY]
            rows[4] = z[i_n + IPSI] - z[IPSI]
        else:
            rows[2] = z[IV] - b.v0 / self.x_scale[IV]
            rows[3] = z[IY] - b.y0 / self.x_scale[IY]
            rows[4] = z[IPSI] - b.psi0 / self.x_scale[IPSI]
        return rows

    # --- Jacobian ---------------------------------------------------------

    def _node_jac_scaled(self, c):
        """Per-node scaled Jacobians of the dynamics and tire rows.

        Returns (jd, jt, jd_opp, jt_opp): jd (nn, 5, 9) covers the dynamics
        w.r.t. the node's own variables with the wake chain folded into the
        t and y columns; jt (nn, 2, 9) likewise for the (unnegated) tire
        residuals; the *_opp blocks are (nn, *, 2) w.r.t. (t_opp, y_opp).
        """
        nn = self.n_nodes
        jd_raw = vh.dyn_jac_vec(self.vp, self.kappa, self.theta, c["v"], c["y"],
                                c["psi"], c["fem"], c["fbf"], c["fbr"],
                                c["flat"], c["drag_mult"])
        jt_raw = vh.tire_jac_vec(self.vp, self.theta, self.phi, c["v"],
                                 c["fem"], c["fbf"], c["fbr"], c["flat"],
                                 c["down_mult"])
        jd = np.zeros((nn, NX, NV))
        jd[:, :, IV] = jd_raw[:, :, 0]
        jd[:, :, IY] = jd_raw[:, :, 1]
        jd[:, :, IPSI] = jd_raw[:, :, 2]
        jd[:, :, IFEM] = jd_raw[:, :, 3]
        jd[:, :, IFBF] = jd_raw[:, :, 4]
        jd[:, :, IFBR] = jd_raw[:, :, 5]
        jd[:, :, IFLAT] = jd_raw[:, :, 6]
        jt = np.zeros((nn, 2, NV))
        jt[:, :, IV] = jt_raw[:, :, 0]
        jt[:, :, IFEM] = jt_raw[:, :, 1]
        jt[:, :, IFBF] = jt_raw[:, :, 2]
        jt[:, :, IFBR] = jt_raw[:, :, 3]
        jt[:, :, IFLAT] = jt_raw[:, :, 4]
        jd_opp = jt_opp = None
        if self.coupling is not None:
            ddrag = jd_raw[:, :, 7]
            jd[:, :, IT] += ddrag * c["ddm_dt"][:, None]
            jd[:, :, IY] += ddrag * c["ddm_dy"][:, None]
            ddown = jt_raw[:, :, 5]
            jt[:, :, IT] += ddown * c["dlm_dt"][:, None]
            jt[:, :, IY] += ddown * c["dlm_dy"][:, None]
            jd_opp = np.empty((nn, NX, 2))
            jd_opp[:, :, 0] = -ddrag * c["ddm_dt"][:, None]
            jd_opp[:, :, 1] = -ddrag * c["ddm_dy"][:, None]
            jt_opp = np.empty((nn, 2, 2))
            jt_opp[:, :, 0] = -ddown * c["dlm_dt"][:, None]
            jt_opp[:, :, 1] = -ddown * c["dlm_dy"][:, None]
        # scale columns/rows
        jd *= self.s9[None, None, :]
        jd /= self.x_scale[None, :, None]
        jt *= self.s9[None, None, :]
        if jd_opp is not None:
            opp_scale = np.array([self.x_scale[IT], self.x_scale[IY]])
            jd_opp *= opp_scale[None, None, :]
            jd_opp /= self.x_scale[None, :, None]
            jt_opp *= opp_scale[None, None, :]
        return jd, jt, jd_opp, jt_opp

    def _build_jac_structure(self):
        n_int, nn = self.n_int, self.n_nodes
        i = np.arange(n_int)
        q = np.arange(NX)
        p = np.arange(NV)
        rows_d = (NX * i[:, None, None] + q[None, :, None]
                  + 0 * p[None, None, :])
        cols_d0 = NV * i[:, None, None] + 0 * q[None, :, None] + p[None, None, :]
        cols_d1 = cols_d0 + NV
        self._st_def_rows = np.concatenate([rows_d.ravel(), rows_d.ravel()])
        self._st_def_cols = np.concatenate([cols_d0.ravel(), cols_d1.ravel()])

        rows_b = self.n_defect + np.arange(5)
        i_n = NV * n_int
        if self.boundary.cyclic:
            cols_b = np.array([IT, IE, i_n + IV, i_n + IY, i_n + IPSI,
                               IV, IY, IPSI])
            rows_b = np.concatenate([rows_b, rows_b[2:]])
            self._bound_data = np.array([1.0, 1.0, 1.0, 1.0, 1.0,
                                         -1.0, -1.0, -1.0])
        else:
            cols_b = np.array([IT, IE, IV, IY, IPSI])
            self._bound_data = np.ones(5)
        self._st_bnd_rows = rows_b
        self._st_bnd_cols = cols_b

        j = np.arange(nn)
        tire_cols = np.array([IV, IY, IT, IFEM, IFBF, IFBR, IFLAT])
        rows_t = (self.off_tire + 2 * j[:, None, None]
                  + np.arange(2)[None, :, None] + 0 * tire_cols[None, None, :])
        cols_t = (NV * j[:, None, None] + 0 * np.arange(2)[None, :, None]
                  + tire_cols[None, None, :])
        self._st_tire_rows = rows_t.ravel()
        self._st_tire_cols = cols_t.ravel()
        self._tire_col_slots = tire_cols

        rows_p = self.off_power + 2 * j
        self._st_pow_rows = np.concatenate(
            [rows_p, rows_p, rows_p + 1, rows_p + 1])
        self._st_pow_cols = np.concatenate(
            [NV * j + IV, NV * j + IFEM, NV * j + IV, NV * j + IFEM])

        self._st_bud_rows = np.array([self.off_budget, self.off_budget])
        self._st_bud_cols = np.array([IE, NV * n_int + IE])

        parts_r = [self._st_def_rows, self._st_bnd_rows, self._st_tire_rows,
                   self._st_pow_rows, self._st_bud_rows]
        parts_c = [self._st_def_cols, self._st_bnd_cols, self._st_tire_cols,
                   self._st_pow_cols, self._st_bud_cols]
        if self.coupling is not None:
            rows_c = self.off_coll + j
            self._st_coll_rows = np.concatenate([rows_c, rows_c])
            self._st_coll_cols = np.concatenate([NV * j + IT, NV * j + IY])
            parts_r.append(self._st_coll_rows)
            parts_c.append(self._st_coll_cols)
        self._jac_rows = np.concatenate(parts_r)
        self._jac_cols = np.concatenate(parts_c)

        if self.coupling is not None and self.coupling.live:
            # opponent columns: defects, tire, collision touch (t, y) only
            opp_slots = np.array([IT, IY])
            rows_do = (NX * i[:, None, None] + q[None, :, None]
                       + 0 * opp_slots[None, None, :])
            cols_do0 = (NV * i[:, None, None] + 0 * q[None, :, None]
                        + opp_slots[None, None, :])
            cols_do1 = cols_do0 + NV
            rows_to = (self.off_tire + 2 * j[:, None, None]
                       + np.arange(2)[None, :, None]
                       + 0 * opp_slots[None, None, :])
            cols_to = (NV * j[:, None, None] + 0 * np.arange(2)[None, :, None]
                       + opp_slots[None, None, :])
            rows_co = self.off_coll + j
            self._jac_opp_rows = np.concatenate(
                [rows_do.ravel(), rows_do.ravel(), rows_to.ravel(),
                 rows_co, rows_co])
            self._jac_opp_cols = np.concatenate(
                [cols_do0.ravel(), cols_do1.ravel(), cols_to.ravel(),
                 NV * j + IT, NV * j + IY])

    def jacobian(self, z, z_opp=None):
        """Constraint Jacobian w.r.t. own variables (csr)."""
        return self._jacobians(z, z_opp)[0]

    def _jacobians(self, z, z_opp=None):
        c = self._phys(z, z_opp)
        jd, jt, jd_opp, jt_opp = self._node_jac_scaled(c)
        n_int = self.n_int
        half = 0.5 * self.ds

        eye = np.zeros((NX, NV))
        eye[np.arange(NX), np.arange(NX)] = 1.0
        a0 = -eye[None, :, :] - half * jd[:-1]
        a1 = eye[None, :, :] - half * jd[1:]
        data = [a0.ravel(), a1.ravel(), self._bound_data]
        jt_sel = -jt[:, :, self._tire_col_slots]
        data.append(jt_sel.ravel())
        v_s, f_s = self.x_scale[IV], self.f_scale
        p_em, p_rg = self.vp.P_em_max, self.vp.P_regen_max
        data.append(np.concatenate([
            -c["fem"] * v_s / p_em, -c["v"] * f_s / p_em,
            c["fem"] * v_s / p_rg, c["v"] * f_s / p_rg]))
        data.append(np.array([-1.0, 1.0]))
        if self.coupling is not None:
            dt = c["t"] - c["t_opp"]
            dy = c["y"] - c["y_opp"]
            t_s, y_s = self.x_scale[IT], self.x_scale[IY]
            ct = 2.0 * dt * t_s / self.t_gap_min**2
            cy = 2.0 * dy * y_s / self.y_gap_min**2
            data.append(np.concatenate([ct, cy]))
        j_self = sp.csr_matrix(
            (np.concatenate(data), (self._jac_rows, self._jac_cols)),
            shape=(self.n_cons, self.n_vars))
        j_opp = None
        if self.coupling is not None and self.coupling.live:
            b0 = -half * jd_opp[:-1]
            b1 = -half * jd_opp[1:]
            jt_o = -jt_opp
            d_opp = [b0.ravel(), b1.ravel(), jt_o.ravel(),
                     -ct, -cy]
            j_opp = sp.csr_matrix(
                (np.concatenate(d_opp), (self._jac_opp_rows, self._jac_opp_cols)),
                shape=(self.n_cons, self.n_vars))
        return j_self, j_opp

    # --- objective ---------------------------------------------------------

    def _final_gap(self, z, z_opp=None):
        t_n = z[NV * self.n_int + IT] * self.x_scale[IT]
        if self.coupling is None:
            return None
        if self.coupling.live and z_opp is not None:
            t_opp_n = z_opp[NV * self.n_int + IT] * self.x_scale[IT]
        else:
            t_opp_n = self.coupling.t_opp[-1]
        return t_n - t_opp_n

    def objective(self, z, z_opp=None) -> float:
        """Scaled objective; raw_objective gives the contract value."""
        return self.raw_objective(z, z_opp) / self.obj_scale

    def raw_objective(self, z, z_opp=None) -> float:
        i_tn = NV * self.n_int + IT
        val = z[i_tn] * self.x_scale[IT] / self.w_pos
        val += self.w_energy * (z[IE] - z[NV * self.n_int + IE])
        gap = self._final_gap(z, z_opp)
        if gap is not None:
            val += np.tanh(self.k_pos * gap)
        return float(val)

    def gradient(self, z, z_opp=None) -> np.ndarray:
        g = np.zeros(self.n_vars)
        i_tn = NV * self.n_int + IT
        g[i_tn] = self.x_scale[IT] / self.w_pos
        g[IE] = self.w_energy
        g[NV * self.n_int + IE] = -self.w_energy
        gap = self._final_gap(z, z_opp)
        if gap is not None:
            sech2 = 1.0 / np.cosh(self.k_pos * gap) ** 2
            g[i_tn] += self.k_pos * sech2 * self.x_scale[IT]
        return g / self.obj_scale

    def gradient_opp(self, z, z_opp) -> np.ndarray:
        g = np.zeros(self.n_vars)
        gap = self._final_gap(z, z_opp)
        if gap is not None:
            sech2 = 1.0 / np.cosh(self.k_pos * gap) ** 2
            g[NV * self.n_int + IT] = -self.k_pos * sech2 * self.x_scale[IT]
        return g / self.obj_scale

    # --- weighted Hessian ---------------------------------------------------

    def _weighted_node_grad(self, z, w, z_opp=None):
        """Per-node gradient of the nonlinear weighted constraint sum.

        Covers the dynamics defects (trapezoid weights from both adjacent
        intervals) and the tire rows; power/collision rows have constant
        Hessians added analytically. Shape (nn, 9) plus (nn, 2) opponent
        block in live mode.
        """
        nn = self.n_nodes
        c = self._phys(z, z_opp)
        jd, jt, jd_opp, jt_opp = self._node_jac_scaled(c)
        w_def = w[: self.n_defect].reshape(self.n_int, NX)
        wq = np.zeros((nn, NX))
        wq[:-1] += w_def
        wq[1:] += w_def
        g_own = -0.5 * self.ds * np.einsum("nq,nqp->np", wq, jd)
        w_tc = w[self.off_tire: self.off_power].reshape(nn, 2)
        g_own += np.einsum("na,nap->np", w_tc, -jt)
        if self.coupling is not None and self.coupling.live:
            g_opp = -0.5 * self.ds * np.einsum("nq,nqo->no", wq, jd_opp)
            g_opp += np.einsum("na,nao->no", w_tc, -jt_opp)
            return g_own, g_opp
        return g_own, None

    def weighted_hessian(self, z, sigma, w, z_opp=None, fd_step=3e-5):
        """sigma * hess(objective) + sum_i w_i * hess(c_i), sparse.

        Returns (h_self, h_opp) where h_opp (live mode only) holds the
        mixed second derivatives with respect to the opponent's variables.
        """
        nn = self.n_nodes
        live = self.coupling is not None and self.coupling.live
        base_own, _ = self._weighted_node_grad(z, w, z_opp)
        cols_own = np.zeros((nn, NV, NV))
        for a in range(NV):
            zp = z.copy()
            zp[a::NV] += fd_step
            gp, _ = self._weighted_node_grad(zp, w, z_opp)
            zm = z.copy()
            zm[a::NV] -= fd_step
            gm, _ = self._weighted_node_grad(zm, w, z_opp)
            cols_own[:, :, a] = (gp - gm) / (2.0 * fd_step)
        cols_own = 0.5 * (cols_own + np.transpose(cols_own, (0, 2, 1)))

        j = np.arange(nn)
        rr = (NV * j[:, None, None] + np.arange(NV)[None, :, None]
              + 0 * np.arange(NV)[None, None, :])
        cc = (NV * j[:, None, None] + 0 * np.arange(NV)[None, :, None]
              + np.arange(NV)[None, None, :])
        rows = [rr.ravel()]
        cols = [cc.ravel()]
        vals = [cols_own.ravel()]

        # power rows: constant bilinear cross term between v and F_em
        v_s, f_s = self.x_scale[IV], self.f_scale
        w1 = w[self.off_power: self.off_budget: 2]
        w2 = w[self.off_power + 1: self.off_budget: 2]
        cross = (-w1 / self.vp.P_em_max + w2 / self.vp.P_regen_max) * v_s * f_s
        rows += [NV * j + IV, NV * j + IFEM]
        cols += [NV * j + IFEM, NV * j + IV]
        vals += [cross, cross]

        if self.coupling is not None:
            w_c = w[self.off_coll:]
            t_s, y_s = self.x_scale[IT], self.x_scale[IY]
            htt = 2.0 * w_c * t_s**2 / self.t_gap_min**2
            hyy = 2.0 * w_c * y_s**2 / self.y_gap_min**2
            rows += [NV * j + IT, NV * j + IY]
            cols += [NV * j + IT, NV * j + IY]
            vals += [htt, hyy]

        gap = self._final_gap(z, z_opp)
        i_tn = NV * self.n_int + IT
        if gap is not None:
            k = self.k_pos
            sech2 = 1.0 / np.cosh(k * gap) ** 2
            d2 = -2.0 * k * k * np.tanh(k * gap) * sech2 * self.x_scale[IT] ** 2
            rows.append(np.array([i_tn]))
            cols.append(np.array([i_tn]))
            vals.append(np.array([sigma * d2 / self.obj_scale]))

        h_self = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_vars, self.n_vars))

        h_opp = None
        if live:
            cols_opp = np.zeros((nn, NV, 2))
            for a, slot in enumerate((IT, IY)):
                zp = z_opp.copy()
                zp[slot::NV] += fd_step
                gp, _ = self._weighted_node_grad(z, w, zp)
                zm = z_opp.copy()
                zm[slot::NV] -= fd_step
                gm, _ = self._weighted_node_grad(z, w, zm)
                cols_opp[:, :, a] = (gp - gm) / (2.0 * fd_step)
            rr = (NV * j[:, None, None] + np.arange(NV)[None, :, None]
                  + 0 * np.arange(2)[None, None, :])
            cc = (NV * j[:, None, None] + 0 * np.arange(NV)[None, :, None]
                  + np.array([IT, IY])[None, None, :])
            rows_o = [rr.ravel()]
            cols_o = [cc.ravel()]
            vals_o = [cols_opp.ravel()]
            w_c = w[self.off_coll:]
            t_s, y_s = self.x_scale[IT], self.x_scale[IY]
            rows_o += [NV * j + IT, NV * j + IY]
            cols_o += [NV * j + IT, NV * j + IY]
            vals_o += [-2.0 * w_c * t_s**2 / self.t_gap_min**2,
                       -2.0 * w_c * y_s**2 / self.y_gap_min**2]
            if gap is not None:
                k = self.k_pos
                sech2 = 1.0 / np.cosh(k * gap) ** 2
                d2 = -2.0 * k * k * np.tanh(k * gap) * sech2 * self.x_scale[IT] ** 2
                rows_o.append(np.array([i_tn]))
                cols_o.append(np.array([i_tn]))
                vals_o.append(np.array([-sigma * d2 / self.obj_scale]))
            h_opp = sp.csr_matrix(
                (np.concatenate(vals_o),
                 (np.concatenate(rows_o), np.concatenate(cols_o))),
                shape=(self.n_vars, self.n_vars))
        return h_self, h_opp

    # --- NlpProblem adapter -------------------------------------------------

    def to_nlp_problem(self, x0: np.ndarray, name: str = "lap") -> NlpProblem:
        return NlpProblem(
            n_vars=self.n_vars,
            n_cons=self.n_cons,
            objective=self.objective,
            gradient=self.gradient,
            constraints=self.constraints,
            jacobian=self.jacobian,
            c_lower=self.c_lower,
            c_upper=self.c_upper,
            x_lower=self.x_lower,
            x_upper=self.x_upper,
            x0=x0,
            lag_hess=lambda x, s, w: self.weighted_hessian(x, s, w)[0],
            name=name,
        )


def profile_guess(track: TrackModel, vp: VehicleParams, budget: float,
                  boundary: LapBoundary) -> np.ndarray:
    """Quasi-steady speed-profile warm start, packed (n_nodes, 9) physical.

    Forward/backward friction-limited passes under a power cap that is
    bisected until the predicted net battery spend fits the budget.
    """
    s = track.s_grid
    nn = len(s)
    ds = np.diff(s)
    kap = np.abs(track.kappa)
    mu = 0.92 * vp.mu0
    lc = 0.5 * vp.rho_air * vp.clA
    dc = 0.5 * vp.rho_air * vp.cdA

    def build(v_cap_scale):
        p_cap = vp.P_em_max * v_cap_scale
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = vp.m * kap - mu * lc
            v_corner = np.where(denom > 1e-9,
                                np.sqrt(mu * vp.m * vh.G / np.maximum(denom, 1e-9)),
                                np.inf)
        v_power = (p_cap / dc) ** (1.0 / 3.0)
        v_lim = np.minimum(np.minimum(v_corner, v_power), V_MAX * 0.95)
        v = np.minimum(v_lim, max(boundary.v0, V_MIN + 1.0))
        v[0] = min(boundary.v0, v_lim[0]) if not boundary.cyclic else v_lim[0]
        # forward pass (wrap twice when cyclic so the seam is consistent)
        loops = 2 if boundary.cyclic else 1
        for _ in range(loops):
            for i in range(nn - 1):
                f_max = min(vp.F_em_max, p_cap / max(v[i], 1.0))
                acc = (f_max - dc * v[i] ** 2) / vp.m
                v_next = np.sqrt(max(v[i] ** 2 + 2 * ds[i] * acc, V_MIN**2))
                v[i + 1] = min(v_next, v_lim[i + 1])
            if boundary.cyclic:
                v[0] = v[-1]
        for _ in range(loops):
            for i in range(nn - 2, -1, -1):
                dec = (mu * vp.m * vh.G + dc * v[i + 1] ** 2) / vp.m
                v_prev = np.sqrt(v[i + 1] ** 2 + 2 * ds[i] * dec)
                v[i] = min(v[i], v_prev)
            if boundary.cyclic:
                v[-1] = v[0]
        return v

    def spend_of(v):
        dvds = np.gradient(v, s)
        f_req = vp.m * v * dvds + dc * v**2 + vp.m * vh.G * np.sin(track.theta)
        f_em = np.clip(f_req, -vp.F_em_max, vp.F_em_max)
        p_m = np.clip(f_em * v, -vp.P_regen_max, vp.P_em_max)
        p_b = p_m + vp.k_loss * p_m**2
        dt = 2 * np.concatenate([[0.0], np.cumsum(ds / (v[1:] + v[:-1]))])
        e_spend = np.trapezoid(p_b, dt)
        return e_spend, f_em, p_m, dt

    lo_sc, hi_sc = 0.02, 1.0
    v = build(hi_sc)
    e_spend, f_em, p_m, t = spend_of(v)
    if e_spend > budget:
        for _ in range(18):
            mid = 0.5 * (lo_sc + hi_sc)
            v_mid = build(mid)
            e_mid, f_em, p_m, t = spend_of(v_mid)
            if e_mid > budget:
                hi_sc = mid
            else:
                lo_sc = mid
                v = v_mid
        e_spend, f_em, p_m, t = spend_of(v)

    phys = np.zeros((nn, NV))
    phys[:, IV] = v
    phys[:, IY] = boundary.y0
    phys[:, IPSI] = boundary.psi0
    phys[:, IT] = boundary.t0 + t
    phys[:, IE] = boundary.E_b0 - np.concatenate(
        [[0.0], np.cumsum(0.5 * (p_m[1:] + p_m[:-1]) * np.diff(t))])
    phys[:, IE] = np.clip(phys[:, IE], 0.0, vp.E_b_max)
    dvds = np.gradient(v, s)
    f_req = vp.m * v * dvds + dc * v**2 + vp.m * vh.G * np.sin(track.theta)
    phys[:, IFEM] = np.clip(f_req, 0.0, np.minimum(vp.F_em_max, vp.P_em_max / v))
    f_brake = np.minimum(f_req - phys[:, IFEM], 0.0)
    regen = np.maximum(f_brake, -vp.P_regen_max / v)
    regen = np.maximum(regen, -vp.F_em_max)
    phys[:, IFEM] += regen
    f_fric = f_brake - regen
    phys[:, IFBF] = f_fric * vp.front_share
    phys[:, IFBR] = f_fric * (1.0 - vp.front_share)
    phys[:, IFLAT] = vp.m * v**2 * track.kappa
    return phys
