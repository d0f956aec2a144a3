"""Vehicle dynamics in the spatial domain.

Curvilinear kinematics with slope and banking, a bicycle-model tire limit
with load-sensitive grip, a quadratic-loss electric powertrain, the
charging curve, and the two-car wake interaction. Scalar functions carry
the validating contracts; the *_vec functions are the vectorized forms the
lap transcription evaluates per node, with analytic partials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import (
    KinematicSingularity,
    NonPositiveNormalLoad,
    PowerLimitExceeded,
    ValidationError,
)

G = 9.81


@dataclass(frozen=True)
class VehicleParams:
    m: float = 900.0              # mass [kg]
    cdA: float = 1.2              # drag area [m^2]
    clA: float = 3.0              # downforce area [m^2]
    cop_front: float = 0.45       # aero load fraction on the front axle
    lf: float = 1.55              # CoG to front axle [m]
    lr: float = 1.45              # CoG to rear axle [m]
    mu0: float = 1.6              # nominal friction coefficient
    k_mu: float = 2.0e-5          # grip loss per N of extra normal load [1/N]
    F_em_max: float = 9000.0      # peak motor force [N]
    P_em_max: float = 250e3       # peak motor power [W]
    P_regen_max: float = 250e3    # peak recuperation power [W]
    k_loss: float = 5.0e-7        # quadratic battery loss coefficient [1/W]
    E_b_max: float = 45e6         # battery capacity [J]
    P_charge_max: float = 300e3   # peak charging power [W]
    soc_taper: float = 0.8        # SoC where charge power starts tapering
    p_end: float = 0.1            # charge power fraction left at SoC = 1
    width: float = 1.9            # body width [m]
    length: float = 5.0           # body length [m]
    rho_air: float = 1.2          # air density [kg/m^3]

    def __post_init__(self):
        positive = ("m", "cdA", "clA", "lf", "lr", "mu0", "F_em_max", "P_em_max",
                    "P_regen_max", "E_b_max", "P_charge_max", "width", "length", "rho_air")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValidationError(f"vehicle.{name} must be positive")
        if self.k_mu < 0 or self.k_loss < 0:
            raise ValidationError("k_mu and k_loss must be non-negative")
        if not 0.0 < self.cop_front < 1.0:
            raise ValidationError("cop_front must lie in (0, 1)")
        if not 0.0 < self.soc_taper < 1.0:
            raise ValidationError("soc_taper must lie in (0, 1)")
        if not 0.0 < self.p_end <= 1.0:
            raise ValidationError("p_end must lie in (0, 1]")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr

    @property
    def front_share(self) -> float:
        """Static front-axle load fraction."""
        return self.lr / self.wheelbase


@dataclass(frozen=True)
class WakeParams:
    delta_drag: float = 0.35   # peak drag reduction fraction
    delta_down: float = 0.35   # peak downforce reduction fraction
    tau_wake: float = 1.0      # longitudinal decay scale [s]
    sigma_y: float = 2.0       # lateral decay scale [m]

    def __post_init__(self):
        if not (0.0 <= self.delta_drag < 1.0 and 0.0 <= self.delta_down < 1.0):
            raise ValidationError("wake reduction fractions must lie in [0, 1)")
        if self.tau_wake <= 0 or self.sigma_y <= 0:
            raise ValidationError("wake decay scales must be positive")


@dataclass(frozen=True)
class StateVector:
    v: float          # speed [m/s]
    y: float          # lateral offset from center line [m]
    psi: float        # heading deviation [rad]
    t: float          # elapsed time [s]
    dp: float         # relative position in [-1, 1]
    E_b: float        # battery energy [J]


@dataclass(frozen=True)
class InputVector:
    F_em: float       # motor force [N], negative = regeneration
    F_brake_f: float  # front friction brake force [N], <= 0
    F_brake_r: float  # rear friction brake force [N], <= 0
    F_lat: float      # total lateral tire force [N]


@dataclass(frozen=True)
class TrackPoint:
    """Local track geometry at one arc-length sample."""
    kappa: float = 0.0
    theta: float = 0.0
    phi: float = 0.0
    w_left: float = 6.0
    w_right: float = 6.0


def wake_factor(t_gap: float, y_gap: float, params: WakeParams) -> float:
    """Wake strength seen by the subject car.

    t_gap is the subject's time gap (own elapsed time minus opponent's);
    only a trailing car (t_gap > 0) sits in the wake. The effective drag
    multiplier is (1 - delta_drag * w), downforce (1 - delta_down * w).
    """
    t_gap = np.asarray(t_gap, dtype=float)
    y_gap = np.asarray(y_gap, dtype=float)
    w = np.exp(-((t_gap / params.tau_wake) ** 2) - (y_gap / params.sigma_y) ** 2)
    w = np.where(t_gap > 0.0, w, 0.0)
    if w.ndim == 0:
        return float(w)
    return w


def wake_gaussian(dt, dy, params: WakeParams):
    """Ungated wake magnitude and its partials w.r.t. dt and dy.

    The solver applies its own per-sector gate, so the magnitude here is
    even in dt and smooth everywhere.
    """
    w = np.exp(-((dt / params.tau_wake) ** 2) - (dy / params.sigma_y) ** 2)
    dw_dt = w * (-2.0 * dt / params.tau_wake**2)
    dw_dy = w * (-2.0 * dy / params.sigma_y**2)
    return w, dw_dt, dw_dy


def battery_power(F_em: float, v: float, params: VehicleParams) -> float:
    """Battery-side power for a mechanical operating point (quadratic loss)."""
    p_m = F_em * v
    if F_em > 0 and p_m > params.P_em_max * (1 + 1e-9):
        raise PowerLimitExceeded(f"drive power {p_m:.0f} W exceeds {params.P_em_max:.0f} W")
    if F_em < 0 and p_m < -params.P_regen_max * (1 + 1e-9):
        raise PowerLimitExceeded(f"regen power {-p_m:.0f} W exceeds {params.P_regen_max:.0f} W")
    return p_m + params.k_loss * p_m * p_m


def charge_power(soc, params: VehicleParams):
    """Charging power vs. state of charge: flat, then a linear taper.

    Full power up to soc_taper, dropping linearly to p_end * P_charge_max
    at soc = 1. Continuous; accepts scalars or arrays.
    """
    soc = np.asarray(soc, dtype=float)
    if np.any(soc < -1e-12) or np.any(soc > 1 + 1e-12):
        raise ValidationError("soc must lie in [0, 1]")
    frac = np.clip((soc - params.soc_taper) / (1.0 - params.soc_taper), 0.0, 1.0)
    p = params.P_charge_max * (1.0 - (1.0 - params.p_end) * frac)
    if p.ndim == 0:
        return float(p)
    return p


def spatial_derivatives(x: StateVector, u: InputVector, track_point: TrackPoint,
                        wake: float, vp: VehicleParams,
                        wake_params: WakeParams = WakeParams()) -> np.ndarray:
    """Six spatial derivatives (v, y, psi, t, dp, E_b)' at one point.

    wake is the wake factor w in [0, 1]; dp is piecewise constant between
    mini-sector markers so its derivative is zero.
    """
    c = 1.0 - track_point.kappa * x.y
    if c <= 0.0 or np.cos(x.psi) <= 0.0:
        raise KinematicSingularity(f"1 - kappa*y = {c:.3g}, cos(psi) = {np.cos(x.psi):.3g}")
    drag_mult = 1.0 - wake_params.delta_drag * wake
    dv, dy, dpsi, dt, de = dyn_rhs_vec(
        vp, np.asarray(track_point.kappa), np.asarray(track_point.theta),
        np.asarray(x.v), np.asarray(x.y), np.asarray(x.psi),
        np.asarray(u.F_em), np.asarray(u.F_brake_f), np.asarray(u.F_brake_r),
        np.asarray(u.F_lat), np.asarray(drag_mult))
    return np.array([float(dv), float(dy), float(dpsi), float(dt), 0.0, float(de)])


def tire_constraint_residuals(x: StateVector, u: InputVector, track_point: TrackPoint,
                              wake: float, vp: VehicleParams,
                              wake_params: WakeParams = WakeParams()):
    """Friction-ellipse residuals (front, rear); feasible iff <= 0."""
    if x.v <= 0:
        raise ValidationError("v must be positive")
    down_mult = 1.0 - wake_params.delta_down * wake
    res = tire_residuals_vec(
        vp, np.asarray(track_point.theta), np.asarray(track_point.phi),
        np.asarray(x.v), np.asarray(u.F_em), np.asarray(u.F_brake_f),
        np.asarray(u.F_brake_r), np.asarray(u.F_lat), np.asarray(down_mult),
        check_load=True)
    return float(res[..., 0]), float(res[..., 1])


# --- vectorized forms used by the lap transcription -----------------------

def dyn_rhs_vec(vp: VehicleParams, kappa, theta, v, y, psi,
                f_em, f_bf, f_br, f_lat, drag_mult):
    """Spatial derivatives of (v, y, psi, t, E_b), vectorized over nodes.

    drag_mult is the wake-adjusted drag multiplier (1 - delta_drag * w);
    the caller owns the wake chain rule.
    """
    c = 1.0 - kappa * y
    cp = np.cos(psi)
    sf = c / (v * cp)
    f_drag = 0.5 * vp.rho_air * vp.cdA * drag_mult * v * v
    f_net = f_em + f_bf + f_br - f_drag - vp.m * G * np.sin(theta)
    p_m = f_em * v
    p_b = p_m + vp.k_loss * p_m * p_m
    dv = sf * f_net / vp.m
    dy = c * np.tan(psi)
    dpsi = sf * f_lat / (vp.m * v) - kappa
    dt = sf
    de = -sf * p_b
    return dv, dy, dpsi, dt, de


#: column order of the dynamics Jacobian blocks
DYN_COLS = ("v", "y", "psi", "f_em", "f_bf", "f_br", "f_lat", "drag_mult")


def dyn_jac_vec(vp: VehicleParams, kappa, theta, v, y, psi,
                f_em, f_bf, f_br, f_lat, drag_mult):
    """Analytic Jacobian of dyn_rhs_vec, shape (n, 5, 8), columns DYN_COLS."""
    n = np.broadcast(v, y).size
    c = 1.0 - kappa * y
    cp = np.cos(psi)
    sp = np.sin(psi)
    tp = sp / cp
    sf = c / (v * cp)
    dc = 0.5 * vp.rho_air * vp.cdA
    f_drag = dc * drag_mult * v * v
    f_net = f_em + f_bf + f_br - f_drag - vp.m * G * np.sin(theta)
    p_m = f_em * v
    p_b = p_m + vp.k_loss * p_m * p_m
    dpb_dv = f_em + 2.0 * vp.k_loss * f_em * f_em * v
    dpb_dfem = v + 2.0 * vp.k_loss * f_em * v * v

    dsf_dv = -sf / v
    dsf_dy = -kappa / (v * cp)
    dsf_dpsi = sf * tp

    jac = np.zeros((n, 5, 8))
    m = vp.m
    # dv/ds = sf * f_net / m
    jac[:, 0, 0] = (dsf_dv * f_net - sf * 2.0 * dc * drag_mult * v) / m
    jac[:, 0, 1] = dsf_dy * f_net / m
    jac[:, 0, 2] = dsf_dpsi * f_net / m
    jac[:, 0, 3] = sf / m
    jac[:, 0, 4] = sf / m
    jac[:, 0, 5] = sf / m
    jac[:, 0, 7] = -sf * dc * v * v / m
    # dy/ds = c * tan(psi)
    jac[:, 1, 1] = -kappa * tp
    jac[:, 1, 2] = c / cp**2
    # dpsi/ds = sf * f_lat / (m v) - kappa
    jac[:, 2, 0] = -2.0 * c * f_lat / (m * v**3 * cp)
    jac[:, 2, 1] = -kappa * f_lat / (m * v * v * cp)
    jac[:, 2, 2] = c * f_lat * sp / (m * v * v * cp**2)
    jac[:, 2, 6] = c / (m * v * v * cp)
    # dt/ds = sf
    jac[:, 3, 0] = dsf_dv
    jac[:, 3, 1] = dsf_dy
    jac[:, 3, 2] = dsf_dpsi
    # dE/ds = -sf * p_b
    jac[:, 4, 0] = -(dsf_dv * p_b + sf * dpb_dv)
    jac[:, 4, 1] = -dsf_dy * p_b
    jac[:, 4, 2] = -dsf_dpsi * p_b
    jac[:, 4, 3] = -sf * dpb_dfem
    return jac


def normal_loads_vec(vp: VehicleParams, theta, phi, v, down_mult):
    """Per-axle normal loads (front, rear): static split + wake-adjusted aero."""
    g_n = G * np.cos(theta) * np.cos(phi)
    aero = 0.5 * vp.rho_air * vp.clA * down_mult * v * v
    fz_f = vp.m * g_n * vp.lr / vp.wheelbase + vp.cop_front * aero
    fz_r = vp.m * g_n * vp.lf / vp.wheelbase + (1.0 - vp.cop_front) * aero
    return fz_f, fz_r


#: column order of the tire Jacobian blocks
TIRE_COLS = ("v", "f_em", "f_bf", "f_br", "f_lat", "down_mult")


def tire_residuals_vec(vp: VehicleParams, theta, phi, v, f_em, f_bf, f_br,
                       f_lat, down_mult, check_load: bool = False):
    """Friction-ellipse residuals per node, shape (n, 2) = (front, rear).

    Feasible iff <= 0. Motor force acts on the rear axle; lateral force is
    split across axles by the static weight distribution; grip falls
    linearly with normal load above the flat-static reference.
    """
    fz_f, fz_r = normal_loads_vec(vp, theta, phi, v, down_mult)
    if check_load and (np.any(fz_f <= 0) or np.any(fz_r <= 0)):
        raise NonPositiveNormalLoad("axle normal load is non-positive")
    fzs_f = vp.m * G * vp.lr / vp.wheelbase
    fzs_r = vp.m * G * vp.lf / vp.wheelbase
    mu_f = vp.mu0 * (1.0 - vp.k_mu * (fz_f - fzs_f))
    mu_r = vp.mu0 * (1.0 - vp.k_mu * (fz_r - fzs_r))
    sh_f = vp.front_share
    a_f = f_bf
    a_r = f_em + f_br
    b_f = f_lat * sh_f
    b_r = f_lat * (1.0 - sh_f)
    n_f = mu_f * fz_f
    n_r = mu_r * fz_r
    res = np.empty(np.broadcast(v, f_em).shape + (2,))
    res[..., 0] = (a_f * a_f + b_f * b_f) / (n_f * n_f) - 1.0
    res[..., 1] = (a_r * a_r + b_r * b_r) / (n_r * n_r) - 1.0
    return res


def tire_jac_vec(vp: VehicleParams, theta, phi, v, f_em, f_bf, f_br,
                 f_lat, down_mult):
    """Analytic Jacobian of tire_residuals_vec, shape (n, 2, 6), columns TIRE_COLS."""
    n = np.broadcast(v, f_em).size
    fz_f, fz_r = normal_loads_vec(vp, theta, phi, v, down_mult)
    fzs_f = vp.m * G * vp.lr / vp.wheelbase
    fzs_r = vp.m * G * vp.lf / vp.wheelbase
    mu_f = vp.mu0 * (1.0 - vp.k_mu * (fz_f - fzs_f))
    mu_r = vp.mu0 * (1.0 - vp.k_mu * (fz_r - fzs_r))
    sh_f = vp.front_share
    lc = 0.5 * vp.rho_air * vp.clA
    a_f = f_bf
    a_r = f_em + f_br
    b_f = f_lat * sh_f
    b_r = f_lat * (1.0 - sh_f)
    n_f = mu_f * fz_f
    n_r = mu_r * fz_r
    # dN/dFz, then chain through the aero load
    dn_dfz_f = mu_f - vp.mu0 * vp.k_mu * fz_f
    dn_dfz_r = mu_r - vp.mu0 * vp.k_mu * fz_r
    dfz_dv_f = vp.cop_front * 2.0 * lc * down_mult * v
    dfz_dv_r = (1.0 - vp.cop_front) * 2.0 * lc * down_mult * v
    dfz_ddm_f = vp.cop_front * lc * v * v
    dfz_ddm_r = (1.0 - vp.cop_front) * lc * v * v
    s_f = a_f * a_f + b_f * b_f
    s_r = a_r * a_r + b_r * b_r
    dres_dn_f = -2.0 * s_f / n_f**3
    dres_dn_r = -2.0 * s_r / n_r**3

    jac = np.zeros((n, 2, 6))
    jac[:, 0, 0] = dres_dn_f * dn_dfz_f * dfz_dv_f
    jac[:, 1, 0] = dres_dn_r * dn_dfz_r * dfz_dv_r
    jac[:, 1, 1] = 2.0 * a_r / (n_r * n_r)
    jac[:, 0, 2] = 2.0 * a_f / (n_f * n_f)
    jac[:, 1, 3] = 2.0 * a_r / (n_r * n_r)
    jac[:, 0, 4] = 2.0 * b_f * sh_f / (n_f * n_f)
    jac[:, 1, 4] = 2.0 * b_r * (1.0 - sh_f) / (n_r * n_r)
    jac[:, 0, 5] = dres_dn_f * dn_dfz_f * dfz_ddm_f
    jac[:, 1, 5] = dres_dn_r * dn_dfz_r * dfz_ddm_r
    return jac
