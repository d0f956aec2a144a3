"""Self-contained NLP solver.

Problems are stated as

    min f(x)  s.t.  c_lower <= c(x) <= c_upper,  x_lower <= x <= x_upper

and solved by an augmented-Lagrangian outer loop over the slack
reformulation c(x) - s = 0, s in [c_lower, c_upper], with a damped
projected-Newton inner loop on the bound-constrained subproblem. All
linear algebra is sparse; the Newton step is computed from the augmented
saddle system so J^T J is never formed. Deterministic for fixed inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MaxIterations, NanEncountered, SingularKktSystem

log = logging.getLogger(__name__)


@dataclass
class NlpProblem:
    """Differentiable NLP with sparse first derivatives.

    lag_hess(x, sigma, w) must return a sparse (n, n) matrix equal to
    sigma * hess(f) + sum_i w_i * hess(c_i); when omitted, a dense
    finite-difference fallback is used (small problems only).
    """

    n_vars: int
    n_cons: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], sp.spmatrix]
    c_lower: np.ndarray
    c_upper: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    x0: np.ndarray
    lag_hess: Optional[Callable] = None
    name: str = "nlp"

    def __post_init__(self):
        self.c_lower = np.asarray(self.c_lower, dtype=float).reshape(self.n_cons)
        self.c_upper = np.asarray(self.c_upper, dtype=float).reshape(self.n_cons)
        self.x_lower = np.asarray(self.x_lower, dtype=float).reshape(self.n_vars)
        self.x_upper = np.asarray(self.x_upper, dtype=float).reshape(self.n_vars)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.n_vars)

    def jacobian_sparsity(self) -> sp.csr_matrix:
        """Structural pattern of the constraint Jacobian at the initial guess."""
        j = sp.csr_matrix(self.jacobian(self.x0))
        pattern = j.copy()
        pattern.data = np.ones_like(pattern.data)
        return pattern


@dataclass
class SolverOptions:
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-6
    max_outer: int = 60
    max_inner: int = 400
    rho0: float = 10.0
    rho_max: float = 1e12
    verbose: bool = False


@dataclass
class NlpResult:
    x: np.ndarray
    status: str                    # optimal | infeasible
    kkt_residual: float
    f: float
    c_viol: float
    y: np.ndarray                  # constraint multipliers
    n_inner: int = 0
    s: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _fd_lag_hess(p: NlpProblem, x, sigma, w, h=1e-5):
    """Dense central-difference Hessian of sigma*f + w.c for small problems."""
    n = p.n_vars

    def grad_l(z):
        g = sigma * p.gradient(z)
        if p.n_cons:
            g = g + p.jacobian(z).T @ w
        return g

    out = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        step = h * max(1.0, abs(x[i]))
        e[i] = step
        out[:, i] = (grad_l(x + e) - grad_l(x - e)) / (2 * step)
    return sp.csr_matrix(0.5 * (out + out.T))


def solve_nlp(p: NlpProblem, opts: SolverOptions = SolverOptions(),
              y0: Optional[np.ndarray] = None) -> NlpResult:
    """Solve to first-order KKT tolerance opts.tol_kkt.

    Raises MaxIterations (with .result attached) when the iteration budget
    runs out, NanEncountered on non-finite evaluations at the start point,
    SingularKktSystem when the Newton system cannot be regularized.
    """
    n, m = p.n_vars, p.n_cons
    x = np.clip(p.x0.copy(), p.x_lower, p.x_upper)
    if not np.all(np.isfinite(x)):
        raise NanEncountered(f"{p.name}: initial guess not finite")
    c_val = p.constraints(x) if m else np.zeros(0)
    if not np.all(np.isfinite(c_val)) or not np.isfinite(p.objective(x)):
        raise NanEncountered(f"{p.name}: objective/constraints not finite at x0")
    s = np.clip(c_val, p.c_lower, p.c_upper)
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float).copy()
    rho = opts.rho0
    omega = 1.0 / rho
    eta = 1.0 / rho**0.1

    z_lower = np.concatenate([p.x_lower, p.c_lower]) if m else p.x_lower
    z_upper = np.concatenate([p.x_upper, p.c_upper]) if m else p.x_upper
    z = np.concatenate([x, s]) if m else x
    total_inner = 0

    def split(zv):
        return (zv[:n], zv[n:]) if m else (zv, np.zeros(0))

    def phi_and_grad(zv):
        xv, sv = split(zv)
        cv = p.constraints(xv) if m else np.zeros(0)
        hv = cv - sv
        fv = p.objective(xv)
        val = fv - y @ hv + 0.5 * rho * (hv @ hv)
        gx = p.gradient(xv)
        if m:
            jac = p.jacobian(xv)
            w = rho * hv - y
            gx = gx + jac.T @ w
            gs = -(rho * hv - y)
            return val, np.concatenate([gx, gs]), hv, jac
        return val, gx, hv, None

    for outer in range(opts.max_outer):
        # --- inner: projected Newton on the box ---
        val, grad, h_res, jac = phi_and_grad(z)
        inner_tol = max(omega, 0.3 * opts.tol_kkt)
        for inner in range(opts.max_inner):
            total_inner += 1
            pg = np.clip(z - grad, z_lower, z_upper) - z
            pg_norm = float(np.max(np.abs(pg))) if len(pg) else 0.0
            if pg_norm <= inner_tol:
                break
            eps_act = min(1e-6, 0.1 * pg_norm)
            lo_act = (z - z_lower <= eps_act) & (grad > 0)
            hi_act = (z_upper - z <= eps_act) & (grad < 0)
            free = ~(lo_act | hi_act) & (z_upper - z_lower > 0)
            if not np.any(free):
                break
            d = _newton_direction(p, z, grad, jac, free, rho, y, h_res, n, m,
                                  opts)
            if d is None:
                d = -pg  # gradient fallback
            # Armijo backtracking along the projected path
            alpha = 1.0
            accepted = False
            for _ in range(40):
                z_new = np.clip(z + alpha * d, z_lower, z_upper)
                step = z_new - z
                if not np.any(step):
                    break
                val_new, grad_new, h_new, jac_new = phi_and_grad(z_new)
                if np.isfinite(val_new) and val_new <= val + 1e-4 * (grad @ step):
                    z, val, grad, h_res, jac = z_new, val_new, grad_new, h_new, jac_new
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # try the projected-gradient direction before giving up
                alpha = 1.0
                for _ in range(40):
                    z_new = np.clip(z - alpha * grad, z_lower, z_upper)
                    if not np.any(z_new - z):
                        break
                    val_new, grad_new, h_new, jac_new = phi_and_grad(z_new)
                    if np.isfinite(val_new) and val_new < val:
                        z, val, grad, h_res, jac = z_new, val_new, grad_new, h_new, jac_new
                        accepted = True
                        break
                    alpha *= 0.5
            if not accepted:
                break
        else:
            res = _final_result(p, z, y, rho, n, m, total_inner)
            exc = MaxIterations(f"{p.name}: inner iteration budget exhausted")
            exc.result = res
            raise exc

        feas = float(np.max(np.abs(h_res))) if m else 0.0
        pg = np.clip(z - grad, z_lower, z_upper) - z
        pg_norm = float(np.max(np.abs(pg))) if len(pg) else 0.0
        if opts.verbose:
            log.info("%s outer %d: feas %.2e pgrad %.2e rho %.1e",
                     p.name, outer, feas, pg_norm, rho)
        if feas <= max(eta, opts.tol_feas):
            y = y - rho * h_res
            if feas <= opts.tol_feas and pg_norm <= opts.tol_kkt:
                return _final_result(p, z, y, rho, n, m, total_inner, pg_norm)
            eta = max(eta / rho**0.9, 0.1 * opts.tol_feas)
            omega = max(omega / rho, 0.3 * opts.tol_kkt)
        else:
            if rho >= opts.rho_max:
                res = _final_result(p, z, y, rho, n, m, total_inner, pg_norm)
                res.status = "infeasible"
                return res
            rho *= 10.0
            eta = 1.0 / rho**0.1
            omega = 1.0 / rho

    res = _final_result(p, z, y, rho, n, m, total_inner)
    exc = MaxIterations(f"{p.name}: outer iteration budget exhausted")
    exc.result = res
    raise exc


def _newton_direction(p, z, grad, jac, free, rho, y, h_res, n, m, opts):
    """Solve the free-variable Newton system in augmented saddle form."""
    idx_free = np.flatnonzero(free)
    nf = len(idx_free)
    x = z[:n]
    w = (rho * h_res - y) if m else np.zeros(0)
    if p.lag_hess is not None:
        h_lag = sp.csr_matrix(p.lag_hess(x, 1.0, w))
    else:
        h_lag = _fd_lag_hess(p, x, 1.0, w)
    h_ext = sp.block_diag(
        [h_lag, sp.csr_matrix((m, m))], format="csr") if m else h_lag
    h_ff = h_ext[idx_free][:, idx_free]
    if m:
        j_ext = sp.hstack([sp.csr_matrix(jac), -sp.identity(m, format="csr")],
                          format="csr")
        j_f = j_ext[:, idx_free]
        rhs = np.concatenate([-grad[idx_free], np.zeros(m)])
    else:
        j_f = None
        rhs = -grad[idx_free]

    diag_scale = max(1.0, abs(h_ff.diagonal()).max() if h_ff.nnz else 1.0)
    tau = 0.0
    for attempt in range(12):
        try:
            if m:
                k = sp.bmat([[h_ff + tau * sp.identity(nf), j_f.T],
                             [j_f, -(1.0 / rho) * sp.identity(m)]],
                            format="csc")
            else:
                k = sp.csc_matrix(h_ff + tau * sp.identity(nf))
            lu = spla.splu(k)
            sol = lu.solve(rhs)
        except (RuntimeError, ValueError):
            tau = max(10.0 * tau, 1e-8 * diag_scale)
            continue
        d_f = sol[:nf]
        if not np.all(np.isfinite(d_f)):
            tau = max(10.0 * tau, 1e-8 * diag_scale)
            continue
        slope = grad[idx_free] @ d_f
        if slope < -1e-14 * diag_scale * (d_f @ d_f):
            d = np.zeros_like(z)
            d[idx_free] = d_f
            return d
        tau = max(10.0 * tau, 1e-6 * diag_scale)
    return None


def _final_result(p, z, y, rho, n, m, total_inner, pg_norm=None):
    x, s = (z[:n], z[n:]) if m else (z, np.zeros(0))
    c_val = p.constraints(x) if m else np.zeros(0)
    h_res = c_val - s
    feas = float(np.max(np.abs(h_res))) if m else 0.0
    if pg_norm is None:
        g = p.gradient(x)
        if m:
            g = g - p.jacobian(x).T @ y
        pg = np.clip(x - g, p.x_lower, p.x_upper) - x
        pg_norm = float(np.max(np.abs(pg))) if len(pg) else 0.0
    return NlpResult(
        x=x,
        status="optimal",
        kkt_residual=max(pg_norm, feas),
        f=float(p.objective(x)),
        c_viol=feas,
        y=y.copy(),
        n_inner=total_inner,
        s=s.copy(),
    )
