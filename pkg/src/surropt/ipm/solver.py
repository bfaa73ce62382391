"""Primal-dual interior-point solver with per-callback instrumentation.

Solves canonical models (equality constraints plus variable bounds) by a
line-search barrier method: monotone Fiacco-McCormick barrier updates, a
primal-dual search direction from the symmetric indefinite KKT system

    [ W + Sigma + delta_w I   J^T       ] [dx     ]   [ grad(phi_mu) + J^T lam ]
    [ J                      -delta_c I ] [dlambda] = -[ c                      ]

with inertia-corrected LDL^T factorization, a backtracking line search on the
exact l1 merit function, and fraction-to-boundary safeguards on primal and
dual iterates.  W comes from the exact Lagrangian Hessian callback or from a
damped limited-memory BFGS approximation; in the quasi-Newton mode the
Hessian callback is never invoked.

Every callback invocation is wall-clock timed into one of five categories
(function, jacobian, hessian, solver linear algebra, other) so solve-time
breakdowns can be reported per run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..nlp import canonicalize
from .lbfgs import LbfgsHessian
from .ldlt import factorize

_KAPPA_SIGMA = 1e10  # primal-dual complementarity safeguard width

TIMER_CATEGORIES = ("function", "jacobian", "hessian", "solver", "other")


@dataclass
class IpmOptions:
    tol: float = 1e-8
    max_iter: int = 3000
    mu_init: float = 0.1
    kappa_mu: float = 0.2          # linear barrier reduction factor
    theta_mu: float = 1.5          # superlinear barrier exponent
    kappa_eps: float = 10.0        # barrier subproblem tolerance multiple
    tau: float = 0.99              # fraction-to-boundary floor
    hessian_mode: str = "exact"    # "exact" | "lbfgs"
    lbfgs_memory: int = 6
    delta_w_init: float = 1e-4
    delta_w_min: float = 1e-20
    delta_w_max: float = 1e40
    kappa_w_plus: float = 8.0
    kappa_w_plus_first: float = 100.0
    kappa_w_minus: float = 1.0 / 3.0
    delta_c_bar: float = 1e-8
    kappa_c: float = 0.25
    bound_push: float = 0.01
    bound_frac: float = 0.01
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_ls: int = 30
    penalty_rho: float = 0.1
    dense_threshold: int = 500     # own factorization up to here, LAPACK above
    log_stream: object = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("fraction-to-boundary must be in (0, 1)")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs memory must be at least 1")
        if self.hessian_mode not in ("exact", "lbfgs"):
            raise ValueError(f"unknown hessian mode {self.hessian_mode!r}")


@dataclass
class SolveStats:
    status: str
    objective: float
    iterations: int
    wall_time: float
    timers: dict[str, float]
    time_per_iteration: float
    num_variables: int = 0
    num_constraints: int = 0
    function_evals: int = 0
    hessian_evals: int = 0

    def breakdown_percent(self) -> dict[str, float]:
        total = max(self.wall_time, 1e-12)
        return {k: 100.0 * v / total for k, v in self.timers.items()}


@dataclass
class IpmState:
    x: np.ndarray
    lam: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    mu: float
    iteration: int = 0
    delta_w_last: float = 0.0
    timers: dict[str, float] = field(
        default_factory=lambda: {k: 0.0 for k in TIMER_CATEGORIES})


@dataclass
class IpmResult:
    status: str
    x: np.ndarray                 # original model variables
    x_canonical: np.ndarray
    objective: float
    multipliers: np.ndarray
    bound_multipliers: tuple[np.ndarray, np.ndarray]
    stats: SolveStats


class _FactorizationBudgetExceeded(RuntimeError):
    pass


class _Diverged(Exception):
    pass


def _finite(*arrays) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


class InteriorPointSolver:
    def __init__(self, model, options: IpmOptions | None = None):
        self.options = options or IpmOptions()
        self.canon, _ = canonicalize(model)
        self.n = self.canon.n_vars
        self.m = self.canon.n_rows
        self.lb = self.canon.lower
        self.ub = self.canon.upper
        self.has_lb = np.isfinite(self.lb)
        self.has_ub = np.isfinite(self.ub)
        self._ws = self.canon.workspace()
        self._compute_scaling()

    def _compute_scaling(self, max_gradient: float = 100.0) -> None:
        """Gradient-based down-scaling of objective and constraint rows.

        Badly scaled objectives (dollar costs against per-unit physics)
        otherwise swamp the merit function and blow up the multipliers.
        Scale factors are fixed at the start point and only ever shrink.
        """
        self.obj_scale = 1.0
        self.row_scale = np.ones(self.m)
        try:
            x0 = self._project_start()
            grad, jv = self.canon.eval_derivatives(x0, self._ws)
        except ArithmeticError:
            return
        if not (np.isfinite(grad).all() and np.isfinite(jv).all()):
            return
        gmax = np.max(np.abs(grad)) if self.n else 0.0
        if gmax > max_gradient:
            self.obj_scale = max_gradient / gmax
        if self.m:
            row_max = np.zeros(self.m)
            np.maximum.at(row_max, self.canon.jac_rows, np.abs(jv))
            big = row_max > max_gradient
            self.row_scale[big] = max_gradient / row_max[big]

    # scaled callback layer: the algorithm below sees only these

    def _eval_fc(self, x, ws=None):
        f, c = self.canon.eval_fc(x, ws)
        return self.obj_scale * f, self.row_scale * c

    def _eval_derivatives(self, x, ws=None):
        grad, jv = self.canon.eval_derivatives(x, ws)
        if self.m:
            jv = jv * self.row_scale[self.canon.jac_rows]
        return self.obj_scale * grad, jv

    def _eval_hessian(self, x, lam, ws=None):
        return self.canon.eval_hessian(x, self.obj_scale,
                                       lam * self.row_scale, ws)

    # -- small pieces --------------------------------------------------------

    def _timed(self, state: IpmState, category: str, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        state.timers[category] += time.perf_counter() - t0
        return out

    def _project_start(self) -> np.ndarray:
        x = self.canon.start.copy()
        k1, k2 = self.options.bound_push, self.options.bound_frac
        lb, ub = self.lb, self.ub
        both = self.has_lb & self.has_ub
        low_only = self.has_lb & ~self.has_ub
        up_only = self.has_ub & ~self.has_lb
        if both.any():
            width = ub[both] - lb[both]
            pl = np.minimum(k1 * np.maximum(1.0, np.abs(lb[both])), k2 * width)
            pu = np.minimum(k1 * np.maximum(1.0, np.abs(ub[both])), k2 * width)
            x[both] = np.clip(x[both], lb[both] + pl, ub[both] - pu)
        if low_only.any():
            push = k1 * np.maximum(1.0, np.abs(lb[low_only]))
            x[low_only] = np.maximum(x[low_only], lb[low_only] + push)
        if up_only.any():
            push = k1 * np.maximum(1.0, np.abs(ub[up_only]))
            x[up_only] = np.minimum(x[up_only], ub[up_only] - push)
        return x

    def _jac_t_lam(self, jv: np.ndarray, lam: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(self.n)
        return np.bincount(self.canon.jac_cols,
                           weights=jv * lam[self.canon.jac_rows],
                           minlength=self.n)

    def _kkt_error(self, grad, jv, c, lam, zl, zu, x, mu):
        """IPOPT-style scaled optimality error and its three components."""
        dual = grad + self._jac_t_lam(jv, lam) - zl + zu
        dual_inf = np.max(np.abs(dual)) if self.n else 0.0
        primal_inf = np.max(np.abs(c)) if self.m else 0.0
        comp = 0.0
        if self.has_lb.any():
            comp = max(comp, np.max(np.abs(
                (x[self.has_lb] - self.lb[self.has_lb]) * zl[self.has_lb] - mu)))
        if self.has_ub.any():
            comp = max(comp, np.max(np.abs(
                (self.ub[self.has_ub] - x[self.has_ub]) * zu[self.has_ub] - mu)))
        n_duals = self.m + int(self.has_lb.sum()) + int(self.has_ub.sum())
        s_max = 100.0
        if n_duals:
            avg = (np.sum(np.abs(lam)) + np.sum(np.abs(zl[self.has_lb]))
                   + np.sum(np.abs(zu[self.has_ub]))) / n_duals
            s_d = max(s_max, avg) / s_max
        else:
            s_d = 1.0
        n_z = int(self.has_lb.sum()) + int(self.has_ub.sum())
        if n_z:
            avg_z = (np.sum(np.abs(zl[self.has_lb]))
                     + np.sum(np.abs(zu[self.has_ub]))) / n_z
            s_c = max(s_max, avg_z) / s_max
        else:
            s_c = 1.0
        return (max(dual_inf / s_d, primal_inf, comp / s_c),
                dual_inf, primal_inf, comp)

    def _sigma_diag(self, x, zl, zu) -> np.ndarray:
        sig = np.zeros(self.n)
        sig[self.has_lb] += zl[self.has_lb] / (x[self.has_lb] - self.lb[self.has_lb])
        sig[self.has_ub] += zu[self.has_ub] / (self.ub[self.has_ub] - x[self.has_ub])
        return sig

    def _barrier_gradient(self, grad, x, mu) -> np.ndarray:
        g = grad.copy()
        g[self.has_lb] -= mu / (x[self.has_lb] - self.lb[self.has_lb])
        g[self.has_ub] += mu / (self.ub[self.has_ub] - x[self.has_ub])
        return g

    def _barrier_value(self, f, x, mu) -> float:
        sl = x[self.has_lb] - self.lb[self.has_lb]
        su = self.ub[self.has_ub] - x[self.has_ub]
        if (len(sl) and sl.min() <= 0.0) or (len(su) and su.min() <= 0.0):
            return np.inf
        v = f
        if len(sl):
            v -= mu * np.sum(np.log(sl))
        if len(su):
            v -= mu * np.sum(np.log(su))
        return v

    def _assemble(self, W, sigma, jv, grad_phi, jt_lam, c, delta_w, delta_c):
        """Dense symmetric KKT matrix and right-hand side.

        ``W`` is either a COO triple over the lower triangle or a dense block.
        """
        n, m = self.n, self.m
        K = np.zeros((n + m, n + m))
        if isinstance(W, tuple):
            hr, hc, hv = W
            np.add.at(K, (hr, hc), hv)
            off = hr != hc
            np.add.at(K, (hc[off], hr[off]), hv[off])
        else:
            K[:n, :n] += W
        diag = np.arange(n)
        K[diag, diag] += sigma + delta_w
        if m:
            jr, jc = self.canon.jac_rows, self.canon.jac_cols
            np.add.at(K, (n + jr, jc), jv)
            np.add.at(K, (jc, n + jr), jv)
            mdiag = np.arange(n, n + m)
            K[mdiag, mdiag] -= delta_c
            rhs = np.concatenate([-(grad_phi + jt_lam), -c])
        else:
            rhs = -(grad_phi + jt_lam)
        return K, rhs

    def assemble_kkt(self, x, lam, zl, zu, mu, delta_w: float = 0.0,
                     delta_c: float = 0.0):
        """KKT matrix and right-hand side at an explicit iterate."""
        canon = self.canon
        _, c = self._eval_fc(x, self._ws)
        grad, jv = self._eval_derivatives(x, self._ws)
        if self.options.hessian_mode == "lbfgs":
            W = LbfgsHessian(self.n, self.options.lbfgs_memory).matrix()
        else:
            hv = self._eval_hessian(x, lam, self._ws)
            W = (canon.hess_rows, canon.hess_cols, hv)
        sigma = self._sigma_diag(x, zl, zu)
        grad_phi = self._barrier_gradient(grad, x, mu)
        jt_lam = self._jac_t_lam(jv, lam)
        return self._assemble(W, sigma, jv, grad_phi, jt_lam, c,
                              delta_w, delta_c)

    def _factorize_corrected(self, state: IpmState, build):
        """Regularize until the inertia is (n, m, 0).

        A shortfall of positive eigenvalues (missing primal curvature) grows
        delta_w geometrically; a shortfall of negative eigenvalues or any
        zero pivot (a deficient or borderline constraint block) grows
        delta_c.  Each lever moves only when its own count is wrong.
        """
        opts = self.options
        target = (self.n, self.m, 0)
        fact = self._timed(state, "solver", factorize, build(0.0, 0.0), "auto",
                           opts.dense_threshold)
        if fact.inertia == target:
            return fact, 0.0, 0.0
        delta_w = 0.0
        delta_c = 0.0
        growth = opts.kappa_w_plus
        for _ in range(60):
            pos, neg, zero = fact.inertia
            if zero > 0 or neg < self.m:
                delta_c = opts.delta_c_bar * state.mu ** opts.kappa_c \
                    if delta_c == 0.0 else 10.0 * delta_c
            if zero > 0 or pos < self.n:
                if delta_w == 0.0:
                    if state.delta_w_last == 0.0:
                        delta_w = opts.delta_w_init
                        growth = opts.kappa_w_plus_first
                    else:
                        delta_w = max(opts.delta_w_min,
                                      opts.kappa_w_minus * state.delta_w_last)
                        growth = opts.kappa_w_plus
                else:
                    delta_w *= growth
                    growth = opts.kappa_w_plus
            if delta_w > opts.delta_w_max or delta_c > opts.delta_w_max:
                break
            fact = self._timed(state, "solver", factorize,
                               build(delta_w, delta_c), "auto",
                               opts.dense_threshold)
            if fact.inertia == target:
                if delta_w:
                    state.delta_w_last = delta_w
                return fact, delta_w, delta_c
        raise _FactorizationBudgetExceeded

    # -- main loop -------------------------------------------------------------

    def solve(self) -> IpmResult:
        opts = self.options
        canon = self.canon
        n, m = self.n, self.m
        lb, ub = self.lb, self.ub
        has_lb, has_ub = self.has_lb, self.has_ub
        t_start = time.perf_counter()

        x = self._project_start()
        mu = opts.mu_init
        zl = np.zeros(n)
        zu = np.zeros(n)
        zl[has_lb] = np.clip(mu / (x[has_lb] - lb[has_lb]), 1e-6, 1e6)
        zu[has_ub] = np.clip(mu / (ub[has_ub] - x[has_ub]), 1e-6, 1e6)
        lam = np.zeros(m)
        state = IpmState(x=x, lam=lam, zl=zl, zu=zu, mu=mu)

        lbfgs = LbfgsHessian(n, opts.lbfgs_memory) \
            if opts.hessian_mode == "lbfgs" else None
        nu = 1.0
        status = "max-iter"
        f = np.nan
        iters_done = 0
        func_evals = 0
        hess_evals = 0
        log = opts.log_stream

        try:
            f, c = self._timed(state, "function", self._eval_fc, x, self._ws)
            func_evals += 1
            grad, jv = self._timed(state, "jacobian", self._eval_derivatives,
                                   x, self._ws)
            if not _finite(np.array([f]), c, grad, jv):
                raise _Diverged
            for it in range(opts.max_iter):
                state.iteration = it
                E0, du0, pr0, _ = self._kkt_error(grad, jv, c, lam, zl, zu,
                                                  x, 0.0)
                if E0 <= opts.tol:
                    status = "optimal"
                    break
                E_mu = self._kkt_error(grad, jv, c, lam, zl, zu, x, mu)[0]
                while E_mu <= opts.kappa_eps * mu and mu > opts.tol / 10.0:
                    mu = max(opts.tol / 10.0,
                             min(opts.kappa_mu * mu, mu ** opts.theta_mu))
                    E_mu = self._kkt_error(grad, jv, c, lam, zl, zu, x, mu)[0]
                state.mu = mu
                tau = max(opts.tau, 1.0 - mu)

                if lbfgs is not None:
                    W = lbfgs.matrix()
                else:
                    hv = self._timed(state, "hessian", self._eval_hessian,
                                     x, lam, self._ws)
                    hess_evals += 1
                    if not np.isfinite(hv).all():
                        raise _Diverged
                    W = (canon.hess_rows, canon.hess_cols, hv)

                sigma = self._sigma_diag(x, zl, zu)
                grad_phi = self._barrier_gradient(grad, x, mu)
                jt_lam = self._jac_t_lam(jv, lam)

                def build(dw, dc):
                    K, _ = self._assemble(W, sigma, jv, grad_phi, jt_lam, c,
                                          dw, dc)
                    return K

                try:
                    fact, delta_w, delta_c = self._factorize_corrected(
                        state, build)
                except _FactorizationBudgetExceeded:
                    status = "factorization-failure"
                    break
                K, rhs = self._assemble(W, sigma, jv, grad_phi, jt_lam, c,
                                        delta_w, delta_c)

                t0 = time.perf_counter()
                d = fact.solve(rhs)
                r = rhs - K @ d
                d += fact.solve(r)  # one fixed refinement step
                r = rhs - K @ d
                if np.max(np.abs(r)) > 1e-8 * max(1.0, np.max(np.abs(rhs))):
                    d += fact.solve(r)
                state.timers["solver"] += time.perf_counter() - t0

                dx = d[:n]
                dlam = d[n:] if m else np.zeros(0)
                if not _finite(dx, dlam):
                    raise _Diverged

                def boundary_cap(step):
                    cap = 1.0
                    sel = has_lb & (step < 0)
                    if sel.any():
                        cap = min(cap, np.min(
                            -tau * (x[sel] - lb[sel]) / step[sel]))
                    sel = has_ub & (step > 0)
                    if sel.any():
                        cap = min(cap, np.min(
                            tau * (ub[sel] - x[sel]) / step[sel]))
                    return cap

                theta = np.sum(np.abs(c))
                gphi_dx = float(grad_phi @ dx)
                # exactness needs nu above the multiplier scale; chasing it
                # any higher just poisons the line search near feasibility
                lam_hat = np.max(np.abs(lam + dlam)) if m else 0.0
                nu_target = lam_hat / (1.0 - opts.penalty_rho) + 0.1
                if nu < nu_target:
                    nu = nu_target
                elif nu > 4.0 * nu_target:
                    nu = nu_target
                dphi = gphi_dx - nu * theta
                phi0 = self._barrier_value(f, x, mu) + nu * theta

                def merit(x_t):
                    try:
                        f_t, c_t = self._timed(state, "function",
                                               self._eval_fc, x_t, self._ws)
                    except ArithmeticError:
                        return np.inf, np.nan, None
                    return (self._barrier_value(f_t, x_t, mu)
                            + nu * np.sum(np.abs(c_t)), f_t, c_t)

                # merit comparisons below machine resolution cannot reject
                noise = 16.0 * np.finfo(float).eps * max(1.0, abs(phi0))

                def armijo_ok(phi_t, step_frac):
                    return np.isfinite(phi_t) and phi_t <= phi0 \
                        + opts.armijo_c * step_frac * min(dphi, 0.0) + noise

                alpha_max = boundary_cap(dx)
                alpha = alpha_max
                accepted = False
                for ls_iter in range(opts.max_ls):
                    x_t = x + alpha * dx
                    phi_t, f_t, c_t = merit(x_t)
                    func_evals += 1
                    if armijo_ok(phi_t, alpha):
                        accepted = True
                        break
                    if ls_iter == 0 and c_t is not None \
                            and np.sum(np.abs(c_t)) >= theta:
                        # second-order corrections: repeatedly retarget the
                        # constraint residual at the trial point, reusing the
                        # factors, until the merit accepts or feasibility
                        # stops improving
                        c_soc = alpha * c + c_t
                        theta_prev = np.sum(np.abs(c_t))
                        for _ in range(4):
                            rhs_soc = rhs.copy()
                            rhs_soc[n:] = -c_soc
                            t0 = time.perf_counter()
                            d_soc = fact.solve(rhs_soc)
                            d_soc += fact.solve(rhs_soc - K @ d_soc)
                            state.timers["solver"] += time.perf_counter() - t0
                            dx_soc = d_soc[:n]
                            a_soc = boundary_cap(dx_soc)
                            x_soc = x + a_soc * dx_soc
                            phi_soc, f_soc, ct_soc = merit(x_soc)
                            func_evals += 1
                            if armijo_ok(phi_soc, a_soc):
                                dx, dlam = dx_soc, d_soc[n:]
                                alpha = a_soc
                                x_t, f_t, c_t = x_soc, f_soc, ct_soc
                                accepted = True
                                break
                            if ct_soc is None:
                                break
                            theta_soc = np.sum(np.abs(ct_soc))
                            if theta_soc > 0.99 * theta_prev:
                                break
                            theta_prev = theta_soc
                            c_soc = a_soc * c_soc + ct_soc
                        if accepted:
                            break
                    alpha *= opts.backtrack
                if not accepted:
                    x_t = x + alpha * dx
                    f_t, c_t = self._timed(state, "function", self._eval_fc,
                                           x_t, self._ws)
                    func_evals += 1

                dzl = np.zeros(n)
                dzu = np.zeros(n)
                sl = x[has_lb] - lb[has_lb]
                su = ub[has_ub] - x[has_ub]
                dzl[has_lb] = mu / sl - zl[has_lb] - zl[has_lb] / sl * dx[has_lb]
                dzu[has_ub] = mu / su - zu[has_ub] + zu[has_ub] / su * dx[has_ub]
                alpha_z = 1.0
                sel = has_lb & (dzl < 0)
                if sel.any():
                    alpha_z = min(alpha_z, np.min(-tau * zl[sel] / dzl[sel]))
                sel = has_ub & (dzu < 0)
                if sel.any():
                    alpha_z = min(alpha_z, np.min(-tau * zu[sel] / dzu[sel]))

                x = x_t
                f, c = f_t, c_t
                if m:
                    lam = lam + alpha * dlam
                zl = zl + alpha_z * dzl
                zu = zu + alpha_z * dzu
                slo = x[has_lb] - lb[has_lb]
                zl[has_lb] = np.clip(zl[has_lb], mu / (_KAPPA_SIGMA * slo),
                                     _KAPPA_SIGMA * mu / slo)
                sup = ub[has_ub] - x[has_ub]
                zu[has_ub] = np.clip(zu[has_ub], mu / (_KAPPA_SIGMA * sup),
                                     _KAPPA_SIGMA * mu / sup)

                if not _finite(x, lam, zl, zu) or np.max(np.abs(x)) > 1e20:
                    raise _Diverged
                grad_prev, jv_prev = grad, jv
                grad, jv = self._timed(state, "jacobian",
                                       self._eval_derivatives, x, self._ws)
                if not _finite(np.array([f]), c, grad, jv):
                    raise _Diverged
                if lbfgs is not None:
                    s = alpha * dx
                    y = (grad + self._jac_t_lam(jv, lam)) \
                        - (grad_prev + self._jac_t_lam(jv_prev, lam))
                    lbfgs.update(s, y)

                if log is not None:
                    log.write(
                        f"{it:4d}  f={f: .10e}  inf_pr={pr0:8.2e}  "
                        f"inf_du={du0:8.2e}  mu={mu:7.1e}  "
                        f"alpha={alpha:8.2e}  alpha_z={alpha_z:8.2e}  "
                        f"dw={delta_w:7.1e}\n")
                iters_done = it + 1
        except _Diverged:
            status = "diverged"

        f_report = float(f) / self.obj_scale if np.isfinite(f) else float(f)
        wall = time.perf_counter() - t_start
        timers = dict(state.timers)
        timers["other"] = max(0.0, wall - sum(
            timers[k] for k in ("function", "jacobian", "hessian", "solver")))
        stats = SolveStats(
            status=status,
            objective=f_report,
            iterations=iters_done,
            wall_time=wall,
            timers=timers,
            time_per_iteration=wall / max(iters_done, 1),
            num_variables=n,
            num_constraints=m,
            function_evals=func_evals,
            hessian_evals=hess_evals,
        )
        return IpmResult(
            status=status,
            x=canon.recover(x),
            x_canonical=x,
            objective=f_report,
            multipliers=lam * self.row_scale / self.obj_scale,
            bound_multipliers=(zl / self.obj_scale, zu / self.obj_scale),
            stats=stats,
        )


def correct_inertia(matrix_builder, n: int, m: int, mu: float = 1e-6,
                    options: IpmOptions | None = None,
                    delta_w_last: float = 0.0):
    """Standalone inertia correction: returns (factorization, dw, dc).

    ``matrix_builder(delta_w, delta_c)`` must return the regularized matrix.
    """
    solver = object.__new__(InteriorPointSolver)
    solver.options = options or IpmOptions()
    solver.n, solver.m = n, m
    state = IpmState(x=np.zeros(0), lam=np.zeros(0), zl=np.zeros(0),
                     zu=np.zeros(0), mu=mu, delta_w_last=delta_w_last)
    return InteriorPointSolver._factorize_corrected(solver, state,
                                                    matrix_builder)


def solve(model, options: IpmOptions | None = None) -> IpmResult:
    """Solve a (canonicalizable) NLP model; see module docstring."""
    return InteriorPointSolver(model, options).solve()
