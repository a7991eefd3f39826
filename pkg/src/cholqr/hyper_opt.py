"""Continuous hyperparameter optimization at a fixed inducing set.

``objective_and_grad`` evaluates the flavor objective and its analytic
gradient with respect to every log-space parameter, using Woodbury-factored
forms throughout so no n x n matrix is ever materialized: the one-time cost
is O(m^2 n + m^3), plus O(m n) per parameter for the structured kernels.

``cg_optimize`` runs Polak-Ribiere+ nonlinear conjugate gradients with a
strong-Wolfe line search under a function-evaluation budget and returns the
best point seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError
from .kernels import Hyperparameters, n_hyperparameters
from .objective import _check_flavor


@dataclass(frozen=True)
class CGConfig:
    """Budget and line-search constants for the conjugate gradient phase.

    ``max_fevals = None`` resolves to min(20, max(15, 2 d)) where d is the
    number of continuous hyperparameters.
    """

    max_fevals: int | None = None
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.1
    grad_tol: float = 1e-6

    def resolve_budget(self, d: int) -> int:
        if self.max_fevals is not None:
            if self.max_fevals < 1:
                raise ValueError("max_fevals must be >= 1")
            return self.max_fevals
        return default_max_fevals(d)


def default_max_fevals(d: int) -> int:
    return min(20, max(15, 2 * d))


def _chol_with_jitter(A, base_scale):
    """Cholesky with escalating jitter 1e-10..1e-6 relative to base_scale."""
    jitter = 0.0
    for attempt in range(6):
        try:
            return cho_factor(A + jitter * np.eye(A.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = base_scale * (1e-10 * 10 ** attempt)
    raise NumericalError(
        f"Cholesky failed despite jitter escalation up to {jitter:.3e}")


def objective_and_grad(spec, theta: Hyperparameters, y, idx, flavor: str):
    """Objective value and gradient over [log noise var, kernel params].

    Memory stays O(mn); cost is O(m^2 n + m^3) once plus O(mn) per kernel
    parameter.  Raises NumericalError if K[I, I] resists the jitter policy.
    """
    flavor = _check_flavor(flavor)
    y = np.asarray(y, dtype=float).ravel()
    idx = np.asarray(idx, dtype=int)
    n = y.size
    m = idx.size
    s2 = theta.noise_var
    klog = theta.kernel_log
    n_params = n_hyperparameters(spec)

    diag_k = spec.diag(klog)
    tr_k = float(diag_k.sum())

    if m == 0:
        e_data = float(y @ y) / s2
        e_comp = n * math.log(s2)
        e_trace = tr_k / s2
        grad = np.zeros(n_params)
        grad[0] = -e_data + n - (e_trace if flavor == "var" else 0.0)
        for p in range(len(klog)):
            if flavor == "var":
                grad[1 + p] = float(spec.grad_diag(klog, p).sum()) / s2
        f = 0.5 * (e_data + e_comp + (e_trace if flavor == "var" else 0.0))
        return f, 0.5 * grad

    C = spec.block(klog, idx)                    # (n, m) = K[:, I]
    A = C[idx, :]                                # K[I, I]
    A = 0.5 * (A + A.T)
    scale_a = max(float(np.mean(np.diagonal(A))), 1e-300)
    A_ch, _ = _chol_with_jitter(A, scale_a)
    CtC = C.T @ C
    M = s2 * A + CtC
    M = 0.5 * (M + M.T)
    M_ch, _ = _chol_with_jitter(M, max(float(np.mean(np.diagonal(M))), 1e-300))

    Cty = C.T @ y
    Minv_Cty = cho_solve(M_ch, Cty)
    alpha = (y - C @ Minv_Cty) / s2              # (Khat + s2 I)^-1 y
    e_data = float(y @ alpha)

    logdet_m = 2.0 * float(np.log(np.diagonal(M_ch[0])).sum())
    logdet_a = 2.0 * float(np.log(np.diagonal(A_ch[0])).sum())
    e_comp = (n - m) * math.log(s2) + logdet_m - logdet_a

    Ainv_CtC = cho_solve(A_ch, CtC)
    tr_khat = float(np.trace(Ainv_CtC))
    e_trace = (tr_k - tr_khat) / s2

    # Invariants of the exact objective; a violation means the solves above
    # were numerically unreliable (kernel matrix singular to machine
    # precision) and the evaluation must not be trusted.
    y2 = float(y @ y)
    slack = 1e-8 * (1.0 + y2 / s2 + abs(tr_k) / s2 + n * abs(math.log(s2)))
    if not (-slack <= e_data <= y2 / s2 + slack) \
            or e_comp < n * math.log(s2) - slack or e_trace < -slack:
        raise NumericalError(
            "objective evaluation unreliable: kernel numerically singular "
            f"(E_D={e_data:.3e}, E_C={e_comp:.3e}, E_V={e_trace:.3e})")

    if flavor == "var":
        f = 0.5 * (e_data + e_comp + e_trace)
    else:
        f = 0.5 * (e_data + e_comp)

    # Shared m x n / m x m pieces for the per-parameter contractions.
    t_vec = cho_solve(A_ch, C.T @ alpha)                   # A^-1 C^T alpha
    Minv_Ct = cho_solve(M_ch, C.T)                         # m x n
    AiC = cho_solve(A_ch, C.T)                             # m x n
    GC = (AiC - Ainv_CtC @ Minv_Ct) / s2                   # A^-1 C^T P
    HC = cho_solve(A_ch, (GC @ C).T).T                     # A^-1 C^T P C A^-1
    T = cho_solve(A_ch, Ainv_CtC.T).T                      # A^-1 CtC A^-1
    tr_minv_ctc = float(np.einsum("mn,nm->", Minv_Ct, C))

    grad = np.zeros(n_params)
    # log noise variance
    g_data = -s2 * float(alpha @ alpha)
    g_comp = n - tr_minv_ctc
    g_trace = -e_trace
    grad[0] = g_data + g_comp + (g_trace if flavor == "var" else 0.0)

    for p in range(len(klog)):
        dC = spec.grad_block(klog, p, idx)                 # (n, m)
        dA = dC[idx, :]
        dA = 0.5 * (dA + dA.T)
        g_data = -(2.0 * float((dC.T @ alpha) @ t_vec)
                   - float(t_vec @ dA @ t_vec))
        g_comp = 2.0 * float(np.einsum("mn,nm->", GC, dC)) \
            - float(np.einsum("ij,ij->", HC, dA))
        grad[1 + p] = g_data + g_comp
        if flavor == "var":
            g_trace = (float(spec.grad_diag(klog, p).sum())
                       + float(np.einsum("ij,ij->", T, dA))
                       - 2.0 * float(np.einsum("nm,mn->", dC, AiC))) / s2
            grad[1 + p] += g_trace

    return f, 0.5 * grad


def _make_theta_fun(spec, y, idx, flavor):
    def fun(vec):
        # Overflowing parameters (exp of a huge log value) simply read as an
        # infinite objective; the line search backs off.
        with np.errstate(all="ignore"):
            try:
                theta = Hyperparameters.from_vector(vec)
                f, g = objective_and_grad(spec, theta, y, idx, flavor)
            except (NumericalError, ValueError, FloatingPointError,
                    OverflowError, np.linalg.LinAlgError):
                return np.inf, np.zeros_like(vec)
        if not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(vec)
        return f, g
    return fun


def cg_optimize(spec, theta0: Hyperparameters, y, idx, flavor: str,
                cfg: CGConfig | None = None) -> Hyperparameters:
    """Bounded CG descent on the hyperparameters at fixed inducing set.

    Never returns a point worse than theta0: the best evaluated point wins,
    including after line-search failures.
    """
    cfg = cfg or CGConfig()
    fun = _make_theta_fun(spec, y, idx, flavor)
    x_best, _, _ = minimize_cg(fun, theta0.to_vector(), cfg)
    return Hyperparameters.from_vector(x_best)


def minimize_cg(fun, x0, cfg: CGConfig):
    """Polak-Ribiere+ nonlinear CG under a function-evaluation budget.

    ``fun(x) -> (f, g)``.  Restarts on non-descent directions and every
    len(x) iterations.  Returns (best x, best f, info dict).
    """
    x = np.asarray(x0, dtype=float).copy()
    d = x.size
    budget = cfg.resolve_budget(d)
    evals = 0

    def evaluate(xv):
        nonlocal evals
        evals += 1
        f, g = fun(xv)
        return float(f), np.asarray(g, dtype=float)

    f, g = evaluate(x)
    if not np.isfinite(f):
        raise NumericalError("objective not finite at the starting point")
    best_x, best_f = x.copy(), f
    direction = -g
    iters = 0
    since_restart = 0
    while evals < budget:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.grad_tol * (1.0 + abs(f)):
            break
        if since_restart >= d or float(direction @ g) >= 0.0:
            direction = -g
            since_restart = 0
        slope = float(direction @ g)
        if slope >= 0.0:
            break

        def phi(a, _x=x, _d=direction):
            fv, gv = evaluate(_x + a * _d)
            return fv, float(gv @ _d), gv

        # first trial never moves any log-space coordinate by more than 10
        alpha0 = min(1.0, 10.0 / max(float(np.abs(direction).max()), 1e-300))
        result = _wolfe_line_search(phi, f, slope, alpha0, cfg.wolfe_c1,
                                    cfg.wolfe_c2, lambda: budget - evals)
        if result is None:
            if since_restart == 0:
                break  # steepest descent already failed
            direction = -g
            since_restart = 0
            continue
        alpha, f_new, g_new = result
        x = x + alpha * direction
        if f_new < best_f:
            best_f, best_x = f_new, x.copy()
        beta = max(0.0, float(g_new @ (g_new - g)) / max(float(g @ g), 1e-300))
        direction = -g_new + beta * direction
        f, g = f_new, g_new
        iters += 1
        since_restart += 1
    return best_x, best_f, {"evals": evals, "iters": iters, "final_f": f}


def _wolfe_line_search(phi, f0, slope0, alpha0, c1, c2, remaining,
                       max_expand=12):
    """Strong-Wolfe bracketing line search along one direction.

    ``phi(a) -> (f, dphi, g)`` with dphi the directional derivative.  Returns
    (alpha, f, g) satisfying the strong Wolfe conditions, or the best
    Armijo-satisfying point when the budget runs out, or None on failure.
    Non-finite values are treated as "stepped too far".
    """
    if slope0 >= 0.0:
        return None
    armijo_best = None

    def note(a, fv, gv):
        nonlocal armijo_best
        if fv <= f0 + c1 * a * slope0 and np.isfinite(fv):
            if armijo_best is None or fv < armijo_best[1]:
                armijo_best = (a, fv, gv)

    a_prev, f_prev, d_prev = 0.0, f0, slope0
    a = max(alpha0, 1e-16)
    shrinks = 0
    it = 0
    while it < max_expand:
        if remaining() <= 0:
            return armijo_best
        fv, dv, gv = phi(a)
        if not np.isfinite(fv):
            shrinks += 1
            if shrinks > 40:
                return armijo_best
            a = 0.5 * (a_prev + a)  # shrink back toward the last good point
            continue
        it += 1
        note(a, fv, gv)
        if fv > f0 + c1 * a * slope0 or (it > 0 and fv >= f_prev):
            return _zoom(phi, f0, slope0, a_prev, f_prev, d_prev, a, fv, dv,
                         c1, c2, remaining, armijo_best)
        if abs(dv) <= -c2 * slope0:
            return a, fv, gv
        if dv >= 0.0:
            return _zoom(phi, f0, slope0, a, fv, dv, a_prev, f_prev, d_prev,
                         c1, c2, remaining, armijo_best)
        a_prev, f_prev, d_prev = a, fv, dv
        a *= 2.0
    return armijo_best


def _zoom(phi, f0, slope0, lo, f_lo, d_lo, hi, f_hi, d_hi, c1, c2, remaining,
          armijo_best, max_iter=30):
    """Refine a bracketing interval; secant on the derivative, bisection fallback."""

    def note(a, fv, gv):
        nonlocal armijo_best
        if fv <= f0 + c1 * a * slope0 and np.isfinite(fv):
            if armijo_best is None or fv < armijo_best[1]:
                armijo_best = (a, fv, gv)

    for _ in range(max_iter):
        if remaining() <= 0 or hi == lo:
            return armijo_best
        cand = None
        if np.isfinite(d_hi) and np.isfinite(d_lo) and d_hi != d_lo:
            cand = lo - d_lo * (hi - lo) / (d_hi - d_lo)
        span = abs(hi - lo)
        inner_lo, inner_hi = min(lo, hi), max(lo, hi)
        if cand is None or not np.isfinite(cand) \
                or cand <= inner_lo + 1e-3 * span or cand >= inner_hi - 1e-3 * span:
            cand = 0.5 * (lo + hi)
        fv, dv, gv = phi(cand)
        if not np.isfinite(fv) or fv > f0 + c1 * cand * slope0 or fv >= f_lo:
            hi, f_hi, d_hi = cand, fv, (dv if np.isfinite(fv) else np.nan)
        else:
            note(cand, fv, gv)
            if abs(dv) <= -c2 * slope0:
                return cand, fv, gv
            if dv * (hi - lo) >= 0.0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = cand, fv, dv
    return armijo_best
