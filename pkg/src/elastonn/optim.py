"""Parameter-update algorithms operating on flat float64 vectors.

* plain SGD
* Adam with coupled L2 weight decay and a step-decay learning-rate schedule
* L-BFGS (two-loop recursion) with a strong-Wolfe line search
* competitive gradient descent for minimax objectives, with Adam-style
  per-coordinate scaling and a CG inner solve on Hessian-vector products

``minimize`` takes a closure ``fun(x) -> (loss, grad)`` and updates ``x`` in
place. The minimax update takes a taped closure so second-order products are
available.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

_WOLFE_C1 = 1e-4
_WOLFE_C2 = 0.9


@dataclass
class OptimConfig:
    kind: str = "lbfgs"  # sgd | adam | lbfgs | cgd
    lr: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_factor: float = 1.0  # step decay: lr * factor**(epoch // lr_every)
    lr_every: int = 50
    history_size: int = 100
    max_iter: int = 100
    line_search: str = "strong-wolfe"  # lbfgs only; "none" takes unit*lr steps
    tol_grad: float = 1e-12
    tol_change: float = 0.0
    cgd_eta: float = 1e-3
    cgd_adaptive: bool = True
    cgd_cg_iters: int = 50
    cgd_cg_tol: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.history_size < 1:
            raise ValueError("history size must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class LossHistory:
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    termination: str = "max-iterations"
    wolfe_trace: list = field(default_factory=list)  # (alpha, f0, f1, dphi0, dphi1)
    flags: list = field(default_factory=list)  # e.g. cgd fallback notes

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "lr", "seconds"])
            for i, (f, lr, s) in enumerate(zip(self.losses, self.lrs, self.seconds)):
                w.writerow([i, repr(f), repr(lr), f"{s:.6f}"])


def lr_schedule(epoch, cfg: OptimConfig):
    """lr0 * factor**floor(epoch / every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.lr_factor ** (epoch // cfg.lr_every)


class AdamState:
    """One Adam parameter group; reusable from mini-batch training loops."""

    def __init__(self, n, cfg: OptimConfig):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, x, g, lr=None):
        cfg = self.cfg
        if cfg.weight_decay:
            g = g + cfg.weight_decay * x  # coupled L2
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g
        mhat = self.m / (1.0 - cfg.beta1**self.t)
        vhat = self.v / (1.0 - cfg.beta2**self.t)
        x -= (cfg.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + cfg.eps)
        return x


def minimize(fun, x, cfg: OptimConfig, callback=None) -> LossHistory:
    """Drive ``x`` (modified in place) to a minimum of ``fun``.

    ``fun(x)`` must return (scalar loss, gradient array). Non-finite losses
    abort with termination reason "diverged". ``callback(it, x, f)``, if
    given, runs once per iteration; returning True stops early
    ("early-stopped").
    """
    if cfg.kind == "lbfgs":
        return _minimize_lbfgs(fun, x, cfg, callback)
    if cfg.kind in ("sgd", "adam"):
        return _minimize_first_order(fun, x, cfg, callback)
    raise ValueError(f"unknown optimizer kind {cfg.kind!r}")


def _minimize_first_order(fun, x, cfg, callback=None):
    hist = LossHistory()
    adam = AdamState(x.size, cfg) if cfg.kind == "adam" else None
    for it in range(cfg.max_iter):
        t0 = time.perf_counter()
        f, g = fun(x)
        if not np.isfinite(f):
            hist.termination = "diverged"
            break
        lr = lr_schedule(it, cfg)
        if adam is not None:
            adam.step(x, g, lr=lr)
        else:
            x -= lr * g
        hist.losses.append(float(f))
        hist.lrs.append(lr)
        hist.seconds.append(time.perf_counter() - t0)
        if np.max(np.abs(g)) <= cfg.tol_grad:
            hist.termination = "converged-grad"
            break
        if callback is not None and callback(it, x, f):
            hist.termination = "early-stopped"
            break
    return hist


# ---------------------------------------------------------------------------
# L-BFGS
# ---------------------------------------------------------------------------


def _two_loop(g, s_list, y_list):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / (y @ s)
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a, fa, da, b, fb, db):
    # minimizer of the cubic interpolant on [a, b]; NaN-safe fallback handled by caller
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0.0:
        return None
    d2 = np.sqrt(rad) * np.sign(b - a)
    t = b - (b - a) * ((db + d2 - d1) / (db - da + 2.0 * d2))
    return t if np.isfinite(t) else None


def _strong_wolfe(phi, f0, dphi0, alpha0, max_evals=25):
    """Line search enforcing f(a) <= f0 + c1*a*f'(0) and |f'(a)| <= c2*|f'(0)|.

    ``phi(alpha) -> (f, dphi)``. Returns (alpha, f, evals, trace) or
    (None, ...) on failure.
    """
    c1, c2 = _WOLFE_C1, _WOLFE_C2
    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha0
    evals = 0
    bracket = None
    for _ in range(max_evals):
        f_a, d_a = phi(a)
        evals += 1
        if not np.isfinite(f_a):
            a = 0.5 * (a_prev + a)
            continue
        if f_a > f0 + c1 * a * dphi0 or (evals > 1 and f_a >= f_prev):
            bracket = (a_prev, f_prev, d_prev, a, f_a, d_a)
            break
        if abs(d_a) <= -c2 * dphi0:
            return a, f_a, d_a, evals
        if d_a >= 0.0:
            bracket = (a, f_a, d_a, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = a, f_a, d_a
        a = 2.0 * a
    if bracket is None:
        return None, f_prev, d_prev, evals

    lo, flo, dlo, hi, fhi, dhi = bracket
    for _ in range(max_evals - evals):
        a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
        width = abs(hi - lo)
        if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
            a = 0.5 * (lo + hi)
        f_a, d_a = phi(a)
        evals += 1
        if f_a > f0 + c1 * a * dphi0 or f_a >= flo:
            hi, fhi, dhi = a, f_a, d_a
        else:
            if abs(d_a) <= -c2 * dphi0:
                return a, f_a, d_a, evals
            if d_a * (hi - lo) >= 0.0:
                hi, fhi, dhi = lo, flo, dlo
            lo, flo, dlo = a, f_a, d_a
        if abs(hi - lo) * max(abs(dlo), abs(dhi)) < 1e-16 * max(1.0, abs(f0)):
            break
    # no point satisfying both conditions; accept the best sufficient-decrease point
    if flo < f0:
        return lo, flo, dlo, evals
    return None, f0, dphi0, evals


def _minimize_lbfgs(fun, x, cfg, callback=None):
    hist = LossHistory()
    s_list, y_list = [], []
    f, g = fun(x)
    if not np.isfinite(f):
        hist.termination = "diverged"
        return hist
    for it in range(cfg.max_iter):
        t0 = time.perf_counter()
        d = -_two_loop(g, s_list, y_list)
        dphi0 = g @ d
        if dphi0 >= 0.0:  # not a descent direction; restart from steepest descent
            s_list, y_list = [], []
            d = -g
            dphi0 = g @ d
        if dphi0 == 0.0:
            hist.termination = "converged-grad"
            break

        if cfg.line_search == "strong-wolfe":
            alpha0 = cfg.lr * min(1.0, 1.0 / np.abs(g).sum()) if it == 0 else cfg.lr

            def phi(a):
                fa, ga = fun(x + a * d)
                phi.last = (fa, ga)
                return fa, ga @ d

            alpha, f_new, d_new, _ = _strong_wolfe(phi, f, dphi0, alpha0)
            if alpha is None:
                hist.termination = "line-search-failure"
                break
            f_a, g_new = phi.last
            hist.wolfe_trace.append((alpha, f, f_a, dphi0, d_new))
        else:
            alpha = cfg.lr
            f_a, g_new = fun(x + alpha * d)
        if not np.isfinite(f_a):
            hist.termination = "diverged"
            break

        step = alpha * d
        x += step
        y = g_new - g
        if step @ y > 1e-12 * np.linalg.norm(step) * np.linalg.norm(y):
            s_list.append(step.copy())
            y_list.append(y.copy())
            if len(s_list) > cfg.history_size:
                s_list.pop(0)
                y_list.pop(0)
        f_prev, f, g = f, f_a, g_new

        hist.losses.append(float(f))
        hist.lrs.append(cfg.lr)
        hist.seconds.append(time.perf_counter() - t0)
        if np.max(np.abs(g)) <= cfg.tol_grad:
            hist.termination = "converged-grad"
            break
        if cfg.tol_change > 0.0 and abs(f_prev - f) <= cfg.tol_change * max(1.0, abs(f_prev)):
            hist.termination = "converged-change"
            break
        if callback is not None and callback(it, x, f):
            hist.termination = "early-stopped"
            break
    return hist


# ---------------------------------------------------------------------------
# competitive gradient descent (min over theta, max over phi)
# ---------------------------------------------------------------------------


class CgdState:
    def __init__(self, n_theta, n_phi, cfg: OptimConfig):
        self.cfg = cfg
        self.v_theta = np.zeros(n_theta)
        self.v_phi = np.zeros(n_phi)
        self.t = 0


def _cg(matvec, b, max_iter, tol):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    b_norm = np.sqrt(rs)
    if b_norm == 0.0:
        return x, True, 0
    for i in range(max_iter):
        ap = matvec(p)
        denom = p @ ap
        if denom <= 0.0 or not np.isfinite(denom):
            return x, False, i
        a = rs / denom
        x += a * p
        r -= a * ap
        rs_new = r @ r
        if np.sqrt(rs_new) <= tol * b_norm:
            return x, True, i + 1
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, False, max_iter


def cgd_step(closure, theta, phi, cfg: OptimConfig, state: CgdState | None = None):
    """One competitive update of the zero-sum game min_theta max_phi loss.

    ``closure(theta, phi)`` must build a tape and return
    (loss Var, theta leaf Var, phi leaf Var). The local bilinear game
    regularized by the per-coordinate step sizes is solved with conjugate
    gradients on Hessian-vector products; on CG failure a simultaneous
    gradient step is taken and flagged.

    Returns (loss value, info dict). ``theta`` and ``phi`` are updated in
    place.
    """
    if state is None:
        state = CgdState(theta.size, phi.size, cfg)
    loss, tvar, pvar = closure(theta, phi)
    g_t_var, g_p_var = ad.gradient(loss, [tvar, pvar], create_graph=True)
    g_t, g_p = g_t_var.value.copy(), g_p_var.value.copy()

    if not np.any(g_t) and not np.any(g_p):
        return float(loss.value), {"fallback": False, "cg_iters": 0, "fixed_point": True}

    cfg_eta = cfg.cgd_eta
    if cfg.cgd_adaptive:
        state.t += 1
        b2 = cfg.beta2
        state.v_theta = b2 * state.v_theta + (1.0 - b2) * g_t * g_t
        state.v_phi = b2 * state.v_phi + (1.0 - b2) * g_p * g_p
        corr = 1.0 - b2**state.t
        eta_t = cfg_eta / (np.sqrt(state.v_theta / corr) + cfg.eps)
        eta_p = cfg_eta / (np.sqrt(state.v_phi / corr) + cfg.eps)
    else:
        eta_t = np.full(theta.size, cfg_eta)
        eta_p = np.full(phi.size, cfg_eta)
    s_t, s_p = np.sqrt(eta_t), np.sqrt(eta_p)

    tape = loss.tape

    def hvp_theta_of_phi(v):  # D^2_{theta phi} f @ v
        dot = ad.sum_all(g_p_var * tape.const(v))
        return ad.gradient(dot, tvar).value

    def hvp_phi_of_theta(v):  # D^2_{phi theta} f @ v
        dot = ad.sum_all(g_t_var * tape.const(v))
        return ad.gradient(dot, pvar).value

    cg_info = {"fallback": False, "cg_iters": 0, "fixed_point": False}

    def mv_theta(z):
        w = hvp_phi_of_theta(s_t * z)
        return z + s_t * hvp_theta_of_phi(s_p * s_p * w)

    def mv_phi(z):
        w = hvp_theta_of_phi(s_p * z)
        return z + s_p * hvp_phi_of_theta(s_t * s_t * w)

    rhs_t = s_t * (g_t + hvp_theta_of_phi(eta_p * g_p))
    rhs_p = s_p * (g_p - hvp_phi_of_theta(eta_t * g_t))

    z_t, ok_t, it_t = _cg(mv_theta, rhs_t, cfg.cgd_cg_iters, cfg.cgd_cg_tol)
    z_p, ok_p, it_p = _cg(mv_phi, rhs_p, cfg.cgd_cg_iters, cfg.cgd_cg_tol)
    cg_info["cg_iters"] = it_t + it_p

    if ok_t and ok_p:
        theta -= s_t * z_t
        phi += s_p * z_p
    else:  # simultaneous gradient step as fallback
        cg_info["fallback"] = True
        theta -= eta_t * g_t
        phi += eta_p * g_p
    return float(loss.value), cg_info


def hvp_fd_check(closure, theta, phi, v_phi, h=1e-5):
    """|AD - finite-difference| relative error of D^2_{theta phi} f @ v."""
    loss, tvar, pvar = closure(theta, phi)
    g_p = ad.gradient(loss, pvar, create_graph=True)
    dot = ad.sum_all(g_p * loss.tape.const(v_phi))
    hv_ad = ad.gradient(dot, tvar).value

    hh = h * (1.0 + np.linalg.norm(v_phi))
    lp, tp, _ = closure(theta, phi + hh * v_phi)
    gp1 = ad.gradient(lp, tp).value
    lm, tm, _ = closure(theta, phi - hh * v_phi)
    gm1 = ad.gradient(lm, tm).value
    hv_fd = (gp1 - gm1) / (2.0 * hh)
    denom = max(np.linalg.norm(hv_fd), 1e-12)
    return float(np.linalg.norm(hv_ad - hv_fd) / denom)
