"""Primal-dual interior-point loop.

Monotone barrier updates, fraction-to-boundary step caps and a backtracking
line search on an l1-penalty merit function.  The Newton step comes from any
of the three KKT strategies; block work goes through the executor.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff.batch import BlockEvaluator, NonFiniteError
from .executor import Executor, reduce_blocks
from .kkt import InertiaCorrector, LinearSolveFailure, Step, Strategy, assemble_augmented, solve_newton
from .model import BlockNlp, Iterate, kkt_error

log = logging.getLogger(__name__)


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    LINEAR_SOLVE_FAILURE = "LinearSolveFailure"


class StepTooSmall(RuntimeError):
    pass


@dataclass
class IpmOptions:
    tol: float = 1e-6
    mu0: float = 0.1
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tau: float = 0.995
    max_iter: int = 300
    strategy: Strategy = Strategy.REDUCED
    n_batch: int = 16
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    penalty_rho: float = 0.1
    kappa_sigma: float = 1e10
    bound_frac: float = 0.1
    bound_push: float = 1e-2
    s_max: float = 100.0
    regularization: dict = field(default_factory=dict)  # InertiaCorrector overrides

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class IterationLog:
    iter: int
    objective: float
    inf_pr: float
    inf_du: float
    mu: float
    alpha_pr: float
    alpha_du: float
    t_ad: float
    t_kkt: float
    t_other: float
    delta_w: float = 0.0
    merit_before: float = float("nan")
    merit_after: float = float("nan")
    fallback: bool = False

    @property
    def t_total(self) -> float:
        return self.t_ad + self.t_kkt + self.t_other


@dataclass
class IpmResult:
    iterate: Iterate
    status: Status
    logs: list
    objective: float
    events: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.iterate, self.status, self.logs))

    @property
    def iterations(self) -> int:
        return max(0, len(self.logs) - 1)

    def timers(self) -> dict:
        return {
            "ad": sum(r.t_ad for r in self.logs),
            "kkt": sum(r.t_kkt for r in self.logs),
            "total": sum(r.t_total for r in self.logs),
        }


# ---------------------------------------------------------------------------
# helpers on bounds

def _finite(b, shape):
    return np.broadcast_to(np.isfinite(b), shape)


def project_interior(v, lower, upper, frac: float = 0.1, push: float = 1e-2):
    """Move ``v`` strictly inside its bounds.

    Two-sided: into ``[l + frac*span, u - frac*span]``.  One-sided: at least
    ``push * max(1, |bound|)`` away from the bound.
    """
    v = np.array(v, dtype=float, copy=True)
    with np.errstate(invalid="ignore"):
        return _project(v, lower, upper, frac, push)


def _project(v, lower, upper, frac, push):
    lower = np.broadcast_to(lower, v.shape)
    upper = np.broadcast_to(upper, v.shape)
    hl, hu = np.isfinite(lower), np.isfinite(upper)
    both = hl & hu
    span = np.where(both, upper - lower, 0.0)
    lo = np.where(both, lower + frac * span, np.where(hl, lower + push * np.maximum(1.0, np.abs(lower)), -np.inf))
    hi = np.where(both, upper - frac * span, np.where(hu, upper - push * np.maximum(1.0, np.abs(upper)), np.inf))
    # degenerate (fixed or very tight) ranges collapse to the midpoint
    mid = np.where(both, 0.5 * (lower + upper), 0.0)
    out = np.minimum(np.maximum(v, lo), hi)
    return np.where(both & (lo > hi), mid, out)


def _distances(v, lower, upper):
    hl, hu = _finite(lower, np.shape(v)), _finite(upper, np.shape(v))
    dl = np.where(hl, v - np.where(hl, lower, 0.0), np.inf)
    du = np.where(hu, np.where(hu, upper, 0.0) - v, np.inf)
    return dl, du, hl, hu


def max_step_to_boundary(v, p, lower, upper, tau):
    """Largest ``alpha`` in (0, 1] keeping ``v + alpha p`` a fraction ``tau`` inside its bounds."""
    dl, du, hl, hu = _distances(v, lower, upper)
    alpha = 1.0
    neg = hl & (p < 0)
    if np.any(neg):
        alpha = min(alpha, float(np.min(-tau * dl[neg] / p[neg])))
    pos = hu & (p > 0)
    if np.any(pos):
        alpha = min(alpha, float(np.min(tau * du[pos] / p[pos])))
    return alpha


def max_step_positive(v, p, tau):
    """Fraction-to-boundary for multipliers (``v > 0``)."""
    neg = p < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-tau * v[neg] / p[neg])))


def bound_multiplier_steps(v, p, lower, upper, mult_l, mult_u, mu):
    """Linearized perturbed complementarity: ``p_l = mu/(v-l) - m_l - (m_l/(v-l)) p`` and likewise above."""
    dl, du, hl, hu = _distances(v, lower, upper)
    pl = np.where(hl, mu / dl - mult_l - (mult_l / dl) * p, 0.0)
    pu = np.where(hu, mu / du - mult_u + (mult_u / du) * p, 0.0)
    return pl, pu


def barrier_value(v, lower, upper, mu):
    dl, du, hl, hu = _distances(v, lower, upper)
    return -mu * (float(np.sum(np.log(dl[hl]))) + float(np.sum(np.log(du[hu]))))


def update_mu(mu: float, opts: IpmOptions) -> float:
    """Monotone rule ``max(tol/10, min(kappa_mu mu, mu^theta_mu))``."""
    return max(opts.tol / 10.0, min(opts.kappa_mu * mu, mu ** opts.theta_mu))


def initial_iterate(nlp: BlockNlp, evaluator: BlockEvaluator, opts: IpmOptions, mu: float) -> Iterate:
    d = nlp.dims
    it = Iterate.zeros(d)
    it.x = project_interior(nlp.x_start, nlp.x_lower, nlp.x_upper, opts.bound_frac, opts.bound_push)
    it.u = project_interior(nlp.u_start, nlp.u_lower, nlp.u_upper, opts.bound_frac, opts.bound_push)
    _, _, h = evaluator.values(it.x, it.u)
    it.s = project_interior(-h, nlp.s_lower, nlp.s_upper, opts.bound_frac, opts.bound_push)
    for v, lo, up, ml, mu_ in (("x", nlp.x_lower, nlp.x_upper, "kappa_l", "kappa_u"),
                               ("s", nlp.s_lower, nlp.s_upper, "nu_l", "nu_u"),
                               ("u", nlp.u_lower, nlp.u_upper, "lam_l", "lam_u")):
        dl, du, hl, hu = _distances(getattr(it, v), lo, up)
        setattr(it, ml, np.where(hl, mu / np.where(hl, dl, 1.0), 0.0))
        setattr(it, mu_, np.where(hu, mu / np.where(hu, du, 1.0), 0.0))
    return it


# ---------------------------------------------------------------------------
# error measures

def _bound_mults(it):
    return (it.kappa_l, it.kappa_u, it.nu_l, it.nu_u, it.lam_l, it.lam_u)


def scaled_error(nlp, it, mu, derivs, opts: IpmOptions):
    """``(E, inf_pr, inf_du, compl)`` with the usual multiplier-norm scaling of the dual and complementarity parts."""
    res = kkt_error(nlp, it, mu, values=(derivs.f, derivs.g, derivs.h),
                    gradients=(derivs.grad_L_x, derivs.grad_L_u))
    norms = res.max_norms()
    inf_du = res.dual_infeasibility
    inf_pr = res.primal_infeasibility
    compl = norms["complementarity"]
    bounds = _bound_mults(it)
    n_b = sum(int(np.count_nonzero(_finite_mask(nlp, k))) for k in range(6))
    n_all = n_b + it.y.size + it.z.size
    total = sum(float(np.sum(np.abs(b))) for b in bounds)
    s_d = max(opts.s_max, (total + float(np.sum(np.abs(it.y))) + float(np.sum(np.abs(it.z)))) / max(n_all, 1)) / opts.s_max
    s_c = max(opts.s_max, total / max(n_b, 1)) / opts.s_max
    return max(inf_du / s_d, inf_pr, compl / s_c), inf_pr, inf_du, compl


def _finite_mask(nlp, k):
    d = nlp.dims
    table = [
        (nlp.x_lower, (d.N, d.n_x)), (nlp.x_upper, (d.N, d.n_x)),
        (nlp.s_lower, (d.N, d.m)), (nlp.s_upper, (d.N, d.m)),
        (nlp.u_lower, (d.n_u,)), (nlp.u_upper, (d.n_u,)),
    ]
    b, shape = table[k]
    return np.broadcast_to(np.isfinite(b), shape)


# ---------------------------------------------------------------------------
# step and line search

@dataclass
class FullStep:
    step: Step
    p_kappa_l: np.ndarray
    p_kappa_u: np.ndarray
    p_nu_l: np.ndarray
    p_nu_u: np.ndarray
    p_lam_l: np.ndarray
    p_lam_u: np.ndarray


def compute_step(nlp, it, mu, derivs, strategy, corrector=None, executor=None, n_batch=16, record=None):
    """Newton step of the barrier subproblem plus the bound-multiplier steps."""
    aug = assemble_augmented(nlp, it, mu, derivs)
    step = solve_newton(aug, strategy, corrector, mu, n_batch, executor, record)
    if record is not None:
        record["augmented"] = aug
    kl, ku = bound_multiplier_steps(it.x, step.p_x, nlp.x_lower, nlp.x_upper, it.kappa_l, it.kappa_u, mu)
    nl, nu = bound_multiplier_steps(it.s, step.p_s, nlp.s_lower, nlp.s_upper, it.nu_l, it.nu_u, mu)
    ll, lu = bound_multiplier_steps(it.u, step.p_u, nlp.u_lower, nlp.u_upper, it.lam_l, it.lam_u, mu)
    return FullStep(step, kl, ku, nl, nu, ll, lu), aug


def _constraint_l1(g, h, s):
    return float(np.sum(np.abs(g))) + float(np.sum(np.abs(h + s)))


def _barrier_objective(nlp, f, x, u, s, mu):
    return (float(reduce_blocks(list(f))) + barrier_value(x, nlp.x_lower, nlp.x_upper, mu)
            + barrier_value(s, nlp.s_lower, nlp.s_upper, mu) + barrier_value(u, nlp.u_lower, nlp.u_upper, mu))


def _curvature(aug, step):
    """``p' (W + Sigma) p`` over the primal variables (d, s)."""
    total = float(np.dot(aug.sigma_u * step.p_u, step.p_u))
    for i in range(aug.N):
        px = step.p_x[i]
        total += float(px @ (aug.Wxx[i] @ px) + 2.0 * px @ (aug.Wxu[i] @ step.p_u)
                       + step.p_u @ (aug.Wuu[i] @ step.p_u))
        total += float(np.dot(aug.sigma_x[i] * px, px) + np.dot(aug.sigma_s[i] * step.p_s[i], step.p_s[i]))
    return total


def line_search(nlp, evaluator, it, full: FullStep, mu, derivs, aug, nu_pen, opts: IpmOptions):
    """Fraction-to-boundary caps, then Armijo backtracking on the l1 merit.

    Slacks without any finite bound are reset to ``-h`` at each trial point,
    so their rows never contribute to the merit.

    Returns ``(alpha_pr, alpha_du, nu_pen, merit_before, merit_after, s_trial)``.
    """
    free = free_slacks(nlp)
    st = full.step
    tau = opts.tau
    alpha_max = min(
        max_step_to_boundary(it.x, st.p_x, nlp.x_lower, nlp.x_upper, tau),
        max_step_to_boundary(it.s, st.p_s, nlp.s_lower, nlp.s_upper, tau),
        max_step_to_boundary(it.u, st.p_u, nlp.u_lower, nlp.u_upper, tau),
    )
    alpha_du = min(max_step_positive(m, p, tau) for m, p in (
        (it.kappa_l, full.p_kappa_l), (it.kappa_u, full.p_kappa_u), (it.nu_l, full.p_nu_l),
        (it.nu_u, full.p_nu_u), (it.lam_l, full.p_lam_l), (it.lam_u, full.p_lam_u)))

    c1 = _constraint_l1(derivs.g, derivs.h, it.s)
    _, bx = _barrier_grad(it.x, nlp.x_lower, nlp.x_upper, mu)
    _, bs = _barrier_grad(it.s, nlp.s_lower, nlp.s_upper, mu)
    _, bu = _barrier_grad(it.u, nlp.u_lower, nlp.u_upper, mu)
    grad_u = reduce_blocks(list(derivs.grad_f_u))
    dphi = (float(np.sum((derivs.grad_f_x + bx) * st.p_x)) + float(np.dot(grad_u + bu, st.p_u))
            + float(np.sum(bs * st.p_s)))
    if c1 > 0:
        need = (dphi + 0.5 * max(0.0, _curvature(aug, st))) / ((1.0 - opts.penalty_rho) * c1)
        if nu_pen < need:
            nu_pen = need + 1.0
    phi0 = _barrier_objective(nlp, derivs.f, it.x, it.u, it.s, mu) + nu_pen * c1
    slope = dphi - nu_pen * c1

    alpha = alpha_max
    while True:
        if alpha < opts.min_step:
            raise StepTooSmall(f"line search step below {opts.min_step}")
        x, u, s = it.x + alpha * st.p_x, it.u + alpha * st.p_u, it.s + alpha * st.p_s
        try:
            f, g, h = evaluator.values(x, u)
            s = np.where(free, -h, s)
            phi = _barrier_objective(nlp, f, x, u, s, mu) + nu_pen * _constraint_l1(g, h, s)
        except NonFiniteError:
            phi = np.inf
        if np.isfinite(phi) and phi <= phi0 + opts.armijo * alpha * slope:
            return alpha, alpha_du, nu_pen, phi0, phi, s
        alpha *= opts.backtrack


def _barrier_grad(v, lower, upper, mu):
    dl, du, hl, hu = _distances(v, lower, upper)
    grad = np.where(hl, -mu / np.where(hl, dl, 1.0), 0.0) + np.where(hu, mu / np.where(hu, du, 1.0), 0.0)
    return None, grad


def _safeguard(mult, v, lower, upper, mu, kappa):
    """Keep bound multipliers within a factor ``kappa`` of their primal-dual target ``mu/dist``."""
    out = []
    for m, side in zip(mult, ("l", "u")):
        dl, du, hl, hu = _distances(v, lower, upper)
        dist, has = (dl, hl) if side == "l" else (du, hu)
        dist = np.where(has, dist, 1.0)
        clipped = np.clip(m, mu / (kappa * dist), kappa * mu / dist)
        out.append(np.where(has, clipped, 0.0))
    return out


def free_slacks(nlp) -> np.ndarray:
    """Mask of slack entries with neither bound finite."""
    d = nlp.dims
    return ~(_finite(nlp.s_lower, (d.N, d.m)) | _finite(nlp.s_upper, (d.N, d.m)))


def _advance(nlp, it, full: FullStep, alpha, alpha_du, mu, opts, s_new=None) -> Iterate:
    st = full.step
    new = Iterate(
        x=it.x + alpha * st.p_x, u=it.u + alpha * st.p_u, s=it.s + alpha * st.p_s if s_new is None else s_new,
        y=it.y + alpha * st.p_y, z=it.z + alpha * st.p_z,
        kappa_l=it.kappa_l + alpha_du * full.p_kappa_l, kappa_u=it.kappa_u + alpha_du * full.p_kappa_u,
        nu_l=it.nu_l + alpha_du * full.p_nu_l, nu_u=it.nu_u + alpha_du * full.p_nu_u,
        lam_l=it.lam_l + alpha_du * full.p_lam_l, lam_u=it.lam_u + alpha_du * full.p_lam_u,
    )
    k = opts.kappa_sigma
    new.kappa_l, new.kappa_u = _safeguard((new.kappa_l, new.kappa_u), new.x, nlp.x_lower, nlp.x_upper, mu, k)
    new.nu_l, new.nu_u = _safeguard((new.nu_l, new.nu_u), new.s, nlp.s_lower, nlp.s_upper, mu, k)
    new.lam_l, new.lam_u = _safeguard((new.lam_l, new.lam_u), new.u, nlp.u_lower, nlp.u_upper, mu, k)
    return new


def is_strictly_interior(nlp, it) -> bool:
    for v, lo, up, mults in ((it.x, nlp.x_lower, nlp.x_upper, (it.kappa_l, it.kappa_u)),
                             (it.s, nlp.s_lower, nlp.s_upper, (it.nu_l, it.nu_u)),
                             (it.u, nlp.u_lower, nlp.u_upper, (it.lam_l, it.lam_u))):
        dl, du, hl, hu = _distances(v, lo, up)
        if np.any(dl[hl] <= 0) or np.any(du[hu] <= 0):
            return False
        if np.any(mults[0][hl] <= 0) or np.any(mults[1][hu] <= 0):
            return False
    return True


# ---------------------------------------------------------------------------
# driver

def solve(nlp: BlockNlp, executor: Executor | None = None, opts: IpmOptions | None = None,
          start: Iterate | None = None, callback=None, evaluator: BlockEvaluator | None = None,
          step_callback=None) -> IpmResult:
    """Solve ``nlp`` from ``start`` (or a projected default start).

    ``callback(k, it, mu, derivs)`` runs at every iterate before the step is
    computed; ``step_callback(k, full_step, aug)`` runs after it.
    """
    opts = opts or IpmOptions()
    executor = executor or Executor(nlp.dims.N, groups=1)
    t0 = time.perf_counter()
    evaluator = evaluator or BlockEvaluator(nlp, executor)
    corrector = InertiaCorrector(**opts.regularization)
    mu = opts.mu0
    t_ad = time.perf_counter() - t0
    t_ad_start = time.perf_counter()
    it = start.copy() if start is not None else initial_iterate(nlp, evaluator, opts, mu)
    it.check(nlp.dims)
    t_ad += time.perf_counter() - t_ad_start
    logs = []
    nu_pen = 1.0
    status = Status.MAX_ITER
    pending = dict(alpha_pr=0.0, alpha_du=0.0, merit_before=float("nan"), merit_after=float("nan"),
                   delta_w=0.0, fallback=False)
    t_iter = t0
    k = 0
    while True:
        ta = time.perf_counter()
        try:
            derivs = evaluator.derivatives(it.x, it.u, it.y, it.z)
        except NonFiniteError as exc:
            log.error("%s", exc)
            status = Status.INFEASIBLE
            break
        t_ad += time.perf_counter() - ta
        E0, inf_pr, inf_du, _ = scaled_error(nlp, it, 0.0, derivs, opts)
        t_kkt = 0.0
        obj = float(reduce_blocks(list(derivs.f))) / nlp.objective_scale

        def emit():
            now = time.perf_counter()
            total = now - t_iter
            logs.append(IterationLog(k, obj, inf_pr, inf_du, mu, pending["alpha_pr"], pending["alpha_du"],
                                     t_ad, t_kkt, max(0.0, total - t_ad - t_kkt), pending["delta_w"],
                                     pending["merit_before"], pending["merit_after"], pending["fallback"]))
            return now

        if E0 <= opts.tol:
            status = Status.OPTIMAL
            emit()
            break
        if k >= opts.max_iter:
            status = Status.MAX_ITER
            emit()
            break
        # barrier parameter
        while mu > opts.tol / 10.0:
            Emu, _, _, _ = scaled_error(nlp, it, mu, derivs, opts)
            if Emu > opts.kappa_eps * mu:
                break
            mu = update_mu(mu, opts)
        if callback is not None:
            callback(k, it, mu, derivs)
        tk = time.perf_counter()
        try:
            full, aug = compute_step(nlp, it, mu, derivs, opts.strategy, corrector, executor, opts.n_batch)
        except LinearSolveFailure as exc:
            log.error("%s", exc)
            t_kkt += time.perf_counter() - tk
            status = Status.LINEAR_SOLVE_FAILURE
            emit()
            break
        t_kkt += time.perf_counter() - tk
        if step_callback is not None:
            step_callback(k, full, aug)
        ta = time.perf_counter()
        try:
            alpha, alpha_du, nu_pen, m0, m1, s_new = line_search(nlp, evaluator, it, full, mu, derivs, aug, nu_pen, opts)
        except StepTooSmall as exc:
            log.warning("%s", exc)
            t_ad += time.perf_counter() - ta
            status = Status.INFEASIBLE
            emit()
            break
        t_ad += time.perf_counter() - ta
        t_iter = emit()
        t_ad = 0.0
        it = _advance(nlp, it, full, alpha, alpha_du, mu, opts, s_new)
        pending = dict(alpha_pr=alpha, alpha_du=alpha_du, merit_before=m0, merit_after=m1,
                       delta_w=full.step.delta_w, fallback=full.step.fallback)
        k += 1
    final_obj = logs[-1].objective if logs else float("nan")
    return IpmResult(it, status, logs, final_obj, list(corrector.events))
