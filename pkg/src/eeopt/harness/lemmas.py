"""Numerical checks of the optimizer's local guarantees.

Each check returns ``(lines, passed)``; :func:`lemma_check` joins them into
a report. Failures are report content, never exceptions.
"""
from dataclasses import replace

import numpy as np

from .. import rng
from ..objective import Cubic, Quadratic, Saddle, fd_hvp, robust_objective_estimate
from ..optimizer import EEOConfig, EEOState, eeo_step, estimate_min_curvature, negcur_escape, sam_gradient

CHECKS = ("lemma2", "lemma3", "lemma4")
N_DIRECTIONS = 256
RTOL = 1e-9


def _verdict(ok):
    return "PASS" if ok else "FAIL"


def _points(seed, n, dim, scale=1.0):
    return rng.generator(seed, rng.INIT).uniform(-scale, scale, (n, dim))


def first_order_residual(obj, w, rho, seed):
    """U_rho(w) - L(w) - rho ||g(w)|| with the sampled U."""
    U = robust_objective_estimate(obj, w, rho, N_DIRECTIONS, seed)
    return U - obj.loss(w) - rho * np.linalg.norm(obj.grad(w))


def check_lemma2(seed=0, n_points=10, rho_fit=0.1, rho_check=(1e-2, 1e-3), eta=0.05, rho_sam=0.05):
    """Robust objective expands as L + rho ||g|| + O(rho^2); a SAM step lowers it."""
    obj = Quadratic(np.diag([1.0, 10.0]))
    pts = _points(seed, n_points, 2)
    stationary = np.zeros(2)
    fit_pts = list(pts) + [stationary]
    lines = []
    # one constant for every point; the slack only absorbs rounding
    C = max(abs(first_order_residual(obj, w, rho_fit, seed)) for w in fit_pts) / rho_fit**2
    C *= 1 + RTOL
    ok_fit = True
    for rho in rho_check:
        worst = max(abs(first_order_residual(obj, w, rho, seed)) for w in pts) / rho**2
        ok = worst <= C
        ok_fit &= ok
        lines.append(f"  |U-L-rho|g||/rho^2 at rho={rho:g}: worst {worst:.4g} vs C={C:.4g} fitted at rho={rho_fit:g}  {_verdict(ok)}")

    ok_stat = True
    for rho in rho_check:
        gap = robust_objective_estimate(obj, stationary, rho, N_DIRECTIONS, seed) - obj.loss(stationary)
        ok_stat &= abs(gap) <= C * rho**2
    lines.append(f"  stationary point: U-L <= C rho^2 at rho in {rho_check}  {_verdict(ok_stat)}")

    cfg = EEOConfig(eta=eta, rho=rho_sam)
    drops = []
    for w in pts:
        before = robust_objective_estimate(obj, w, rho_sam, N_DIRECTIONS, seed)
        w_next = w - eta * sam_gradient(obj, w, cfg)
        after = robust_objective_estimate(obj, w_next, rho_sam, N_DIRECTIONS, seed)
        drops.append(after - before)
    ok_sam = all(d < 0 for d in drops)
    lines.append(
        f"  one SAM step (eta={eta:g}, rho={rho_sam:g}) lowers sampled U at "
        f"{sum(d < 0 for d in drops)}/{n_points} points  {_verdict(ok_sam)}"
    )
    return lines, ok_fit and ok_stat and ok_sam


def hvp_error_ratios(w, v, alphas):
    """error(alpha_{k+1}) / error(alpha_k) for the central FD-HVP on the cubic."""
    obj = Cubic(len(w))
    exact = obj.hessian(w) @ v
    errs = [np.linalg.norm(fd_hvp(obj, w, v, a) - exact) for a in alphas]
    return [b / a if a > 0 else np.nan for a, b in zip(errs, errs[1:])], errs


def check_lemma3(seed=0, n_trials=10, alphas=(1e-2, 5e-3, 2.5e-3), dim=4, kick=0.1):
    """FD-HVP error is O(alpha^2); a kick along negative curvature descends."""
    lines = []
    gen = rng.generator(seed, rng.PROBE)
    ok_ratio = True
    worst = None
    for i in range(n_trials):
        w = gen.uniform(-1, 1, dim)
        v = gen.standard_normal(dim)
        v /= np.linalg.norm(v)
        ratios, errs = hvp_error_ratios(w, v, alphas)
        trial_ok = all(0.2 <= r <= 0.3 for r in ratios)
        ok_ratio &= trial_ok
        if not trial_ok and worst is None:
            worst = (i, ratios, errs)
    if worst is None:
        lines.append(f"  cubic FD-HVP halving ratios in [0.2, 0.3] for all {n_trials} trials  PASS")
    else:
        i, ratios, errs = worst
        lines.append(
            f"  cubic FD-HVP halving ratios outside [0.2, 0.3] (trial {i}: ratios "
            f"{', '.join(f'{r:.3g}' for r in ratios)}; errors {', '.join(f'{e:.2e}' for e in errs)})  FAIL"
        )

    A = rng.generator(seed, rng.INIT).standard_normal((5, 5))
    A = A + A.T
    quad = Quadratic(A)
    rel = 0.0
    for _ in range(n_trials):
        w, v = gen.standard_normal(5), gen.standard_normal(5)
        exact = A @ v
        rel = max(rel, np.linalg.norm(fd_hvp(quad, w, v) - exact) / np.linalg.norm(exact))
    ok_quad = rel <= 1e-8
    lines.append(f"  quadratic FD-HVP relative error {rel:.2e} <= 1e-8  {_verdict(ok_quad)}")

    saddle = Saddle()
    gamma = 2.0
    cfg = EEOConfig(rho=kick, negcur_kick=1.0, probe_iters=50)
    need = kick**2 * gamma / 4
    ok_kick = True
    for w in _points(seed, n_trials, 2, scale=1e-3):
        est = estimate_min_curvature(saddle, w, cfg)
        w_new, fired = negcur_escape(saddle, w, est, cfg)
        ok_kick &= fired and saddle.loss(w) - saddle.loss(w_new) >= need
    lines.append(f"  saddle kick of length {kick:g} lowers L by >= eta^2 gamma/4 = {need:g} at {n_trials} near-critical points  {_verdict(ok_kick)}")
    return lines, ok_ratio and ok_quad and ok_kick


def check_lemma4(seed=0, n_steps=200, eta=0.01, rho=0.05, T=1e-4, w0=(1.0, 1.0)):
    """Expected one-step descent of U_rho with the eta T d noise allowance."""
    A = np.diag([1.0, 4.0])
    obj = Quadratic(A)
    smooth = 4.0
    dim = 2
    w0 = np.asarray(w0, dtype=np.float64)
    cfg = EEOConfig(eta=eta, rho=rho, temperature=T, temp_decay=1.0, beta=0.0, negcur_kick=0.0)

    def U(w):
        return robust_objective_estimate(obj, w, rho, N_DIRECTIONS, seed)

    u0 = U(w0)
    grad_U = sam_gradient(obj, w0, cfg)
    after = []
    for s in range(n_steps):
        c = replace(cfg, seed=seed * n_steps + s)
        state, _ = eeo_step(obj, EEOState.initial(w0, c), c)
        after.append(U(state.w))
    change = float(np.mean(after)) - u0
    bound = -eta * (1 - smooth * eta / 2) * float(grad_U @ grad_U) * 0.5 + eta * T * dim
    ok_noisy = change <= bound
    lines = [f"  mean U change over {n_steps} noisy steps {change:.4e} <= bound {bound:.4e}  {_verdict(ok_noisy)}"]

    cfg0 = EEOConfig(eta=eta, rho=rho, temperature=0.0, beta=0.0, negcur_kick=0.0, seed=seed)
    state = EEOState.initial(w0, cfg0)
    prev = U(state.w)
    ok_strict = True
    for _ in range(n_steps):
        state, _ = eeo_step(obj, state, cfg0)
        cur = U(state.w)
        ok_strict &= cur < prev
        prev = cur
    lines.append(f"  T=0: sampled U strictly decreases on each of {n_steps} steps  {_verdict(ok_strict)}")
    return lines, ok_noisy and ok_strict


_CHECKS = {"lemma2": check_lemma2, "lemma3": check_lemma3, "lemma4": check_lemma4}


def lemma_check(which="all", seed=0):
    """Run one check or all of them; returns ``(report_text, passed)``."""
    names = CHECKS if which == "all" else (which,)
    for name in names:
        if name not in _CHECKS:
            raise ValueError(f"unknown check {which!r}; expected one of {CHECKS + ('all',)}")
    out = []
    passed = True
    for name in names:
        lines, ok = _CHECKS[name](seed)
        out.append(f"{name}: {_verdict(ok)}")
        out += lines
        passed &= ok
    return "\n".join(out) + "\n", passed
