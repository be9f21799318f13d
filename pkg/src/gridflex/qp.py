"""Dense convex QP solver used for the household scheduling problems.

    minimize    0.5 x'Px + q'x
    subject to  G x <= h,   A x = b

Primal-dual interior point with a Mehrotra predictor-corrector step,
followed by an active-set polish: the interior point gets within ~1e-5 even
on degenerate active sets, then the reduced KKT system solved at the
identified active set lands the iterate at rounding-level residuals.  The
problems here are small (tens of variables, a few hundred rows) and the
inequality block always contains the +-identity box rows, so the Newton
normal matrix stays positive definite even when P is only a tiny proximal
regularization (the near-linear, price-dominated households).

The optimality contract is the max-norm KKT residual over stationarity,
primal feasibility and complementarity; ``kkt_residual`` is the single
source of truth for it, shared with the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.linalg import LinAlgError, cholesky

_FRACTION_TO_BOUNDARY = 0.995
_DIVERGED = 1e12


@dataclass
class QpResult:
    x: np.ndarray
    z: np.ndarray          # inequality multipliers, >= 0
    y: np.ndarray          # equality multipliers
    iterations: int
    kkt_residual: float
    status: str            # optimal | max_iter | infeasible_suspected


def kkt_residual(P, q, G, h, A, b, x, z, y) -> float:
    """Max-norm KKT residual: stationarity, primal feasibility (inequality
    overshoot and equality gap), complementarity z*(h-Gx), dual sign."""
    stat = P @ x + q + G.T @ z
    if A is not None and np.asarray(A).size:
        stat = stat + A.T @ y
    slack = h - G @ x
    parts = [float(np.max(np.abs(stat)))]
    if slack.size:
        parts += [
            float(max(np.max(-slack), 0.0)),
            float(np.max(np.abs(z * slack))),
            float(max(np.max(-z), 0.0)),
        ]
    if A is not None and np.asarray(A).size:
        parts.append(float(np.max(np.abs(A @ x - b))))
    return max(parts)


def _chol_solve(L, rhs):
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


_POLISH_REG = 1e-10
_POLISH_STEPS = 60


def _polish(P, q, G, h, A, b, x0, z0, tol):
    """Working-set refinement seeded from an interior-point iterate.

    Solves the equality-constrained QP on the guessed active set through a
    regularized saddle system (nonsingular even for dependent rows), then
    drops the most negative multiplier or adds the most violated row until
    the KKT residual stops improving.  Returns the best candidate found.
    """
    n = q.size
    m = h.size
    p = b.size if A is not None else 0
    slack = h - G @ x0
    active = z0 > np.maximum(slack, 0.0)
    best = None
    for _ in range(_POLISH_STEPS):
        idx = np.flatnonzero(active)
        k = idx.size
        Ga = G[idx]
        dim = n + k + p
        kkt = np.zeros((dim, dim))
        kkt[:n, :n] = P
        kkt[:n, :n][np.diag_indices(n)] += _POLISH_REG
        kkt[:n, n:n + k] = Ga.T
        kkt[n:n + k, :n] = Ga
        kkt[n:n + k, n:n + k] = -_POLISH_REG * np.eye(k)
        if p:
            kkt[:n, n + k:] = A.T
            kkt[n + k:, :n] = A
            kkt[n + k:, n + k:] = -_POLISH_REG * np.eye(p)
        rhs = np.concatenate([-q, h[idx]] + ([b] if p else []))
        try:
            sol = np.linalg.solve(kkt, rhs)
            # one round of iterative refinement to undo the regularization
            sol += np.linalg.solve(kkt, rhs - kkt @ sol)
        except np.linalg.LinAlgError:
            break
        x = sol[:n]
        lam = sol[n:n + k]
        y = sol[n + k:]
        z = np.zeros(m)
        z[idx] = lam
        res = kkt_residual(P, q, G, h, A, b, x, z, y)
        if best is None or res < best[0]:
            best = (res, x, z, y)
        if res <= tol:
            break
        if k and lam.min() < -tol:
            active[idx[np.argmin(lam)]] = False
            continue
        viol = G @ x - h
        viol[active] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] > tol:
            active[j] = True
            continue
        break
    if best is None:
        return x0, z0, np.zeros(p)
    _, x, z, y = best
    return x, np.maximum(z, 0.0), y


def solve_qp(P, q, G, h, A=None, b=None, tol: float = 1e-8,
             max_iter: int = 60) -> QpResult:
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    G0 = np.asarray(G, dtype=float)
    h0 = np.asarray(h, dtype=float)
    n = q.size
    m = h0.size
    has_eq = A is not None and np.asarray(A).size > 0
    if has_eq:
        A0 = np.atleast_2d(np.asarray(A, dtype=float))
        b0 = np.atleast_1d(np.asarray(b, dtype=float))
        arow = np.maximum(np.max(np.abs(A0), axis=1), 1e-12)
        A_s, b_s = A0 / arow[:, None], b0 / arow
        p = b0.size
    else:
        A0 = b0 = None
        A_s = np.zeros((0, n))
        b_s = np.zeros(0)
        p = 0

    if m == 0:
        # no inequalities: the KKT system is linear
        kkt = np.block([[P, A_s.T], [A_s, np.zeros((p, p))]]) if p else P
        rhs = np.concatenate([-q, b_s]) if p else -q
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x = sol[:n]
        y = sol[n:]
        res = kkt_residual(P, q, G0.reshape(0, n), h0, A0, b0, x,
                           np.zeros(0), y)
        status = "optimal" if res <= max(tol, 1e-8) else "max_iter"
        return QpResult(x=x, z=np.zeros(0), y=y, iterations=1,
                        kkt_residual=res, status=status)

    # unit-inf-norm rows keep mixed constraint scales (SOC fractions vs kW
    # bounds) from wrecking the Newton system conditioning
    grow = np.maximum(np.max(np.abs(G0), axis=1), 1e-12)
    G = G0 / grow[:, None]
    h = h0 / grow

    # normalize the objective too, so the cold start (z = 1) and barrier
    # thresholds see a unit-scale problem regardless of cost units
    c_obj = max(1.0,
                float(np.max(np.abs(P))) if P.size else 0.0,
                float(np.max(np.abs(q))) if q.size else 0.0)
    P0, q0 = P, q
    P = P / c_obj
    q = q / c_obj

    def orig_duals(z_s, y_s):
        z = z_s * (c_obj / grow)
        y = y_s * (c_obj / arow) if has_eq else np.zeros(0)
        return z, y

    def contract_res(x, z_s, y_s):
        z, y = orig_duals(z_s, y_s)
        return kkt_residual(P0, q0, G0, h0, A0, b0, x, z, y)

    x = np.zeros(n)
    y = np.zeros(p)
    s_raw = h - G @ x
    s = s_raw + max(0.0, -float(s_raw.min())) + 1.0
    z = np.ones(m)
    reg = 1e-11 * (1.0 + float(np.max(np.abs(P))))

    best = (contract_res(x, z, y), x.copy(), z.copy(), y.copy(), 0)
    status = "max_iter"
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + G.T @ z + (A_s.T @ y if has_eq else 0.0)
        rp = G @ x + s - h
        re = A_s @ x - b_s if has_eq else None
        mu = float(s @ z) / m

        w = np.clip(z / s, 1e-12, 1e12)
        M = P + (G.T * w) @ G
        M[np.diag_indices_from(M)] += reg
        L = None
        shift = 1e-12 * float(np.max(np.diag(M)))
        for _ in range(8):
            try:
                L = cholesky(M)
                break
            except LinAlgError:
                M[np.diag_indices_from(M)] += shift
                shift *= 100.0
        if L is None:
            break

        def newton(rc):
            # eliminate ds and dz, solve for dx (and dy through the Schur
            # complement on the equality rows)
            r1 = -rd - G.T @ ((z * rp - rc) / s)
            if has_eq:
                minv_r1 = _chol_solve(L, r1)
                minv_at = _chol_solve(L, A_s.T)
                schur = A_s @ minv_at
                dy = np.linalg.solve(schur, A_s @ minv_r1 + re)
                dx = minv_r1 - minv_at @ dy
            else:
                dy = np.zeros(0)
                dx = _chol_solve(L, r1)
            ds = -rp - G @ dx
            dz = (z * (rp + G @ dx) - rc) / s
            return dx, ds, dz, dy

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        # predictor
        dx_a, ds_a, dz_a, _ = newton(s * z)
        ap = max_step(s, ds_a)
        ad = max_step(z, dz_a)
        mu_aff = float((s + ap * ds_a) @ (z + ad * dz_a)) / m
        sigma = min(max((mu_aff / mu) ** 3, 0.0), 1.0) if mu > 0 else 0.0

        # corrector
        rc = s * z + ds_a * dz_a - sigma * mu
        dx, ds, dz, dy = newton(rc)
        ap = _FRACTION_TO_BOUNDARY * max_step(s, ds)
        ad = _FRACTION_TO_BOUNDARY * max_step(z, dz)

        x = x + ap * dx
        s = s + ap * ds
        z = z + ad * dz
        if has_eq:
            y = y + ad * dy

        res = contract_res(x, z, y)
        if res < 0.9 * best[0]:
            best = (res, x.copy(), z.copy(), y.copy(), it)
            stall = 0
        else:
            stall += 1
        if res <= tol:
            status = "optimal"
            break
        if stall >= 15 or mu < 1e-16:
            break
        if np.max(np.abs(x)) > _DIVERGED or np.max(z) > _DIVERGED:
            status = "infeasible_suspected"
            break

    res_b, x_b, z_b, y_b, it_b = best
    if status != "infeasible_suspected" and res_b > 1e-12:
        try:
            x_p, z_p, y_p = _polish(P, q, G, h, A_s if has_eq else None,
                                    b_s if has_eq else None, x_b, z_b,
                                    max(tol / c_obj, 1e-13))
            res_p = contract_res(x_p, z_p, y_p)
            if res_p < res_b:
                res_b, x_b, z_b, y_b = res_p, x_p, z_p, y_p
        except LinAlgError:
            pass

    z_o, y_o = orig_duals(z_b, y_b)
    final_status = status
    if res_b <= tol:
        final_status = "optimal"
    elif status != "infeasible_suspected":
        final_status = "max_iter"
    return QpResult(x=x_b, z=z_o, y=y_o, iterations=max(it, it_b),
                    kkt_residual=res_b, status=final_status)
