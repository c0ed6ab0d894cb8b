"""Dense primal-dual interior point solver for second-order cone programs.

Programs are brought to the standard form

    minimize    c^T x
    subject to  G x + s = h,  s in K = K_1 x ... x K_p

and solved through the homogeneous self-dual embedding with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step. The data is equilibrated
first (column scaling of G, one positive scalar per cone block) and every
step is cut back until the iterate stays inside a neighbourhood of the
central path. Infeasible and unbounded programs are detected from the
embedding's certificates.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.logging import log_debug, log_warning
from app.models.cone import ConeProgram, ConeSolution, ConeStatus, QuadraticTerms, SocConstraint

logger = logging.getLogger(__name__)

STEP_FACTOR = 0.99
BACKTRACK_FACTOR = 0.8
MIN_STEP = 1e-10
SIGMA_MIN = 1e-4
CENTRALITY = 1e-4
NORMAL_REGULARIZATION = 1e-13
REFINEMENT_STEPS = 3
EQUILIBRATION_PASSES = 10
# stalled iterates within this multiple of tol are reported as OptimalInaccurate
INACCURATE_FACTOR = 1e3

Iterate = Tuple[np.ndarray, np.ndarray, np.ndarray, float, float]


def _blocks(dims: Sequence[int]) -> List[slice]:
    slices, start = [], 0
    for dim in dims:
        slices.append(slice(start, start + dim))
        start += dim
    return slices


def _identity(dims: Sequence[int]) -> np.ndarray:
    e = np.zeros(sum(dims))
    for block in _blocks(dims):
        e[block.start] = 1.0
    return e


def _jnorm(x: np.ndarray) -> float:
    """sqrt(x0^2 - ||x1||^2) as a product of factors; 0 off the interior"""
    head, tail = float(x[0]), float(np.linalg.norm(x[1:]))
    if head <= tail:
        return 0.0
    return float(np.sqrt((head - tail) * (head + tail)))


def _arrow(x: np.ndarray, y: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    out = np.empty_like(x)
    for block in _blocks(dims):
        xb, yb = x[block], y[block]
        out[block.start] = xb @ yb
        out[block.start + 1 : block.stop] = xb[0] * yb[1:] + yb[0] * xb[1:]
    return out


def _arrow_solve(lam: np.ndarray, r: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """x with lam o x = r"""
    out = np.empty_like(r)
    for block in _blocks(dims):
        lb, rb = lam[block], r[block]
        det = _jnorm(lb) ** 2
        x0 = (lb[0] * rb[0] - lb[1:] @ rb[1:]) / det
        out[block.start] = x0
        out[block.start + 1 : block.stop] = (rb[1:] - x0 * lb[1:]) / lb[0]
    return out


def _nt_scaling(s: np.ndarray, z: np.ndarray, dims: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Block-diagonal W, W^{-1} and lam = W z = W^{-1} s"""
    forward, inverse = [], []
    for block in _blocks(dims):
        sb, zb = s[block], z[block]
        s_norm, z_norm = _jnorm(sb), _jnorm(zb)
        if s_norm <= 0.0 or z_norm <= 0.0:
            raise FloatingPointError("iterate reached the boundary of a cone block")
        beta = np.sqrt(s_norm / z_norm)
        if sb.size == 1:
            forward.append(np.array([[beta]]))
            inverse.append(np.array([[1.0 / beta]]))
            continue
        s_bar, z_bar = sb / s_norm, zb / z_norm
        gamma = np.sqrt((1.0 + s_bar @ z_bar) / 2.0)
        z_reflected = np.concatenate([[z_bar[0]], -z_bar[1:]])
        w = (s_bar + z_reflected) / (2.0 * gamma)
        w0, w1 = w[0], w[1:]
        tail = np.eye(w1.size) + np.outer(w1, w1) / (1.0 + w0)
        scaled = np.block([[np.array([[w0]]), w1[None, :]], [w1[:, None], tail]])
        reflected = np.block([[np.array([[w0]]), -w1[None, :]], [-w1[:, None], tail]])
        forward.append(beta * scaled)
        inverse.append(reflected / beta)
    w_full = linalg.block_diag(*forward)
    return w_full, linalg.block_diag(*inverse), w_full @ z


def _cone_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest a >= 0 keeping x + a dx in the cone, x interior"""
    steps = []
    if dx[0] < 0:
        steps.append(float(-x[0] / dx[0]))
    if x.size > 1:
        x_head, x_tail = float(x[0]), float(np.linalg.norm(x[1:]))
        d_head, d_tail = float(dx[0]), float(np.linalg.norm(dx[1:]))
        a = (d_head - d_tail) * (d_head + d_tail)
        b = x_head * d_head - float(x[1:] @ dx[1:])
        c = (x_head - x_tail) * (x_head + x_tail)
        if a == 0.0:
            if b < 0.0:
                steps.append(-c / (2.0 * b))
        else:
            disc = b * b - a * c
            if disc >= 0.0:
                q = -(b + float(np.copysign(np.sqrt(disc), b)))
                roots = [q / a] + ([c / q] if q != 0.0 else [])
                steps.extend(root for root in roots if root > 0.0)
    return min(steps) if steps else np.inf


def _max_step(x: np.ndarray, dx: np.ndarray, dims: Sequence[int]) -> float:
    return min((_cone_step(x[block], dx[block]) for block in _blocks(dims)), default=np.inf)


def _centrality(s: np.ndarray, z: np.ndarray, dims: Sequence[int]) -> float:
    """Smallest squared eigenvalue of the scaled point over all blocks"""
    worst = np.inf
    for block in _blocks(dims):
        sb, zb = s[block], z[block]
        product = _jnorm(sb) * _jnorm(zb)
        if product <= 0.0:
            return 0.0
        inner = float(sb @ zb)
        spread = np.sqrt(max(2.0 * (inner - product), 0.0))
        largest = (np.sqrt(2.0 * (inner + product)) + spread) / 2.0
        worst = min(worst, (product / largest) ** 2)
    return float(worst)


def _well_centred(s: np.ndarray, z: np.ndarray, tau: float, kappa: float, dims: Sequence[int]) -> bool:
    if tau <= 0.0 or kappa <= 0.0:
        return False
    mu = (s @ z + tau * kappa) / (len(dims) + 1)
    floor = CENTRALITY * mu
    return tau * kappa >= floor and _centrality(s, z, dims) >= floor


@dataclass(frozen=True, eq=False)
class _Equilibration:
    """Scaled copy of (c, G, h): x = D x' / h_scale, s = E^-1 s' / h_scale, z = E z' / c_scale"""

    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    columns: np.ndarray
    rows: np.ndarray
    c_scale: float
    h_scale: float

    @classmethod
    def of(cls, c: np.ndarray, G: np.ndarray, h: np.ndarray, dims: Sequence[int]) -> "_Equilibration":
        columns, rows = np.ones(G.shape[1]), np.ones(G.shape[0])
        work = np.array(G, dtype=float)
        blocks = _blocks(dims)
        for _ in range(EQUILIBRATION_PASSES):
            column_peak = np.max(np.abs(work), axis=0)
            column_peak[column_peak == 0.0] = 1.0
            row_peak = np.ones(G.shape[0])
            for block in blocks:
                peak = float(np.max(np.abs(work[block])))
                if peak > 0.0:
                    row_peak[block] = peak
            column_fix, row_fix = 1.0 / np.sqrt(column_peak), 1.0 / np.sqrt(row_peak)
            work = row_fix[:, None] * work * column_fix[None, :]
            columns, rows = columns * column_fix, rows * row_fix
        c_bar, h_bar = columns * c, rows * h
        c_norm, h_norm = float(np.linalg.norm(c_bar)), float(np.linalg.norm(h_bar))
        c_scale = 1.0 / c_norm if c_norm > 0.0 else 1.0
        h_scale = 1.0 / h_norm if h_norm > 0.0 else 1.0
        return cls(c_bar * c_scale, work, h_bar * h_scale, columns, rows, c_scale, h_scale)

    def primal(self, x: np.ndarray) -> np.ndarray:
        return self.columns * x / self.h_scale

    def slack(self, s: np.ndarray) -> np.ndarray:
        return s / (self.rows * self.h_scale)

    def dual(self, z: np.ndarray) -> np.ndarray:
        return self.rows * z / self.c_scale


@dataclass(frozen=True, eq=False)
class _Measure:
    """Iterate mapped back to the caller's data, with its residuals"""

    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    pres: float
    dres: float
    gap: float
    pcost: float
    dcost: float

    @property
    def relative_gap(self) -> float:
        return min(self.gap, abs(self.pcost - self.dcost)) / (1.0 + abs(self.pcost))

    @property
    def error(self) -> float:
        return max(self.pres, self.dres, self.relative_gap)


def _measure(c: np.ndarray, G: np.ndarray, h: np.ndarray, scaling: _Equilibration, point: Iterate) -> _Measure:
    x, s, z, tau, _ = point
    x_orig, s_orig, z_orig = scaling.primal(x) / tau, scaling.slack(s) / tau, scaling.dual(z) / tau
    return _Measure(
        x=x_orig,
        s=s_orig,
        z=z_orig,
        pres=float(np.linalg.norm(G @ x_orig + s_orig - h)) / max(1.0, float(np.linalg.norm(h))),
        dres=float(np.linalg.norm(G.T @ z_orig + c)) / max(1.0, float(np.linalg.norm(c))),
        gap=float(s_orig @ z_orig),
        pcost=float(c @ x_orig),
        dcost=-float(h @ z_orig),
    )


def _certificate(scaling: _Equilibration, point: Iterate, tol: float) -> Optional[ConeStatus]:
    """Infeasible or Unbounded once the embedding's ray is accurate to tol"""
    x, s, z, tau, kappa = point
    if tau >= kappa:
        return None
    G, c, h = scaling.G, scaling.c, scaling.h
    hz, cx = float(h @ z), float(c @ x)
    if hz < 0.0 and np.linalg.norm(G.T @ z) <= tol * -hz:
        return ConeStatus.INFEASIBLE
    if cx < 0.0 and np.linalg.norm(G @ x + s) <= tol * -cx:
        return ConeStatus.UNBOUNDED
    return None


class _NewtonSystem:
    """Factorized reduced KKT system for one scaling point"""

    def __init__(self, G: np.ndarray, w: np.ndarray, w_inv: np.ndarray):
        self.G = G
        self.w_sq = w @ w
        self.w_inv = w_inv
        self.scaled_g = w_inv @ G
        normal = self.scaled_g.T @ self.scaled_g
        shift = NORMAL_REGULARIZATION * max(1.0, float(np.max(np.diag(normal))))
        self.factor = linalg.cho_factor(normal + shift * np.eye(normal.shape[0]))

    def _solve_once(self, p: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        u = self.w_inv @ q
        x = linalg.cho_solve(self.factor, p + self.scaled_g.T @ u)
        z = self.w_inv @ (self.scaled_g @ x - u)
        return x, z

    def solve(self, p: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """[[0, G^T], [G, -W^2]] [x; z] = [p; q], refined against the unreduced system"""
        x, z = self._solve_once(p, q)
        for _ in range(REFINEMENT_STEPS):
            x_fix, z_fix = self._solve_once(p - self.G.T @ z, q - self.G @ x + self.w_sq @ z)
            x, z = x + x_fix, z + z_fix
        return x, z


def _newton_step(scaling: _Equilibration, dims: Sequence[int], point: Iterate) -> Optional[Iterate]:
    """One predictor-corrector step; None when no centred step of useful length exists"""
    G, c, h = scaling.G, scaling.c, scaling.h
    x, s, z, tau, kappa = point
    rx = G.T @ z + c * tau
    rz = G @ x + s - h * tau
    rt = -(c @ x) - h @ z - kappa
    mu = (s @ z + tau * kappa) / (len(dims) + 1)

    w, w_inv, lam = _nt_scaling(s, z, dims)
    system = _NewtonSystem(G, w, w_inv)
    x2, z2 = system.solve(-c, h)
    # kappa/tau - c^T x2 - h^T z2 reduces to this positive form
    denominator = kappa / tau + float(np.sum((w @ z2) ** 2))

    def direction(sigma: float, r_sz: np.ndarray, r_tk: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
        q = _arrow_solve(lam, r_sz, dims)
        x1, z1 = system.solve(-(1.0 - sigma) * rx, -(1.0 - sigma) * rz - w @ q)
        dtau = (-(1.0 - sigma) * rt + r_tk / tau + c @ x1 + h @ z1) / denominator
        dz = z1 + dtau * z2
        return x1 + dtau * x2, w @ (q - w @ dz), dz, dtau, (r_tk - kappa * dtau) / tau

    def step_length(ds: np.ndarray, dz: np.ndarray, dtau: float, dkappa: float) -> float:
        limit = min(_max_step(s, ds, dims), _max_step(z, dz, dims))
        if dtau < 0:
            limit = min(limit, -tau / dtau)
        if dkappa < 0:
            limit = min(limit, -kappa / dkappa)
        return limit

    lam_sq = _arrow(lam, lam, dims)
    _, ds_a, dz_a, dtau_a, dkappa_a = direction(0.0, -lam_sq, -tau * kappa)
    alpha_aff = min(1.0, step_length(ds_a, dz_a, dtau_a, dkappa_a))
    sigma = min(1.0, max(SIGMA_MIN, (1.0 - alpha_aff) ** 3))

    r_sz = -lam_sq + sigma * mu * _identity(dims) - _arrow(w_inv @ ds_a, w @ dz_a, dims)
    r_tk = -tau * kappa + sigma * mu - dtau_a * dkappa_a
    dx, ds, dz, dtau, dkappa = direction(sigma, r_sz, r_tk)

    alpha = min(1.0, STEP_FACTOR * step_length(ds, dz, dtau, dkappa))
    while alpha >= MIN_STEP:
        s_new, z_new = s + alpha * ds, z + alpha * dz
        tau_new, kappa_new = tau + alpha * dtau, kappa + alpha * dkappa
        if _well_centred(s_new, z_new, tau_new, kappa_new, dims):
            return x + alpha * dx, s_new, z_new, float(tau_new), float(kappa_new)
        alpha *= BACKTRACK_FACTOR
    return None


def solve_cone_program(prog: ConeProgram, tol: float = 1e-8, max_iter: int = 100) -> ConeSolution:
    c, G, h, dims = prog.standard_form()
    n, m = c.size, h.size
    if m == 0:
        status = ConeStatus.OPTIMAL if not np.any(c) else ConeStatus.UNBOUNDED
        return ConeSolution(status, np.zeros(n), 0.0, [], 0.0, 0)

    scaling = _Equilibration.of(c, G, h, dims)
    e = _identity(dims)
    point: Iterate = (np.zeros(n), e.copy(), e.copy(), 1.0, 1.0)
    status = ConeStatus.MAX_ITER
    measure = best = _measure(c, G, h, scaling, point)

    iteration = 0
    for iteration in range(max_iter + 1):
        measure = _measure(c, G, h, scaling, point)
        log_debug(
            logger,
            f"cone iter {iteration}: pcost={measure.pcost:.8e} dcost={measure.dcost:.8e} "
            f"pres={measure.pres:.2e} dres={measure.dres:.2e} gap={measure.gap:.2e}",
        )
        if measure.error <= tol:
            status = ConeStatus.OPTIMAL
            break
        verdict = _certificate(scaling, point, tol)
        if verdict is not None:
            status = verdict
            break
        if measure.error < best.error:
            best = measure
        if iteration == max_iter:
            break
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                advanced = _newton_step(scaling, dims, point)
        except (linalg.LinAlgError, ArithmeticError, ValueError) as e:
            log_debug(logger, f"Cone solver stopped on a numerical failure: {e}")
            break
        if advanced is None:
            log_debug(logger, f"Cone solver stalled at iteration {iteration}")
            break
        point = advanced

    if status == ConeStatus.MAX_ITER:
        verdict = _certificate(scaling, point, INACCURATE_FACTOR * tol)
        if verdict is not None:
            status = verdict
        else:
            measure = best
            if best.error <= INACCURATE_FACTOR * tol:
                status = ConeStatus.INACCURATE
            else:
                log_warning(logger, f"Cone solver gave up after {iteration} iterations (error {best.error:.2e})")

    x, _, z, _, _ = point
    if status == ConeStatus.INFEASIBLE:
        ray = scaling.dual(z)
        primal, duals_vec = scaling.primal(x), ray / -float(h @ ray)
    elif status == ConeStatus.UNBOUNDED:
        ray = scaling.primal(x)
        primal, duals_vec = ray / -float(c @ ray), scaling.dual(z)
    else:
        primal, duals_vec = measure.x, measure.z
    return ConeSolution(
        status=status,
        z=primal,
        objective=float(c @ primal),
        cone_duals=[duals_vec[block] for block in _blocks(dims)],
        kkt_residual=float(measure.error),
        iterations=iteration,
        primal_residual=float(measure.pres),
        dual_residual=float(measure.dres),
        gap=float(measure.gap),
    )


def rotated_cone(A: np.ndarray, b: np.ndarray, u: np.ndarray, u0: float) -> SocConstraint:
    """||A z + b||^2 <= u^T z + u0 as a second-order cone constraint"""
    rows = np.vstack([2.0 * A, u[None, :]])
    offsets = np.concatenate([2.0 * b, [u0 - 1.0]])
    return SocConstraint(A=rows, b=offsets, c=u.astype(float), d=u0 + 1.0)


def quadratic_epigraph(terms: QuadraticTerms, s_index: int) -> SocConstraint:
    """Constraint sum q_i z_i^2 + l^T z + constant <= z[s_index]"""
    n = terms.diagonal.size
    support = np.flatnonzero(terms.diagonal)
    A = np.zeros((support.size, n))
    A[np.arange(support.size), support] = np.sqrt(terms.diagonal[support])
    u = -np.asarray(terms.linear, dtype=float).copy()
    u[s_index] += 1.0
    return rotated_cone(A, np.zeros(support.size), u, -terms.constant)


def dump_triplets(prog: ConeProgram) -> str:
    """Plain-text sparse dump: c, G and h entries plus the cone sizes"""
    c, G, h, dims = prog.standard_form()
    lines = [f"n {c.size} m {h.size}", "cones " + " ".join(str(d) for d in dims)]
    lines += [f"c {j} {value:.17g}" for j, value in enumerate(c) if value != 0.0]
    rows, cols = np.nonzero(G)
    lines += [f"G {r} {col} {G[r, col]:.17g}" for r, col in zip(rows, cols)]
    lines += [f"h {r} {value:.17g}" for r, value in enumerate(h) if value != 0.0]
    return "\n".join(lines) + "\n"
