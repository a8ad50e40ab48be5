"""Dense quadratic programming for contact-force resolution.

The solver handles the problem class

    min  1/2 x^T H x + g^T x
    s.t. A_eq x = b_eq
         x_i >= 0   for every masked index i

with H symmetric positive definite. Problems are tiny (d <= 22 for the
single-rigid-body character: 6 acceleration + 16 cone coefficients), so a
dual active-set method with dense refactorization per iteration is both
exact and fast. The dual method needs no feasible starting point, returns
exact complementarity, and is deterministic: ties are broken toward the
lowest constraint index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spatial
from .errors import InvalidInputError, QPInfeasibleError, QPNoConvergenceError

_UP = np.array([0.0, 1.0, 0.0])


@dataclass
class FrictionBasis:
    """Unit edge directions spanning a linearized friction cone from inside."""

    normal: np.ndarray
    mu: float
    edges: np.ndarray  # (k, 3), rows are unit edge vectors


@dataclass
class QPProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    eq_matrix: np.ndarray  # (m, d); may have zero rows
    eq_rhs: np.ndarray
    nonneg_mask: np.ndarray  # boolean, length d
    hessian_is_diagonal: bool = False  # enables a cheaper solve path


@dataclass
class QPSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    bound_duals: np.ndarray  # length d, zero at unmasked/inactive entries
    objective: float
    iterations: int
    active_bounds: tuple = ()  # indices of bounds active at the solution


def friction_basis(normal: np.ndarray, mu: float, k: int = 4) -> FrictionBasis:
    """Build k unit edges e_i = normalize(n + mu * t_i) around a contact normal.

    Tangents t_i are k evenly spaced horizontal directions carried from the
    flat-ground case onto `normal` by the shortest-arc rotation, so bases for
    tilted normals are the rotated flat-case bases.
    """
    normal = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise InvalidInputError("contact normal must be a unit vector")
    if mu <= 0.0:
        raise InvalidInputError(f"friction coefficient must be positive, got {mu}")
    if k < 3:
        raise InvalidInputError(f"need at least 3 cone edges, got {k}")
    carry = spatial.rotation_between(_UP, normal)
    angles = 2.0 * np.pi * np.arange(k) / k
    flat_tangents = np.stack(
        [np.cos(angles), np.zeros(k), -np.sin(angles)], axis=1
    )
    edges = (carry @ flat_tangents.T).T * mu + normal
    edges /= np.linalg.norm(edges, axis=1, keepdims=True)
    return FrictionBasis(normal=normal, mu=float(mu), edges=edges)


def friction_matrix(bases: list[FrictionBasis]) -> np.ndarray:
    """Block-diagonal (3 n_c) x (k n_c) matrix mapping cone coefficients to forces."""
    n_c = len(bases)
    if n_c == 0:
        return np.zeros((0, 0))
    k = bases[0].edges.shape[0]
    b = np.zeros((3 * n_c, k * n_c))
    for i, basis in enumerate(bases):
        b[3 * i : 3 * i + 3, k * i : k * i + k] = basis.edges.T
    return b


def assemble_srb_qp(
    m_matrix: np.ndarray,
    bias: np.ndarray,
    j_contact: np.ndarray,
    b_basis: np.ndarray,
    j_force: np.ndarray,
    f_ext: np.ndarray,
    qdd_desired: np.ndarray,
    w_lambda: float = 0.001,
    check: bool = True,
) -> QPProblem:
    """Assemble the tracking QP over x = (qdd, lambda).

    Encodes   min |qdd - qdd_d|^2 + w_lambda |lambda|^2
              s.t. M qdd + b = J_f^T F_e + J_c^T B lambda,  lambda >= 0.
    """
    m_matrix = np.asarray(m_matrix, dtype=float)
    bias = np.asarray(bias, dtype=float).reshape(6)
    qdd_desired = np.asarray(qdd_desired, dtype=float).reshape(6)
    if m_matrix.shape != (6, 6):
        raise InvalidInputError(f"M must be 6x6, got {m_matrix.shape}")
    if w_lambda <= 0.0:
        raise InvalidInputError("w_lambda must be positive")
    if check and np.linalg.cond(m_matrix) > 1e12:
        raise InvalidInputError("inertia matrix is numerically singular")

    n_lam = b_basis.shape[1]
    if j_contact.shape != (b_basis.shape[0], 6):
        raise InvalidInputError(
            f"contact Jacobian shape {j_contact.shape} does not match basis "
            f"{b_basis.shape}"
        )
    d = 6 + n_lam

    hessian = np.zeros((d, d))
    hessian[:6, :6] = 2.0 * np.eye(6)
    if n_lam:
        hessian[6:, 6:] = 2.0 * w_lambda * np.eye(n_lam)
    gradient = np.zeros(d)
    gradient[:6] = -2.0 * qdd_desired

    eq = np.zeros((6, d))
    eq[:, :6] = m_matrix
    rhs = -bias.copy()
    if n_lam:
        eq[:, 6:] = -(j_contact.T @ b_basis)
    if f_ext is not None and j_force is not None:
        rhs += j_force.T @ np.asarray(f_ext, dtype=float)

    mask = np.zeros(d, dtype=bool)
    mask[6:] = True
    return QPProblem(hessian, gradient, eq, rhs, mask, hessian_is_diagonal=True)


def _try_warm_start(problem: QPProblem, happly, active, cache=None) -> QPSolution | None:
    """One-shot KKT solve with a guessed active set; None unless optimal.

    `cache` (a dict owned by the caller) keeps the factorization across
    calls; it is reused when the equality matrix and the guessed active set
    are unchanged, which is the common case inside one stance phase.
    """
    a_eq = problem.eq_matrix
    b_eq = problem.eq_rhs
    g = problem.gradient
    d = g.shape[0]
    m = a_eq.shape[0]
    active = tuple(i for i in active if problem.nonneg_mask[i])
    s = len(active)

    entry = None
    if cache is not None:
        if cache.get("shape") != (m, d) or not np.array_equal(
            cache.get("a_eq", ()), a_eq
        ):
            cache.clear()
            cache["shape"] = (m, d)
            cache["a_eq"] = a_eq.copy()
            cache["entries"] = {}
        entry = cache["entries"].get(active)
    if entry is not None:
        c_mat, hct, k_inv = entry
    else:
        c_mat = np.zeros((m + s, d))
        c_mat[:m] = a_eq
        for row, idx in enumerate(active):
            c_mat[m + row, idx] = 1.0
        hct = happly(c_mat.T)
        try:
            k_inv = np.linalg.inv(c_mat @ hct)
        except np.linalg.LinAlgError:
            return None
        if cache is not None:
            entries = cache["entries"]
            if len(entries) > 64:
                entries.clear()
            entries[active] = (c_mat, hct, k_inv)
    rhs = np.concatenate([b_eq, np.zeros(s)])

    x_unc = -happly(g)
    nu = k_inv @ (rhs - c_mat @ x_unc)
    if not np.all(np.isfinite(nu)):
        return None
    x = x_unc + hct @ nu
    # dual feasibility of the pinned bounds, primal feasibility of the rest
    if s and np.min(nu[m:]) < 0.0:
        return None
    free = problem.nonneg_mask.copy()
    if s:
        free[list(active)] = False
    if np.any(x[free] < -1e-11):
        return None
    eq_duals = nu[:m]
    bound_duals = np.zeros(d)
    if s:
        bound_duals[list(active)] = nu[m:]
    objective = float(0.5 * x @ problem.hessian @ x + g @ x)
    return QPSolution(x, eq_duals, bound_duals, objective, 1, active)


def solve_qp(
    problem: QPProblem, max_iter: int = 200, warm_start=None, warm_cache=None
) -> QPSolution:
    """Solve the bound-constrained equality QP by a dual active-set method.

    Returns an exact KKT point. Raises QPInfeasibleError when the equality
    system is inconsistent and QPNoConvergenceError past the iteration cap.

    `warm_start` optionally names bound indices believed active at the
    optimum (for example from the previous simulation frame). The guess is
    verified through one KKT solve and accepted only when primal and dual
    feasible, so warm starting never changes the result. `warm_cache` is an
    optional caller-owned dict reused across calls with the same structure.
    """
    h = np.asarray(problem.hessian, dtype=float)
    g = np.asarray(problem.gradient, dtype=float).reshape(-1)
    d = g.shape[0]
    if h.shape != (d, d):
        raise InvalidInputError(f"hessian shape {h.shape} vs gradient {d}")

    if problem.hessian_is_diagonal:
        hd = np.diagonal(h)
        if np.any(hd <= 0.0):
            raise InvalidInputError("hessian is not positive definite")
        h_inv = None
        h_inv_diag = 1.0 / hd
    else:
        if np.max(np.abs(h - h.T)) > 1e-10 * max(1.0, np.max(np.abs(h))):
            raise InvalidInputError("hessian is not symmetric")
        try:
            np.linalg.cholesky(h + 1e-300 * np.eye(d))
        except np.linalg.LinAlgError:
            raise InvalidInputError("hessian is not positive definite")
        h_inv = np.linalg.inv(h)
        h_inv_diag = None

    def happly(v):
        """H^-1 @ v for a vector or matrix."""
        if h_inv is None:
            return h_inv_diag[:, None] * v if v.ndim == 2 else h_inv_diag * v
        return h_inv @ v

    a_eq = np.asarray(problem.eq_matrix, dtype=float).reshape(-1, d)
    b_eq = np.asarray(problem.eq_rhs, dtype=float).reshape(-1)
    mask = np.asarray(problem.nonneg_mask, dtype=bool).reshape(d)
    m = a_eq.shape[0]
    bound_idx = np.flatnonzero(mask)

    if warm_start is not None:
        sol = _try_warm_start(problem, happly, warm_start, warm_cache)
        if sol is not None:
            return sol

    # active-set bookkeeping with preallocated buffers; H^-1 N columns are
    # cached since H never changes. labels[j] >= 0 names an equality row,
    # -(idx+1) names bound constraint idx.
    cap = m + bound_idx.size
    n_buf = np.zeros((d, max(cap, 1)))
    hn_buf = np.zeros((d, max(cap, 1)))
    mult = np.zeros(max(cap, 1))
    labels: list[int] = []
    q = 0  # number of active constraints

    tol = 1e-11 * max(1.0, float(np.max(np.abs(b_eq))) if m else 1.0)

    def directions(n_plus, hn_plus):
        """Primal step z and dual update r for a candidate normal."""
        if q == 0:
            return hn_plus, np.zeros(0)
        nv = n_buf[:, :q]
        hnv = hn_buf[:, :q]
        r = np.linalg.solve(nv.T @ hnv, n_plus @ hnv)
        return hn_plus - hnv @ r, r

    def bound_hn(idx):
        if h_inv is None:
            col = np.zeros(d)
            col[idx] = h_inv_diag[idx]
            return col
        return h_inv[:, idx].copy()

    iterations = 0

    # install all equality constraints at once via the Schur complement; fall
    # back to one-at-a-time installation when the system is rank deficient
    x = None
    if m:
        x_unc = -happly(g)
        hat = happly(a_eq.T)  # d x m
        schur = a_eq @ hat
        try:
            nu = np.linalg.solve(schur, b_eq - a_eq @ x_unc)
            if np.all(np.isfinite(nu)):
                x = x_unc + hat @ nu
                n_buf[:, :m] = a_eq.T
                hn_buf[:, :m] = hat
                mult[:m] = nu
                labels = list(range(m))
                q = m
        except np.linalg.LinAlgError:
            x = None
    if x is None:
        x = -happly(g)
        for i in range(m):
            n_i = a_eq[i]
            resid = b_eq[i] - float(n_i @ x)
            hn_i = happly(n_i)
            z, r = directions(n_i, hn_i)
            denom = float(n_i @ z)
            if abs(denom) < 1e-12 * max(1.0, float(np.linalg.norm(n_i)) ** 2):
                if abs(resid) > 1e-8 * max(1.0, abs(b_eq[i])):
                    raise QPInfeasibleError(f"equality row {i} is inconsistent")
                continue  # redundant row
            t = resid / denom
            x = x + t * z
            mult[:q] -= t * r
            n_buf[:, q] = n_i
            hn_buf[:, q] = hn_i
            mult[q] = t
            labels.append(i)
            q += 1

    n_eq_active = q  # equalities occupy the leading active slots for good
    active_bound = np.zeros(d, dtype=bool)
    for lbl in labels:
        if lbl < 0:
            active_bound[-(lbl + 1)] = True

    while True:
        iterations += 1
        if iterations > max_iter:
            raise QPNoConvergenceError(f"no convergence in {max_iter} iterations")

        # most violated bound, ties to lowest index (bound_idx is sorted)
        entering = -1
        if bound_idx.size:
            vals = np.where(active_bound[bound_idx], np.inf, x[bound_idx])
            j = int(np.argmin(vals))
            if vals[j] < -tol:
                entering = int(bound_idx[j])
        if entering < 0:
            break

        n_plus = np.zeros(d)
        n_plus[entering] = 1.0
        hn_plus = bound_hn(entering)
        u_plus = 0.0
        while True:
            z, r = directions(n_plus, hn_plus)
            denom = float(z[entering])

            # dual blocking step over active inequality constraints
            t1 = np.inf
            block = -1
            for j in range(n_eq_active, q):  # equalities never block
                if r[j] <= 1e-13:
                    continue
                ratio = mult[j] / r[j]
                if ratio < t1 - 1e-13:
                    t1 = ratio
                    block = j
            t2 = np.inf
            if denom > 1e-13:
                t2 = -float(x[entering]) / denom
            t = min(t1, t2)
            if not np.isfinite(t):
                raise QPInfeasibleError("constraints are inconsistent")

            x = x + t * z
            if q:
                mult[:q] -= t * r
            u_plus += t

            if t2 <= t1:
                n_buf[:, q] = n_plus
                hn_buf[:, q] = hn_plus
                mult[q] = u_plus
                labels.append(-(entering + 1))
                active_bound[entering] = True
                q += 1
                break
            # partial step: drop the blocking constraint, retry the same bound
            active_bound[-(labels[block] + 1)] = False
            labels.pop(block)
            n_buf[:, block : q - 1] = n_buf[:, block + 1 : q]
            hn_buf[:, block : q - 1] = hn_buf[:, block + 1 : q]
            mult[block : q - 1] = mult[block + 1 : q]
            q -= 1
            iterations += 1
            if iterations > max_iter:
                raise QPNoConvergenceError(
                    f"no convergence in {max_iter} iterations"
                )

    eq_duals = np.zeros(m)
    bound_duals = np.zeros(d)
    active = []
    for j, lbl in enumerate(labels):
        if lbl >= 0:
            eq_duals[lbl] = mult[j]
        else:
            bound_duals[-(lbl + 1)] = mult[j]
            active.append(-(lbl + 1))

    objective = float(0.5 * x @ h @ x + g @ x)
    return QPSolution(x, eq_duals, bound_duals, objective, iterations, tuple(sorted(active)))


def kkt_residuals(problem: QPProblem, sol: QPSolution) -> dict:
    """Stationarity, primal, bound and complementarity residuals of a solution."""
    h, g = problem.hessian, problem.gradient
    a_eq, b_eq = problem.eq_matrix, problem.eq_rhs
    mask = problem.nonneg_mask
    stat = h @ sol.x + g - a_eq.T @ sol.eq_duals - sol.bound_duals
    primal = a_eq @ sol.x - b_eq if a_eq.size else np.zeros(0)
    bound = float(np.min(sol.x[mask])) if mask.any() else 0.0
    comp = (
        float(np.max(np.abs(sol.x[mask] * sol.bound_duals[mask])))
        if mask.any()
        else 0.0
    )
    return {
        "stationarity": float(np.max(np.abs(stat))),
        "primal": float(np.max(np.abs(primal))) if primal.size else 0.0,
        "bound": bound,
        "complementarity": comp,
    }
