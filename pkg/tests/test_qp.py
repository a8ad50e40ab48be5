import itertools

import numpy as np
import pytest

from srblab import qp, spatial
from srblab.errors import InvalidInputError, QPInfeasibleError

UP = np.array([0.0, 1.0, 0.0])


def enumerate_qp(problem):
    """Oracle: solve every active set of the bound constraints directly.

    For each subset S of masked variables pinned to zero, solve the equality
    KKT system and keep candidates that are primal and dual feasible. Returns
    the best feasible objective, or None when nothing is feasible.
    """
    h, g = problem.hessian, problem.gradient
    a_eq, b_eq = problem.eq_matrix, problem.eq_rhs
    mask_idx = np.flatnonzero(problem.nonneg_mask)
    d = g.shape[0]
    m = a_eq.shape[0]
    best = None
    for r in range(len(mask_idx) + 1):
        for subset in itertools.combinations(mask_idx, r):
            s = len(subset)
            e_s = np.zeros((s, d))
            for row, idx in enumerate(subset):
                e_s[row, idx] = 1.0
            # stationarity H x + g - A^T nu - E^T mu = 0 with mu >= 0
            kkt = np.block(
                [
                    [h, -a_eq.T, -e_s.T],
                    [a_eq, np.zeros((m, m)), np.zeros((m, s))],
                    [e_s, np.zeros((s, m)), np.zeros((s, s))],
                ]
            )
            rhs = np.concatenate([-g, b_eq, np.zeros(s)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:d]
            mu = sol[d + m :]
            if mask_idx.size and np.min(x[mask_idx]) < -1e-9:
                continue
            if s and np.min(mu) < -1e-9:
                continue
            obj = 0.5 * x @ h @ x + g @ x
            if best is None or obj < best - 1e-12:
                best = obj
    return best


def random_feasible_problem(rng, d, m, n_masked):
    """Random strictly convex QP guaranteed feasible via a constructed point."""
    a = rng.normal(size=(d, d))
    h = a @ a.T + 0.5 * np.eye(d)
    g = rng.normal(size=d)
    mask = np.zeros(d, dtype=bool)
    mask[rng.choice(d, size=n_masked, replace=False)] = True
    x_feas = rng.normal(size=d)
    x_feas[mask] = np.abs(x_feas[mask])
    a_eq = rng.normal(size=(m, d))
    b_eq = a_eq @ x_feas
    return qp.QPProblem(h, g, a_eq, b_eq, mask)


class TestFrictionBasis:
    def test_flat_mu_one_symmetry(self):
        basis = qp.friction_basis(UP, mu=1.0, k=4)
        expected = {
            tuple(np.round(v / np.linalg.norm(v), 9))
            for v in [(1, 1, 0), (-1, 1, 0), (0, 1, 1), (0, 1, -1)]
        }
        got = {tuple(np.round(e, 9)) for e in basis.edges}
        assert got == expected

    def test_edge_normal_projection(self):
        basis = qp.friction_basis(UP, mu=0.8, k=4)
        for e in basis.edges:
            assert np.linalg.norm(e) == pytest.approx(1.0)
            assert e @ UP == pytest.approx(1.0 / np.sqrt(1.0 + 0.64))

    def test_rotation_equivariance(self):
        r = spatial.rot_x(0.3)
        flat = qp.friction_basis(UP, mu=0.8, k=4)
        tilted = qp.friction_basis(r @ UP, mu=0.8, k=4)
        assert np.allclose(tilted.edges, (r @ flat.edges.T).T, atol=1e-12)

    def test_shortest_arc_equivariance_random(self):
        rng = np.random.default_rng(0)
        flat = qp.friction_basis(UP, mu=0.6, k=4)
        for _ in range(20):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            r = spatial.rotation_between(UP, n)
            got = qp.friction_basis(n, mu=0.6, k=4)
            assert np.allclose(got.edges, (r @ flat.edges.T).T, atol=1e-10)

    def test_rejects_bad_mu(self):
        with pytest.raises(InvalidInputError):
            qp.friction_basis(UP, mu=0.0)

    def test_friction_matrix_block_structure(self):
        b1 = qp.friction_basis(UP, 0.8)
        b2 = qp.friction_basis(UP, 0.8)
        b = qp.friction_matrix([b1, b2])
        assert b.shape == (6, 8)
        assert np.allclose(b[:3, :4], b1.edges.T)
        assert np.allclose(b[3:, 4:], b2.edges.T)
        assert np.allclose(b[:3, 4:], 0.0)
        # nonnegative combinations stay inside the exact cone
        lam = np.abs(np.random.default_rng(1).normal(size=8))
        f = b @ lam
        for i in range(2):
            fi = f[3 * i : 3 * i + 3]
            normal_part = fi @ UP
            tangent = np.linalg.norm(fi - normal_part * UP)
            assert tangent <= 0.8 * normal_part + 1e-12


class TestSolveQP:
    def test_unconstrained_projection(self):
        x_d = np.array([1.0, -2.0, 3.0])
        problem = qp.QPProblem(
            np.eye(3), -x_d, np.zeros((0, 3)), np.zeros(0), np.zeros(3, dtype=bool)
        )
        sol = qp.solve_qp(problem)
        assert np.allclose(sol.x, x_d, atol=1e-12)

    def test_equality_symmetry(self):
        problem = qp.QPProblem(
            2.0 * np.eye(2),
            np.zeros(2),
            np.array([[1.0, 1.0]]),
            np.array([1.0]),
            np.zeros(2, dtype=bool),
        )
        sol = qp.solve_qp(problem)
        assert np.allclose(sol.x, [0.5, 0.5], atol=1e-12)

    def test_active_bound(self):
        # min (x+1)^2 with x >= 0 pins x at 0 with positive multiplier
        problem = qp.QPProblem(
            2.0 * np.eye(1),
            np.array([2.0]),
            np.zeros((0, 1)),
            np.zeros(0),
            np.ones(1, dtype=bool),
        )
        sol = qp.solve_qp(problem)
        assert sol.x[0] == pytest.approx(0.0, abs=1e-12)
        assert sol.bound_duals[0] == pytest.approx(2.0)

    def test_infeasible_equalities(self):
        problem = qp.QPProblem(
            np.eye(2),
            np.zeros(2),
            np.array([[1.0, 0.0], [1.0, 0.0]]),
            np.array([0.0, 1.0]),
            np.zeros(2, dtype=bool),
        )
        with pytest.raises(QPInfeasibleError):
            qp.solve_qp(problem)

    def test_rejects_indefinite_hessian(self):
        problem = qp.QPProblem(
            -np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0),
            np.zeros(2, dtype=bool),
        )
        with pytest.raises(InvalidInputError):
            qp.solve_qp(problem)

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_enumeration_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        d = int(rng.integers(3, 9))
        m = int(rng.integers(1, min(d - 1, 4) + 1))
        n_masked = int(rng.integers(1, min(4, d) + 1))
        problem = random_feasible_problem(rng, d, m, n_masked)
        sol = qp.solve_qp(problem)
        best = enumerate_qp(problem)
        assert best is not None
        assert sol.objective == pytest.approx(best, abs=1e-8)
        res = qp.kkt_residuals(problem, sol)
        assert res["stationarity"] < 1e-8
        assert res["primal"] < 1e-8
        assert res["bound"] > -1e-10
        assert res["complementarity"] < 1e-8

    def test_scaling_invariance(self):
        rng = np.random.default_rng(7)
        problem = random_feasible_problem(rng, 6, 2, 3)
        sol = qp.solve_qp(problem)
        scaled = qp.QPProblem(
            17.0 * problem.hessian,
            17.0 * problem.gradient,
            problem.eq_matrix,
            problem.eq_rhs,
            problem.nonneg_mask,
        )
        sol2 = qp.solve_qp(scaled)
        assert np.allclose(sol.x, sol2.x, atol=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        problem = random_feasible_problem(rng, 8, 3, 4)
        x1 = qp.solve_qp(problem).x
        x2 = qp.solve_qp(problem).x
        assert np.array_equal(x1, x2)


def make_srb_instance(rng, n_contacts, mu=0.8):
    """Random SRB-shaped QP: 6x6 PD inertia, contact points, cone bases."""
    inertia = np.diag(rng.uniform(0.5, 3.0, size=3))
    mass = 60.0
    m_matrix = np.zeros((6, 6))
    m_matrix[:3, :3] = inertia
    m_matrix[3:, 3:] = mass * np.eye(3)
    bias = rng.normal(size=6) * 10.0
    points = rng.normal(size=(n_contacts, 3))
    j_c = np.zeros((3 * n_contacts, 6))
    bases = []
    for i, p in enumerate(points):
        j_c[3 * i : 3 * i + 3, :3] = -spatial.skew(p)
        j_c[3 * i : 3 * i + 3, 3:] = np.eye(3)
        bases.append(qp.friction_basis(UP, mu))
    b = qp.friction_matrix(bases)
    qdd_d = rng.normal(size=6)
    return qp.assemble_srb_qp(
        m_matrix, bias, j_c, b, None, None, qdd_d, w_lambda=0.001
    )


class TestAssembleSRB:
    def test_no_contact_fully_determined(self):
        rng = np.random.default_rng(2)
        m_matrix = np.diag(rng.uniform(1.0, 5.0, size=6))
        bias = rng.normal(size=6)
        problem = qp.assemble_srb_qp(
            m_matrix,
            bias,
            np.zeros((0, 6)),
            np.zeros((0, 0)),
            None,
            None,
            rng.normal(size=6),
        )
        sol = qp.solve_qp(problem)
        assert np.allclose(sol.x, np.linalg.solve(m_matrix, -bias), atol=1e-9)

    def test_achievable_target_reached(self):
        # construct bias from a chosen feasible (qdd_d, lambda0 > 0)
        rng = np.random.default_rng(3)
        n_c = 4
        inertia = np.diag([1.0, 0.8, 1.2])
        m_matrix = np.zeros((6, 6))
        m_matrix[:3, :3] = inertia
        m_matrix[3:, 3:] = 60.0 * np.eye(3)
        points = rng.normal(size=(n_c, 3))
        j_c = np.zeros((3 * n_c, 6))
        bases = []
        for i, p in enumerate(points):
            j_c[3 * i : 3 * i + 3, :3] = -spatial.skew(p)
            j_c[3 * i : 3 * i + 3, 3:] = np.eye(3)
            bases.append(qp.friction_basis(UP, 0.8))
        b = qp.friction_matrix(bases)
        qdd_d = rng.normal(size=6)
        lam0 = rng.uniform(1.0, 2.0, size=4 * n_c)
        bias = j_c.T @ (b @ lam0) - m_matrix @ qdd_d
        # at the paper's w_lambda the optimum can be no worse than the
        # constructed feasible point, and the target is nearly met
        problem = qp.assemble_srb_qp(m_matrix, bias, j_c, b, None, None, qdd_d)
        sol = qp.solve_qp(problem)
        assert sol.objective <= 0.001 * lam0 @ lam0 + 1e-9
        assert np.linalg.norm(sol.x[:6] - qdd_d) < 0.2
        # with vanishing force regularization the target is met exactly
        tight = qp.assemble_srb_qp(
            m_matrix, bias, j_c, b, None, None, qdd_d, w_lambda=1e-10
        )
        sol_tight = qp.solve_qp(tight)
        assert np.allclose(sol_tight.x[:6], qdd_d, atol=1e-6)

    def test_w_lambda_default_is_paper_value(self):
        import inspect

        sig = inspect.signature(qp.assemble_srb_qp)
        assert sig.parameters["w_lambda"].default == 0.001

    def test_external_force_enters_rhs(self):
        m_matrix = np.eye(6)
        j_f = np.zeros((3, 6))
        j_f[:, 3:] = np.eye(3)
        f_e = np.array([1.0, 2.0, 3.0])
        problem = qp.assemble_srb_qp(
            m_matrix, np.zeros(6), np.zeros((0, 6)), np.zeros((0, 0)), j_f, f_e,
            np.zeros(6),
        )
        assert np.allclose(problem.eq_rhs, [0, 0, 0, 1.0, 2.0, 3.0])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            qp.assemble_srb_qp(
                np.eye(6),
                np.zeros(6),
                np.zeros((5, 6)),
                np.zeros((6, 8)),
                None,
                None,
                np.zeros(6),
            )

    @pytest.mark.parametrize("seed", range(10))
    def test_srb_instances_kkt(self, seed):
        rng = np.random.default_rng(200 + seed)
        problem = make_srb_instance(rng, n_contacts=4)
        sol = qp.solve_qp(problem)
        res = qp.kkt_residuals(problem, sol)
        assert res["stationarity"] < 1e-8
        assert res["primal"] < 1e-8
        assert res["bound"] > -1e-10
        assert res["complementarity"] < 1e-8
