import numpy as np
import pytest

from starwpcn import sdp


def rand_psd(rng, d, rank=None):
    rank = rank or d
    A = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    return A @ A.conj().T


class TestSolve:
    def test_saturated_trace(self):
        prog = sdp.ConicProgram("toy")
        prog.add_psd_var("X", 2)
        eye = np.eye(2, dtype=complex)
        prog.set_objective(sdp.affine(traces=[sdp.TraceTerm("X", eye)]))
        prog.add_constraint("budget", sdp.affine(traces=[sdp.TraceTerm("X", eye)]),
                            "<=", 1.0)
        report = sdp.solve(prog)
        assert report.status == "optimal"
        assert report.objective == pytest.approx(1.0, abs=1e-7)

    def test_smallest_eigenvalue_oracle(self):
        rng = np.random.default_rng(0)
        C = rand_psd(rng, 3) + np.eye(3)
        prog = sdp.ConicProgram("eig")
        prog.add_psd_var("X", 3)
        prog.set_objective(sdp.affine(traces=[sdp.TraceTerm("X", -C)]))
        prog.add_constraint("unit", sdp.affine(
            traces=[sdp.TraceTerm("X", np.eye(3, dtype=complex))]), "==", 1.0)
        report = sdp.solve(prog)
        lam_min = float(np.linalg.eigvalsh(C)[0])
        assert -report.objective == pytest.approx(lam_min, abs=1e-6)

    def test_backends_agree(self):
        rng = np.random.default_rng(1)
        C = rand_psd(rng, 3)
        prog = sdp.ConicProgram("swap")
        prog.add_psd_var("X", 3)
        prog.set_objective(sdp.affine(traces=[sdp.TraceTerm("X", -C)]))
        prog.add_constraint("unit", sdp.affine(
            traces=[sdp.TraceTerm("X", np.eye(3, dtype=complex))]), "==", 1.0)
        a = sdp.solve(prog, solver="scs")
        b = sdp.solve(prog, solver="clarabel")
        assert a.status == "optimal" and b.status == "optimal"
        assert a.objective == pytest.approx(b.objective, abs=1e-6)

    def test_assignment_satisfies_constraints(self):
        rng = np.random.default_rng(2)
        C = rand_psd(rng, 3)
        tol = 1e-8
        prog = sdp.ConicProgram()
        prog.add_psd_var("X", 3)
        prog.set_objective(sdp.affine(traces=[sdp.TraceTerm("X", C)]))
        prog.add_constraint("unit", sdp.affine(
            traces=[sdp.TraceTerm("X", np.eye(3, dtype=complex))]), "==", 1.0)
        report = sdp.solve(prog, tolerance=tol)
        X = report.value("X")
        assert abs(np.trace(X).real - 1.0) <= 10 * np.sqrt(tol)
        assert np.linalg.eigvalsh(X)[0] >= -10 * np.sqrt(tol)

    def test_infeasible_reported_not_raised(self):
        prog = sdp.ConicProgram("bad")
        prog.add_psd_var("X", 2)
        prog.set_objective(sdp.affine())
        prog.add_constraint("impossible", sdp.affine(
            traces=[sdp.TraceTerm("X", np.eye(2, dtype=complex))]), "<=", -1.0)
        report = sdp.solve(prog)
        assert report.status in ("infeasible", "numerical_failure")

    def test_unbounded_reported(self):
        prog = sdp.ConicProgram("unb")
        prog.add_scalar_var("x")
        prog.set_objective(sdp.affine(scalars={"x": 1.0}))
        report = sdp.solve(prog)
        assert report.status in ("unbounded", "numerical_failure")

    def test_log_constraint(self):
        # maximize g s.t. log2(1 + x) >= g, x <= 3  ->  g = 2
        prog = sdp.ConicProgram("log")
        prog.add_scalar_var("x", nonneg=True)
        prog.add_scalar_var("g")
        prog.set_objective(sdp.affine(scalars={"g": 1.0}))
        prog.add_constraint("rate", sdp.Expr(
            scalars={"g": -1.0},
            logs=[(1.0, sdp.affine(const=1.0, scalars={"x": 1.0}))]), ">=", 0.0)
        prog.add_constraint("cap", sdp.affine(scalars={"x": 1.0}), "<=", 3.0)
        report = sdp.solve(prog)
        assert report.objective == pytest.approx(2.0, abs=1e-6)

    def test_recip_constraint(self):
        # minimize A s.t. 1/A <= 4  ->  A = 0.25
        prog = sdp.ConicProgram("recip")
        prog.add_scalar_var("A", nonneg=True)
        prog.set_objective(sdp.affine(scalars={"A": -1.0}))
        prog.add_constraint("bound", sdp.Expr(const=-4.0, recips=[(1.0, "A")]),
                            "<=", 0.0)
        report = sdp.solve(prog)
        assert -report.objective == pytest.approx(0.25, abs=1e-6)

    def test_curvature_validation(self):
        prog = sdp.ConicProgram()
        prog.add_scalar_var("x", nonneg=True)
        with pytest.raises(ValueError, match="curvature"):
            prog.add_constraint("bad", sdp.Expr(
                logs=[(1.0, sdp.affine(const=1.0, scalars={"x": 1.0}))]),
                "<=", 10.0)

    def test_undeclared_variable_rejected(self):
        prog = sdp.ConicProgram()
        with pytest.raises(ValueError, match="undeclared"):
            prog.add_constraint("bad", sdp.affine(scalars={"nope": 1.0}),
                                "<=", 0.0)

    def test_dump(self):
        prog = sdp.ConicProgram("dumpme")
        prog.add_psd_var("X", 2)
        prog.add_scalar_var("g")
        prog.set_objective(sdp.affine(scalars={"g": 1.0}))
        prog.add_constraint("tr", sdp.affine(
            traces=[sdp.TraceTerm("X", np.eye(2, dtype=complex))]), "<=", 1.0)
        text = prog.dump()
        assert "dumpme" in text and "psd X" in text and "tr" in text


class TestRankOne:
    def test_exact_rank_one(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        assert sdp.rank_one_residual(np.outer(x, x.conj())) <= 1e-12

    def test_identity(self):
        assert sdp.rank_one_residual(np.eye(2)) == pytest.approx(1.0)

    def test_zero_matrix_defined(self):
        assert sdp.rank_one_residual(np.zeros((3, 3))) == 0.0

    def test_matches_eigen_sum_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            X = rand_psd(rng, 6)
            lam = np.linalg.eigvalsh(X)
            expected = (lam.sum() - lam[-1]) / lam[-1]
            assert sdp.rank_one_residual(X) == pytest.approx(expected, abs=1e-10)

    def test_gap_absolute(self):
        rng = np.random.default_rng(5)
        X = rand_psd(rng, 4)
        lam = np.linalg.eigvalsh(X)
        assert sdp.nuclear_spectral_gap(X) == pytest.approx(
            lam.sum() - lam[-1], rel=1e-10)


class TestExtract:
    def test_exact_recovery(self):
        rng = np.random.default_rng(6)
        q = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        q[-1] = 1.0
        out = sdp.extract_vector(np.outer(q, q.conj()))
        assert np.abs(out - q).max() <= 1e-10

    def test_phase_invariance(self):
        rng = np.random.default_rng(7)
        q = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        q[-1] = 1.0
        rotated = np.exp(1j * 0.73) * q
        out = sdp.extract_vector(np.outer(rotated, rotated.conj()))
        assert np.abs(out - q).max() <= 1e-10

    def test_near_rank_one(self):
        rng = np.random.default_rng(8)
        q = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        q[-1] = 1.0
        X = np.outer(q, q.conj())
        perturb = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        perturb /= np.linalg.norm(perturb)
        X = X + 1e-6 * np.outer(perturb, perturb.conj())
        out = sdp.extract_vector(X)
        lam, vec = np.linalg.eigh(sdp.hermitize(X))
        dominant = vec[:, -1] * np.sqrt(lam[-1])
        dominant *= dominant[-1].conjugate() / abs(dominant[-1])
        assert np.abs(out - dominant).max() <= 1e-3

    def test_residual_gate(self):
        with pytest.raises(sdp.ExtractionError) as err:
            sdp.extract_vector(np.eye(3))
        assert err.value.residual == pytest.approx(2.0)


class TestRandomize:
    def test_rank_one_returns_projected_dominant(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        X = np.outer(x, x.conj())

        def projector(v):
            out = v / np.abs(v)
            return out * out[-1].conjugate()

        def scorer(v):
            return float(np.real(v.conj() @ X @ v))

        best = sdp.gaussian_randomize(X, 50, projector, scorer,
                                      np.random.default_rng(0))
        assert np.allclose(best, projector(x))

    def test_never_beats_relaxation(self):
        rng = np.random.default_rng(10)
        R = rand_psd(rng, 6)
        prog = sdp.ConicProgram()
        prog.add_psd_var("X", 6)
        prog.set_objective(sdp.affine(traces=[sdp.TraceTerm("X", R)]))
        for m in range(6):
            basis = np.zeros((6, 6), dtype=complex)
            basis[m, m] = 1.0
            prog.add_constraint(f"d{m}", sdp.affine(
                traces=[sdp.TraceTerm("X", basis)]), "==", 1.0)
        report = sdp.solve(prog)

        def projector(v):
            out = v / np.abs(v)
            return out * out[-1].conjugate()

        def scorer(v):
            return float(np.real(v.conj() @ R @ v))

        best = sdp.gaussian_randomize(report.value("X"), 200, projector, scorer,
                                      np.random.default_rng(1))
        assert scorer(best) <= report.objective * (1 + 1e-6) + 1e-9

    def test_all_infeasible_raises(self):
        X = np.eye(3)
        with pytest.raises(sdp.RandomizationError):
            sdp.gaussian_randomize(X, 5, lambda v: None, lambda v: 0.0,
                                   np.random.default_rng(2))
