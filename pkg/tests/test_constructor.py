import numpy as np
import pytest

from firstint import brackets as br
from firstint.brackets import IntegralSet
from firstint.constructor import (
    Case,
    FieldModel,
    build_field,
    canonical_drift,
    classify,
    conservation_defects,
    kernel_vector,
    lie_derivative,
)
from firstint.errors import DegenerateKernel, InconsistentDrift, SingularLocus, ValidationError
from firstint.expr import Const, evaluate, parse
from firstint.scenarios import materialize

KEPLER_POINT = np.array([1.0, 0.2, -0.3, 0.4, 1.0, 0.1])


def model(n, texts, H, lam="0", **kw):
    fs = IntegralSet.from_text(n, texts)
    return FieldModel(fs, parse(H, fs.space), parse(lam, fs.space), **kw)


class TestClassify:
    def test_kepler(self):
        assert classify(materialize("kepler-w").fs, KEPLER_POINT) is Case.CASE_I
        assert classify(materialize("kepler-m").fs, KEPLER_POINT) is Case.CASE_II

    def test_y_independent_is_singular(self):
        fs = IntegralSet.from_text(2, ["x1", "x2^2 + x1"])
        assert classify(fs, [0.3, 0.5, 0.1, 0.2]) is Case.SINGULAR

    def test_dependent_is_singular(self):
        fs = IntegralSet.from_text(2, ["x1*y1", "2*x1*y1"])
        assert classify(fs, [0.3, 0.5, 0.1, 0.2]) is Case.SINGULAR

    def test_example1_generic(self):
        sc = materialize("example1")
        rng = np.random.default_rng(0)
        assert all(classify(sc.fs, sc.sample_point(rng)) is Case.CASE_I for _ in range(20))


class TestDrift:
    def test_hamiltonian_drift_of_itself(self):
        sc = materialize("example1")
        p = sc.initial
        # f1 is H itself
        drift = canonical_drift(sc.fs, sc.hamiltonian, p)
        assert drift[0] == pytest.approx(0.0, abs=1e-14)

    def test_example1_virial(self):
        sc = materialize("example1")
        p = sc.initial
        drift = canonical_drift(sc.fs, sc.hamiltonian, p)
        H = evaluate(sc.hamiltonian, p, sc.fs.bindings)
        assert drift[1] == pytest.approx(2 * H, rel=1e-12)

    def test_uhlenbeck_commuting(self):
        sc = materialize("uhlenbeck", {"B": 1.0})
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = rng.uniform(-1, 1, 6)
            J = sc.fs.jacobian(p)
            scale = br.involution_scale(np.vstack([J, sc.fs.compile(sc.hamiltonian).grad(p)]))
            assert np.abs(canonical_drift(sc.fs, sc.hamiltonian, p)).max() <= 1e-10 * scale

    def test_vortex_drift_vanishes(self):
        sc = materialize("vortex3")
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = sc.sample_point(rng)
            J = sc.fs.jacobian(p)
            scale = br.involution_scale(np.vstack([J, sc.fs.compile(sc.hamiltonian).grad(p)]))
            assert np.abs(canonical_drift(sc.fs, sc.hamiltonian, p)).max() <= 1e-10 * scale


class TestKernel:
    def test_kepler_m_collinear_with_x(self):
        sc = materialize("kepler-m")
        w = kernel_vector(sc.fs, KEPLER_POINT)
        x = KEPLER_POINT[:3]
        assert abs(w @ x) / (np.linalg.norm(w) * np.linalg.norm(x)) >= 1 - 1e-10

    def test_vortex_orthogonal_to_rows(self):
        sc = materialize("vortex3")
        p = sc.initial
        w = kernel_vector(sc.fs, p)
        Jy = sc.fs.jacobian(p)[:, 3:]
        assert np.abs(Jy @ w).max() <= 1e-12 * np.linalg.norm(Jy) * np.linalg.norm(w)
        assert np.linalg.norm(w) > 0

    def test_case_one_has_no_kernel(self):
        with pytest.raises(DegenerateKernel):
            kernel_vector(materialize("kepler-w").fs, KEPLER_POINT)


class TestBuildField:
    def test_one_dimensional_hand_cramer(self):
        m = model(1, ["y1"], "(x1^2 + y1^2)/2")
        for backend in ("cramer", "solve", "both"):
            s = build_field(m.with_backend(backend), [1.0, 2.0])
            assert s.velocity.tolist() == [2.0, 0.0]
            assert s.case is Case.CASE_I

    def test_kepler_w_is_kepler(self):
        sc = materialize("kepler-w")
        s = build_field(sc.model(), KEPLER_POINT)
        x, y = KEPLER_POINT[:3], KEPLER_POINT[3:]
        expected = np.concatenate([y, -x / np.linalg.norm(x) ** 3])
        np.testing.assert_allclose(s.velocity, expected, rtol=1e-9, atol=1e-12)
        assert s.backend_discrepancy < 1e-12

    def test_kepler_m_geodesic(self):
        sc = materialize("kepler-m")
        s = build_field(sc.model(lam="2"), KEPLER_POINT)
        x, y = KEPLER_POINT[:3], KEPLER_POINT[3:]
        np.testing.assert_array_equal(s.velocity[:3], y)
        ydot = s.velocity[3:]
        assert abs(ydot @ x) / (np.linalg.norm(ydot) * np.linalg.norm(x)) >= 1 - 1e-12
        assert s.case is Case.CASE_II

    def test_example1_correction_pattern(self):
        sc = materialize("example1")
        m = np.array([sc.fs.bindings[k] for k in ("m1", "m2", "m3")])
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = sc.sample_point(rng)
            s = build_field(sc.model(), p)
            v = p[3:] / m
            pattern = np.array([v[2] - v[1], v[0] - v[2], v[1] - v[0]])
            H = evaluate(sc.hamiltonian, p, sc.fs.bindings)
            closed = evaluate(sc.extras["s0_closed"], p, sc.fs.bindings)
            # c is orthogonal to grad_y f1 and to (1,1,1), and x.c = -2H
            np.testing.assert_allclose(s.correction, 2 * H / closed * pattern, rtol=1e-9, atol=1e-12)

    def test_singular_raises(self):
        m = model(2, ["x1", "x2"], "y1*y2")
        with pytest.raises(SingularLocus):
            build_field(m, [0.1, 0.2, 0.3, 0.4])

    def test_inconsistent_drift(self):
        # the x2 term breaks rotation invariance, so df/dy cannot absorb the drift of M
        fs = materialize("kepler-m").fs
        bad = FieldModel(fs, parse("y1^2/2 + x1^2/2 + x2", fs.space))
        with pytest.raises(InconsistentDrift):
            build_field(bad, KEPLER_POINT)
        lax = FieldModel(fs, bad.hamiltonian, strict=False)
        assert build_field(lax, KEPLER_POINT).correction_residual > 1e-8

    def test_validation(self):
        fs = materialize("kepler-m").fs
        with pytest.raises(ValidationError):
            FieldModel(fs, Const(0.0), backend="gauss")
        with pytest.raises(ValidationError):
            FieldModel(fs, Const(0.0), det_tol=0.0)
        with pytest.raises(ValidationError):
            FieldModel(fs, Const(0.0), dependent="ignore")

    def test_sample_dict(self):
        d = build_field(materialize("kepler-m").model(), KEPLER_POINT).as_dict()
        assert d["case"] == "CaseII"
        assert set(d) >= {"velocity", "case", "s0", "sN", "residual"}

    def test_dependent_mode_on_circular_orbit(self):
        sc = materialize("kepler-w")
        p = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        with pytest.raises(SingularLocus):
            build_field(sc.model(), p)
        s = build_field(sc.model(dependent="lstsq"), p)
        assert s.case is Case.DEPENDENT
        np.testing.assert_allclose(s.velocity, [0, 1, 0, -1, 0, 0], atol=1e-15)


class TestConservation:
    @pytest.mark.parametrize(
        "name, params, lam",
        [
            ("example1", {}, None),
            ("kepler-w", {}, None),
            ("kepler-m", {}, "sin(x1) + y2"),
            ("vortex3", {}, "x1*y3"),
            ("uhlenbeck", {"B": 0.0}, "2"),
            ("uhlenbeck", {"B": 1.0}, None),
            ("uhlenbeck", {"n": 4, "B": 0.0}, "cos(y2)"),
        ],
    )
    def test_lie_derivatives_vanish(self, name, params, lam):
        sc = materialize(name, params)
        m = sc.model(lam=lam)
        rng = np.random.default_rng(4)
        for _ in range(100):
            p = sc.sample_point(rng)
            try:
                defects = conservation_defects(m, p)
            except SingularLocus:
                continue
            assert defects.max() <= 1e-9

    def test_lie_derivative_of_coordinate(self):
        sc = materialize("kepler-w")
        m = sc.model()
        x1 = sc.parse("x1")
        assert lie_derivative(x1, m, KEPLER_POINT) == KEPLER_POINT[3]

    def test_sphere_radius_conserved_for_any_lambda(self):
        sc = materialize("uhlenbeck", {"B": 0.0})
        radius = sc.extras["radius_sq"]
        rng = np.random.default_rng(5)
        for lam in ("0", "2", "sin(x1)", "y1*y2"):
            m = sc.model(lam=lam)
            for _ in range(20):
                p = sc.sample_point(rng)
                assert abs(lie_derivative(radius, m, p)) <= 1e-10

    def test_lambda_does_not_touch_integrals(self):
        sc = materialize("kepler-m")
        p = KEPLER_POINT
        a = [lie_derivative(f, sc.model(lam="0"), p) for f in sc.fs.exprs]
        b = [lie_derivative(f, sc.model(lam="5*sin(x2)"), p) for f in sc.fs.exprs]
        assert np.allclose(a, b, atol=1e-10)
