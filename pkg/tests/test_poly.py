import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occmom.poly import ParseError, Polynomial, VarSpace, lie_derivative, parse

S2 = VarSpace(False, 2, 1)  # x1, x2, u1
ST = VarSpace(True, 2, 1)  # t, x1, x2, u1


class TestParse:
    def test_half_square_plus_linear(self):
        p = parse("x2^2/2 + x1", S2)
        assert dict(p.terms) == {(0, 2, 0): 0.5, (1, 0, 0): 1.0}

    def test_zero(self):
        p = parse("0", S2)
        assert p.is_zero()
        assert p.degree == 0

    def test_expanded_square(self):
        p = parse("(x1+1)^2", S2)
        assert dict(p.terms) == {(2, 0, 0): 1.0, (1, 0, 0): 2.0, (0, 0, 0): 1.0}

    @pytest.mark.parametrize("text", ["x1 +", "x3", "x1^-1", "(x1", "x1 $ 2", "2^x1"])
    def test_rejects_bad_input(self, text):
        with pytest.raises(ParseError):
            parse(text, S2)

    def test_error_position_points_into_text(self):
        with pytest.raises(ParseError) as info:
            parse("x1 + x9", S2)
        assert 0 <= info.value.position < len("x1 + x9")

    def test_time_variable_needs_time_space(self):
        with pytest.raises(ParseError):
            parse("t*x1", S2)
        assert parse("t*x1", ST).degree == 2

    @pytest.mark.parametrize("text", ["x2^2/2 + x1 + x2 + 1", "-3*x1*u1 + 0.25", "x1^3 - x1*x2^2/3"])
    def test_print_parse_round_trip(self, text):
        p = parse(text, S2)
        assert parse(p.to_string(), S2) == p


class TestEvaluate:
    def test_value_at_initial_state(self):
        p = parse("x2^2/2 + x1", S2)
        assert p.evaluate([-0.5, -0.8, 0.0]) == pytest.approx(-0.18, abs=1e-15)

    def test_zero_point_gives_constant(self):
        p = parse("3*x1*x2 - 7 + u1^2", S2)
        assert p.evaluate(np.zeros(3)) == -7.0

    def test_state_input_product(self):
        space = VarSpace(False, 2, 1)
        assert parse("x1*u1", space).evaluate([1.0, 2.0, 3.0]) == 3.0

    def test_vectorized(self):
        p = parse("x1 + 2*x2", S2)
        pts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        np.testing.assert_allclose(p.evaluate(pts), [1.0, 2.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            parse("x1", S2).evaluate([1.0, 2.0])


class TestDerivatives:
    def test_monomial(self):
        assert parse("x1^2*x2", S2).diff("x1") == parse("2*x1*x2", S2)

    def test_time(self):
        assert parse("t*x1", ST).diff("t") == parse("x1", ST)

    def test_constant(self):
        assert parse("5", S2).diff(0).is_zero()

    def test_lie_first_coordinate(self):
        f = (parse("x2", S2), parse("u1", S2))
        assert lie_derivative(parse("x1", S2), f) == parse("x2", S2)

    def test_lie_product(self):
        f = (parse("x2", S2), parse("u1", S2))
        assert lie_derivative(parse("x1*x2", S2), f) == parse("x2^2 + x1*u1", S2)

    def test_lie_time(self):
        f = (parse("x2", ST), parse("u1", ST))
        assert lie_derivative(parse("t*x1", ST), f) == parse("x1 + t*x2", ST)

    def test_lie_rejects_input_dependence(self):
        f = (parse("x2", S2), parse("u1", S2))
        with pytest.raises(ValueError):
            lie_derivative(parse("u1*x1", S2), f)


coef = st.floats(-3, 3, allow_nan=False).map(lambda c: round(c, 3))


@st.composite
def polys(draw, space=ST, with_inputs=False, max_deg=3):
    n = space.dim if with_inputs else space.dim - space.n_inputs
    terms = {}
    for _ in range(draw(st.integers(0, 4))):
        alpha = [0] * space.dim
        for _ in range(draw(st.integers(0, max_deg))):
            alpha[draw(st.integers(0, n - 1))] += 1
        terms[tuple(alpha)] = draw(coef)
    return Polynomial(space, terms)


class TestAlgebraProperties:
    @settings(max_examples=60, deadline=None)
    @given(polys(), polys(), polys(with_inputs=True), polys(with_inputs=True))
    def test_leibniz(self, p, q, f1, f2):
        f = (f1, f2)
        lhs = lie_derivative(p * q, f)
        rhs = p * lie_derivative(q, f) + q * lie_derivative(p, f)
        assert lhs.allclose(rhs, 1e-9)

    @settings(max_examples=60, deadline=None)
    @given(polys(with_inputs=True), polys(with_inputs=True),
           st.lists(st.floats(-2, 2), min_size=4, max_size=4))
    def test_evaluation_is_a_ring_map(self, p, q, pt):
        pt = np.array(pt)
        assert (p * q).evaluate(pt) == pytest.approx(p.evaluate(pt) * q.evaluate(pt), abs=1e-8)
        assert (p - q).evaluate(pt) == pytest.approx(p.evaluate(pt) - q.evaluate(pt), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(polys(with_inputs=True))
    def test_string_round_trip(self, p):
        assert parse(p.to_string(), ST).allclose(p, 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(polys(with_inputs=True), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
    def test_derivative_matches_finite_difference(self, p, pt):
        pt = np.array(pt)
        h = 1e-6
        for v in range(ST.dim):
            e = np.zeros(ST.dim)
            e[v] = h
            fd = (p.evaluate(pt + e) - p.evaluate(pt - e)) / (2 * h)
            assert p.diff(v).evaluate(pt) == pytest.approx(fd, abs=1e-5)

    def test_compose_substitutes(self):
        p = parse("x1*x2 + u1", S2)
        subs = [parse("x1 + 1", S2), parse("2*x2", S2), parse("0", S2)]
        assert p.compose(subs) == parse("2*x1*x2 + 2*x2", S2)

    def test_embed_into_larger_space(self):
        small = VarSpace(False, 2, 0)
        p = parse("x1^2 + x2", small)
        big = p.embed(ST, ST.x_indices)
        assert big == parse("x1^2 + x2", ST)
