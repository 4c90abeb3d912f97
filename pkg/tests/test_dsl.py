import math

import numpy as np
import pytest

from fpk.dsl import (
    ExprDomainError,
    ExprSyntaxError,
    eval_expr,
    parse_expr,
    pretty,
)


def test_polynomial_arithmetic():
    e = parse_expr("x1*x1 + 1", 2)
    assert eval_expr(e, [2.0, 0.0]) == 5.0


def test_variable_index_exceeds_dimension():
    with pytest.raises(ExprSyntaxError, match="exceeds dimension"):
        parse_expr("x3", 2)


def test_normsq_intrinsic():
    e = parse_expr("2*(1+normsq)", 3)
    assert eval_expr(e, [1.0, 1.0, 1.0]) == 8.0


def test_precedence_and_associativity():
    assert eval_expr(parse_expr("2+3*4", 1), [0.0]) == 14.0
    assert eval_expr(parse_expr("2*3^2", 1), [0.0]) == 18.0
    assert eval_expr(parse_expr("-2^2", 1), [0.0]) == -4.0  # ^ binds above unary -
    assert eval_expr(parse_expr("2^-1", 1), [0.0]) == 0.5
    assert eval_expr(parse_expr("2^3^2", 1), [0.0]) == 512.0  # right-assoc
    assert eval_expr(parse_expr("8-4-2", 1), [0.0]) == 2.0  # left-assoc
    assert eval_expr(parse_expr("8/4/2", 1), [0.0]) == 1.0


def test_syntax_errors_carry_position():
    with pytest.raises(ExprSyntaxError) as err:
        parse_expr("1 + * 2", 1)
    assert err.value.position == 4
    with pytest.raises(ExprSyntaxError, match="unknown identifier"):
        parse_expr("foo + 1", 1)
    with pytest.raises(ExprSyntaxError):
        parse_expr("(1 + 2", 1)
    with pytest.raises(ExprSyntaxError, match="empty"):
        parse_expr("   ", 1)


def test_domain_errors():
    assert eval_expr(parse_expr("ln(1+normsq)", 2), [0.0, 0.0]) == 0.0
    with pytest.raises(ExprDomainError, match="division"):
        eval_expr(parse_expr("1/x1", 2), [0.0, 1.0])
    with pytest.raises(ExprDomainError, match="ln"):
        eval_expr(parse_expr("ln(x1)", 1), [-1.0])
    with pytest.raises(ExprDomainError, match="sqrt"):
        eval_expr(parse_expr("sqrt(x1)", 1), [-1.0])
    with pytest.raises(ExprDomainError):
        eval_expr(parse_expr("x1^x2", 2), [-1.0, 0.5])  # non-real power


# source text, reference implementation over (x1, x2)
CLOSED_FORMS = [
    ("x1 + x2", lambda a, b: a + b),
    ("x1 - 2*x2", lambda a, b: a - 2 * b),
    ("x1*x2 - x2^2", lambda a, b: a * b - b**2),
    ("exp(-normsq)", lambda a, b: math.exp(-(a * a + b * b))),
    ("ln(1+normsq)", lambda a, b: math.log(1 + a * a + b * b)),
    ("sqrt(1+x1^2)", lambda a, b: math.sqrt(1 + a * a)),
    ("sin(x1)*cos(x2)", lambda a, b: math.sin(a) * math.cos(b)),
    ("abs(x1 - x2)", lambda a, b: abs(a - b)),
    ("1/(1+normsq)", lambda a, b: 1.0 / (1 + a * a + b * b)),
    ("-x1^3 + x2/2", lambda a, b: -(a**3) + b / 2),
    ("2^x1", lambda a, b: 2.0**a),
    ("(x1+x2)^2/(1+x1^2)", lambda a, b: (a + b) ** 2 / (1 + a * a)),
]


def test_catalog_expressions_match_closed_forms():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        src, ref = CLOSED_FORMS[checked % len(CLOSED_FORMS)]
        a, b = rng.uniform(-2, 2, size=2)
        got = eval_expr(parse_expr(src, 2), [a, b])
        want = ref(a, b)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-300)
        checked += 1


def test_batch_matches_pointwise():
    e = parse_expr("exp(-normsq) + x1*x2", 2)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(50, 2))
    batch = eval_expr(e, pts)
    single = np.array([eval_expr(e, p) for p in pts])
    assert np.array_equal(batch, single)


def test_eval_is_bit_reproducible():
    e = parse_expr("sin(x1)^2 / (1 + exp(x2))", 2)
    x = [0.3141, -1.618]
    assert eval_expr(e, x) == eval_expr(e, x)


def test_pretty_parse_is_fixed_point():
    sources = [src for src, _ in CLOSED_FORMS] + [
        "x1 - (x2 - 1)",
        "-(x1 + x2)",
        "(x1 + 1)*(x2 - 1)",
        "x1/(x2*x2)",
        "-x1^2",
    ]
    for src in sources:
        ast = parse_expr(src, 2)
        canon = pretty(ast)
        assert parse_expr(canon, 2) == ast
        assert pretty(parse_expr(canon, 2)) == canon


def test_pretty_eval_agrees():
    rng = np.random.default_rng(7)
    for src, _ in CLOSED_FORMS:
        ast = parse_expr(src, 2)
        again = parse_expr(pretty(ast), 2)
        x = rng.uniform(-1.5, 1.5, size=2)
        assert eval_expr(ast, x) == eval_expr(again, x)
