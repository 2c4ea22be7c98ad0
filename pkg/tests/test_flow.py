"""Integral curves of the scaled gradient field and grid surrogates."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levelconf.density import fit
from levelconf.flow import (
    BUDGET_EXCEEDED,
    GRADIENT_FLOOR,
    HIT,
    FlowOptions,
    GridSurrogate,
    NonFiniteFieldError,
    SurrogateStack,
    hitting_point,
    trace_batch,
    trace_to_level,
)
from levelconf.geometry import GridSpec
from levelconf.kernel import get_kernel


class Paraboloid:
    """f(x) = |x|^2; its scaled-gradient flow satisfies |X(t)|^2 = |x0|^2 + t."""

    def __call__(self, x):
        return np.sum(np.atleast_2d(x) ** 2, axis=1)

    def grad(self, x):
        return 2 * np.atleast_2d(x)


class Bump:
    def __call__(self, x):
        return np.exp(-0.5 * np.sum(np.atleast_2d(x) ** 2, axis=1))

    def grad(self, x):
        x = np.atleast_2d(x)
        return -x * self(x)[:, None]


def _rk4_error(step_frac):
    seeds = np.array([[1.0, 0.0], [0.6, -0.8], [-0.7, 0.9]])
    c = 6.0
    _, (times, xs, _) = trace_batch(Paraboloid(), seeds, c, FlowOptions(step_frac=step_frac),
                                    record=True)
    r0 = np.linalg.norm(seeds, axis=1)
    exact = seeds * (np.sqrt(c) / r0)[:, None]
    return np.max(np.linalg.norm(xs[-1] - exact, axis=1))


def test_rk4_fourth_order_on_paraboloid():
    errs = [_rk4_error(f) for f in (1 / 8, 1 / 16, 1 / 32)]
    assert errs[0] / errs[1] >= 8
    assert errs[1] / errs[2] >= 8


def test_paraboloid_endpoint_and_identity():
    seeds = np.array([[1.0, 1.0], [0.2, 0.0], [-1.5, 0.5]])
    batch = trace_batch(Paraboloid(), seeds, 1.0)
    assert np.all(batch.hit)
    exact = seeds / np.linalg.norm(seeds, axis=1)[:, None]
    np.testing.assert_allclose(batch.endpoint, exact, atol=1e-9)
    np.testing.assert_allclose(batch.theta, 1.0 - np.sum(seeds**2, axis=1))
    tr = trace_to_level(Paraboloid(), seeds[0], 1.0)
    # f(X(t)) - f(x0) = t along the whole recorded curve
    np.testing.assert_allclose(tr.values - tr.values[0], tr.times, atol=1e-9)


def test_seed_on_level_does_not_move():
    batch = trace_batch(Paraboloid(), np.array([[0.6, 0.8]]), 1.0)
    assert batch.hit[0] and batch.theta[0] == 0
    np.testing.assert_array_equal(batch.endpoint[0], [0.6, 0.8])


def test_critical_point_is_flagged():
    batch = trace_batch(Bump(), np.array([[0.0, 0.0], [1.0, 0.0]]), 0.5)
    assert list(batch.status) == [GRADIENT_FLOOR, HIT]
    assert batch.failures == 1
    # fallback endpoint is the start (nothing better was visited)
    np.testing.assert_array_equal(batch.endpoint[0], [0.0, 0.0])


def test_unreachable_level_falls_back_to_closest_point():
    tr = trace_to_level(Bump(), np.array([1.0, 0.0]), 1.5)
    assert tr.status != HIT
    theta, point, is_hit = hitting_point(tr)
    assert not is_hit
    assert np.linalg.norm(point) < 1.0  # moved uphill toward the mode


def test_budget_exhaustion():
    opts = FlowOptions(step_frac=1 / 8, max_steps=8, level_tol=1e-15)
    batch = trace_batch(Paraboloid(), np.array([[0.5, 0.0]]), 4.0, opts)
    assert batch.status[0] == BUDGET_EXCEEDED


def test_non_finite_field_raises():
    class Bad(Paraboloid):
        def grad(self, x):
            return np.full(np.shape(np.atleast_2d(x)), np.nan)

    with pytest.raises(NonFiniteFieldError):
        trace_batch(Bad(), np.array([[1.0, 0.0]]), 2.0)


def test_options_validation():
    with pytest.raises(ValueError):
        FlowOptions(step_frac=0.5)
    with pytest.raises(ValueError):
        FlowOptions(grad_floor=0)
    assert FlowOptions(step_frac=1 / 16).n_steps == 16


def test_trace_csv(tmp_path):
    tr = trace_to_level(Paraboloid(), np.array([0.5, 0.5]), 1.0)
    tr.to_csv(tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "t,x,y,f" and len(rows) == len(tr.times) + 1


def test_flow_identity_on_density_estimate(case1_sample):
    est = fit(case1_sample, get_kernel("sim2d"), [0.5, 0.5], "bias_corrected", [0.8, 0.8])
    c = 1 / (4 * math.pi)
    rng = np.random.default_rng(1)
    ang = rng.uniform(0, 2 * np.pi, 40)
    rad = math.sqrt(2 * math.log(2)) + rng.uniform(-0.15, 0.15, 40)
    seeds = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    batch, (times, xs, fs) = trace_batch(est, seeds, c, record=True)
    hit = batch.hit
    # curves that brush a near-critical point of the wiggly estimate are flagged
    assert hit.mean() >= 0.75
    f0 = fs[0]
    gap = np.abs(fs - f0[None, :] - times)[:, hit]
    assert np.all(gap <= 1e-4 * np.abs(batch.theta[hit])[None, :] + 1e-15)
    np.testing.assert_allclose(est(batch.endpoint[hit]), c, atol=1e-8)


@given(st.floats(0, 2 * np.pi), st.floats(0.3, 2.5), st.floats(0.2, 0.9))
def test_radial_flow_reaches_level_circle(angle, r0, c):
    seed = r0 * np.array([[math.cos(angle), math.sin(angle)]])
    batch = trace_batch(Bump(), seed, c)
    assert batch.hit[0]
    r_c = math.sqrt(-2 * math.log(c))
    np.testing.assert_allclose(batch.endpoint[0], seed[0] / r0 * r_c, atol=1e-7)


# ------------------------------------------------------------------ surrogates

GRID = GridSpec((-3, -3), (3, 3), 96)


def test_surrogate_exact_for_bicubic_polynomials():
    class Poly:
        def __call__(self, x):
            x = np.atleast_2d(x)
            return x[:, 0] ** 3 * x[:, 1] ** 2 - 2 * x[:, 0] * x[:, 1] + x[:, 1] ** 3

        def grad(self, x):
            x = np.atleast_2d(x)
            return np.column_stack([3 * x[:, 0] ** 2 * x[:, 1] ** 2 - 2 * x[:, 1],
                                    2 * x[:, 0] ** 3 * x[:, 1] - 2 * x[:, 0] + 3 * x[:, 1] ** 2])

    s = GridSurrogate(Poly(), GridSpec((-1, -1), (1, 1), 16))
    p = np.random.default_rng(0).uniform(-1, 1, (300, 2))
    np.testing.assert_allclose(s(p), Poly()(p), atol=1e-3)


def test_surrogate_matches_estimator(case1_sample):
    est = fit(case1_sample, get_kernel("sim2d"), [0.6, 0.6])
    s = GridSurrogate(est, GridSpec((-3, -3), (3, 3), 192))
    p = np.random.default_rng(2).uniform(-2.5, 2.5, (400, 2))
    v, g = s.value_and_grad(p)
    ve, ge = est.value_and_grad(p)
    assert np.max(np.abs(v - ve)) <= 1e-5 * ve.max()
    assert np.max(np.abs(g - ge)) <= 1e-3 * np.abs(ge).max()
    np.testing.assert_allclose(s.grad(p), g)


def test_surrogate_interpolates_nodes(case1_sample):
    est = fit(case1_sample, get_kernel("sim2d"), [0.6, 0.6])
    s = GridSurrogate(est, GRID)
    xs, ys = GRID.nodes()
    X, Y = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
    p = np.column_stack([X.ravel(), Y.ravel()])
    np.testing.assert_allclose(s(p), est(p), atol=1e-13)
    np.testing.assert_allclose(s.grad(p), est.grad(p), atol=1e-12)


def test_stack_equals_individual_surrogates(case1_sample):
    k = get_kernel("sim2d")
    fields = [fit(case1_sample[i::3], k, [0.7, 0.6]) for i in range(3)]
    stack = SurrogateStack(fields, GRID)
    seeds = np.random.default_rng(3).uniform(-1.5, 1.5, (25, 2))
    lifted = stack.lift(seeds)
    assert lifted.shape == (75, 3)
    joint = trace_batch(stack, lifted, 0.05)
    for i, f in enumerate(fields):
        single = trace_batch(GridSurrogate(f, GRID), seeds, 0.05)
        np.testing.assert_allclose(joint.endpoint[25 * i:25 * (i + 1), :2], single.endpoint, atol=1e-12)
        np.testing.assert_array_equal(joint.status[25 * i:25 * (i + 1)], single.status)
    assert np.all(joint.endpoint[:, 2] == np.repeat([0.0, 1.0, 2.0], 25))
