import numpy as np
import pytest

from tracesynth import (
    ErrorSpec,
    EvaluationError,
    discretize_actions,
    discretized_error_spec,
    evaluate_step,
    execute,
    matches_trace,
    memory_at,
    parse_program,
)
from tracesynth.program import EMPTY_PROGRAM, initial_params
from tests.conftest import make_trace, reference_loss


def _program(text, registry, schema):
    ast = parse_program(text, registry, schema)
    return ast, initial_params(ast)


class TestEvaluateStep:
    def test_scale(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [0.5], "v": [0.0]}, [0.0])
        ast, _ = _program("(accel (scale 2.0 x))", scalar_registry, scalar_schema)
        name, theta, record = evaluate_step(
            ast, scalar_registry, memory_at(trace, 1, {0: np.array([2.0])})
        )
        assert name == "accel"
        np.testing.assert_allclose(theta, [1.0])

    def test_add(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [0.1], "v": [-0.02]}, [0.0])
        ast, params = _program("(accel (add x v))", scalar_registry, scalar_schema)
        _, theta, _ = evaluate_step(ast, scalar_registry, memory_at(trace, 1, params))
        np.testing.assert_allclose(theta, [0.08])

    def test_sub_of_scales(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [3.0], "v": [1.0]}, [0.0])
        ast, params = _program(
            "(accel (sub (scale 1.0 x) (scale 1.0 v)))", scalar_registry, scalar_schema
        )
        _, theta, _ = evaluate_step(ast, scalar_registry, memory_at(trace, 1, params))
        np.testing.assert_allclose(theta, [2.0])

    def test_empty_program_rejected(self, scalar_registry):
        trace = make_trace({"x": [0.0], "v": [0.0]}, [0.0])
        with pytest.raises(EvaluationError):
            evaluate_step(EMPTY_PROGRAM, scalar_registry, memory_at(trace, 1))

    def test_unbound_parameter(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [0.0], "v": [0.0]}, [0.0])
        ast, _ = _program("(accel (scale 2.0 x))", scalar_registry, scalar_schema)
        with pytest.raises(EvaluationError):
            evaluate_step(ast, scalar_registry, memory_at(trace, 1, {}))

    def test_record_covers_every_node(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [3.0], "v": [1.0]}, [0.0])
        ast, params = _program(
            "(accel (sub (scale 1.0 x) (scale 1.0 v)))", scalar_registry, scalar_schema
        )
        _, _, record = evaluate_step(ast, scalar_registry, memory_at(trace, 1, params))

        def count(rec):
            if hasattr(rec, "args"):
                return 1 + sum(count(a) for a in rec.args)
            return 1

        from tracesynth.program import iter_nodes

        assert count(record) == len(iter_nodes(ast))


class TestExecute:
    def test_perfect_match(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [1.0, 2.0, 3.0], "v": [0, 0, 0]}, [2.0, 4.0, 6.0])
        ast, params = _program("(accel (scale 2.0 x))", scalar_registry, scalar_schema)
        res = execute(ast, params, trace, scalar_registry, ErrorSpec())
        assert res.executed_len == 3
        assert not res.terminated_early
        np.testing.assert_allclose(res.step_errors, 0.0)
        assert res.loss == 0.0
        assert matches_trace(res, ErrorSpec())

    def test_first_step_violation(self, scalar_registry, scalar_schema):
        trace = make_trace(
            {"x": [1.5, 9.0, 9.0], "v": [0, 0, 0]}, [1.0, 2.0, 3.0]
        )
        ast, params = _program("(accel x)", scalar_registry, scalar_schema)
        res = execute(ast, params, trace, scalar_registry, ErrorSpec(max_step_error=0.1))
        assert res.executed_len == 1
        assert res.terminated_early
        np.testing.assert_allclose(res.loss, 0.5)

    def test_all_within_threshold(self, scalar_registry, scalar_schema):
        trace = make_trace(
            {"x": [1.02, 2.03, 3.01], "v": [0, 0, 0]}, [1.0, 2.0, 3.0]
        )
        ast, params = _program("(accel x)", scalar_registry, scalar_schema)
        res = execute(ast, params, trace, scalar_registry, ErrorSpec(max_step_error=0.1))
        assert res.executed_len == 3
        assert not res.terminated_early
        np.testing.assert_allclose(res.loss, 0.06, atol=1e-12)

    def test_boundary_error_is_included(self, scalar_registry, scalar_schema):
        # errors exactly at the threshold do not terminate and still match
        trace = make_trace({"x": [1.5, 2.5], "v": [0, 0]}, [1.0, 2.0])
        ast, params = _program("(accel x)", scalar_registry, scalar_schema)
        spec = ErrorSpec(max_step_error=0.5)
        res = execute(ast, params, trace, scalar_registry, spec)
        assert res.executed_len == 2
        assert not res.terminated_early
        assert matches_trace(res, spec)

    def test_action_name_mismatch_penalty(self, scalar_registry, scalar_schema):
        trace = make_trace(
            {"x": [1.0, 1.0], "v": [0, 0]},
            [1.0, 1.0],
            action="jump",
            actions={"jump": 1, "accel": 1},
        )
        ast, params = _program("(accel x)", scalar_registry, scalar_schema)
        spec = ErrorSpec(max_step_error=0.5)
        res = execute(ast, params, trace, scalar_registry, spec)
        assert res.executed_len == 1
        assert res.terminated_early
        assert res.step_errors[0] > spec.max_step_error

    def test_matches_requires_full_length(self, scalar_registry, scalar_schema):
        trace = make_trace({"x": [1.0, 5.0, 1.0], "v": [0, 0, 0]}, [1.0, 1.0, 1.0])
        ast, params = _program("(accel x)", scalar_registry, scalar_schema)
        spec = ErrorSpec(max_step_error=0.5)
        res = execute(ast, params, trace, scalar_registry, spec)
        # the offending step is executed and its error included
        assert res.executed_len == 2
        assert res.terminated_early
        np.testing.assert_allclose(res.loss, 4.0)
        assert not matches_trace(res, spec)

    def test_execute_agrees_with_evaluate_step(self, scalar_registry, scalar_schema):
        rng = np.random.default_rng(5)
        trace = make_trace(
            {"x": rng.normal(size=8).tolist(), "v": rng.normal(size=8).tolist()},
            rng.normal(size=8).tolist(),
        )
        ast, params = _program(
            "(accel (add (scale 0.7 x) (scale -0.3 v)))", scalar_registry, scalar_schema
        )
        spec = ErrorSpec(max_step_error=1e9)
        res = execute(ast, params, trace, scalar_registry, spec)
        for t in range(1, trace.length + 1):
            _, theta, _ = evaluate_step(ast, scalar_registry, memory_at(trace, t, params))
            np.testing.assert_allclose(res.theta_hat[t - 1], theta, rtol=1e-12)

    def test_loss_self_consistency_random(self, scalar_registry, scalar_schema):
        rng = np.random.default_rng(11)
        for _ in range(100):
            T = int(rng.integers(1, 12))
            trace = make_trace(
                {"x": rng.normal(size=T).tolist(), "v": rng.normal(size=T).tolist()},
                rng.normal(size=T).tolist(),
            )
            ast, params = _program(
                "(accel (add (scale 0.5 x) v))", scalar_registry, scalar_schema
            )
            spec = ErrorSpec(max_step_error=float(rng.uniform(0.1, 2.0)))
            res = execute(ast, params, trace, scalar_registry, spec)
            # loss recomputable from per-step outputs
            np.testing.assert_allclose(
                res.loss, res.step_errors.sum() + res.length_error, rtol=1e-12
            )
            # termination iff some step error exceeded the threshold
            assert res.terminated_early == bool(
                (res.step_errors > spec.max_step_error).any()
            )
            # agreement with the independent step-by-step oracle
            np.testing.assert_allclose(
                res.loss,
                reference_loss(ast, scalar_registry, params, trace, spec),
                rtol=1e-12,
            )


class TestErrorSpecs:
    def test_default_error_zero_iff_equal(self):
        spec = ErrorSpec()
        a = np.array([[1.0, 2.0]])
        assert spec.act_error(a, a.copy())[0] == 0.0
        assert spec.act_error(a, a + 0.1)[0] > 0.0

    def test_default_length_error_zero(self):
        assert ErrorSpec().len_error(10, 10) == 0.0
        assert ErrorSpec().len_error(10, 3) == 0.0

    def test_discretize(self):
        theta = np.array([[0.3], [-0.2], [0.04]])
        np.testing.assert_array_equal(
            discretize_actions(theta, 0.05), [[1.0], [-1.0], [0.0]]
        )

    def test_class_distance_error(self):
        spec = discretized_error_spec(deadband=0.3)
        th = np.array([[0.5], [0.1], [-0.5], [0.2], [0.5]])
        obs = np.array([[1.0], [1.0], [0.0], [0.0], [-1.0]])
        err = spec.act_error(th, obs)
        # right class: zero; wrong: distance to the class region
        np.testing.assert_allclose(err, [0.0, 0.2, 0.2, 0.0, 0.8])

    def test_class_distance_grad_signs(self):
        spec = discretized_error_spec(deadband=0.3)
        th = np.array([[0.1], [-0.5], [0.5]])
        obs = np.array([[1.0], [0.0], [-1.0]])
        g = spec.act_error_grad(th, obs)
        np.testing.assert_array_equal(g, [[-1.0], [-1.0], [1.0]])
