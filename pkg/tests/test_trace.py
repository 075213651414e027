import json

import numpy as np
import pytest

from tracesynth import (
    PENDULUM,
    TraceFormatError,
    build_variable_index,
    load_trace,
    memory_at,
    nearest_variable,
    save_trace,
    simulate_second_order,
    trace_from_dict,
    trace_to_dict,
)
from tests.conftest import make_trace


class TestLoad:
    def test_pendulum_file(self, tmp_path):
        trace = simulate_second_order(PENDULUM)
        path = tmp_path / "p.trace"
        save_trace(trace, path)
        loaded = load_trace(path)
        assert loaded.length == 100
        assert loaded.schema.variables == {"x": 1, "v": 1}
        assert loaded.schema.actions == {"accel": 1}

    def test_missing_variable(self):
        doc = trace_to_dict(make_trace({"x": [1, 2, 3], "v": [0, 0, 0]}, [1, 2, 3]))
        del doc["steps"][2]["vars"]["v"]
        with pytest.raises(TraceFormatError):
            trace_from_dict(doc)

    def test_theta_dimension_mismatch(self):
        doc = trace_to_dict(make_trace({"x": [1, 2]}, [1, 2]))
        doc["steps"][0]["action"]["theta"] = [1.0, 2.0]
        with pytest.raises(TraceFormatError):
            trace_from_dict(doc)

    def test_non_contiguous_timesteps(self):
        doc = trace_to_dict(make_trace({"x": [1, 2]}, [1, 2]))
        doc["steps"][1]["t"] = 3
        with pytest.raises(TraceFormatError):
            trace_from_dict(doc)

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.trace"
        path.write_text("not json at all")
        with pytest.raises(TraceFormatError):
            load_trace(path)

    def test_round_trip_identity(self, tmp_path):
        trace = simulate_second_order(PENDULUM)
        path = tmp_path / "t.trace"
        save_trace(trace, path)
        again = load_trace(path)
        assert trace.schema == again.schema
        for a, b in zip(trace.steps, again.steps):
            assert a.t == b.t and a.action_name == b.action_name
            np.testing.assert_array_equal(a.theta, b.theta)
            for name in a.vars:
                np.testing.assert_array_equal(a.vars[name], b.vars[name])

    def test_field_names_exact(self, tmp_path):
        trace = make_trace({"x": [1]}, [2])
        path = tmp_path / "t.trace"
        save_trace(trace, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"schema", "steps"}
        assert set(doc["schema"]) == {"variables", "actions"}
        assert set(doc["steps"][0]) == {"t", "vars", "action"}
        assert set(doc["steps"][0]["action"]) == {"name", "theta"}


class TestMemory:
    def test_first_step_values(self):
        trace = simulate_second_order(PENDULUM)
        mem = memory_at(trace, 1)
        np.testing.assert_allclose(mem.variables["x"], [0.1])
        np.testing.assert_allclose(mem.variables["v"], [0.0])

    def test_out_of_range(self):
        trace = simulate_second_order(PENDULUM)
        with pytest.raises(IndexError):
            memory_at(trace, 0)
        with pytest.raises(IndexError):
            memory_at(trace, trace.length + 1)

    def test_last_step(self):
        trace = simulate_second_order(PENDULUM)
        mem = memory_at(trace, trace.length)
        np.testing.assert_array_equal(mem.variables["x"], trace.steps[-1].vars["x"])

    def test_pure(self):
        trace = simulate_second_order(PENDULUM)
        a = memory_at(trace, 5)
        b = memory_at(trace, 5)
        assert a.variables.keys() == b.variables.keys()
        for k in a.variables:
            np.testing.assert_array_equal(a.variables[k], b.variables[k])


class TestNearestVariable:
    def test_closer_variable_wins(self):
        trace = make_trace({"x": [0.5], "v": [-1.2]}, [0.0])
        index = build_variable_index(trace)
        name, value = nearest_variable(index, 1, 1, np.array([-1.0]))
        assert name == "v"
        np.testing.assert_allclose(value, [-1.2])

    def test_exact_hit(self):
        trace = make_trace({"x": [0.5], "v": [-1.2]}, [0.0])
        index = build_variable_index(trace)
        name, _ = nearest_variable(index, 1, 1, np.array([0.5]))
        assert name == "x"

    def test_tie_breaks_by_name(self):
        trace = make_trace({"x": [0.3], "v": [-0.3]}, [0.0])
        index = build_variable_index(trace)
        name, value = nearest_variable(index, 1, 1, np.array([0.0]))
        assert name == "v"
        np.testing.assert_allclose(value, [-0.3])

    def test_singleton_schema(self):
        trace = make_trace({"x": [0.1, 0.2]}, [0, 0])
        index = build_variable_index(trace)
        for t in (1, 2):
            assert nearest_variable(index, t, 1, np.array([99.0]))[0] == "x"

    def test_no_variable_of_dimension(self):
        trace = make_trace({"x": [0.1]}, [0])
        index = build_variable_index(trace)
        with pytest.raises(KeyError):
            nearest_variable(index, 1, 3, np.zeros(3))

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(0)
        names = ["a", "b", "c", "d"]
        T = 25
        values = {n: rng.normal(size=T).tolist() for n in names}
        trace = make_trace(values, [0.0] * T)
        index = build_variable_index(trace)
        for _ in range(200):
            t = int(rng.integers(1, T + 1))
            q = rng.normal(size=1)
            got, _ = nearest_variable(index, t, 1, q)
            dists = {n: abs(trace.steps[t - 1].vars[n][0] - q[0]) for n in names}
            best = min(dists.values())
            want = min(n for n in names if dists[n] == best)
            assert got == want

    def test_query_steps_agrees_with_query(self):
        rng = np.random.default_rng(1)
        trace = make_trace(
            {"x": rng.normal(size=10).tolist(), "v": rng.normal(size=10).tolist()},
            [0.0] * 10,
        )
        index = build_variable_index(trace)
        points = rng.normal(size=(10, 1))
        winners = index.query_steps(1, points)
        for t in range(10):
            name, _ = index.query(t + 1, 1, points[t])
            assert index.names[1][winners[t]] == name
