"""End-to-end acceptance checks.

Each test records one PASS/FAIL line into ``conftest.ACCEPTANCE_RESULTS``;
the lines are printed in the terminal summary at the end of the session.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_RESULTS, HOUR, T0, dataset, random_values
from randomgraphs import depth, random_definition
from tsflow import (
    ConditionalModule,
    ConditionSpec,
    DataSet,
    Pipeline,
    TimeArray,
    create,
    fit,
    load_pipeline,
    save_pipeline,
    transform,
)
from tsflow import library as lib
from tsflow.csvio import dumps_csv, loads_csv, write_csv
from tsflow.definition import definition_from_dict, parse_definition
from tsflow.errors import (
    CorruptState,
    CycleDetected,
    EmptyIntersection,
    NotFitted,
    TsflowError,
    UnknownTypeId,
)
from tsflow.estimators import LinearRegression, persistence_forecast
from tsflow.module import EMPTY_STATE


@contextmanager
def criterion(num: int, title: str):
    """Yields a dict; put a ``detail`` string in it. Exceptions mark the criterion failed."""
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        ACCEPTANCE_RESULTS[num] = (title, False, f"{type(exc).__name__}: {exc}"[:300])
        raise
    ACCEPTANCE_RESULTS[num] = (title, True, info["detail"])


# -- 1. library against brute-force oracles ------------------------------------


def _outcome(fn):
    try:
        return fn(), None
    except TsflowError as exc:
        return None, type(exc)


def _check_pair(name, lib_fn, oracle_fn, compare, failures, counts):
    got, got_err = _outcome(lib_fn)
    want, want_err = _outcome(oracle_fn)
    counts["cases"] += 1
    if got_err or want_err:
        counts["errors"] += 1
        if got_err is not want_err:
            failures.append(f"{name}: error {got_err} vs {want_err}")
        return
    problem = compare(got, want)
    if problem:
        failures.append(f"{name}: {problem}")


def test_01_library_matches_oracles():
    with criterion(1, "library transforms match brute-force oracles on 200 random series") as info:
        rng = np.random.default_rng(101)
        failures: list[str] = []
        counts = {"cases": 0, "errors": 0}
        for _ in range(200):
            n = int(rng.integers(1, 501))
            step = int(rng.choice([60, 900, HOUR, 86400]))
            start = T0 + int(rng.integers(-10**8, 10**8)) // step * step
            eq_index = start + step * np.arange(n, dtype=np.int64)
            irr_index = start + np.cumsum(rng.integers(1, 5 * HOUR, size=n)).astype(np.int64)
            v = random_values(rng, n)
            x, xi = TimeArray("x", eq_index, v), TimeArray("x", irr_index, v)
            vl, eq, irr = v.tolist(), eq_index.tolist(), irr_index.tolist()

            def same(got: TimeArray, want):
                if not np.array_equal(got.index, x.index):
                    return "index changed"
                return oracles.mismatch(got.values, want)

            def same_irr(got: TimeArray, want):
                if not np.array_equal(got.index, xi.index):
                    return "index changed"
                return oracles.mismatch(got.values, want)

            def calendar_cmp(got: DataSet, want):
                for key, col in want.items():
                    if not np.array_equal(got.index, xi.index):
                        return "index changed"
                    problem = oracles.mismatch(got[key].values, col, rel=0.0)
                    if problem:
                        return f"{key}: {problem}"
                return None

            _check_pair("calendar", lambda: lib.calendar_extraction(xi), lambda: oracles.calendar(irr),
                        calendar_cmp, failures, counts)
            _check_pair("change_direction", lambda: lib.change_direction(x), lambda: oracles.change_direction(vl),
                        same, failures, counts)
            k = int(rng.integers(-n - 1, n + 2)) if rng.random() < 0.2 else int(rng.integers(-min(n, 30), min(n, 30) + 1))
            _check_pair(f"clock_shift({k})", lambda: lib.clock_shift(x, k), lambda: oracles.clock_shift(vl, k),
                        same, failures, counts)
            order = int(rng.integers(1, 4))
            _check_pair(f"differentiate({order})", lambda: lib.differentiate(x, order),
                        lambda: oracles.differentiate(vl, order), same, failures, counts)
            _check_pair("interpolate", lambda: lib.linear_interpolate(xi),
                        lambda: oracles.linear_interpolate(irr, vl), same_irr, failures, counts)
            _check_pair("missing", lambda: lib.detect_missing(x), lambda: oracles.detect_missing(vl),
                        same, failures, counts)
            w = int(rng.integers(1, min(n, 24) + 2))
            _check_pair(f"rolling_mean({w})", lambda: lib.rolling_mean(x, w), lambda: oracles.rolling_mean(vl, w),
                        same, failures, counts)
            y_hat = random_values(rng, n)
            _check_pair(
                "rmse",
                lambda: lib.rmse(x, TimeArray("y_hat", eq_index, y_hat)),
                lambda: oracles.rmse(vl, y_hat.tolist()),
                lambda got, want: oracles.mismatch(got.values, [want])
                or (None if got.index.tolist() == eq[-1:] else "rmse index"),
                failures,
                counts,
            )
            size = int(rng.integers(1, min(n, 30) + 2))
            pad = str(rng.choice(["zero", "nan"]))
            _check_pair(f"sample({size},{pad})", lambda: lib.sample(x, size, pad),
                        lambda: oracles.sample(vl, size, 0.0 if pad == "zero" else math.nan), same, failures, counts)
            steps_, reps = int(rng.integers(1, 11)), int(rng.integers(1, 4))
            _check_pair(f"trend({steps_},{reps})", lambda: lib.extract_trend(x, steps_, reps),
                        lambda: oracles.extract_trend(vl, steps_, reps), same, failures, counts)
            target = int(step * rng.choice([0.5, 1, 2, 3, 24, 7 / 3]))
            agg, fill = str(rng.choice(["mean", "sum", "min", "max"])), str(rng.choice(["forward", "linear"]))

            def resample_cmp(got: TimeArray, want):
                if got.index.tolist() != want[0]:
                    return "resampled index differs"
                return oracles.mismatch(got.values, want[1])

            _check_pair(f"resample({target},{agg},{fill})", lambda: lib.resample(x, target, agg, fill),
                        lambda: oracles.resample(eq, vl, target, agg, fill), resample_cmp, failures, counts)

        info["detail"] = f"{counts['cases']} comparisons ({counts['errors']} matching error cases), {len(failures)} mismatches"
        assert not failures, failures[:5]


# -- 2. lookback soundness -----------------------------------------------------


def _lookback_cases(rng):
    yield "calendar", lambda: {}
    yield "change_direction", lambda: {}
    yield "clock_shift", lambda: {"shift": int(rng.integers(0, 25))}
    yield "differentiate", lambda: {"order": int(rng.integers(1, 5))}
    yield "missing_mask", lambda: {}
    yield "rolling_mean", lambda: {"window": int(rng.integers(1, 25))}
    yield "sampler", lambda: {"size": int(rng.integers(1, 25)), "pad": str(rng.choice(["zero", "nan"]))}
    yield "trend", lambda: {"steps": int(rng.integers(1, 8)), "repetitions": int(rng.integers(1, 4))}
    yield "persistence", lambda: {"horizon": int(rng.integers(1, 25))}
    yield "scaler", lambda: {}
    yield "ols", lambda: {}


def test_02_lookback_soundness():
    with criterion(2, "finite lookbacks are sound (100 windows per module)") as info:
        rng = np.random.default_rng(202)
        failures, checked = [], []
        for type_id, make in _lookback_cases(rng):
            for _ in range(100):
                module = create(type_id, make())
                L = module.lookback
                assert L is not None, f"{type_id} declares unbounded lookback"
                n = int(rng.integers(L + 2, L + 120))
                idx = T0 + HOUR * np.arange(n, dtype=np.int64)
                cols = {"x": random_values(rng, n)}
                if type_id == "ols":
                    cols["z"] = random_values(rng, n)
                data = DataSet.from_arrays(idx, cols)
                state = fit(module, data, dataset(idx, y=random_values(rng, n))) if module.requires_fit else EMPTY_STATE
                t = int(rng.integers(L, n))
                full = transform(module, state, data).take(np.array([t]))
                window = transform(module, state, data.take(np.arange(t - L, t + 1)))
                last = window.take(np.array([L]))
                if not full.equals(last):
                    failures.append(f"{type_id}{module.params} t={t} L={L}")
            checked.append(type_id)
        unbounded = []
        for type_id, params in [("interpolate", {}), ("resample", {"step": "2h"}), ("rmse", {}),
                                ("clock_shift", {"shift": -1})]:
            if create(type_id, params).lookback is None:
                unbounded.append(type_id + ("(k<0)" if params.get("shift", 0) < 0 else ""))
        info["detail"] = (
            f"{len(checked)} modules x 100 windows, {len(failures)} violations; "
            f"declared unbounded: {', '.join(unbounded)}"
        )
        assert not failures, failures[:5]


# -- 3. reproducibility and round trips ----------------------------------------


def forecast_data(seed: int, n: int = 200) -> DataSet:
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    load = 50 + 10 * np.sin(2 * np.pi * t / 24) + rng.normal(0, 1, n)
    load[rng.random(n) < 0.1] = np.nan
    return dataset(load=load, temp=random_values(rng, n))


def test_03_random_pipelines_reproducible(tmp_path):
    with criterion(3, "50 random pipelines: rerun, save/load, CSV and definition round trips bitwise") as info:
        data = forecast_data(303)
        kinds: set[str] = set()
        max_depth = 0
        for seed in range(50):
            defn = random_definition(1000 + seed)
            max_depth = max(max_depth, depth(defn))
            assert depth(defn) <= 6
            for s in defn["steps"]:
                kinds.add(s.get("type_id") or "condition")
            parsed = definition_from_dict(defn)
            p = parsed.build()
            p.train(data)
            first = p.run(data)
            second = p.run(data)
            save_pipeline(p, tmp_path / f"p{seed}")
            loaded = load_pipeline(tmp_path / f"p{seed}").run(data)
            again = parse_definition(parsed.to_json()).build()
            again.train(data)
            rebuilt = again.run(data)
            assert parse_definition(parsed.to_json()) == parsed, f"seed {seed}: definition round trip"
            for sink in p.sinks:
                assert first[sink].equals(second[sink]), f"seed {seed}: rerun differs at {sink}"
                assert first[sink].equals(loaded[sink]), f"seed {seed}: save/load differs at {sink}"
                assert first[sink].equals(rebuilt[sink]), f"seed {seed}: definition rebuild differs at {sink}"
                assert loads_csv(dumps_csv(first[sink])).equals(first[sink]), f"seed {seed}: CSV round trip {sink}"
        assert loads_csv(dumps_csv(data)).equals(data)
        info["detail"] = f"50 pipelines, max depth {max_depth}, step types used: {len(kinds)}"


# -- 4. online equals batch ----------------------------------------------------


def test_04_online_equals_batch():
    with criterion(4, "25 random fit-free pipelines: online output equals batch where batch is finite") as info:
        data = forecast_data(404, n=120)
        compared = 0
        conds = subs = 0
        for seed in range(25):
            defn = random_definition(2000 + seed, trainable=False, online=True, max_steps=7)
            conds += sum("condition" in s for s in defn["steps"])
            subs += sum(s.get("type_id") == "subpipeline" for s in defn["steps"])
            p = definition_from_dict(defn).build()
            assert p.lookback() is not None or any("condition" in s for s in defn["steps"])
            batch, online = p.run(data), p.run_online(data)
            for sink in p.sinks:
                b, o = batch[sink], online[sink]
                assert np.array_equal(b.index, o.index), f"seed {seed}: index differs at {sink}"
                assert set(b) == set(o)
                for name in b:
                    bv, ov = b[name].values, o[name].values
                    ok = np.isfinite(bv)
                    assert np.array_equal(bv[ok], ov[ok]), f"seed {seed}: {sink}.{name} differs"
                    compared += int(ok.sum())
        info["detail"] = f"{compared} finite values compared, {conds} conditions, {subs} subpipelines"


# -- 5. subpipeline transparency -----------------------------------------------


def _inner_definition(seed: int) -> dict:
    inner = random_definition(seed, sources=("x",), target="target", rmse=False, conditions=False,
                              subpipelines=False, max_steps=6)
    if len(inner["sinks"]) > 1:
        inner["steps"].append({"id": "out", "type_id": "rolling_mean", "params": {"window": 1},
                               "inputs": {f"in{j}": s for j, s in enumerate(inner["sinks"])}})
        inner["sinks"] = ["out"]
    if any(s.get("target") for s in inner["steps"]):
        inner["sources"] = ["x", "target"]
    return inner


def _inline(outer_pre: dict, inner: dict, post: dict) -> dict:
    def ref(r: str) -> str:
        base, _, arr = r.partition(":")
        base = {"x": "pre", "target": "load"}.get(base, f"in_{base}")
        return f"{base}:{arr}" if arr else base

    steps = [outer_pre]
    for s in inner["steps"]:
        s = json.loads(json.dumps(s))
        s["id"] = f"in_{s['id']}"
        s["inputs"] = {k: ref(v) for k, v in s["inputs"].items()}
        if s.get("target"):
            s["target"] = ref(s["target"])
        steps.append(s)
    post = json.loads(json.dumps(post))
    post["inputs"] = {k: (ref(inner["sinks"][0]) if v == "sub" else v) for k, v in post["inputs"].items()}
    steps.append(post)
    return {"sources": ["load"], "steps": steps, "sinks": ["post"]}


def test_05_subpipeline_transparency():
    with criterion(5, "10 random graphs: subpipeline output equals the inlined graph bitwise") as info:
        data = forecast_data(505, n=150)
        trainable = 0
        for seed in range(10):
            inner = _inner_definition(3000 + seed)
            pre = {"id": "pre", "type_id": ["interpolate", "rolling_mean", "clock_shift"][seed % 3],
                   "params": [{}, {"window": 2}, {"shift": 1}][seed % 3], "inputs": {"x": "load"}}
            sub = {"id": "sub", "type_id": "subpipeline", "params": {"name": "inner"}, "inputs": {"x": "pre"}}
            if "target" in inner["sources"]:
                sub["target"] = "load"
                trainable += 1
            post = {"id": "post", "type_id": "rolling_mean", "params": {"window": 1},
                    "inputs": {"a": "sub", "b": "pre"}}
            nested = {"sources": ["load"], "steps": [pre, sub, post], "sinks": ["post"],
                      "subpipelines": {"inner": inner}}
            flat = _inline(pre, inner, post)
            pn, pf = definition_from_dict(nested).build(), definition_from_dict(flat).build()
            tn, tf = pn.train(data)["post"], pf.train(data)["post"]
            assert tn.equals(tf), f"seed {seed}: train output differs"
            assert pn.run(data)["post"].equals(pf.run(data)["post"]), f"seed {seed}: run output differs"
        info["detail"] = f"10 graphs ({trainable} with a trained inner model), train and run outputs identical"


# -- 6. condition routing ------------------------------------------------------


def test_06_condition_routing():
    with criterion(6, "hour_between(8,20) routing over 14 days partitions and matches per-branch runs") as info:
        rng = np.random.default_rng(606)
        n = 24 * 14
        data = dataset(load=random_values(rng, n, nan_rate=0.05))
        route = ConditionalModule(
            ConditionSpec("hour_between", (8, 20)),
            create("persistence", {"horizon": 12}),
            create("persistence", {"horizon": 1}),
        )
        p = Pipeline(sources=["load"]).add("route", route, {"x": "load"}).add_sink("route")
        out = p.run(data)["route"]
        assert np.array_equal(out.index, data.index)
        assert len(np.unique(out.index)) == n
        hours = (data.index // HOUR) % 24
        day = np.flatnonzero((hours >= 8) & (hours < 20))
        night = np.flatnonzero(~((hours >= 8) & (hours < 20)))
        x = data["load"]
        day_alone = persistence_forecast(TimeArray("x", x.index[day], x.values[day]), 12)
        night_alone = persistence_forecast(TimeArray("x", x.index[night], x.values[night]), 1)
        got = out["x"].values
        assert oracles.mismatch(got[day], day_alone.values, rel=0.0) is None
        assert oracles.mismatch(got[night], night_alone.values, rel=0.0) is None
        info["detail"] = f"{n} rows, {day.size} day + {night.size} night, each timestamp once"


# -- 7. forecasting scenario ---------------------------------------------------

DOCS_DEFINITION = {
    "sources": ["load"],
    "steps": [
        {"id": "calendar", "type_id": "calendar", "inputs": {"x": "load"}},
        {"id": "lagged", "type_id": "clock_shift", "params": {"shift": 1}, "inputs": {"x": "load"}},
        {"id": "window", "type_id": "sampler", "params": {"size": 24}, "inputs": {"x": "lagged"}},
        {"id": "scaled", "type_id": "scaler", "inputs": {"cal": "calendar", "win": "window"}},
        {"id": "forecast", "type_id": "ols", "inputs": {"f": "scaled"}, "target": "load"},
    ],
    "sinks": ["forecast"],
}


def synthetic_load(seed: int = 707, days: int = 56) -> DataSet:
    rng = np.random.default_rng(seed)
    n = 24 * days
    idx = T0 + HOUR * np.arange(n, dtype=np.int64)
    hour = (idx // HOUR) % 24
    weekday = ((idx // 86400) + 3) % 7
    load = 100 + 20 * np.sin(2 * np.pi * (hour - 6) / 24) - 15 * (weekday >= 5) + rng.normal(0, 2, n)
    return dataset(idx, load=load)


def test_07_forecast_beats_persistence(tmp_path):
    with criterion(7, "calendar + lagged load + scaler + OLS beats 24 h persistence; CLI under 10 s") as info:
        data = synthetic_load()
        n = data.n_rows
        split = int(n * 0.7)
        train = data.take(np.arange(split))
        p = definition_from_dict(DOCS_DEFINITION).build()
        p.train(train)
        pred = p.run(data)["forecast"]["prediction"].values[split:]
        actual = data["load"].values[split:]
        naive = data["load"].values[split - 24 : n - 24]
        model_rmse = oracles.rmse(actual.tolist(), pred.tolist())
        naive_rmse = oracles.rmse(actual.tolist(), naive.tolist())

        write_csv(data, tmp_path / "load.csv")
        (tmp_path / "def.json").write_text(json.dumps(DOCS_DEFINITION))
        exe = shutil.which("tsflow")
        cmd = [exe] if exe else [sys.executable, "-m", "tsflow"]
        start = time.perf_counter()
        for args in (
            ["train", "--pipeline", "def.json", "--data", "load.csv", "--out", "trained"],
            ["run", "--pipeline", "trained", "--data", "load.csv", "--out", "scored"],
        ):
            proc = subprocess.run(cmd + args, cwd=tmp_path, capture_output=True, text=True,
                                  env=dict(os.environ), check=False)
            assert proc.returncode == 0, proc.stderr
        elapsed = time.perf_counter() - start
        info["detail"] = (
            f"test RMSE {model_rmse:.3f} vs persistence {naive_rmse:.3f} "
            f"({n - split} test rows); CLI train+run {elapsed:.2f} s"
        )
        assert model_rmse < naive_rmse
        assert elapsed < 10.0


# -- 8. OLS exactness ----------------------------------------------------------


def test_08_ols_exact():
    with criterion(8, "OLS recovers exact linear coefficients and cov/var slope within 1e-8") as info:
        rng = np.random.default_rng(808)
        worst = 0.0
        for _ in range(20):
            n, k = int(rng.integers(20, 200)), int(rng.integers(1, 5))
            X = rng.normal(0, rng.uniform(0.5, 5), size=(n, k))
            w = rng.uniform(-5, 5, size=k)
            b = float(rng.uniform(-10, 10))
            y = X @ w + b
            inputs = DataSet.from_arrays(T0 + HOUR * np.arange(n), {f"x{j}": X[:, j] for j in range(k)})
            model = create("ols")
            state = fit(model, inputs, dataset(inputs.index, y=y))
            got_w, got_b = LinearRegression.coefficients(state)
            worst = max(worst, float(np.max(np.abs(got_w - w))), abs(got_b - b))

        x = rng.normal(0, 3, 300)
        y = 1.5 * x + rng.normal(0, 1, 300)
        inputs = dataset(x=x)
        state = fit(create("ols"), inputs, dataset(y=y))
        slope = LinearRegression.coefficients(state)[0][0]
        xm, ym = math.fsum(x) / x.size, math.fsum(y) / y.size
        cov = math.fsum((a - xm) * (c - ym) for a, c in zip(x, y))
        var = math.fsum((a - xm) ** 2 for a in x)
        slope_err = abs(slope - cov / var)
        info["detail"] = f"max coefficient error {worst:.2e}, slope vs cov/var {slope_err:.2e}"
        assert worst <= 1e-8
        assert slope_err <= 1e-8


# -- 9. error paths name their origin ------------------------------------------


def test_09_errors_name_step_or_location(tmp_path):
    with criterion(9, "cycle, unknown type, corrupt blob, disjoint align and unfitted run name their origin") as info:
        seen = []

        cyc = {"sources": ["load"], "sinks": ["b"], "steps": [
            {"id": "a", "type_id": "missing_mask", "inputs": {"x": "b"}},
            {"id": "b", "type_id": "missing_mask", "inputs": {"x": "a"}},
        ]}
        with pytest.raises(CycleDetected) as exc:
            parse_definition(json.dumps(cyc), "cyc.json")
        assert exc.value.location and exc.value.location.startswith("steps[")
        seen.append(str(exc.value))

        bad = json.loads(json.dumps(DOCS_DEFINITION))
        bad["steps"][2]["type_id"] = "sklearn"
        with pytest.raises(UnknownTypeId) as exc:
            parse_definition(json.dumps(bad))
        assert exc.value.location == "steps[2].type_id"
        seen.append(str(exc.value))

        data = synthetic_load(days=4)
        p = definition_from_dict(DOCS_DEFINITION).build()
        p.train(data)
        save_pipeline(p, tmp_path / "p")
        blob = tmp_path / "p" / "state" / "forecast.bin"
        raw = bytearray(blob.read_bytes())
        raw[-6] ^= 0x5A
        blob.write_bytes(bytes(raw))
        with pytest.raises(CorruptState) as exc:
            load_pipeline(tmp_path / "p")
        assert exc.value.step == "forecast"
        seen.append(str(exc.value))

        # 2h buckets sit on even hours; the rmse row sits on the last (odd) hour
        q = Pipeline(sources=["load"])
        q.add("coarse", create("resample", {"step": "2h"}), {"x": "load"})
        q.add("lag", create("persistence", {"horizon": 1}), {"x": "load"})
        q.add("score", create("rmse"), {"y": "load", "y_hat": "lag"})
        q.add("merge", create("missing_mask"), {"a": "coarse", "b": "score"})
        q.add_sink("merge")
        with pytest.raises(EmptyIntersection) as exc:
            q.run(data)
        assert exc.value.step == "merge"
        seen.append(str(exc.value))

        fresh = definition_from_dict(DOCS_DEFINITION).build()
        with pytest.raises(NotFitted) as exc:
            fresh.run(data)
        assert exc.value.step in ("scaled", "forecast")
        seen.append(str(exc.value))

        assert all("[step " in m or "[at " in m for m in seen), seen
        info["detail"] = "; ".join(m.split("\n")[0][:70] for m in seen)
