"""Trainable modules: ridge-stabilised least squares, standard scaler, persistence baseline."""

from __future__ import annotations

import numpy as np

from .core import DataSet, TimeArray
from .errors import DegenerateDesign, InsufficientData, InvalidParameter, SchemaMismatch
from .library import ElementwiseModule, _check_shift, clock_shift_kernel
from .module import Module, ModuleState, fit, int_param, pack_payload, register, transform, unpack_payload

DEFAULT_RIDGE_EPSILON = 1e-8


def _schema(inputs: DataSet) -> list[list]:
    return [[name, list(inputs[name].feature_shape)] for name in sorted(inputs)]


def design_matrix(inputs: DataSet) -> np.ndarray:
    """Flatten every array to columns, arrays taken in name order."""
    cols = [inputs[name].values.reshape(inputs.n_rows, -1) for name in sorted(inputs)]
    if not cols:
        return np.empty((inputs.n_rows, 0))
    return np.concatenate(cols, axis=1)


def solve_least_squares(X: np.ndarray, y: np.ndarray, ridge_epsilon: float) -> tuple[np.ndarray, float]:
    """Minimise ``|y - Xw - b|^2 + eps |w|^2``; the intercept is not penalised."""
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ Xc + ridge_epsilon * np.eye(X.shape[1])
    try:
        w = np.linalg.solve(gram, Xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesign(f"normal equations are singular: {exc}") from None
    if not np.all(np.isfinite(w)):
        raise DegenerateDesign("normal equations produced non-finite coefficients")
    return w, y_mean - float(x_mean @ w)


@register("ols")
class LinearRegression(Module):
    requires_fit = True
    min_rows = 2

    def __init__(self, ridge_epsilon: float = DEFAULT_RIDGE_EPSILON) -> None:
        super().__init__(ridge_epsilon=ridge_epsilon)
        if not isinstance(ridge_epsilon, (int, float)) or ridge_epsilon < 0:
            raise InvalidParameter(f"ols: ridge_epsilon must be a non-negative number, got {ridge_epsilon!r}")
        self.ridge_epsilon = float(ridge_epsilon)

    def fit_payload(self, inputs, target):
        if target is None or len(target) != 1:
            raise SchemaMismatch("ols: fit needs a target with exactly one array")
        (tname,) = target
        y = target[tname].values.reshape(target.n_rows, -1)
        if y.shape[1] != 1:
            raise SchemaMismatch(f"ols: target must be a single column, got {y.shape[1]}")
        y = y[:, 0]
        X = design_matrix(inputs)
        rows = np.isfinite(y) & np.all(np.isfinite(X), axis=1)
        if rows.sum() < self.min_rows:
            raise InsufficientData(f"ols: {int(rows.sum())} complete rows, need at least {self.min_rows}")
        w, b = solve_least_squares(X[rows], y[rows], self.ridge_epsilon)
        meta = {"schema": _schema(inputs), "target": tname}
        return pack_payload(meta, {"coefficients": w, "intercept": np.array([b])})

    @staticmethod
    def coefficients(state: ModuleState) -> tuple[np.ndarray, float]:
        _, arrays = unpack_payload(state.blob)
        return arrays["coefficients"], float(arrays["intercept"][0])

    def apply(self, state, inputs):
        meta, arrays = unpack_payload(state.blob)
        if _schema(inputs) != meta["schema"]:
            raise SchemaMismatch(f"ols: inputs {_schema(inputs)} differ from fit-time schema {meta['schema']}")
        X = design_matrix(inputs)
        # column-by-column accumulation keeps each row's result independent of batch size
        pred = np.full(inputs.n_rows, arrays["intercept"][0])
        for j, w in enumerate(arrays["coefficients"]):
            pred = pred + X[:, j] * w
        return DataSet([TimeArray("prediction", inputs.index, pred)])


@register("scaler")
class StandardScaler(Module):
    """Population z-scoring per feature; zero-variance features are only centred."""

    requires_fit = True

    def fit_payload(self, inputs, target):
        arrays = {}
        for name in sorted(inputs):
            v = inputs[name].values
            finite = np.isfinite(v)
            count = finite.sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = np.where(finite, v, 0.0).sum(axis=0) / count
                var = np.where(finite, (v - mean) ** 2, 0.0).sum(axis=0) / count
                lo = np.where(finite, v, np.inf).min(axis=0)
                hi = np.where(finite, v, -np.inf).max(axis=0)
            # exact for constant features, where summation noise would otherwise leak in
            constant = lo == hi
            mean = np.where(constant, lo, mean)
            var = np.where(constant, 0.0, var)
            arrays[f"{name}:mean"] = np.asarray(mean)
            arrays[f"{name}:std"] = np.sqrt(np.asarray(var))
        return pack_payload({"schema": _schema(inputs)}, arrays)

    @staticmethod
    def moments(state: ModuleState) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        meta, arrays = unpack_payload(state.blob)
        return {name: (arrays[f"{name}:mean"], arrays[f"{name}:std"]) for name, _ in meta["schema"]}

    def _checked_moments(self, state, inputs):
        meta, _ = unpack_payload(state.blob)
        if _schema(inputs) != meta["schema"]:
            raise SchemaMismatch(f"scaler: inputs {_schema(inputs)} differ from fit-time schema {meta['schema']}")
        return self.moments(state)

    def apply(self, state, inputs):
        moments = self._checked_moments(state, inputs)
        out = {}
        for name, arr in inputs.items():
            mean, std = moments[name]
            centred = arr.values - mean
            scaled = np.where(std > 0, centred / np.where(std > 0, std, 1.0), centred)
            out[name] = TimeArray(name, arr.index, scaled)
        return DataSet(out, inputs.index)

    def inverse(self, state: ModuleState, scaled: DataSet) -> DataSet:
        moments = self._checked_moments(state, scaled)
        out = {}
        for name, arr in scaled.items():
            mean, std = moments[name]
            out[name] = TimeArray(name, arr.index, arr.values * np.where(std > 0, std, 1.0) + mean)
        return DataSet(out, scaled.index)


@register("persistence")
class PersistenceForecast(ElementwiseModule):
    """Predicts the value seen ``horizon`` steps earlier."""

    def __init__(self, horizon: int = 1) -> None:
        super().__init__(horizon=horizon)
        self.horizon = int_param("persistence", "horizon", horizon, minimum=1)

    @property
    def lookback(self):
        return self.horizon

    def check_rows(self, n):
        _check_shift(self.horizon, n)

    def kernel(self, index, values):
        return clock_shift_kernel(values, self.horizon)


def ols_fit(inputs: DataSet, target: TimeArray | DataSet, ridge_epsilon: float = DEFAULT_RIDGE_EPSILON):
    """Fit a linear model; returns ``(module, state)``."""
    if isinstance(target, TimeArray):
        target = DataSet([target])
    model = LinearRegression(ridge_epsilon=ridge_epsilon)
    return model, fit(model, inputs, target)


def ols_transform(model: LinearRegression, state: ModuleState, inputs: DataSet) -> DataSet:
    return transform(model, state, inputs)


def scaler_fit(inputs: DataSet):
    scaler = StandardScaler()
    return scaler, fit(scaler, inputs)


def scaler_transform(scaler: StandardScaler, state: ModuleState, inputs: DataSet) -> DataSet:
    return transform(scaler, state, inputs)


def persistence_forecast(x: TimeArray, horizon: int) -> TimeArray:
    if horizon < 1:
        raise InvalidParameter("persistence: horizon must be >= 1")
    _check_shift(horizon, len(x))
    return TimeArray(x.name, x.index, clock_shift_kernel(x.values, horizon))
