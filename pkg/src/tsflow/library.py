"""Fit-free time-series transforms.

Each operation exists in three layers:

* a kernel on raw ``float64`` arrays (time on axis 0) that never raises on
  short input, so online warm-up windows reproduce batch warm-up output;
* a public function on :class:`TimeArray` that enforces the preconditions;
* a registered :class:`Module` that maps the kernel over every array of its
  input DataSet.

Undefined leading outputs are NaN and the time index is kept, except for
``resample`` and ``rmse``.
"""

from __future__ import annotations

import re
from collections.abc import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DataSet, TimeArray
from .errors import (
    AllMissing,
    IncompatibleStep,
    InvalidParameter,
    NoFinitePairs,
    NonEquidistantInput,
    OrderTooLarge,
    PeriodTooLarge,
    SampleTooLarge,
    SchemaMismatch,
    ShiftTooLarge,
    WindowTooLarge,
)
from .module import Module, ModuleState, choice_param, int_param, register

SIGN_TOLERANCE = 1e-12

CALENDAR_FEATURES = ("year", "month", "day", "weekday", "hour", "is_weekend", "is_holiday")

HOLIDAY_TABLES: dict[str, tuple[tuple[int, int], ...]] = {
    "default": ((1, 1), (12, 25), (12, 26)),
}

_DURATION_UNITS = {"s": 1, "sec": 1, "min": 60, "m": 60, "h": 3600, "d": 86400, "w": 604800}
_DURATION_RE = re.compile(r"^\s*(\d+)\s*([a-z]*)\s*$")


def parse_duration(value) -> int:
    """Seconds from an int or a string like ``"2h"``, ``"15min"``, ``"1d"``."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        seconds = int(value)
    else:
        m = _DURATION_RE.match(str(value).lower())
        if not m or (m.group(2) or "s") not in _DURATION_UNITS:
            raise InvalidParameter(f"cannot parse duration {value!r}")
        seconds = int(m.group(1)) * _DURATION_UNITS[m.group(2) or "s"]
    if seconds <= 0:
        raise InvalidParameter(f"duration must be positive, got {value!r}")
    return seconds


def register_holidays(name: str, dates: Iterable[tuple[int, int]]) -> None:
    """Add a fixed-date (month, day) holiday table usable as ``holidays=name``."""
    HOLIDAY_TABLES[name] = tuple((int(m), int(d)) for m, d in dates)


def _holiday_table(spec: str) -> tuple[tuple[int, int], ...]:
    if spec in HOLIDAY_TABLES:
        return HOLIDAY_TABLES[spec]
    dates = []
    for part in filter(None, (p.strip() for p in spec.split(","))):
        try:
            month, day = (int(x) for x in part.split("-"))
        except ValueError:
            raise InvalidParameter(f"calendar: bad holiday {part!r}; expected MM-DD or a table name") from None
        dates.append((month, day))
    return tuple(dates)


# -- kernels ------------------------------------------------------------------


def _nan_like(v: np.ndarray) -> np.ndarray:
    return np.full(v.shape, np.nan)


def calendar_kernel(index: np.ndarray, holidays: tuple[tuple[int, int], ...]) -> dict[str, np.ndarray]:
    t = index.astype("datetime64[s]")
    days = index // 86400
    year = t.astype("datetime64[Y]").astype(np.int64) + 1970
    month_start = t.astype("datetime64[M]")
    month = month_start.astype(np.int64) % 12 + 1
    day = (t.astype("datetime64[D]") - month_start.astype("datetime64[D]")).astype(np.int64) + 1
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    hour = (index % 86400) // 3600
    md = month * 100 + day
    holiday = np.isin(md, [m * 100 + d for m, d in holidays])
    return {
        "year": year.astype(np.float64),
        "month": month.astype(np.float64),
        "day": day.astype(np.float64),
        "weekday": weekday.astype(np.float64),
        "hour": hour.astype(np.float64),
        "is_weekend": (weekday >= 5).astype(np.float64),
        "is_holiday": holiday.astype(np.float64),
    }


def change_direction_kernel(v: np.ndarray) -> np.ndarray:
    out = _nan_like(v)
    if v.shape[0] > 1:
        d = v[1:] - v[:-1]
        s = np.sign(d)
        s[np.abs(d) < SIGN_TOLERANCE] = 0.0
        out[1:] = s
    return out


def clock_shift_kernel(v: np.ndarray, k: int) -> np.ndarray:
    out = _nan_like(v)
    n = v.shape[0]
    if k == 0:
        out[:] = v
    elif 0 < k < n:
        out[k:] = v[:-k]
    elif -n < k < 0:
        out[:k] = v[-k:]
    return out


def differentiate_kernel(v: np.ndarray, order: int) -> np.ndarray:
    out = np.array(v, dtype=np.float64)
    for _ in range(order):
        nxt = _nan_like(out)
        nxt[1:] = out[1:] - out[:-1]
        out = nxt
    return out


def interpolate_kernel(index: np.ndarray, v: np.ndarray) -> np.ndarray:
    flat = v.reshape(v.shape[0], -1)
    out = np.empty_like(flat)
    x = index.astype(np.float64)
    for j in range(flat.shape[1]):
        col = flat[:, j]
        ok = np.isfinite(col)
        if not ok.any():
            raise AllMissing("linear interpolation needs at least one finite value")
        filled = np.interp(x, x[ok], col[ok])
        filled[ok] = col[ok]
        out[:, j] = filled
    return out.reshape(v.shape)


def missing_kernel(v: np.ndarray) -> np.ndarray:
    return np.isnan(v).astype(np.float64)


def rolling_mean_kernel(v: np.ndarray, window: int) -> np.ndarray:
    out = _nan_like(v)
    if window <= v.shape[0]:
        win = sliding_window_view(v, window, axis=0)
        ok = np.isfinite(win)
        count = ok.sum(axis=-1)
        total = np.where(ok, win, 0.0).sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        out[window - 1 :] = means
    return out


def sample_kernel(v: np.ndarray, size: int, pad: float = 0.0) -> np.ndarray:
    head = np.full((size - 1,) + v.shape[1:], pad)
    padded = np.concatenate([head, v], axis=0)
    return np.ascontiguousarray(sliding_window_view(padded, size, axis=0))


def trend_kernel(v: np.ndarray, steps: int, repetitions: int) -> np.ndarray:
    cols = [clock_shift_kernel(v, (i + 1) * steps) for i in range(repetitions)]
    return np.stack(cols, axis=-1)


def rmse_kernel(y: np.ndarray, y_hat: np.ndarray) -> float:
    if y.shape != y_hat.shape:
        raise SchemaMismatch(f"rmse: shapes {y.shape} and {y_hat.shape} differ")
    ok = np.isfinite(y) & np.isfinite(y_hat)
    if not ok.any():
        raise NoFinitePairs("rmse: no pair of finite values")
    err = (y[ok] - y_hat[ok]) ** 2
    return float(np.sqrt(err.mean()))


def equidistant_step(index: np.ndarray) -> int:
    if index.shape[0] < 2:
        raise NonEquidistantInput("resampling needs at least two timestamps")
    d = np.diff(index)
    if not np.all(d == d[0]):
        raise NonEquidistantInput("resampling needs an equidistant time index")
    return int(d[0])


def resample_kernel(
    index: np.ndarray, v: np.ndarray, target: int, agg: str = "mean", fill: str = "forward"
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(new_index, new_values)``.

    Downsampling buckets rows into ``[t, t + target)``. Upsampling treats each
    input row as covering ``[t, t + step)``, so the output spans ``len * factor``
    rows; ``linear`` holds the last value past the final input row.
    """
    step = equidistant_step(index)
    t0 = int(index[0])
    n = index.shape[0]
    if target == step:
        return index.copy(), v.copy()
    if target % step == 0:
        m = target // step
        n_out = (n - 1) // m + 1
        pad = n_out * m - n
        padded = np.concatenate([v, np.full((pad,) + v.shape[1:], np.nan)], axis=0)
        buckets = padded.reshape((n_out, m) + v.shape[1:])
        ok = np.isfinite(buckets)
        count = ok.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            if agg == "mean":
                vals = np.where(ok, buckets, 0.0).sum(axis=1) / np.maximum(count, 1)
            elif agg == "sum":
                vals = np.where(ok, buckets, 0.0).sum(axis=1)
            elif agg == "min":
                vals = np.where(ok, buckets, np.inf).min(axis=1)
            else:
                vals = np.where(ok, buckets, -np.inf).max(axis=1)
        vals = np.where(count > 0, vals, np.nan)
        return t0 + target * np.arange(n_out, dtype=np.int64), vals
    if step % target == 0:
        m = step // target
        j = np.arange(n * m)
        base = j // m
        vals = v[base].copy()
        if fill == "linear":
            frac = (j % m) / m
            nxt = np.minimum(base + 1, n - 1)
            inner = (frac > 0) & (base + 1 < n)
            extra = (1,) * (v.ndim - 1)
            f = frac.reshape((-1,) + extra)
            lin = v[base] + (v[nxt] - v[base]) * f
            vals[inner] = lin[inner]
        return t0 + target * j.astype(np.int64), vals
    raise IncompatibleStep(f"target step {target}s is neither a multiple nor a divisor of {step}s")


# -- public functions on TimeArray ---------------------------------------------


def calendar_extraction(x: TimeArray, holidays: str = "default") -> DataSet:
    feats = calendar_kernel(x.index, _holiday_table(holidays))
    return DataSet({k: TimeArray(k, x.index, v) for k, v in feats.items()}, x.index)


def change_direction(x: TimeArray) -> TimeArray:
    return TimeArray(x.name, x.index, change_direction_kernel(x.values))


def _check_shift(k: int, n: int) -> None:
    if abs(k) >= n:
        raise ShiftTooLarge(f"shift of {k} steps needs more than {abs(k)} rows, got {n}")


def clock_shift(x: TimeArray, k: int) -> TimeArray:
    _check_shift(k, len(x))
    return TimeArray(x.name, x.index, clock_shift_kernel(x.values, k))


def _check_order(n: int, rows: int) -> None:
    if rows <= n:
        raise OrderTooLarge(f"difference of order {n} needs more than {n} rows, got {rows}")


def differentiate(x: TimeArray, n: int = 1) -> TimeArray:
    if n < 1:
        raise InvalidParameter("differentiate: order must be >= 1")
    _check_order(n, len(x))
    return TimeArray(x.name, x.index, differentiate_kernel(x.values, n))


def linear_interpolate(x: TimeArray) -> TimeArray:
    return TimeArray(x.name, x.index, interpolate_kernel(x.index, x.values))


def detect_missing(x: TimeArray) -> TimeArray:
    return TimeArray(x.name, x.index, missing_kernel(x.values))


def resample(x: TimeArray, target_step, agg: str = "mean", fill: str = "forward") -> TimeArray:
    idx, vals = resample_kernel(x.index, x.values, parse_duration(target_step), agg, fill)
    return TimeArray(x.name, idx, vals)


def _check_window(w: int, n: int) -> None:
    if w > n:
        raise WindowTooLarge(f"window of {w} exceeds series length {n}")


def rolling_mean(x: TimeArray, window: int) -> TimeArray:
    _check_window(window, len(x))
    return TimeArray(x.name, x.index, rolling_mean_kernel(x.values, window))


def rmse(y: TimeArray, y_hat: TimeArray, name: str = "rmse") -> TimeArray:
    value = rmse_kernel(y.values, y_hat.values)
    return TimeArray(name, y.index[-1:], np.array([value]))


def _check_sample(k: int, n: int) -> None:
    if k > n:
        raise SampleTooLarge(f"sample size {k} exceeds series length {n}")


def sample(x: TimeArray, k: int, pad: str = "zero") -> TimeArray:
    _check_sample(k, len(x))
    return TimeArray(x.name, x.index, sample_kernel(x.values, k, _PAD[pad]))


def _check_period(steps: int, reps: int, n: int) -> None:
    if steps * reps >= n:
        raise PeriodTooLarge(f"period {steps}x{reps} needs more than {steps * reps} rows, got {n}")


def extract_trend(x: TimeArray, steps: int, repetitions: int) -> TimeArray:
    _check_period(steps, repetitions, len(x))
    return TimeArray(x.name, x.index, trend_kernel(x.values, steps, repetitions))


_PAD = {"zero": 0.0, "nan": np.nan}


# -- registered modules -------------------------------------------------------


class ElementwiseModule(Module):
    """Applies ``kernel`` to every array of the input independently."""

    def kernel(self, index: np.ndarray, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check_rows(self, n: int) -> None:
        pass

    def check(self, inputs: DataSet) -> None:
        self.check_rows(inputs.n_rows)

    def apply(self, state: ModuleState, inputs: DataSet) -> DataSet:
        return DataSet(
            {name: TimeArray(name, arr.index, self.kernel(arr.index, arr.values)) for name, arr in inputs.items()},
            inputs.index,
        )


@register("calendar")
class CalendarExtraction(Module):
    def __init__(self, holidays: str = "default") -> None:
        super().__init__(holidays=holidays)
        self.table = _holiday_table(str(holidays))

    def apply(self, state, inputs):
        feats = calendar_kernel(inputs.index, self.table)
        return DataSet({k: TimeArray(k, inputs.index, v) for k, v in feats.items()}, inputs.index)


@register("change_direction")
class ChangeDirection(ElementwiseModule):
    @property
    def lookback(self):
        return 1

    def kernel(self, index, values):
        return change_direction_kernel(values)


@register("clock_shift")
class ClockShift(ElementwiseModule):
    def __init__(self, shift: int = 1) -> None:
        super().__init__(shift=shift)
        self.shift = int_param("clock_shift", "shift", shift)

    @property
    def lookback(self):
        # a negative shift reads the future; no trailing window can reproduce it
        return self.shift if self.shift >= 0 else None

    def check_rows(self, n):
        _check_shift(self.shift, n)

    def kernel(self, index, values):
        return clock_shift_kernel(values, self.shift)


@register("differentiate")
class Differentiate(ElementwiseModule):
    def __init__(self, order: int = 1) -> None:
        super().__init__(order=order)
        self.order = int_param("differentiate", "order", order, minimum=1)

    @property
    def lookback(self):
        return self.order

    def check_rows(self, n):
        _check_order(self.order, n)

    def kernel(self, index, values):
        return differentiate_kernel(values, self.order)


@register("interpolate")
class LinearInterpolator(ElementwiseModule):
    @property
    def lookback(self):
        return None

    def kernel(self, index, values):
        return interpolate_kernel(index, values)


@register("missing_mask")
class MissingValueDetector(ElementwiseModule):
    def kernel(self, index, values):
        return missing_kernel(values)


@register("rolling_mean")
class RollingMean(ElementwiseModule):
    def __init__(self, window: int = 3) -> None:
        super().__init__(window=window)
        self.window = int_param("rolling_mean", "window", window, minimum=1)

    @property
    def lookback(self):
        return self.window - 1

    def check_rows(self, n):
        _check_window(self.window, n)

    def kernel(self, index, values):
        return rolling_mean_kernel(values, self.window)


@register("sampler")
class Sampler(ElementwiseModule):
    def __init__(self, size: int = 2, pad: str = "zero") -> None:
        super().__init__(size=size, pad=pad)
        self.size = int_param("sampler", "size", size, minimum=1)
        self.pad = _PAD[choice_param("sampler", "pad", pad, tuple(_PAD))]

    @property
    def lookback(self):
        return self.size - 1

    def check_rows(self, n):
        _check_sample(self.size, n)

    def kernel(self, index, values):
        return sample_kernel(values, self.size, self.pad)


@register("trend")
class TrendExtraction(ElementwiseModule):
    def __init__(self, steps: int = 24, repetitions: int = 1) -> None:
        super().__init__(steps=steps, repetitions=repetitions)
        self.steps = int_param("trend", "steps", steps, minimum=1)
        self.repetitions = int_param("trend", "repetitions", repetitions, minimum=1)

    @property
    def lookback(self):
        return self.steps * self.repetitions

    def check_rows(self, n):
        _check_period(self.steps, self.repetitions, n)

    def kernel(self, index, values):
        return trend_kernel(values, self.steps, self.repetitions)


@register("resample")
class Resampler(Module):
    resamples = True

    def __init__(self, step="1h", agg: str = "mean", fill: str = "forward") -> None:
        super().__init__(step=step, agg=agg, fill=fill)
        self.target = parse_duration(step)
        self.agg = choice_param("resample", "agg", agg, ("mean", "sum", "min", "max"))
        self.fill = choice_param("resample", "fill", fill, ("forward", "linear"))

    @property
    def lookback(self):
        return None

    def apply(self, state, inputs):
        out = {}
        new_index = None
        for name, arr in inputs.items():
            new_index, vals = resample_kernel(inputs.index, arr.values, self.target, self.agg, self.fill)
            out[name] = TimeArray(name, new_index, vals)
        if new_index is None:
            new_index, _ = resample_kernel(inputs.index, np.zeros(inputs.n_rows), self.target)
        return DataSet(out, new_index)


@register("rmse")
class RmseCalculator(Module):
    """Scores input ``y_hat`` against ``y``; emits one row at the last timestamp."""

    @property
    def lookback(self):
        return None

    def check(self, inputs):
        missing = [n for n in ("y", "y_hat") if n not in inputs]
        if missing:
            raise SchemaMismatch(f"rmse: missing inputs {missing}")

    def apply(self, state, inputs):
        self.check(inputs)
        return DataSet([rmse(inputs["y"], inputs["y_hat"])])
