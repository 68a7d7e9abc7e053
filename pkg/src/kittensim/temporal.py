"""Temporal-mode machinery: the heralded wavepacket, extraction, and trace synthesis.

The herald-conditioned signal occupies a two-sided exponential mode shaped by the
source linewidth gamma and the trigger-filter linewidth kappa,

    f(t) = exp(-gamma |t - t0|)/gamma - exp(-kappa |t - t0|)/kappa,

discretized on the trace grid and L2-normalized so that extracting white noise of
per-sample variance s^2 returns variance s^2 (vacuum -> 1/2 in shot-noise units).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericsError, ValidationError

TAIL_FRACTION_TOL = 1e-3
_MIN_ENSEMBLE = 1000


@dataclass(frozen=True)
class TimeTrace:
    """One recorded homodyne trace: uniformly sampled values plus trigger position."""

    sample_rate: float
    values: np.ndarray
    trigger_index: int = 0

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValidationError("trace values must be a non-empty 1-D array")
        if self.sample_rate <= 0.0:
            raise ValidationError("sample_rate must be positive")
        if not 0 <= self.trigger_index < vals.size:
            raise ValidationError("trigger_index outside the trace")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ModeFunction:
    """Unit-norm discrete temporal mode aligned with a trace grid."""

    gamma: float
    kappa: float
    t0: float
    sample_rate: float
    t_start: float
    weights: np.ndarray
    tail_fraction: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.weights.size) / self.sample_rate


def mode_function_eval(t, gamma: float, kappa: float, t0: float = 0.0):
    """The un-normalized two-sided exponential mode; peak value 1/gamma - 1/kappa."""
    if not (gamma > 0.0 and kappa > gamma):
        raise ValidationError("mode function needs kappa > gamma > 0")
    tau = np.abs(np.asarray(t, dtype=float) - t0)
    val = np.exp(-gamma * tau) / gamma - np.exp(-kappa * tau) / kappa
    return val if val.ndim else float(val)


def _tail_mass(gamma: float, kappa: float, tau: float) -> float:
    """int_tau^inf f(t0+s)^2 ds in closed form."""
    return (
        math.exp(-2.0 * gamma * tau) / (2.0 * gamma**3)
        - 2.0 * math.exp(-(gamma + kappa) * tau) / ((gamma + kappa) * gamma * kappa)
        + math.exp(-2.0 * kappa * tau) / (2.0 * kappa**3)
    )


def build_mode(
    gamma: float,
    kappa: float,
    t0: float,
    sample_rate: float,
    window: tuple[float, float],
) -> ModeFunction:
    """Discretize and L2-normalize the mode on window = (t_start, t_end).

    Raises NumericsError when more than 1e-3 of the mode's continuous L2 mass
    falls outside the window (window too short or t0 badly placed).
    """
    t_start, t_end = window
    if not t_end > t_start:
        raise ValidationError("window must satisfy t_end > t_start")
    if sample_rate <= 0.0:
        raise ValidationError("sample_rate must be positive")
    if not t_start <= t0 <= t_end:
        raise ValidationError("t0 must lie inside the window")
    n = int(round((t_end - t_start) * sample_rate))
    if n < 8:
        raise ValidationError("window shorter than 8 samples")
    total = 2.0 * _tail_mass(gamma, kappa, 0.0)
    tail = _tail_mass(gamma, kappa, t0 - t_start) + _tail_mass(gamma, kappa, t_end - t0)
    tail_fraction = tail / total
    if tail_fraction > TAIL_FRACTION_TOL:
        raise NumericsError(
            f"window keeps only {1 - tail_fraction:.6f} of the mode's L2 mass "
            f"(tail fraction {tail_fraction:.2e} > {TAIL_FRACTION_TOL:.0e})"
        )
    t = t_start + np.arange(n) / sample_rate
    w = mode_function_eval(t, gamma, kappa, t0)
    w = w / np.linalg.norm(w)
    return ModeFunction(
        gamma=gamma,
        kappa=kappa,
        t0=t0,
        sample_rate=sample_rate,
        t_start=t_start,
        weights=w,
        tail_fraction=tail_fraction,
    )


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def _trace_values(trace) -> tuple[np.ndarray, float | None]:
    if isinstance(trace, TimeTrace):
        return trace.values, trace.sample_rate
    return np.asarray(trace, dtype=float), None


def extract_quadrature(trace, mode: ModeFunction) -> float:
    """Project a single trace onto the mode: q = sum_i w_i v_i."""
    values, rate = _trace_values(trace)
    if values.shape != mode.weights.shape:
        raise ValidationError(
            f"trace length {values.shape} does not match mode length {mode.weights.shape}"
        )
    if rate is not None and not math.isclose(rate, mode.sample_rate, rel_tol=1e-9):
        raise ValidationError("trace and mode sample rates differ")
    return float(mode.weights @ values)


def extract_ensemble(values: np.ndarray, mode: ModeFunction) -> np.ndarray:
    """Project every row of a (traces x samples) array onto the mode."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != mode.weights.size:
        raise ValidationError("ensemble must be 2-D with rows matching the mode length")
    return values @ mode.weights


def shot_noise_scale(vacuum_values: np.ndarray, mode: ModeFunction) -> tuple[float, float]:
    """Calibration factor mapping raw extracted units to shot-noise units.

    Dividing extracted values by the returned scale gives vacuum variance 1/2.
    Returns (scale, standard_error); requires >= 1000 vacuum traces.
    """
    q = extract_ensemble(vacuum_values, mode)
    if q.size < _MIN_ENSEMBLE:
        raise ValidationError(f"need >= {_MIN_ENSEMBLE} vacuum traces, got {q.size}")
    v = float(np.var(q, ddof=1))
    if v <= 0.0:
        raise NumericsError("vacuum ensemble has zero variance")
    scale = math.sqrt(2.0 * v)
    # delta method on the sampling error of the variance
    stderr = scale / math.sqrt(2.0 * (q.size - 1))
    return scale, stderr


# ---------------------------------------------------------------------------
# Data-driven mode estimation
# ---------------------------------------------------------------------------

def _second_moment(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values.T @ values / values.shape[0]


def principal_mode(signal_values: np.ndarray, vacuum_values: np.ndarray) -> np.ndarray:
    """Dominant temporal mode of the vacuum-subtracted trace autocovariance.

    Both inputs are (traces x samples) arrays on the same grid; traces are
    zero-mean, so the autocovariance is taken as the raw second moment. The
    top eigenvector (by |eigenvalue|) of C_signal - C_vacuum is returned with
    its largest-magnitude tap made positive. Raises NumericsError when no
    eigenvalue stands above the vacuum sampling noise or when the top two are
    degenerate.
    """
    signal_values = np.asarray(signal_values, dtype=float)
    vacuum_values = np.asarray(vacuum_values, dtype=float)
    if signal_values.ndim != 2 or vacuum_values.ndim != 2:
        raise ValidationError("ensembles must be 2-D arrays (traces x samples)")
    if signal_values.shape[1] != vacuum_values.shape[1]:
        raise ValidationError("signal and vacuum ensembles use different grids")
    m_sig, m_vac = signal_values.shape[0], vacuum_values.shape[0]
    if min(m_sig, m_vac) < _MIN_ENSEMBLE:
        raise ValidationError(f"need >= {_MIN_ENSEMBLE} traces in each ensemble")

    diff = _second_moment(signal_values) - _second_moment(vacuum_values)
    evals, evecs = np.linalg.eigh(diff)
    order = np.argsort(np.abs(evals))[::-1]
    top, runner = evals[order[0]], evals[order[1]]

    # Noise floor: spectral radius of the split-half vacuum covariance difference,
    # rescaled from the half-ensemble sampling variance to the signal-vs-vacuum one.
    half = m_vac // 2
    floor_raw = np.abs(
        np.linalg.eigvalsh(
            _second_moment(vacuum_values[:half]) - _second_moment(vacuum_values[half:2 * half])
        )
    ).max()
    rescale = math.sqrt((1.0 / m_sig + 1.0 / m_vac) * half / 2.0)
    floor = floor_raw * rescale
    if abs(top) < 3.0 * floor:
        raise NumericsError(
            f"no dominant mode: top excess eigenvalue {top:.3e} is within the "
            f"vacuum sampling floor {floor:.3e}"
        )
    if abs(top) - abs(runner) < 1e-6 * abs(top):
        raise NumericsError("top two excess eigenvalues are degenerate")

    mode = evecs[:, order[0]]
    mode = mode / np.linalg.norm(mode)
    peak = int(np.argmax(np.abs(mode)))
    if mode[peak] < 0.0:
        mode = -mode
    return mode


# ---------------------------------------------------------------------------
# Stationary Gaussian trace synthesis
# ---------------------------------------------------------------------------

def synthesize_gaussian_traces(
    spectrum,
    duration: float,
    sample_rate: float,
    count: int,
    seed: int,
    *,
    chunk: int = 2048,
) -> np.ndarray:
    """Synthesize stationary Gaussian traces with a target one-sided spectrum.

    `spectrum` is either a vectorized callable V(f) in shot-noise units (flat
    V = 1/2 is vacuum) or an array on the rfft frequency grid. Each Fourier bin
    receives an independent complex Gaussian amplitude with E|Z_k|^2 = N V_k,
    which makes the ensemble periodogram |rfft(x)|^2 / N an unbiased estimate
    of V. Returns a (count x N) array; deterministic for a fixed seed.
    """
    if duration <= 0.0 or sample_rate <= 0.0:
        raise ValidationError("duration and sample_rate must be positive")
    if count < 1:
        raise ValidationError("count must be >= 1")
    n = int(round(duration * sample_rate))
    if n < 8:
        raise ValidationError("trace shorter than 8 samples")
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    if callable(spectrum):
        v = np.asarray(spectrum(freqs), dtype=float)
    else:
        v = np.asarray(spectrum, dtype=float)
    if v.shape != freqs.shape:
        raise ValidationError(
            f"spectrum array length {v.shape} does not match rfft grid {freqs.shape}"
        )
    if np.any(v < 0.0) or not np.all(np.isfinite(v)):
        raise ValidationError("spectrum must be finite and non-negative")

    rng = np.random.default_rng(seed)
    amp = np.sqrt(n * v)
    nyquist = n % 2 == 0
    out = np.empty((count, n))
    for start in range(0, count, chunk):
        stop = min(start + chunk, count)
        block = stop - start
        re = rng.standard_normal((block, freqs.size))
        im = rng.standard_normal((block, freqs.size))
        z = (re + 1j * im) * (amp / math.sqrt(2.0))
        z[:, 0] = re[:, 0] * amp[0]  # DC bin is real
        if nyquist:
            z[:, -1] = re[:, -1] * amp[-1]
        out[start:stop] = np.fft.irfft(z, n=n, axis=1)
    return out


def periodogram(values: np.ndarray, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-averaged one-sided periodogram in the synthesis normalization."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValidationError("periodogram expects a 2-D ensemble")
    n = values.shape[1]
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    power = (np.abs(np.fft.rfft(values, axis=1)) ** 2).mean(axis=0) / n
    return freqs, power


def mode_variance_from_spectrum(
    mode: ModeFunction, spectrum, *, oversample: int = 8
) -> float:
    """Frequency-domain prediction of the extracted-quadrature variance.

    Var(q) = (2/fs) int_0^{fs/2} V(f) |W(f)|^2 df with W the discrete-time
    Fourier transform of the unit-norm mode taps; evaluated by zero-padded FFT
    and trapezoidal integration.
    """
    w = mode.weights
    n_pad = oversample * w.size
    spec_w = np.abs(np.fft.rfft(w, n=n_pad)) ** 2
    freqs = np.fft.rfftfreq(n_pad, d=1.0 / mode.sample_rate)
    v = np.asarray(spectrum(freqs), dtype=float) if callable(spectrum) else np.asarray(spectrum)
    if v.shape != freqs.shape:
        raise ValidationError("spectrum grid mismatch in mode_variance_from_spectrum")
    integrand = v * spec_w
    return float(
        (2.0 / mode.sample_rate) * np.trapezoid(integrand, dx=freqs[1] - freqs[0])
    )


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------

def save_trace_csv(trace: TimeTrace, path) -> None:
    from .util import atomic_write_text

    lines = [
        f"# sample_rate_hz={repr(float(trace.sample_rate))}",
        f"# trigger_index={trace.trigger_index}",
        "value",
    ]
    lines.extend(repr(float(v)) for v in trace.values)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_trace_csv(path) -> TimeTrace:
    path = Path(path)
    sample_rate = None
    trigger_index = 0
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                key = key.strip()
                if key == "sample_rate_hz":
                    sample_rate = float(val)
                elif key == "trigger_index":
                    trigger_index = int(val)
                continue
            if line == "value":
                continue
            try:
                values.append(float(line))
            except ValueError as exc:
                raise ValidationError(f"{path}: malformed trace line {line!r}") from exc
    if sample_rate is None:
        raise ValidationError(f"{path}: missing '# sample_rate_hz=' metadata")
    return TimeTrace(
        sample_rate=sample_rate, values=np.asarray(values), trigger_index=trigger_index
    )


def load_trace_dir(directory) -> tuple[np.ndarray, float, np.ndarray]:
    """Load every *.csv trace in a directory (sorted) into one ensemble array."""
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ValidationError(f"no trace files found in {directory}")
    traces = [load_trace_csv(f) for f in files]
    rate = traces[0].sample_rate
    length = traces[0].values.size
    for t, f in zip(traces, files):
        if not math.isclose(t.sample_rate, rate, rel_tol=1e-9) or t.values.size != length:
            raise ValidationError(f"{f}: trace grid differs from the rest of the ensemble")
    values = np.stack([t.values for t in traces])
    triggers = np.asarray([t.trigger_index for t in traces])
    return values, rate, triggers
