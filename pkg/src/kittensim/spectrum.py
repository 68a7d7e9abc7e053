"""Below-threshold OPO squeezing spectra, phase-noise dephasing, and the joint fit.

The sideband variances of an OPO of decay rate gamma pumped at rate epsilon,
measured with overall efficiency eta, are

    V_x(f) = 1/2 - 2 gamma epsilon eta / ((gamma + epsilon)^2 + (2 pi f)^2)
    V_p(f) = 1/2 + 2 gamma epsilon eta / ((gamma - epsilon)^2 + (2 pi f)^2)

(rates in rad/s, f in Hz, variances in shot-noise units). Gaussian phase noise
of spread sigma mixes the quadratures before projection onto the measured angle:

    V_theta = Vx_s cos^2(theta) + Vp_s sin^2(theta)
    Vx_s = (1 + e^{-2 sigma^2})/2 Vx + (1 - e^{-2 sigma^2})/2 Vp   (and x <-> p)

The joint fit recovers (epsilon, eta, sigma) and the true analysis angles from
variance spectra taken at several nominal angles; gamma and the 0/90 degree
angles stay fixed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError

ANGLE_MATCH_TOL = 1e-9
_FIXED_ANGLES = (0.0, math.pi / 2)


def spectral_variances(f, gamma: float, epsilon: float, eta: float):
    """(V_x, V_p) sideband variances at Fourier frequency f (Hz)."""
    if not 0.0 <= epsilon < gamma:
        raise ValidationError("pump rate must satisfy 0 <= epsilon < gamma")
    if not 0.0 <= eta <= 1.0:
        raise ValidationError("efficiency must lie in [0, 1]")
    f = np.asarray(f, dtype=float)
    omega2 = (2.0 * math.pi * f) ** 2
    num = 2.0 * gamma * epsilon * eta
    vx = 0.5 - num / ((gamma + epsilon) ** 2 + omega2)
    vp = 0.5 + num / ((gamma - epsilon) ** 2 + omega2)
    return vx, vp


def dephased_variance(theta, sigma: float, vx, vp):
    """Measured variance at angle theta under Gaussian phase noise of spread sigma."""
    if sigma < 0.0:
        raise ValidationError("sigma must be >= 0")
    theta = np.asarray(theta, dtype=float)
    damp = math.exp(-2.0 * sigma**2)
    vx_s = 0.5 * (1.0 + damp) * np.asarray(vx) + 0.5 * (1.0 - damp) * np.asarray(vp)
    vp_s = 0.5 * (1.0 + damp) * np.asarray(vp) + 0.5 * (1.0 - damp) * np.asarray(vx)
    return vx_s * np.cos(theta) ** 2 + vp_s * np.sin(theta) ** 2


def _lookup(mapping: dict[float, float], key: float) -> float:
    for k, v in mapping.items():
        if abs(k - key) < ANGLE_MATCH_TOL:
            return v
    raise ValidationError(f"no entry for nominal angle {math.degrees(key):.4f} deg")


@dataclass(frozen=True)
class SpectrumModelParams:
    """Parameters of the dephased OPO spectrum model (rates rad/s, angles radians).

    theta_true maps each nominal analysis angle onto the fitted true angle; the
    0 and 90 degree entries are pinned to their nominal values.
    """

    gamma: float
    epsilon: float
    eta: float
    sigma: float
    theta_true: dict[float, float]

    def __post_init__(self) -> None:
        if self.gamma <= 0.0:
            raise ValidationError("gamma must be positive")
        if not 0.0 <= self.epsilon < self.gamma:
            raise ValidationError("epsilon must lie in [0, gamma)")
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError("eta must lie in [0, 1]")
        if self.sigma < 0.0:
            raise ValidationError("sigma must be >= 0")
        for fixed in _FIXED_ANGLES:
            for k, v in self.theta_true.items():
                if abs(k - fixed) < ANGLE_MATCH_TOL and abs(v - fixed) > ANGLE_MATCH_TOL:
                    raise ValidationError(
                        "0 and 90 degree angles are fixed references and cannot move"
                    )

    def true_angle(self, nominal: float) -> float:
        return _lookup(self.theta_true, nominal)


@dataclass(frozen=True)
class SpectrumData:
    """Variance spectra per nominal angle plus an optional clearance curve.

    freq: increasing Fourier frequencies (Hz); variances: {nominal angle (rad):
    V(f) in shot-noise units}; clearance: multiplicative efficiency roll-off
    c(f) in (0, 1], defaults to 1.
    """

    freq: np.ndarray
    variances: dict[float, np.ndarray]
    clearance: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        freq = np.asarray(self.freq, dtype=float)
        if freq.ndim != 1 or freq.size < 2 or np.any(np.diff(freq) <= 0.0):
            raise ValidationError("frequency grid must be 1-D and strictly increasing")
        var = {float(k): np.asarray(v, dtype=float) for k, v in self.variances.items()}
        for k, v in var.items():
            if v.shape != freq.shape:
                raise ValidationError(f"variance curve at {k} does not match the grid")
            if np.any(v <= 0.0):
                raise ValidationError("variances must be positive")
        clearance = (
            np.ones_like(freq) if self.clearance is None else np.asarray(self.clearance, float)
        )
        if clearance.shape != freq.shape or np.any(clearance < 0.0) or np.any(clearance > 1.0):
            raise ValidationError("clearance must lie in [0, 1] on the frequency grid")
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "clearance", clearance)

    @property
    def nominal_angles(self) -> list[float]:
        return sorted(self.variances.keys())


def model_spectrum(
    params: SpectrumModelParams,
    nominal_angle: float,
    freq,
    clearance=None,
) -> np.ndarray:
    """Model variance curve at one nominal angle over the given frequencies."""
    freq = np.asarray(freq, dtype=float)
    c = np.ones_like(freq) if clearance is None else np.asarray(clearance, dtype=float)
    theta = params.true_angle(nominal_angle)
    out = np.empty_like(freq)
    # clearance scales the effective efficiency per frequency
    for value in np.unique(c):
        mask = c == value
        vx, vp = spectral_variances(freq[mask], params.gamma, params.epsilon, params.eta * value)
        out[mask] = dephased_variance(theta, params.sigma, vx, vp)
    return out


# ---------------------------------------------------------------------------
# Damped least-squares (Gauss-Newton / Levenberg-Marquardt) fitter
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    params: SpectrumModelParams
    cost: float
    iterations: int
    converged: bool
    projected: bool
    per_angle_rms: dict[float, float]


def _fd_jacobian(fun, x: np.ndarray, scales: np.ndarray) -> np.ndarray:
    r0 = fun(x)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        step = 1e-7 * scales[i]
        xp = x.copy()
        xp[i] += step
        jac[:, i] = (fun(xp) - r0) / step
    return jac


def _damped_least_squares(
    fun,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    scales: np.ndarray,
    *,
    cost_tol: float = 1e-10,
    step_tol: float = 1e-8,
    max_outer: int = 500,
) -> tuple[np.ndarray, float, int, bool, bool]:
    """Gauss-Newton with adaptive Marquardt damping and box projection.

    Returns (x, cost, iterations, converged, projected_any).
    """
    x = np.clip(x0, lower, upper)
    r = fun(x)
    cost = float(r @ r)
    lam = 1e-3
    projected_any = False
    converged = False
    iterations = 0
    for iterations in range(1, max_outer + 1):
        jac = _fd_jacobian(fun, x, scales)
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = np.maximum(np.diag(hess), 1e-12)
        accepted = False
        for _ in range(25):
            try:
                delta = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 5.0
                continue
            x_new = np.clip(x + delta, lower, upper)
            if not np.allclose(x_new, x + delta):
                projected_here = True
            else:
                projected_here = False
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                accepted = True
                projected_any = projected_any or projected_here
                break
            lam *= 5.0
        if not accepted:
            converged = True  # damping saturated: stationary within roundoff
            break
        step_size = float(np.max(np.abs((x_new - x) / scales)))
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 3.0, 1e-12)
        if rel_drop < cost_tol or step_size < step_tol:
            converged = True
            break
    return x, cost, iterations, converged, projected_any


SIGMA_SCAN_DEG = (0.0, 10.0, 20.0, 30.0)


def joint_fit(
    data: SpectrumData,
    gamma: float,
    init: SpectrumModelParams | None = None,
    *,
    fit_db: bool = False,
    max_outer: int = 500,
) -> FitResult:
    """Jointly fit (epsilon, eta, sigma) and the movable true angles to all spectra.

    gamma stays fixed; nominal 0 and 90 degree angles are trusted references.
    Residuals are model - data in linear shot-noise units (or in dB when
    fit_db=True). Deterministic given the data and the initial guess; the
    default initialization is epsilon = gamma/4, eta = 0.5 and a coarse scan
    over sigma in {0, 10, 20, 30} degrees.
    """
    angles = data.nominal_angles
    if len(angles) < 2:
        raise ValidationError("joint fit needs spectra at >= 2 nominal angles")
    if data.freq.size < 20:
        raise ValidationError("joint fit needs >= 20 frequency points")
    free_angles = [
        a for a in angles if all(abs(a - fx) > ANGLE_MATCH_TOL for fx in _FIXED_ANGLES)
    ]

    stacked = np.concatenate([data.variances[a] for a in angles])
    if fit_db:
        stacked = 10.0 * np.log10(stacked / 0.5)

    def unpack(x: np.ndarray) -> SpectrumModelParams:
        theta = {a: a for a in angles}
        for i, a in enumerate(free_angles):
            theta[a] = float(x[3 + i])
        return SpectrumModelParams(
            gamma=gamma,
            epsilon=float(x[0]) * gamma,
            eta=float(x[1]),
            sigma=float(x[2]),
            theta_true=theta,
        )

    def residual(x: np.ndarray) -> np.ndarray:
        params = unpack(x)
        model = np.concatenate(
            [model_spectrum(params, a, data.freq, data.clearance) for a in angles]
        )
        if fit_db:
            model = 10.0 * np.log10(np.maximum(model, 1e-12) / 0.5)
        return model - stacked

    if init is not None:
        inits = [
            np.array(
                [init.epsilon / gamma, init.eta, init.sigma]
                + [init.true_angle(a) for a in free_angles]
            )
        ]
    else:
        inits = [
            np.array([0.25, 0.5, math.radians(s)] + [a for a in free_angles])
            for s in SIGMA_SCAN_DEG
        ]
    start = min(inits, key=lambda x: float(residual(x) @ residual(x)))

    n_free = 3 + len(free_angles)
    lower = np.concatenate([[0.0, 0.0, 0.0], np.full(len(free_angles), -np.inf)])
    upper = np.concatenate([[0.999, 1.0, math.pi], np.full(len(free_angles), np.inf)])
    scales = np.concatenate([[0.1, 0.1, 0.1], np.full(len(free_angles), 0.1)])
    if start.size != n_free:
        raise ValidationError("initial guess does not match the free-parameter layout")

    x, cost, iters, converged, projected = _damped_least_squares(
        residual, start, lower, upper, scales, max_outer=max_outer
    )
    # non-convergence returns the best-so-far result flagged, never raises
    params = unpack(x)
    # report true angles folded into [0, 180) degrees
    folded = {a: math.fmod(t, math.pi) + (math.pi if math.fmod(t, math.pi) < 0 else 0)
              for a, t in params.theta_true.items()}
    params = replace(params, theta_true=folded)

    res = residual(x)
    per_angle = {}
    nf = data.freq.size
    for i, a in enumerate(angles):
        seg = res[i * nf : (i + 1) * nf]
        per_angle[a] = float(np.sqrt(np.mean(seg**2)))
    return FitResult(
        params=params,
        cost=cost,
        iterations=iters,
        converged=converged,
        projected=projected,
        per_angle_rms=per_angle,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_spectrum_csv(data: SpectrumData, path) -> None:
    from .util import atomic_write_text

    lines = ["freq_hz,angle_deg,variance_snu"]
    for angle in data.nominal_angles:
        deg = math.degrees(angle)
        for f, v in zip(data.freq, data.variances[angle]):
            lines.append(f"{repr(float(f))},{repr(float(deg))},{repr(float(v))}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_spectrum_csv(path, clearance_path=None) -> SpectrumData:
    path = Path(path)
    by_angle: dict[float, list[tuple[float, float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "freq_hz",
            "angle_deg",
            "variance_snu",
        ]:
            raise ValidationError(f"{path}: expected header 'freq_hz,angle_deg,variance_snu'")
        for row in reader:
            if not row:
                continue
            try:
                f, deg, v = float(row[0]), float(row[1]), float(row[2])
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}: malformed row {row!r}") from exc
            by_angle.setdefault(deg, []).append((f, v))
    if not by_angle:
        raise ValidationError(f"{path}: no spectrum rows")
    freq = None
    variances = {}
    for deg, rows in by_angle.items():
        rows.sort()
        f = np.asarray([r[0] for r in rows])
        if freq is None:
            freq = f
        elif f.shape != freq.shape or not np.allclose(f, freq):
            raise ValidationError(f"{path}: angle {deg} uses a different frequency grid")
        variances[math.radians(deg)] = np.asarray([r[1] for r in rows])

    clearance = None
    if clearance_path is not None:
        cf, cv = [], []
        with open(clearance_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["freq_hz", "clearance"]:
                raise ValidationError(f"{clearance_path}: expected header 'freq_hz,clearance'")
            for row in reader:
                if not row:
                    continue
                cf.append(float(row[0]))
                cv.append(float(row[1]))
        order = np.argsort(cf)
        cf = np.asarray(cf)[order]
        cv = np.asarray(cv)[order]
        if cf.shape != freq.shape or not np.allclose(cf, freq):
            raise ValidationError("clearance grid does not match the spectrum grid")
        clearance = cv
    return SpectrumData(freq=freq, variances=variances, clearance=clearance)


def save_clearance_csv(freq: np.ndarray, clearance: np.ndarray, path) -> None:
    from .util import atomic_write_text

    lines = ["freq_hz,clearance"]
    lines.extend(f"{repr(float(f))},{repr(float(c))}" for f, c in zip(freq, clearance))
    atomic_write_text(path, "\n".join(lines) + "\n")


def fit_report_json(result: FitResult) -> str:
    payload = {
        "gamma_hz": result.params.gamma / (2.0 * math.pi),
        "epsilon_hz": result.params.epsilon / (2.0 * math.pi),
        "eta": result.params.eta,
        "sigma_deg": math.degrees(result.params.sigma),
        "theta_true_deg": {
            f"{math.degrees(k):.6g}": math.degrees(v)
            for k, v in sorted(result.params.theta_true.items())
        },
        "per_angle_rms_snu": {
            f"{math.degrees(k):.6g}": v for k, v in sorted(result.per_angle_rms.items())
        },
        "cost": result.cost,
        "iterations": result.iterations,
        "converged": result.converged,
        "projected": result.projected,
    }
    return json.dumps(payload, indent=2)
