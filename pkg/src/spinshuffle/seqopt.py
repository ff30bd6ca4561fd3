"""Scan-parameter selection.

Fisher information and Cramer-Rao bounds for the echo-train experiment,
flip-angle optimization under an RF power budget, min-max selection over a
tissue grid, the closed-form optimal contrast time for two species, and a
prospective flip design that steers the echo amplitudes onto a target level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arrayio import write_csv
from .spinsim import (EpgState, SequenceParams, TissueParams,
                      apply_gradient_shift, apply_relaxation, apply_rf,
                      required_max_order, signal_jacobian,
                      simulate_fse_ensemble)


class NonIdentifiableError(RuntimeError):
    """Fisher information is singular for the requested parameters."""


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray
    param_order: tuple
    sigma: float


@dataclass(frozen=True)
class PowerBudget:
    """Cap on the train's RF energy proxy, sum of flip angles squared (rad^2)."""

    limit: float

    def __post_init__(self):
        if not self.limit > 0:
            raise ValueError("power limit must be positive")

    @classmethod
    def from_constant_flip(cls, flip_deg: float, n_echoes: int) -> "PowerBudget":
        return cls(limit=n_echoes * math.radians(flip_deg) ** 2)


def train_power(flips_deg) -> float:
    """Sum of squared flip angles in rad^2."""
    return float(np.sum(np.radians(np.asarray(flips_deg, float)) ** 2))


def fisher_info(tissue: TissueParams, seq: SequenceParams, sigma: float,
                params=("rho", "t2")) -> FisherInfo:
    """Fisher information I = (2/sigma^2) Re(J^H J) for circular Gaussian noise.

    J holds the signal sensitivities to the selected parameters. The factor
    of two follows the complex circularly-symmetric noise convention with
    total per-sample variance sigma^2.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    j = signal_jacobian(tissue, seq, wrt=params)
    info = (2.0 / sigma ** 2) * (j.conj().T @ j).real
    info = 0.5 * (info + info.T)
    return FisherInfo(matrix=info, param_order=tuple(params), sigma=sigma)


def crlb(info: FisherInfo, param: str) -> float:
    """Variance lower bound [I^{-1}]_pp for one parameter."""
    if param not in info.param_order:
        raise ValueError(f"{param!r} not among {info.param_order}")
    idx = info.param_order.index(param)
    m = info.matrix
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e14:
        raise NonIdentifiableError(
            f"information matrix is singular for {info.param_order}")
    return float(np.linalg.inv(m)[idx, idx])


def _t2_information(flips_deg: np.ndarray, tissue: TissueParams,
                    seq: SequenceParams) -> np.ndarray:
    """||df/dT2||^2 for a batch of flip schedules (columns), sigma-free."""
    t = seq.n_echoes
    b = flips_deg.shape[1]
    h = 1e-4 * tissue.t2
    t1 = np.full(2 * b, tissue.t1)
    t2 = np.concatenate([np.full(b, tissue.t2 + h), np.full(b, tissue.t2 - h)])
    flips = np.concatenate([flips_deg, flips_deg], axis=1)
    sig = simulate_fse_ensemble(t1, t2, seq, eta=tissue.eta, flips_deg=flips)
    dsig = (sig[:, :b] - sig[:, b:]) / (2 * h)
    return np.sum(np.abs(dsig) ** 2, axis=0)


def _project(flips_rad: np.ndarray, limit: float, min_rad: float,
             max_rad: float) -> np.ndarray:
    out = np.clip(flips_rad, min_rad, max_rad)
    power = float(np.sum(out ** 2))
    if power > limit:
        out = out * math.sqrt(limit / power)
    return out


@dataclass(frozen=True)
class FlipOptimization:
    flips_deg: np.ndarray
    objective_trace: np.ndarray
    power: float


def optimize_flips(tissue: TissueParams, seq_template: SequenceParams,
                   budget: PowerBudget, target_param: str = "t2",
                   max_iters: int = 200, min_flip_deg: float = 0.0,
                   init_step: float = 1.0) -> FlipOptimization:
    """Projected gradient ascent on the target's Fisher diagonal.

    Starts from the constant schedule at the budget's equal-power angle and
    ascends ||df/dp||^2 subject to the power cap and per-pulse box
    [min_flip, 180]; the projection clips then rescales. Backtracking keeps
    the objective trace nondecreasing.
    """
    if target_param != "t2":
        raise ValueError("only the transverse-decay target is supported")
    t = seq_template.n_echoes
    const_rad = min(math.sqrt(budget.limit / t), math.pi)
    min_rad = math.radians(min_flip_deg)
    if const_rad < min_rad:
        raise ValueError("no feasible constant schedule under this budget")
    flips = np.full(t, const_rad)

    def objective(batch_rad):
        return _t2_information(np.degrees(batch_rad), tissue, seq_template)

    current = float(objective(flips[:, None])[0])
    trace = [current]
    step = init_step
    h = 1e-3
    for _ in range(max_iters):
        perturbed = np.repeat(flips[:, None], 2 * t, axis=1)
        perturbed[np.arange(t), np.arange(t)] += h
        perturbed[np.arange(t), t + np.arange(t)] -= h
        vals = objective(perturbed)
        grad = (vals[:t] - vals[t:]) / (2 * h)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0:
            break
        improved = False
        for _ in range(20):
            cand = _project(flips + step * grad / gnorm, budget.limit,
                            min_rad, math.pi)
            val = float(objective(cand[:, None])[0])
            if val > current:
                flips = cand
                current = val
                improved = True
                step *= 1.5
                break
            step *= 0.5
        trace.append(current)
        if not improved:
            break
    flips_deg = np.degrees(flips)
    return FlipOptimization(flips_deg=flips_deg,
                            objective_trace=np.asarray(trace),
                            power=train_power(flips_deg))


def crlb_t2_sweep(flips_deg, seq_template: SequenceParams, t2_grid_ms,
                  t1_ms: float = 1000.0, sigma: float = 1.0) -> np.ndarray:
    """CRLB(T2) of one schedule across a T2 grid (single-parameter bound)."""
    seq = seq_template.with_flips(flips_deg)
    out = np.zeros(len(t2_grid_ms))
    for i, t2 in enumerate(t2_grid_ms):
        tissue = TissueParams(t1=max(t1_ms, t2), t2=t2)
        info = fisher_info(tissue, seq, sigma, params=("t2",))
        out[i] = crlb(info, "t2")
    return out


def minmax_grid_search(tissue_grid, candidate_schedules,
                       seq_template: SequenceParams, target_param: str = "t2",
                       sigma: float = 1.0, params=None) -> tuple:
    """Pick the schedule whose worst-case CRLB over the tissue grid is lowest.

    Singular information marks that (schedule, tissue) pair with an infinite
    cost; ties resolve to the lowest schedule index. Returns (index,
    schedule, worst_case_cost).
    """
    tissue_grid = list(tissue_grid)
    candidate_schedules = [np.asarray(s, float) for s in candidate_schedules]
    if not tissue_grid or not candidate_schedules:
        raise ValueError("need at least one tissue and one schedule")
    params = (target_param,) if params is None else tuple(params)
    best_idx, best_cost = -1, math.inf
    for idx, flips in enumerate(candidate_schedules):
        seq = seq_template.with_flips(flips)
        worst = 0.0
        for tissue in tissue_grid:
            try:
                worst = max(worst, crlb(fisher_info(tissue, seq, sigma,
                                                    params=params),
                                        target_param))
            except NonIdentifiableError:
                worst = math.inf
                break
        if worst < best_cost:
            best_idx, best_cost = idx, worst
    if best_idx < 0:
        raise NonIdentifiableError("every candidate schedule was singular")
    return best_idx, candidate_schedules[best_idx], best_cost


def write_schedule_csv(path: str, flips_deg) -> None:
    """One row per pulse: echo index (1-based) and flip in degrees."""
    write_csv(path, ("echo", "flip_deg"),
              list(enumerate(np.asarray(flips_deg, float), start=1)))


def read_schedule_csv(path: str) -> np.ndarray:
    """Read a flip schedule written by :func:`write_schedule_csv`."""
    flips = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["echo", "flip_deg"]:
            raise ValueError(f"{path}: unexpected schedule header {header}")
        for line in fh:
            if not line.strip():
                continue
            echo, flip = line.strip().split(",")[:2]
            flips[int(echo)] = float(flip)
    if sorted(flips) != list(range(1, len(flips) + 1)):
        raise ValueError(f"{path}: echo indices must be 1..T without gaps")
    return np.array([flips[i] for i in range(1, len(flips) + 1)])


def optimal_te(t2a: float, t2b: float) -> float:
    """Echo time maximizing the signal difference of two decaying species."""
    if t2a <= 0 or t2b <= 0:
        raise ValueError("time constants must be positive")
    if t2a == t2b:
        raise ValueError("species must differ in T2")
    return -math.log(t2a / t2b) / (1.0 / t2a - 1.0 / t2b)


@dataclass(frozen=True)
class AsymptoticDesign:
    flips_deg: np.ndarray
    targets: np.ndarray
    achieved: np.ndarray
    n_controlled: int


def _echo_after_pulse(state: EpgState, flip_deg: float, phase_deg: float,
                      half_ms: float, t1: float, t2: float) -> tuple:
    trial = state.copy()
    apply_relaxation(trial, half_ms, t1, t2)
    apply_gradient_shift(trial)
    apply_rf(trial, flip_deg, phase_deg)
    apply_gradient_shift(trial)
    apply_relaxation(trial, half_ms, t1, t2)
    return abs(trial.fplus[0]), trial


def design_asymptotic_flips(tissue: TissueParams, seq_template: SequenceParams,
                            s_target: float, alpha_max_deg: float = 180.0,
                            n_constant: int = 4,
                            approach_factor: float = 0.5,
                            approach_tol: float = 1e-3) -> AsymptoticDesign:
    """Solve for flips that steer echo amplitudes onto a target level.

    Per-echo targets approach s_target geometrically from the maximum
    achievable first-echo amplitude; each controlled flip is found by
    bisection on the next-echo amplitude given the current ensemble state.
    After the approach plus n_constant echoes at the target, the remaining
    flips ramp linearly up to alpha_max.
    """
    if not 0 < approach_factor < 1:
        raise ValueError("approach factor must lie in (0, 1)")
    if alpha_max_deg > 180.0:
        raise ValueError("alpha_max cannot exceed 180 degrees")
    t = seq_template.n_echoes
    half = seq_template.echo_spacing_ms / 2
    phases = seq_template.flip_phases_deg

    state = EpgState.equilibrium(required_max_order(t))
    apply_rf(state, tissue.eta * seq_template.excitation_deg,
             seq_template.excitation_phase_deg)

    s1_max, _ = _echo_after_pulse(state, tissue.eta * 180.0, phases[0], half,
                                  tissue.t1, tissue.t2)
    if not 0 < s_target <= s1_max:
        raise ValueError(
            f"target {s_target} outside the achievable range (0, {s1_max:.6g}]")

    # approach segment: geometric decay of the excess toward the target
    gap = s1_max - s_target
    n_approach = 0
    while (gap * approach_factor ** (n_approach + 1) > approach_tol * s_target
           and n_approach < t - n_constant):
        n_approach += 1
    n_controlled = min(n_approach + n_constant, t)

    targets = np.full(n_controlled, s_target)
    for i in range(n_approach):
        targets[i] = s_target + gap * approach_factor ** (i + 1)

    # The next-echo amplitude is not monotone in the flip (the stored
    # longitudinal reserve contributes through sin(alpha), which vanishes at
    # 180 deg), so bracket the lowest crossing on a grid before bisecting.
    scan = np.linspace(0.0, 180.0, 361)
    flips = np.zeros(t)
    achieved = np.zeros(n_controlled)
    for i in range(n_controlled):
        amps = np.array([_echo_after_pulse(state, tissue.eta * a, phases[i],
                                           half, tissue.t1, tissue.t2)[0]
                         for a in scan])
        target = targets[i]
        if target > amps.max() * (1 + 1e-12) + 1e-15:
            raise ValueError(
                f"echo {i + 1}: target {target:.6g} unreachable "
                f"(maximum {amps.max():.6g})")
        if amps[0] >= target:
            flip = 0.0
        elif not np.any(amps >= target):
            # target within rounding of the maximum: take the best flip
            flip = float(scan[int(np.argmax(amps))])
        else:
            hit = int(np.argmax(amps >= target))
            lo, hi = scan[hit - 1], scan[hit]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                amp, _ = _echo_after_pulse(state, tissue.eta * mid, phases[i],
                                           half, tissue.t1, tissue.t2)
                if amp < target:
                    lo = mid
                else:
                    hi = mid
            flip = 0.5 * (lo + hi)
        flips[i] = flip
        achieved[i], state = _echo_after_pulse(state, tissue.eta * flip,
                                               phases[i], half, tissue.t1,
                                               tissue.t2)

    if n_controlled < t:
        last = flips[n_controlled - 1] if n_controlled else alpha_max_deg
        if alpha_max_deg < last:
            raise ValueError("alpha_max lies below the controlled-segment flips")
        ramp = np.linspace(last, alpha_max_deg, t - n_controlled + 1)[1:]
        flips[n_controlled:] = ramp
    return AsymptoticDesign(flips_deg=flips, targets=targets,
                            achieved=achieved, n_controlled=n_controlled)
