"""Outer loop driving filter, smoother, motion re-estimation, and noise updates.

One run executes n_iter passes. Each pass filters forward with the current
transition operators and noise diagonals, smooths backward (with reduced
covariances only when the noise update is enabled, since nothing else
consumes them), rebuilds the motion operators from the smoothed trajectory,
and then re-estimates the Q/R diagonals using those rebuilt operators. The
pseudocode ordering matters: the noise update sees the new motion operators
together with the moments computed under the previous parameters.

Method taxonomy: IRKFS (no updates), IRKFS-M1/M2/M3 (motion only),
EMIRKFS (noise only), EMIRKFS-M1/M2/M3 (both). The (off, off) variant is a
fixed point: every pass reproduces the first bitwise.

Memory protocol: all run-lifetime allocations are charged to a MemoryTracker.
Full-space charges (trajectories, noise diagonals, motion payloads, the
chunk scratch allowance) fall under the budgeted category; r x r covariance
histories go to the reduced category, which is reported but not budgeted.
Charges for arrays handed to the caller inside the RunRecord are released
on return; the tracker keeps the peak.
"""

from dataclasses import dataclass, field

import numpy as np

from ._linalg import CHUNK_ELEMS
from .em import update_q_diag, update_r_diag
from .errors import ConfigError, DataIOError, NumericError

_WRAPPED = (ConfigError, DataIOError, NumericError)
from .filtering import (NoiseModel, initial_noise, release_filter_result,
                        run_filter, static_init)
from .linops import Identity, payload_nbytes
from .metrics import (MemoryTracker, MetricsRow, NullTracker, PhaseTimer,
                      memory_budget_bytes, rre)
from .mmgks import MMGKSConfig
from .motion import update_motions
from .prior import ProjectionBasis
from .radon import SinogramSet
from .smoothing import run_smoother

MOTION_KINDS = ("off", "m1", "m2", "m3")


@dataclass(frozen=True)
class MethodSpec:
    """One cell of the ablation lattice plus its initial noise scales."""

    motion: str = "off"
    em: bool = False
    n_iter: int = 1
    q_scale: float = 1.0
    r_scale: float = 1.0

    def __post_init__(self):
        if self.motion not in MOTION_KINDS:
            raise ConfigError(f"MethodSpec: motion must be one of {MOTION_KINDS}")
        if self.n_iter < 1:
            raise ConfigError("MethodSpec: n_iter must be >= 1")
        if self.q_scale <= 0 or self.r_scale <= 0:
            raise ConfigError("MethodSpec: noise scales must be positive")

    @property
    def name(self) -> str:
        base = "EMIRKFS" if self.em else "IRKFS"
        if self.motion != "off":
            base += "-" + self.motion.upper()
        return base


def parse_method(name: str, n_iter: int = 1, q_scale: float = 1.0,
                 r_scale: float = 1.0) -> MethodSpec:
    """MethodSpec from a variant name like 'EMIRKFS-M3' (case-insensitive)."""
    tag = name.strip().upper()
    head, dash, suffix = tag.partition("-")
    if head == "EMIRKFS":
        em = True
    elif head == "IRKFS":
        em = False
    else:
        raise ConfigError(f"unknown method name {name!r}")
    if suffix == "" and not dash:
        motion = "off"
    elif suffix in ("M1", "M2", "M3"):
        motion = suffix.lower()
    else:
        raise ConfigError(f"unknown method name {name!r}")
    return MethodSpec(motion=motion, em=em, n_iter=n_iter,
                      q_scale=q_scale, r_scale=r_scale)


@dataclass(frozen=True)
class MotionOptions:
    """Knobs for the motion estimators; ignored when motion is off."""

    zeta: float = 0.0
    patch: tuple = (8, 8)
    flow: MMGKSConfig | None = None

    def __post_init__(self):
        if self.zeta < 0:
            raise ConfigError("MotionOptions: zeta must be >= 0")
        if len(self.patch) != 2 or min(self.patch) < 1:
            raise ConfigError("MotionOptions: patch must be two positive ints")


@dataclass
class RunRecord:
    """Everything a run reports: trajectories, errors, timings, memory."""

    method: MethodSpec
    trajectories: list = field(default_factory=list)  # per pass, (T+1, n_s)
    rre: list | None = None                           # per pass, (T+1,) or None
    phase_seconds: list = field(default_factory=list)  # per pass, dict
    peak_bytes: int = 0
    peak_reduced_bytes: int = 0
    budget_bytes: int = 0

    @property
    def n_iter(self) -> int:
        return len(self.trajectories)

    def mean_rre(self, iteration: int) -> float:
        """Mean per-frame RRE for a 1-based outer iteration."""
        if self.rre is None:
            raise ConfigError("run had no ground truth; no RRE recorded")
        return float(np.mean(self.rre[iteration - 1]))


def record_rows(record: RunRecord) -> list:
    """Serialize a RunRecord to metrics CSV rows.

    RRE rows carry (iteration, timestep, rre); timing rows carry
    (iteration, phase, seconds); memory rows reuse the phase column for the
    counter name and put the value in bytes.
    """
    name = record.method.name
    rows = []
    for j in range(1, record.n_iter + 1):
        if record.rre is not None:
            for t, val in enumerate(record.rre[j - 1]):
                rows.append(MetricsRow(method=name, iteration=str(j),
                                       timestep=str(t), rre=repr(float(val))))
        for phase, secs in sorted(record.phase_seconds[j - 1].items()):
            rows.append(MetricsRow(method=name, iteration=str(j), phase=phase,
                                   seconds=repr(float(secs))))
    for counter, value in (("peak_bytes", record.peak_bytes),
                           ("peak_reduced_bytes", record.peak_reduced_bytes),
                           ("budget_bytes", record.budget_bytes)):
        rows.append(MetricsRow(method=name, phase=counter, bytes=str(value)))
    return rows


def _charge_motions(ops, tracker) -> int:
    total = sum(payload_nbytes(op) for op in ops)
    tracker.add(total)
    return total


def _release_smoother_reduced(sm, tracker) -> None:
    if sm.psi_sm is not None:
        for p in sm.psi_sm:
            tracker.release_reduced_array(p)
    if sm.gains is not None:
        for g in sm.gains:
            tracker.release_reduced_array(g)


def _em_pass(y_frames, h_ops, motions, filt, sm, basis, tracker) -> NoiseModel:
    """Closed-form diagonal noise update from the smoothed moments."""
    P = basis.P
    q_new, r_new = [], []
    for i in range(1, len(y_frames)):
        try:
            r_i = update_r_diag(y_frames[i], h_ops[i], sm.x_sm[i],
                                sm.psi_sm[i], P)
            q_i = update_q_diag(sm.x_sm[i - 1], sm.x_sm[i], sm.psi_sm[i - 1],
                                sm.psi_sm[i], sm.gains[i - 1],
                                filt.psi_est[i - 1], motions[i - 1], P)
        except _WRAPPED as exc:
            raise type(exc)(f"timestep {i}: {exc}") from exc
        tracker.add(r_i.nbytes + q_i.nbytes)
        r_new.append(r_i)
        q_new.append(q_i)
    return NoiseModel(q_diags=q_new, r_diags=r_new)


def run_emirkfs(data: SinogramSet, h_ops, basis: ProjectionBasis,
                method: MethodSpec, motion_opts: MotionOptions | None = None,
                truth: np.ndarray | None = None,
                tracker: MemoryTracker | None = None,
                callback=None) -> RunRecord:
    """Run one method variant over a sinogram set.

    h_ops[i] is the forward operator for frame i (frame 0 included; it only
    feeds the static initializer). truth, when given, is the (T+1, n_s)
    ground-truth trajectory used for per-frame RRE. callback(j, x_sm) fires
    after each pass with the stored smoothed trajectory (do not mutate).
    """
    motion_opts = motion_opts or MotionOptions()
    tracker = tracker or NullTracker()
    geom = data.geometry
    n_x, n_y = geom.n_x, geom.n_y
    n_s = n_x * n_y
    n_steps = geom.n_frames - 1
    y_frames = data.sinograms
    if len(h_ops) != n_steps + 1:
        raise ConfigError("run_emirkfs: one forward operator per frame required")
    if basis.P.shape[0] != n_s:
        raise ConfigError("run_emirkfs: basis rows disagree with the image grid")
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.shape != (n_steps + 1, n_s):
            raise ConfigError("run_emirkfs: truth shape disagrees with the run")

    m_t = max((op.shape[0] for op in h_ops[1:]), default=0)
    record = RunRecord(
        method=method,
        rre=None if truth is None else [],
        budget_bytes=memory_budget_bytes(n_s, basis.rank, n_steps, m_t),
    )

    # Scratch allowance for untracked transients: a few chunk-sized blocks
    # inside the Gramian loops plus a handful of state-length vectors.
    scratch = (4 * CHUNK_ELEMS + 8 * n_s) * 8
    tracker.add(scratch)

    alpha = basis.config.alpha
    noise = initial_noise(alpha, n_s, [h_ops[i].shape[0] for i in range(1, n_steps + 1)],
                          q_scale=method.q_scale, r_scale=method.r_scale)
    tracker.add(noise.nbytes())
    motions = [Identity(n_s) for _ in range(n_steps)]
    motion_bytes = 0

    x0, psi0 = static_init(h_ops[0], basis, y_frames[0])
    tracker.add_array(x0)
    tracker.add_reduced_array(psi0)

    try:
        for j in range(1, method.n_iter + 1):
            timer = PhaseTimer()
            try:
                with timer.phase("filter"):
                    filt = run_filter(y_frames, h_ops, motions, noise, basis,
                                      x0, psi0, tracker)
                with timer.phase("smoother"):
                    sm = run_smoother(filt, motions, noise, basis,
                                      with_covariance=method.em, tracker=tracker)
                if method.motion != "off":
                    with timer.phase("motion"):
                        new_motions = update_motions(
                            sm.x_sm, n_x, n_y, method.motion,
                            zeta=motion_opts.zeta, patch=motion_opts.patch,
                            flow_config=motion_opts.flow)
                    tracker.release(motion_bytes)
                    motion_bytes = _charge_motions(new_motions, tracker)
                    motions = new_motions
                if method.em:
                    with timer.phase("em"):
                        new_noise = _em_pass(y_frames, h_ops, motions, filt,
                                             sm, basis, tracker)
                    tracker.release(noise.nbytes())
                    noise = new_noise
            except _WRAPPED as exc:
                raise type(exc)(f"outer iteration {j}: {exc}") from exc

            release_filter_result(filt, tracker)
            _release_smoother_reduced(sm, tracker)
            # x_sm stays charged; the record owns it until the run returns.
            record.trajectories.append(sm.x_sm)
            record.phase_seconds.append(timer.seconds)
            if truth is not None:
                record.rre.append(np.array(
                    [rre(sm.x_sm[i], truth[i]) for i in range(n_steps + 1)]))
            if callback is not None:
                callback(j, sm.x_sm)
    finally:
        tracker.release(scratch + motion_bytes + noise.nbytes())
        tracker.release_array(x0)
        tracker.release_reduced_array(psi0)
        for traj in record.trajectories:
            tracker.release_array(traj)
        record.peak_bytes = tracker.peak_bytes
        record.peak_reduced_bytes = tracker.peak_reduced_bytes

    return record
