"""Multinomial diffusion over the 20 amino acids.

The forward kernel mixes the current one-hot with the uniform distribution:

    q(s^t | s^{t-1}) = (1 - beta_t) onehot(s^{t-1}) + beta_t / 20

Denoisers predict p(s^0) per position; the reverse step composes that
prediction with the exact posterior q(s^{t-1} | s^t, s^0).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError
from .structmodel import AMINO_ACIDS

log = logging.getLogger(__name__)

K = len(AMINO_ACIDS)
AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}
BETA_CLIP = 0.999
COSINE_OFFSET = 0.008
DEFAULT_STEPS = 100
ROW_TOL = 1e-10


def encode(seq: str) -> np.ndarray:
    try:
        return np.array([AA_INDEX[a] for a in seq], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"residue {exc.args[0]!r} is not one of the 20 amino acids") from None


def decode(idx) -> str:
    return "".join(AMINO_ACIDS[int(i)] for i in idx)


def onehot(idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((len(idx), K))
    out[np.arange(len(idx)), idx] = 1.0
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels; index t-1 of ``beta``/``alpha_bar`` holds step t."""

    beta: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) == 0:
            raise DomainError("schedule needs at least one step")
        if np.any(beta <= 0) or np.any(beta > 1):
            raise DomainError("every beta must lie in (0, 1]")
        beta.flags.writeable = False
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def from_betas(cls, beta, kind: str = "custom") -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        return cls(beta, np.cumprod(1.0 - beta), kind)

    @property
    def T(self) -> int:
        return len(self.beta)

    def beta_at(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise DomainError(f"step {t} outside [1, {self.T}]")
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise DomainError(f"step {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    @property
    def terminal_ok(self) -> bool:
        return float(self.alpha_bar[-1]) <= 1e-3


def make_schedule(T: int = DEFAULT_STEPS, kind: str = "cosine", *, offset: float = COSINE_OFFSET,
                  beta_start: float = 1e-3, beta_end: float = 0.2, clip: float = BETA_CLIP) -> NoiseSchedule:
    """Cosine or linear beta schedule with T steps."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if kind == "cosine":
        t = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((t / T + offset) / (1.0 + offset)) * math.pi / 2) ** 2
        ab = f / f[0]
        beta = 1.0 - ab[1:] / ab[:-1]
        beta = np.clip(beta, 0.0, clip)
    elif kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    else:
        raise DomainError(f"unknown schedule kind {kind!r}")
    sched = NoiseSchedule.from_betas(beta, kind)
    if not sched.terminal_ok:
        log.warning("%s schedule with T=%d ends at alpha_bar=%.3g (> 1e-3); terminal state is not near-uniform",
                    kind, T, sched.alpha_bar[-1])
    return sched


@dataclass(frozen=True)
class CategoricalSequenceState:
    t: int
    probs: np.ndarray
    sample: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != K:
            raise ShapeError(f"probs must be (m, {K}), got {probs.shape}")
        check_rows(probs, "state")
        object.__setattr__(self, "probs", probs)
        if self.sample is not None:
            sample = np.asarray(self.sample, dtype=np.int64)
            if sample.shape != (len(probs),):
                raise ShapeError("sample length does not match probs")
            object.__setattr__(self, "sample", sample)

    @property
    def m(self) -> int:
        return len(self.probs)

    @property
    def sequence(self) -> str | None:
        return None if self.sample is None else decode(self.sample)


@dataclass(frozen=True)
class DenoiserOutput:
    """Predicted distribution over the clean residue s^0 at each position."""

    s0_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s0_probs", np.asarray(self.s0_probs, dtype=np.float64))


@dataclass(frozen=True)
class DirectReverseOutput:
    """Adapter for denoisers that emit p(s^{t-1}) directly, skipping posterior composition."""

    probs: np.ndarray


Denoiser = Callable[[CategoricalSequenceState], "DenoiserOutput | DirectReverseOutput | np.ndarray"]


def check_rows(probs: np.ndarray, what: str = "distribution", tol: float = ROW_TOL) -> None:
    if not np.all(np.isfinite(probs)):
        raise ContractError(f"{what}: non-finite probabilities")
    if np.any(probs < 0):
        raise ContractError(f"{what}: negative probabilities")
    err = np.abs(probs.sum(axis=1) - 1.0)
    if err.size and err.max() > tol:
        raise ContractError(f"{what}: rows do not sum to 1 (max error {err.max():.3g})")


def step_kernel(t: int, schedule: NoiseSchedule) -> np.ndarray:
    """20x20 matrix with entry [a, b] = q(s^t = b | s^{t-1} = a)."""
    beta = schedule.beta_at(t)
    return (1.0 - beta) * np.eye(K) + beta / K


def forward_step(state: CategoricalSequenceState, schedule: NoiseSchedule,
                 rng: np.random.Generator | None = None) -> CategoricalSequenceState:
    """Advance one forward noising step, from t-1 to t."""
    t = state.t + 1
    beta = schedule.beta_at(t)
    probs = (1.0 - beta) * state.probs + beta / K
    sample = None
    if rng is not None and state.sample is not None:
        sample = draw(rng, (1.0 - beta) * onehot(state.sample) + beta / K)
    return CategoricalSequenceState(t, probs, sample)


def marginal(s0, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form q(s^t | s^0) for an index array or (m, 20) rows."""
    s0 = np.asarray(s0)
    rows = onehot(s0) if s0.ndim == 1 else s0.astype(np.float64)
    if t == 0:
        return rows.copy()
    ab = schedule.alpha_bar_at(t)
    return ab * rows + (1.0 - ab) / K


def posterior_table(t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Array P[s_t, s_0, s_{t-1}] = q(s^{t-1} | s^t, s^0) by the quotient formula."""
    kern = step_kernel(t, schedule)                                  # [s_{t-1}, s_t]
    prev = marginal(np.arange(K), t - 1, schedule)                   # [s_0, s_{t-1}]
    cur = marginal(np.arange(K), t, schedule)                        # [s_0, s_t]
    num = kern.T[:, None, :] * prev[None, :, :]                      # [s_t, s_0, s_{t-1}]
    return num / cur.T[:, :, None]


def posterior(s_t: int, s0: int, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """q(s^{t-1} | s^t, s^0) as a 20-vector."""
    return posterior_table(t, schedule)[int(s_t), int(s0)]


def draw(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, K - 1)


def _s0_probs(out, m: int, t: int) -> np.ndarray | DirectReverseOutput:
    if isinstance(out, DirectReverseOutput):
        probs = np.asarray(out.probs, dtype=np.float64)
        if probs.shape != (m, K):
            raise ContractError(f"denoiser at t={t}: expected shape ({m}, {K}), got {probs.shape}")
        check_rows(probs, f"denoiser at t={t}")
        return DirectReverseOutput(probs)
    probs = np.asarray(out.s0_probs if isinstance(out, DenoiserOutput) else out, dtype=np.float64)
    if probs.shape != (m, K):
        raise ContractError(f"denoiser at t={t}: expected shape ({m}, {K}), got {probs.shape}")
    check_rows(probs, f"denoiser at t={t}")
    return probs


def reverse_probs(state: CategoricalSequenceState, s0_probs: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """p(s^{t-1}_j) = sum_a q(s^{t-1} | s^t_j, a) * s0_probs[j, a]."""
    if state.sample is None:
        raise ContractError("reverse step needs a realized sample s^t")
    table = posterior_table(state.t, schedule)[state.sample]         # [j, a, s_{t-1}]
    return np.einsum("jab,ja->jb", table, s0_probs)


def reverse_step(state: CategoricalSequenceState, denoiser_out, schedule: NoiseSchedule,
                 rng: np.random.Generator, stochastic_final: bool = False) -> CategoricalSequenceState:
    """One reverse step from t to t-1.

    At t=1 the argmax of the predicted s^0 is emitted unless
    ``stochastic_final`` is set.
    """
    t = state.t
    if not 1 <= t <= schedule.T:
        raise DomainError(f"step {t} outside [1, {schedule.T}]")
    pred = _s0_probs(denoiser_out, state.m, t)
    if isinstance(pred, DirectReverseOutput):
        probs = pred.probs
        sample = draw(rng, probs) if (t > 1 or stochastic_final) else np.argmax(probs, axis=1)
        return CategoricalSequenceState(t - 1, probs, sample)
    probs = reverse_probs(state, pred, schedule)
    probs = probs / probs.sum(axis=1, keepdims=True)
    if t == 1 and not stochastic_final:
        sample = np.argmax(pred, axis=1)
    else:
        sample = draw(rng, probs)
    return CategoricalSequenceState(t - 1, probs, sample)


def _kl_rows(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
    out = terms.sum(axis=1)
    out[np.any((q > 0) & (p <= 0), axis=1)] = np.inf
    return out


def kl_loss(true_s0, s_t, t: int, denoiser_out, schedule: NoiseSchedule) -> float:
    """Mean over positions of KL(q(s^{t-1}|s^t, s^0) || p(s^{t-1})).

    Returns ``inf`` when the model puts zero mass where the posterior does not.
    """
    true_s0 = np.asarray(true_s0, dtype=np.int64)
    s_t = np.asarray(s_t, dtype=np.int64)
    if true_s0.shape != s_t.shape or true_s0.ndim != 1:
        raise ShapeError("true_s0 and s_t must be equal-length index arrays")
    m = len(true_s0)
    table = posterior_table(t, schedule)
    q = table[s_t, true_s0]
    pred = _s0_probs(denoiser_out, m, t)
    if isinstance(pred, DirectReverseOutput):
        p = pred.probs
    else:
        p = np.einsum("jab,ja->jb", table[s_t], pred)
    return float(max(_kl_rows(q, p).mean(), 0.0))


def expected_kl(true_s0, denoiser: Denoiser, schedule: NoiseSchedule, rng: np.random.Generator,
                n_draws: int = 64) -> float:
    """Monte-Carlo estimate of E_t[L_t] with t ~ Uniform{1..T} and s^t ~ q(s^t | s^0)."""
    true_s0 = np.asarray(true_s0, dtype=np.int64)
    total = 0.0
    for _ in range(n_draws):
        t = int(rng.integers(1, schedule.T + 1))
        probs = marginal(true_s0, t, schedule)
        s_t = draw(rng, probs)
        out = denoiser(CategoricalSequenceState(t, probs, s_t))
        total += kl_loss(true_s0, s_t, t, out, schedule)
    return total / n_draws


@dataclass(frozen=True)
class SampleResult:
    sequence: str
    kl_trace: tuple[float, ...] | None = None

    @property
    def mean_kl(self) -> float | None:
        if not self.kl_trace:
            return None
        return float(np.mean(self.kl_trace))


def sample(m: int, schedule: NoiseSchedule, denoiser: Denoiser, rng_seed,
           stochastic_final: bool = False, reference: str | Sequence[int] | None = None,
           trace: bool = False) -> SampleResult:
    """Run the reverse chain from s^T ~ Uniform(20) down to s^0.

    ``rng_seed`` is anything ``np.random.default_rng`` accepts. With
    ``trace=True`` the per-step KL loss is recorded against ``reference``
    (the true sequence) or, when absent, against the decoded output.
    """
    if m < 1:
        raise DomainError("span length must be >= 1")
    rng = np.random.default_rng(rng_seed)
    uniform = np.full((m, K), 1.0 / K)
    state = CategoricalSequenceState(schedule.T, uniform, rng.integers(0, K, size=m))
    history = []
    while state.t > 0:
        t = state.t
        out = denoiser(state)
        try:
            nxt = reverse_step(state, out, schedule, rng, stochastic_final)
        except ContractError as exc:
            raise ContractError(f"sampling aborted at step t={t}: {exc}") from None
        if trace:
            history.append((t, state.sample, out))
        state = nxt
    seq = decode(state.sample)
    kl_trace = None
    if trace:
        ref = encode(reference) if isinstance(reference, str) else (
            np.asarray(reference, dtype=np.int64) if reference is not None else state.sample)
        if len(ref) != m:
            raise ShapeError("reference length does not match span length")
        kl_trace = tuple(kl_loss(ref, s_t, t, out, schedule) for t, s_t, out in history)
    return SampleResult(seq, kl_trace)


def uniform_denoiser(state: CategoricalSequenceState) -> DenoiserOutput:
    return DenoiserOutput(np.full((state.m, K), 1.0 / K))


def oracle_denoiser(target: str | Sequence[int]) -> Denoiser:
    """Denoiser that always predicts the given clean sequence."""
    idx = encode(target) if isinstance(target, str) else np.asarray(target, dtype=np.int64)
    rows = onehot(idx)

    def denoise(state: CategoricalSequenceState) -> DenoiserOutput:
        return DenoiserOutput(rows)

    return denoise
