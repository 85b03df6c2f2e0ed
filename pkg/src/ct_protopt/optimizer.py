"""Protocol search: exhaustive-sweep oracle and a PPO agent on the same reward.

The reward for a (patient, protocol) pair is the mean lesion detectability
index from the full acquisition + reconstruction + metrics pipeline, with the
noise seed derived from (patient_id, protocol, base_seed) only, so repeated
evaluations of one action return bit-identical rewards. The exhaustive sweep
evaluates all 468 canonical combinations (optionally across a process pool;
row order and content are independent of pool size). The agent is a small
multi-discrete PPO policy written directly in numpy: a shared 2-64-64 tanh
trunk, six categorical heads matching the protocol axes, and a scalar value
head. Episodes are single-step, so the advantage is just
reward - value_estimate (batch-normalized), and the clipped surrogate is the
textbook one.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ._seeds import derive_seed, philox
from .iq_metrics import MetricError, full_report
from .phantom import MaterialTable, Phantom
from .protocol_space import (
    CARDINALITIES,
    KV_VALUES,
    N_CANONICAL_COMBINATIONS,
    ActionVector,
    ProtocolParams,
    decode,
    enumerate_canonical,
)
from .vct_engine import ScannerConfig, Sinogram, acquire_and_reconstruct, forward_project

OBJECTIVES = ("mean", "min")
BMI_CENTER = 26.5
BMI_SCALE = 10.0
MAX_INVALID_FRACTION = 0.05


class OptimizerError(RuntimeError):
    """Sweep or training could not produce a trustworthy result."""


def _objective_value(d_primes: Sequence[float], objective: str) -> float:
    if not d_primes:
        return 0.0
    if objective == "mean":
        return float(np.mean(d_primes))
    if objective == "min":
        return float(np.min(d_primes))
    raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


# ---------------------------------------------------------------------------
# single-protocol evaluation (shared by sweep and agent)


@dataclass(frozen=True)
class EvalOutcome:
    params: ProtocolParams
    valid: bool
    d_prime_per_lesion: tuple[float, ...]
    mean_d_prime: float
    noise_index: float
    mtf_f50: float
    mean_cnr: float
    mean_accuracy: float
    error: str = ""

    def reward(self, objective: str = "mean") -> float:
        if not self.valid:
            return 0.0
        return _objective_value(self.d_prime_per_lesion, objective)


def reward_seed(patient_id: str, params: ProtocolParams, base_seed: int) -> int:
    """Noise seed for one (patient, protocol) evaluation.

    Depends only on the patient, the canonical protocol, and the run's base
    seed: the reward landscape is a fixed deterministic function per run.
    """
    return derive_seed("reward", patient_id, params.to_text(), base_seed)


def evaluate_protocol(
    ph: Phantom,
    params: ProtocolParams,
    *,
    cfg: ScannerConfig | None = None,
    materials: MaterialTable | None = None,
    base_seed: int = 0,
    noiseless: Sinogram | None = None,
) -> EvalOutcome:
    """Acquire, reconstruct, and measure one protocol on one phantom."""
    cfg = cfg or ScannerConfig()
    mt = materials or MaterialTable()
    pid = ph.attrs.patient_id
    seed = reward_seed(pid, params, base_seed)
    img = acquire_and_reconstruct(ph, params, cfg, seed=seed, materials=mt, noiseless=noiseless)
    rep = full_report(
        img, ph, roi_seed=derive_seed("roi", pid, params.to_text(), base_seed), materials=mt
    )
    d_primes = tuple(les.d_prime for les in rep.lesions)
    return EvalOutcome(
        params=params,
        valid=True,
        d_prime_per_lesion=d_primes,
        mean_d_prime=_objective_value(d_primes, "mean"),
        noise_index=rep.noise_index,
        mtf_f50=rep.mtf.f50,
        mean_cnr=float(np.mean([les.cnr for les in rep.lesions])) if rep.lesions else 0.0,
        mean_accuracy=(
            float(np.mean([les.detection_accuracy for les in rep.lesions])) if rep.lesions else 0.0
        ),
    )


def _safe_evaluate(
    ph: Phantom,
    params: ProtocolParams,
    cfg: ScannerConfig,
    mt: MaterialTable,
    base_seed: int,
    noiseless: Sinogram | None,
) -> EvalOutcome:
    try:
        return evaluate_protocol(
            ph, params, cfg=cfg, materials=mt, base_seed=base_seed, noiseless=noiseless
        )
    except (MetricError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return EvalOutcome(
            params=params,
            valid=False,
            d_prime_per_lesion=(),
            mean_d_prime=0.0,
            noise_index=math.nan,
            mtf_f50=math.nan,
            mean_cnr=math.nan,
            mean_accuracy=math.nan,
            error=f"{type(exc).__name__}: {exc}",
        )


# ---------------------------------------------------------------------------
# exhaustive sweep


@dataclass(frozen=True)
class SweepRow:
    index: int  # 1-based enumeration position
    params: ProtocolParams
    valid: bool
    d_prime_per_lesion: tuple[float, ...]
    mean_d_prime: float
    noise_index: float
    mtf_f50: float
    mean_cnr: float
    mean_accuracy: float
    error: str = ""


SWEEP_CSV_COLUMNS = [
    "patient_id",
    "seed",
    "objective",
    "index",
    "params",
    "valid",
    "mean_d_prime",
    "d_prime_per_lesion",
    "noise_index",
    "mtf_f50",
    "mean_cnr",
    "mean_accuracy",
    "error",
]


@dataclass(frozen=True)
class SweepTable:
    patient_id: str
    base_seed: int
    objective: str
    rows: tuple[SweepRow, ...]
    argmax_index: int  # 0-based position in rows

    def __post_init__(self) -> None:
        if len(self.rows) != N_CANONICAL_COMBINATIONS:
            raise ValueError(
                f"sweep table needs {N_CANONICAL_COMBINATIONS} rows, got {len(self.rows)}"
            )

    @property
    def best_row(self) -> SweepRow:
        return self.rows[self.argmax_index]

    @property
    def max_objective(self) -> float:
        return _objective_value(self.best_row.d_prime_per_lesion, self.objective)

    def objective_of(self, row: SweepRow) -> float:
        return _objective_value(row.d_prime_per_lesion, self.objective) if row.valid else 0.0

    def reward_map(self) -> dict[str, float]:
        return {row.params.to_text(): self.objective_of(row) for row in self.rows}

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SWEEP_CSV_COLUMNS)
            for row in self.rows:
                w.writerow(
                    [
                        self.patient_id,
                        repr(self.base_seed),
                        self.objective,
                        row.index,
                        row.params.to_text(),
                        int(row.valid),
                        repr(row.mean_d_prime),
                        ";".join(repr(v) for v in row.d_prime_per_lesion),
                        repr(row.noise_index),
                        repr(row.mtf_f50),
                        repr(row.mean_cnr),
                        repr(row.mean_accuracy),
                        row.error,
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "SweepTable":
        with open(path, "r", encoding="utf-8", newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != SWEEP_CSV_COLUMNS:
                raise ValueError(f"unexpected sweep CSV header in {path}")
            rows: list[SweepRow] = []
            pid = None
            seed = None
            objective = None
            for rec in r:
                pid = rec[0]
                seed = int(rec[1])
                objective = rec[2]
                per = tuple(float(tok) for tok in rec[7].split(";")) if rec[7] else ()
                rows.append(
                    SweepRow(
                        index=int(rec[3]),
                        params=ProtocolParams.from_text(rec[4]),
                        valid=bool(int(rec[5])),
                        mean_d_prime=float(rec[6]),
                        d_prime_per_lesion=per,
                        noise_index=float(rec[8]),
                        mtf_f50=float(rec[9]),
                        mean_cnr=float(rec[10]),
                        mean_accuracy=float(rec[11]),
                        error=rec[12],
                    )
                )
        if pid is None:
            raise ValueError(f"empty sweep CSV {path}")
        return cls(
            patient_id=pid,
            base_seed=seed,
            objective=objective,
            rows=tuple(rows),
            argmax_index=_argmax_row(rows, objective),
        )


def _argmax_row(rows: Sequence[SweepRow], objective: str) -> int:
    best_i = 0
    best_v = -math.inf
    for i, row in enumerate(rows):
        v = _objective_value(row.d_prime_per_lesion, objective) if row.valid else 0.0
        if row.valid and v > best_v:
            best_i, best_v = i, v
    if best_v == -math.inf:
        raise OptimizerError("no valid rows in sweep")
    return best_i


# worker context for ProcessPoolExecutor(fork): heavy inputs are inherited by
# copy-on-write instead of being pickled per task
_POOL_CTX: dict = {}


def _pool_eval(i: int) -> tuple[int, EvalOutcome]:
    ctx = _POOL_CTX
    params = ctx["combos"][i]
    out = _safe_evaluate(
        ctx["ph"], params, ctx["cfg"], ctx["mt"], ctx["base_seed"], ctx["sinos"][params.tube_kv]
    )
    return i, out


def exhaustive_search(
    ph: Phantom,
    cfg: ScannerConfig | None = None,
    seed: int = 0,
    *,
    workers: int = 1,
    materials: MaterialTable | None = None,
    objective: str = "mean",
    progress: Callable[[int, int], None] | None = None,
) -> SweepTable:
    """Evaluate every canonical protocol on one phantom; return the full table.

    Row results depend only on (patient, protocol, seed), so the table is
    bit-identical for any `workers` count. More than 5% invalid rows aborts.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    cfg = cfg or ScannerConfig()
    mt = materials or MaterialTable()
    combos = enumerate_canonical()
    sinos = {kv: forward_project(ph, kv, cfg, materials=mt) for kv in KV_VALUES}

    outcomes: list[EvalOutcome | None] = [None] * len(combos)
    if workers > 1 and hasattr(os, "fork"):
        _POOL_CTX.update(
            {"ph": ph, "cfg": cfg, "mt": mt, "base_seed": seed, "sinos": sinos, "combos": combos}
        )
        try:
            with ProcessPoolExecutor(
                max_workers=workers, mp_context=multiprocessing.get_context("fork")
            ) as ex:
                for i, out in ex.map(_pool_eval, range(len(combos)), chunksize=4):
                    outcomes[i] = out
                    if progress is not None:
                        progress(sum(o is not None for o in outcomes), len(combos))
        finally:
            _POOL_CTX.clear()
    else:
        for i, params in enumerate(combos):
            outcomes[i] = _safe_evaluate(ph, params, cfg, mt, seed, sinos[params.tube_kv])
            if progress is not None:
                progress(i + 1, len(combos))

    rows = [
        SweepRow(
            index=i + 1,
            params=out.params,
            valid=out.valid,
            d_prime_per_lesion=out.d_prime_per_lesion,
            mean_d_prime=out.mean_d_prime,
            noise_index=out.noise_index,
            mtf_f50=out.mtf_f50,
            mean_cnr=out.mean_cnr,
            mean_accuracy=out.mean_accuracy,
            error=out.error,
        )
        for i, out in enumerate(outcomes)
    ]
    n_invalid = sum(not r.valid for r in rows)
    if n_invalid > MAX_INVALID_FRACTION * len(rows):
        examples = [r.error for r in rows if not r.valid][:3]
        raise OptimizerError(
            f"{n_invalid}/{len(rows)} sweep rows failed; first errors: {examples}"
        )
    return SweepTable(
        patient_id=ph.attrs.patient_id,
        base_seed=seed,
        objective=objective,
        rows=tuple(rows),
        argmax_index=_argmax_row(rows, objective),
    )


# ---------------------------------------------------------------------------
# environment: single-step episodes over the protocol grid


@dataclass(frozen=True)
class StepResult:
    params: ProtocolParams
    reward: float
    cache_hit: bool
    failed: bool
    unique_evals: int  # unique protocols this agent has requested for the patient


class ProtocolEnv:
    """Contextual bandit over protocols: observation is the patient, the
    action is a protocol, the reward is the (deterministic) mean lesion d'.

    A SweepTable per patient warm-starts the reward cache so agent training
    never re-runs the pipeline for combinations the sweep already covered;
    uniqueness accounting still counts every distinct protocol the agent asks
    for.
    """

    def __init__(
        self,
        phantoms: Sequence[Phantom],
        *,
        cfg: ScannerConfig | None = None,
        materials: MaterialTable | None = None,
        base_seed: int = 0,
        objective: str = "mean",
        tables: Mapping[str, SweepTable] | None = None,
    ) -> None:
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if not phantoms:
            raise ValueError("need at least one phantom")
        ids = [ph.attrs.patient_id for ph in phantoms]
        if len(set(ids)) != len(ids):
            raise ValueError("phantom patient_ids must be distinct")
        self.phantoms = list(phantoms)
        self.cfg = cfg or ScannerConfig()
        self.materials = materials or MaterialTable()
        self.base_seed = base_seed
        self.objective = objective
        self._rewards: dict[tuple[str, str], tuple[float, bool]] = {}
        self._agent_seen: dict[str, set[str]] = {pid: set() for pid in ids}
        self._sinos: dict[tuple[str, int], Sinogram] = {}
        if tables:
            for pid, table in tables.items():
                if table.objective != objective:
                    raise ValueError(
                        f"table for {pid} uses objective {table.objective!r}, env uses {objective!r}"
                    )
                if table.base_seed != base_seed:
                    raise ValueError(
                        f"table for {pid} was swept with seed {table.base_seed}, env uses {base_seed}"
                    )
                for row in table.rows:
                    self._rewards[(pid, row.params.to_text())] = (
                        table.objective_of(row),
                        not row.valid,
                    )

    def observation(self, patient_idx: int) -> np.ndarray:
        attrs = self.phantoms[patient_idx].attrs
        return np.array(
            [(attrs.bmi - BMI_CENTER) / BMI_SCALE, 1.0 if attrs.sex == "M" else -1.0],
            dtype=np.float64,
        )

    def _noiseless(self, patient_idx: int, kv: int) -> Sinogram:
        ph = self.phantoms[patient_idx]
        key = (ph.attrs.patient_id, kv)
        if key not in self._sinos:
            self._sinos[key] = forward_project(ph, kv, self.cfg, materials=self.materials)
        return self._sinos[key]

    def step(self, patient_idx: int, action: ActionVector) -> StepResult:
        ph = self.phantoms[patient_idx]
        pid = ph.attrs.patient_id
        params = decode(action)
        key = params.to_text()
        seen = self._agent_seen[pid]
        seen.add(key)
        cached = self._rewards.get((pid, key))
        if cached is not None:
            reward, failed = cached
            return StepResult(params, reward, True, failed, len(seen))
        out = _safe_evaluate(
            ph, params, self.cfg, self.materials, self.base_seed, self._noiseless(patient_idx, params.tube_kv)
        )
        reward = out.reward(self.objective)
        self._rewards[(pid, key)] = (reward, not out.valid)
        return StepResult(params, reward, False, not out.valid, len(seen))

    def unique_evals(self, patient_idx: int) -> int:
        return len(self._agent_seen[self.phantoms[patient_idx].attrs.patient_id])


def env_step(
    ph: Phantom,
    action: ActionVector,
    cfg: ScannerConfig | None = None,
    seed: int = 0,
    *,
    materials: MaterialTable | None = None,
    objective: str = "mean",
) -> float:
    """One-shot reward for an action; pipeline failures return reward 0."""
    params = decode(action)
    out = _safe_evaluate(
        ph, params, cfg or ScannerConfig(), materials or MaterialTable(), seed, None
    )
    return out.reward(objective)


# ---------------------------------------------------------------------------
# policy network (numpy, float64)

HIDDEN = 64
N_OBS = 2
HEAD_SIZES = CARDINALITIES  # (3, 3, 5, 3, 2, 2)
N_LOGITS = sum(HEAD_SIZES)
_HEAD_OFFSETS = np.concatenate([[0], np.cumsum(HEAD_SIZES)])


@dataclass
class PolicyNetwork:
    w1: np.ndarray  # (2, 64)
    b1: np.ndarray  # (64,)
    w2: np.ndarray  # (64, 64)
    b2: np.ndarray  # (64,)
    wp: np.ndarray  # (64, 18)
    bp: np.ndarray  # (18,)
    wv: np.ndarray  # (64, 1)
    bv: np.ndarray  # (1,)

    @classmethod
    def init(cls, seed: int = 0) -> "PolicyNetwork":
        rng = philox("policy-init", seed)

        def xavier(n_in: int, n_out: int) -> np.ndarray:
            return rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), (n_in, n_out))

        return cls(
            w1=xavier(N_OBS, HIDDEN),
            b1=np.zeros(HIDDEN),
            w2=xavier(HIDDEN, HIDDEN),
            b2=np.zeros(HIDDEN),
            # small head weights start near the uniform policy
            wp=0.01 * rng.normal(size=(HIDDEN, N_LOGITS)),
            bp=np.zeros(N_LOGITS),
            wv=0.01 * rng.normal(size=(HIDDEN, 1)),
            bv=np.zeros(1),
        )

    # -- parameter vector ---------------------------------------------------

    def _fields(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.wp, self.bp, self.wv, self.bv]

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self._fields())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._fields()])

    def set_flat(self, flat: np.ndarray) -> None:
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for a in self._fields():
            a[...] = flat[pos : pos + a.size].reshape(a.shape)
            pos += a.size

    # -- forward ------------------------------------------------------------

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (h1, h2, logits, value) for a (B, 2) batch."""
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        h1 = np.tanh(x @ self.w1 + self.b1)
        h2 = np.tanh(h1 @ self.w2 + self.b2)
        logits = h2 @ self.wp + self.bp
        value = (h2 @ self.wv + self.bv)[:, 0]
        return h1, h2, logits, value

    def value(self, obs: np.ndarray) -> float:
        return float(self.forward(obs)[3][0])

    def head_probs(self, obs: np.ndarray) -> list[np.ndarray]:
        logits = self.forward(obs)[2][0]
        return [_softmax(logits[a:b]) for a, b in zip(_HEAD_OFFSETS[:-1], _HEAD_OFFSETS[1:])]

    def log_prob_of(self, obs: np.ndarray, action: ActionVector) -> float:
        logits = self.forward(obs)[2]
        return float(_action_log_probs(logits, np.array([action.indices], dtype=np.intp))[0])

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[ActionVector, float, float]:
        """Draw an action; return (action, log_prob, value_estimate)."""
        _, _, logits, value = self.forward(obs)
        idxs = []
        for a, b in zip(_HEAD_OFFSETS[:-1], _HEAD_OFFSETS[1:]):
            p = _softmax(logits[0, a:b])
            idxs.append(int(np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, b - a - 1)))
        action = ActionVector(tuple(idxs))
        lp = float(_action_log_probs(logits, np.array([idxs], dtype=np.intp))[0])
        return action, lp, float(value[0])

    def greedy_action(self, obs: np.ndarray) -> ActionVector:
        logits = self.forward(obs)[2][0]
        return ActionVector(
            tuple(int(np.argmax(logits[a:b])) for a, b in zip(_HEAD_OFFSETS[:-1], _HEAD_OFFSETS[1:]))
        )


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def _log_softmax_heads(logits: np.ndarray) -> np.ndarray:
    """Per-head log-softmax of a (B, 18) logit block, same shape out."""
    out = np.empty_like(logits)
    for a, b in zip(_HEAD_OFFSETS[:-1], _HEAD_OFFSETS[1:]):
        z = logits[:, a:b]
        zmax = z.max(axis=1, keepdims=True)
        out[:, a:b] = z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    return out


def _action_log_probs(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Sum of per-head log-probabilities; actions is (B, 6) head indices."""
    ls = _log_softmax_heads(np.atleast_2d(logits))
    rows = np.arange(ls.shape[0])
    total = np.zeros(ls.shape[0])
    for h, a in enumerate(_HEAD_OFFSETS[:-1]):
        total += ls[rows, a + actions[:, h]]
    return total


def _entropies(logits: np.ndarray) -> np.ndarray:
    """Total (summed over heads) categorical entropy per sample."""
    ls = _log_softmax_heads(logits)
    p = np.exp(ls)
    return -(p * ls).sum(axis=1)


# ---------------------------------------------------------------------------
# PPO update


@dataclass(frozen=True)
class PpoHyper:
    clip_eps: float = 0.2
    batch_size: int = 15
    epochs: int = 4
    learning_rate: float = 3e-3
    value_coef: float = 0.5
    entropy_coef: float = 0.01  # start value; train() decays it linearly to 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def to_text(self) -> str:
        return (
            f"clip_eps={self.clip_eps!r},batch_size={self.batch_size},epochs={self.epochs},"
            f"learning_rate={self.learning_rate!r},value_coef={self.value_coef!r},"
            f"entropy_coef={self.entropy_coef!r}"
        )


@dataclass(frozen=True)
class Transition:
    obs: tuple[float, float]
    action: tuple[int, int, int, int, int, int]
    log_prob: float
    reward: float  # raw d' (>= 0)
    value_estimate: float


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))

    def step(self, params: np.ndarray, grad: np.ndarray, hyper: PpoHyper) -> np.ndarray:
        self.t += 1
        self.m = hyper.adam_beta1 * self.m + (1 - hyper.adam_beta1) * grad
        self.v = hyper.adam_beta2 * self.v + (1 - hyper.adam_beta2) * grad * grad
        mhat = self.m / (1 - hyper.adam_beta1**self.t)
        vhat = self.v / (1 - hyper.adam_beta2**self.t)
        return params - hyper.learning_rate * mhat / (np.sqrt(vhat) + hyper.adam_eps)


def _batch_arrays(batch: Sequence[Transition], reward_scale: float):
    x = np.array([t.obs for t in batch], dtype=np.float64)
    actions = np.array([t.action for t in batch], dtype=np.intp)
    old_lp = np.array([t.log_prob for t in batch])
    rewards = np.array([t.reward for t in batch]) / reward_scale
    values_old = np.array([t.value_estimate for t in batch])
    return x, actions, old_lp, rewards, values_old


def ppo_loss_and_grad(
    net: PolicyNetwork,
    batch: Sequence[Transition],
    hyper: PpoHyper,
    *,
    entropy_coef: float | None = None,
    reward_scale: float = 1.0,
) -> tuple[float, np.ndarray, dict]:
    """Clipped-surrogate loss and its exact gradient w.r.t. the flat params.

    L = -mean(min(r*A, clip(r, 1-eps, 1+eps)*A)) + c_v * mean((v - R)^2)
        - c_e * mean(entropy),
    with r the product of per-head probability ratios and A the
    batch-normalized (reward - value_estimate).
    """
    c_e = hyper.entropy_coef if entropy_coef is None else entropy_coef
    x, actions, old_lp, rewards, values_old = _batch_arrays(batch, reward_scale)
    n = len(batch)

    adv = rewards - values_old
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    h1, h2, logits, value = net.forward(x)
    new_lp = _action_log_probs(logits, actions)
    ent = _entropies(logits)
    ratio = np.exp(new_lp - old_lp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * adv
    chosen = np.minimum(surr1, surr2)
    v_err = value - rewards
    loss = float(-chosen.mean() + hyper.value_coef * np.mean(v_err**2) - c_e * ent.mean())

    # d(loss)/d(log pi_new): only where the unclipped branch is active
    active = (surr1 <= surr2).astype(np.float64)
    dlp = -(active * ratio * adv) / n

    # expand to logits: dlogp/dz = onehot - p per head; entropy adds
    # c_e/n * p * (log p + H_head)
    ls = _log_softmax_heads(logits)
    p = np.exp(ls)
    dz = np.zeros_like(logits)
    rows = np.arange(n)
    for h, (a, b) in enumerate(zip(_HEAD_OFFSETS[:-1], _HEAD_OFFSETS[1:])):
        ph_ = p[:, a:b]
        onehot = np.zeros_like(ph_)
        onehot[rows, actions[:, h]] = 1.0
        dz[:, a:b] = dlp[:, None] * (onehot - ph_)
        h_head = -(ph_ * ls[:, a:b]).sum(axis=1, keepdims=True)
        dz[:, a:b] += (c_e / n) * ph_ * (ls[:, a:b] + h_head)

    dv = (hyper.value_coef * 2.0 / n) * v_err

    dh2 = dz @ net.wp.T + dv[:, None] @ net.wv.T
    dh2 *= 1.0 - h2 * h2
    dh1 = dh2 @ net.w2.T
    dh1 *= 1.0 - h1 * h1

    grads = [
        x.T @ dh1,  # w1
        dh1.sum(axis=0),  # b1
        h1.T @ dh2,  # w2
        dh2.sum(axis=0),  # b2
        h2.T @ dz,  # wp
        dz.sum(axis=0),  # bp
        h2.T @ dv[:, None],  # wv
        np.array([dv.sum()]),  # bv
    ]
    flat_grad = np.concatenate([g.ravel() for g in grads])
    diag = {
        "ratio": ratio,
        "surr1": surr1,
        "surr2": surr2,
        "chosen": chosen,
        "advantage": adv,
        "entropy": ent,
    }
    return loss, flat_grad, diag


@dataclass(frozen=True)
class UpdateInfo:
    losses: tuple[float, ...]
    rejected: bool
    mean_entropy: float
    mean_ratio: float


def ppo_update(
    net: PolicyNetwork,
    batch: Sequence[Transition],
    hyper: PpoHyper,
    adam: AdamState | None = None,
    *,
    entropy_coef: float | None = None,
    reward_scale: float = 1.0,
) -> UpdateInfo:
    """Run `hyper.epochs` gradient steps on one batch, in place."""
    if len(batch) < 8:
        raise ValueError(f"PPO batch needs >= 8 transitions, got {len(batch)}")
    adam = adam or AdamState.init(net.n_params)
    losses = []
    last_diag: dict = {}
    for _ in range(hyper.epochs):
        loss, grad, diag = ppo_loss_and_grad(
            net, batch, hyper, entropy_coef=entropy_coef, reward_scale=reward_scale
        )
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            return UpdateInfo(
                losses=tuple(losses),
                rejected=True,
                mean_entropy=float(last_diag.get("entropy", np.array([math.nan])).mean()),
                mean_ratio=float(last_diag.get("ratio", np.array([math.nan])).mean()),
            )
        net.set_flat(adam.step(net.get_flat(), grad, hyper))
        losses.append(loss)
        last_diag = diag
    return UpdateInfo(
        losses=tuple(losses),
        rejected=False,
        mean_entropy=float(last_diag["entropy"].mean()),
        mean_ratio=float(last_diag["ratio"].mean()),
    )


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainStepRecord:
    step: int
    patient_id: str
    params_text: str
    d_prime: float
    best_so_far: float  # per patient, raw d'
    unique_evals: int  # per patient
    cache_hit: bool


TRAIN_CSV_COLUMNS = [
    "step",
    "patient_id",
    "params",
    "d_prime",
    "best_so_far",
    "unique_evals",
    "cache_hit",
]


@dataclass(frozen=True)
class TrainLog:
    records: tuple[TrainStepRecord, ...]
    patient_ids: tuple[str, ...]
    seed: int
    steps_to_global_max: dict[str, int | None] = field(default_factory=dict)

    def best_so_far_curve(self, patient_id: str) -> list[float]:
        return [r.best_so_far for r in self.records if r.patient_id == patient_id]

    def final_best(self, patient_id: str) -> float:
        curve = self.best_so_far_curve(patient_id)
        if not curve:
            raise ValueError(f"patient {patient_id} has no records")
        return curve[-1]

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRAIN_CSV_COLUMNS)
            for r in self.records:
                w.writerow(
                    [
                        r.step,
                        r.patient_id,
                        r.params_text,
                        repr(r.d_prime),
                        repr(r.best_so_far),
                        r.unique_evals,
                        int(r.cache_hit),
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "TrainLog":
        with open(path, "r", encoding="utf-8", newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != TRAIN_CSV_COLUMNS:
                raise ValueError(f"unexpected training CSV header in {path}")
            records = [
                TrainStepRecord(
                    step=int(rec[0]),
                    patient_id=rec[1],
                    params_text=rec[2],
                    d_prime=float(rec[3]),
                    best_so_far=float(rec[4]),
                    unique_evals=int(rec[5]),
                    cache_hit=bool(int(rec[6])),
                )
                for rec in r
            ]
        ids = tuple(dict.fromkeys(rec.patient_id for rec in records))
        return cls(records=tuple(records), patient_ids=ids, seed=-1)


def train(
    phantoms: Sequence[Phantom],
    *,
    tables: Mapping[str, SweepTable] | None = None,
    total_steps: int = 300,
    hyper: PpoHyper | None = None,
    seed: int = 0,
    cfg: ScannerConfig | None = None,
    materials: MaterialTable | None = None,
    objective: str = "mean",
    base_seed: int | None = None,
    env: ProtocolEnv | None = None,
) -> tuple[PolicyNetwork, TrainLog]:
    """Train the PPO agent round-robin over the phantoms.

    `seed` controls network init and action sampling only; the reward
    landscape is pinned by `base_seed` (defaults to the tables' sweep seed,
    else 0), so different training seeds explore the same landscape.
    """
    hyper = hyper or PpoHyper()
    if env is None:
        if base_seed is None:
            base_seed = next(iter(tables.values())).base_seed if tables else 0
        env = ProtocolEnv(
            phantoms,
            cfg=cfg,
            materials=materials,
            base_seed=base_seed,
            objective=objective,
            tables=tables,
        )
    net = PolicyNetwork.init(seed=derive_seed("policy", seed))
    adam = AdamState.init(net.n_params)
    rng = philox("ppo-actions", seed)

    n_updates = max(1, total_steps // hyper.batch_size)
    update_i = 0
    buffer: list[Transition] = []
    records: list[TrainStepRecord] = []
    best: dict[str, float] = {ph.attrs.patient_id: 0.0 for ph in phantoms}
    steps_to_max: dict[str, int | None] = {ph.attrs.patient_id: None for ph in phantoms}
    oracle_max = {
        pid: tables[pid].max_objective for pid in (tables or {}) if pid in best
    }
    running_max = 0.0

    for step in range(total_steps):
        idx = step % len(phantoms)
        pid = phantoms[idx].attrs.patient_id
        obs = env.observation(idx)
        action, log_prob, value = net.sample(obs, rng)
        res = env.step(idx, action)
        running_max = max(running_max, res.reward)
        buffer.append(
            Transition(
                obs=(float(obs[0]), float(obs[1])),
                action=action.indices,
                log_prob=log_prob,
                reward=res.reward,
                value_estimate=value,
            )
        )
        best[pid] = max(best[pid], res.reward)
        if (
            steps_to_max[pid] is None
            and pid in oracle_max
            and res.reward >= oracle_max[pid] - 1e-12
        ):
            steps_to_max[pid] = res.unique_evals
        records.append(
            TrainStepRecord(
                step=step,
                patient_id=pid,
                params_text=res.params.to_text(),
                d_prime=res.reward,
                best_so_far=best[pid],
                unique_evals=res.unique_evals,
                cache_hit=res.cache_hit,
            )
        )
        if len(buffer) >= hyper.batch_size:
            frac = update_i / max(1, n_updates - 1)
            c_e = hyper.entropy_coef * max(0.0, 1.0 - frac)
            ppo_update(
                net,
                buffer,
                hyper,
                adam,
                entropy_coef=c_e,
                reward_scale=max(running_max, 1e-9),
            )
            update_i += 1
            buffer.clear()

    log = TrainLog(
        records=tuple(records),
        patient_ids=tuple(ph.attrs.patient_id for ph in phantoms),
        seed=seed,
        steps_to_global_max=steps_to_max,
    )
    return net, log


# ---------------------------------------------------------------------------
# efficiency report


def efficiency_report(log: TrainLog, tables: Mapping[str, SweepTable]) -> dict:
    """Per patient: unique evaluations to reach the sweep max, the reduction
    relative to the 468 exhaustive evaluations, and the final d' gap."""
    per_patient = {}
    reductions = []
    for pid in log.patient_ids:
        if pid not in tables:
            raise ValueError(f"patient {pid} missing from sweep tables")
        table = tables[pid]
        oracle = table.max_objective
        recs = [r for r in log.records if r.patient_id == pid]
        if not recs:
            raise ValueError(f"patient {pid} has no training records")
        reached = next((r for r in recs if r.d_prime >= oracle - 1e-12), None)
        steps = reached.unique_evals if reached is not None else None
        reduction = (1.0 - steps / N_CANONICAL_COMBINATIONS) if steps is not None else None
        gap = oracle - recs[-1].best_so_far
        per_patient[pid] = {
            "steps_to_optimum": steps,
            "reduction": reduction,
            "achieved_best": recs[-1].best_so_far,
            "oracle_max": oracle,
            "gap": gap,
            "oracle_params": table.best_row.params.to_text(),
        }
        if reduction is not None:
            reductions.append(reduction)
    return {
        "per_patient": per_patient,
        "mean_reduction": float(np.mean(reductions)) if reductions else None,
        "all_reached": all(v["steps_to_optimum"] is not None for v in per_patient.values()),
    }


# ---------------------------------------------------------------------------
# policy weight serialization

_POLICY_MAGIC = b"CTPPO1\n"


def save_policy(
    net: PolicyNetwork,
    path: str | os.PathLike,
    *,
    seed: int | None = None,
    hyper: PpoHyper | None = None,
) -> None:
    with open(path, "wb") as f:
        f.write(_POLICY_MAGIC)
        lines = [
            f"arch=obs:{N_OBS},hidden:{HIDDEN}x{HIDDEN},heads:{','.join(str(c) for c in HEAD_SIZES)},value:1",
            f"n_params={net.n_params}",
            f"seed={seed if seed is not None else 'none'}",
            f"hyper={hyper.to_text() if hyper is not None else 'none'}",
            "end",
        ]
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(net.get_flat().astype("<f8").tobytes())


def load_policy(path: str | os.PathLike) -> tuple[PolicyNetwork, dict]:
    with open(path, "rb") as f:
        if f.read(len(_POLICY_MAGIC)) != _POLICY_MAGIC:
            raise ValueError(f"{path} is not a policy weights file")
        meta: dict[str, str] = {}
        while True:
            line = b""
            while not line.endswith(b"\n"):
                ch = f.read(1)
                if not ch:
                    raise ValueError(f"truncated policy header in {path}")
                line += ch
            text = line.decode("ascii").strip()
            if text == "end":
                break
            key, _, val = text.partition("=")
            meta[key] = val
        net = PolicyNetwork.init(seed=0)
        n = int(meta["n_params"])
        if n != net.n_params:
            raise ValueError(f"policy file has {n} params, architecture needs {net.n_params}")
        flat = np.frombuffer(f.read(8 * n), dtype="<f8").copy()
        net.set_flat(flat)
    return net, meta
