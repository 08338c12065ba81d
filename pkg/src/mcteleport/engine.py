"""End-to-end teleportation protocol: sampled runs and exact averages.

The register layout is fixed: subsystem 0 is the receiver's half of the
entangled pair, subsystem 1 the sender's half, subsystem 2 the unknown
input state, flattened with subsystem 0 most significant.

Two evaluation routes are provided for every strategy.  ``monte_carlo``
samples full protocol runs (Haar-random inputs, Born-rule measurements).
``exact_average_fidelity`` enumerates every measurement branch as a linear
operator on the input, forms the conditioned completely positive map, and
converts its normalized maximally-entangled-state overlap f into the
average fidelity (D*f + 1)/(D + 1); it involves no sampling and serves as
the oracle the sampled statistics are checked against.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from math import ceil, log2

import numpy as np

from .channels import DEFAULT_TIE_TOL, SchmidtChannel, channel_state, make_channel
from .discrimination import StagePlan, build_stage_plan
from .qudit import (
    QuditState,
    _gxor_permutation,
    apply_gxor,
    fourier,
    haar_random_state,
    pauli_x_power,
    pauli_z_power,
)

KIND_DETERMINISTIC = "deterministic-me"
KIND_SMC = "mc-smc"
FALLBACKS = ("discard", "me", "guess")

# Branch sets with less Haar-averaged probability than this are treated as
# unreachable when conditioning.
MIN_BRANCH_MASS = 1e-12


@dataclass(frozen=True)
class StrategyConfig:
    """What the two parties agree to run.

    ``deterministic-me`` ignores ``k_max`` and ``fallback``.  For
    ``mc-smc``, up to ``k_max`` filtering stages are attempted; after the
    last inconclusive outcome the ``fallback`` applies:

    * ``me``: finish anyway with the minimum-error completion.
    * ``guess``: both of the sender's systems are read out in the
      computational basis and the receiver keeps the basis state left
      behind, shifted by the classically known index; equivalent to a
      measure-and-reprepare of the input, average fidelity 2/(D+1).
    * ``discard``: abort, no output state.
    """

    kind: str = KIND_SMC
    k_max: int = 1
    fallback: str = "me"

    def __post_init__(self):
        if self.kind not in (KIND_DETERMINISTIC, KIND_SMC):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}")
        if self.kind == KIND_SMC and self.k_max < 1:
            raise ValueError("k_max must be >= 1 for the staged strategy")


@dataclass(frozen=True)
class TeleportRecord:
    """Outcome trace of a single protocol run.

    ``stage_reached`` is 0 on the deterministic path, otherwise the index
    of the last filtering stage executed.  ``bob_state`` and
    ``run_fidelity`` are absent for discarded attempts.
    """

    input_state: QuditState
    stage_reached: int
    conclusive: bool
    alice_outcomes: tuple[int, int] | None
    classical_bits_used: int
    bob_state: QuditState | None
    run_fidelity: float | None


@lru_cache(maxsize=16)
def _correction_matrices(D: int) -> tuple[tuple[np.ndarray, ...], ...]:
    """Receiver corrections indexed [l][k]: X^-k Z^l."""
    rows = []
    for l in range(D):
        zl = pauli_z_power(D, l)
        row = []
        for k in range(D):
            mat = (pauli_x_power(D, -k) @ zl).entries
            mat.setflags(write=False)
            row.append(mat)
        rows.append(tuple(row))
    return tuple(rows)


class ProtocolRunner:
    """Prepared protocol for one channel and strategy; reusable across runs.

    The run loop works on raw (D, D, D) amplitude arrays with the stage
    operators applied as diagonals, but draws from the generator in
    exactly the same order and with the same Born weights as the public
    register operations, so a run is reproducible either way.
    """

    def __init__(
        self,
        channel: SchmidtChannel,
        cfg: StrategyConfig,
        tie_tolerance: float = DEFAULT_TIE_TOL,
    ):
        self.channel = channel
        self.cfg = cfg
        self.D = channel.D
        self._chvec = channel_state(channel).amplitudes
        self._finv = fourier(channel.D).dagger().entries
        self._corrections = _correction_matrices(channel.D)
        self._bits_base = 2 * ceil(log2(channel.D))
        self._perm = _gxor_permutation((self.D,) * 3, 1, 2)
        self.plan: StagePlan | None = None
        self._stage_diags: list[tuple[np.ndarray, np.ndarray]] = []
        if cfg.kind == KIND_SMC:
            self.plan = build_stage_plan(channel, tie_tolerance)
            if cfg.k_max > self.plan.M:
                raise ValueError(
                    f"k_max={cfg.k_max} exceeds the {self.plan.M} stage(s) "
                    f"this channel admits"
                )
            self._stage_diags = [
                (np.diag(s.K_s.entries).copy(), np.diag(s.K_f.entries).copy())
                for s in self.plan.stages[: cfg.k_max]
            ]

    @staticmethod
    def _sample_axis(probs: np.ndarray, rng: np.random.Generator) -> int:
        cum = np.cumsum(probs)
        outcome = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return min(outcome, probs.size - 1)

    def run(self, input_state: QuditState, rng: np.random.Generator) -> TeleportRecord:
        if input_state.dims != (self.D,):
            raise ValueError(
                f"input must be a single qudit of dimension {self.D}, "
                f"got dims {input_state.dims}"
            )
        D = self.D
        t = (
            np.multiply.outer(self._chvec, input_state.amplitudes)
            .ravel()[self._perm]
            .reshape(D, D, D)
        )

        stage_reached = 0
        executed = 0
        conclusive = True
        if self.cfg.kind == KIND_SMC:
            conclusive = False
            for k, (ks_diag, kf_diag) in enumerate(self._stage_diags, start=1):
                psi = t * ks_diag[None, :, None]
                p_s = np.vdot(psi, psi).real
                stage_reached = executed = k
                if rng.random() < p_s:
                    t = psi / np.sqrt(p_s)
                    conclusive = True
                    break
                psi = t * kf_diag[None, :, None]
                t = psi / np.sqrt(np.vdot(psi, psi).real)

        outcomes: tuple[int, int] | None
        bob_vec: np.ndarray | None
        if conclusive or self.cfg.fallback == "me":
            rotated = np.matmul(self._finv, t)
            probs_l = (np.abs(rotated) ** 2).sum(axis=(0, 2))
            l = self._sample_axis(probs_l, rng)
            slice_l = rotated[:, l, :] / np.sqrt(probs_l[l])
            probs_k = (np.abs(slice_l) ** 2).sum(axis=0)
            k = self._sample_axis(probs_k, rng)
            bob_vec = self._corrections[l][k] @ (slice_l[:, k] / np.sqrt(probs_k[k]))
            outcomes = (l, k)
        elif self.cfg.fallback == "guess":
            probs_m = (np.abs(t) ** 2).sum(axis=(0, 2))
            m = self._sample_axis(probs_m, rng)
            slice_m = t[:, m, :] / np.sqrt(probs_m[m])
            probs_k = (np.abs(slice_m) ** 2).sum(axis=0)
            k = self._sample_axis(probs_k, rng)
            bob_vec = np.roll(slice_m[:, k] / np.sqrt(probs_k[k]), -k)
            outcomes = (m, k)
        else:  # discard
            bob_vec = None
            outcomes = None

        if bob_vec is None:
            bob = None
            fid = None
        else:
            bob = QuditState((D,), bob_vec)
            fid = float(np.abs(np.vdot(input_state.amplitudes, bob_vec)) ** 2)
        return TeleportRecord(
            input_state=input_state,
            stage_reached=stage_reached,
            conclusive=conclusive,
            alice_outcomes=outcomes,
            classical_bits_used=self._bits_base + executed,
            bob_state=bob,
            run_fidelity=fid,
        )

    def run_haar(self, rng: np.random.Generator) -> TeleportRecord:
        return self.run(haar_random_state(self.D, rng), rng)


def run_protocol(
    channel: SchmidtChannel,
    input_state: QuditState,
    cfg: StrategyConfig,
    rng: np.random.Generator,
    tie_tolerance: float = DEFAULT_TIE_TOL,
) -> TeleportRecord:
    """Run the full protocol once on a given input state."""
    return ProtocolRunner(channel, cfg, tie_tolerance).run(input_state, rng)


# ---------------------------------------------------------------------------
# Monte Carlo sampling


@dataclass(frozen=True)
class AggregateStats:
    """Per-bucket and overall summaries of a batch of protocol runs.

    Buckets are the conclusive stages in order, then the terminal bucket
    (exhausted or discarded attempts); for the deterministic strategy there
    is a single bucket.  Counts over all buckets sum to ``trials``.
    Fidelity columns hold NaN where a bucket is empty or carries no output
    state (discarded attempts).
    """

    trials: int
    labels: tuple[str, ...]
    counts: np.ndarray
    probabilities: np.ndarray
    mean_fidelity: np.ndarray
    stderr_fidelity: np.ndarray
    min_fidelity: np.ndarray
    max_fidelity: np.ndarray
    conclusive_probability: float
    overall_mean_fidelity: float
    overall_stderr_fidelity: float

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def stage_count(self, k: int) -> int:
        return int(self.counts[self.index(f"stage{k}")])

    def stage_probability(self, k: int) -> float:
        return float(self.probabilities[self.index(f"stage{k}")])

    def stage_mean_fidelity(self, k: int) -> float:
        return float(self.mean_fidelity[self.index(f"stage{k}")])

    def stage_stderr_fidelity(self, k: int) -> float:
        return float(self.stderr_fidelity[self.index(f"stage{k}")])


def _bucket_labels(cfg: StrategyConfig) -> tuple[str, ...]:
    if cfg.kind == KIND_DETERMINISTIC:
        return ("deterministic",)
    terminal = {"me": "exhausted-me", "guess": "exhausted-guess", "discard": "discarded"}
    return tuple(f"stage{k}" for k in range(1, cfg.k_max + 1)) + (terminal[cfg.fallback],)


def _mc_chunk(
    D: int,
    coeffs: tuple[float, ...],
    kind: str,
    k_max: int,
    fallback: str,
    tie_tolerance: float,
    seed: int,
    start: int,
    count: int,
):
    """Simulate trials [start, start+count); per-trial generators depend
    only on (seed, trial index), so results are worker-count independent."""
    channel = make_channel(D, coeffs)
    cfg = StrategyConfig(kind=kind, k_max=k_max, fallback=fallback)
    runner = ProtocolRunner(channel, cfg, tie_tolerance)
    stages = np.empty(count, dtype=np.int64)
    conclusive = np.empty(count, dtype=bool)
    fids = np.full(count, np.nan)
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence((seed, start + i)))
        rec = runner.run_haar(rng)
        stages[i] = rec.stage_reached
        conclusive[i] = rec.conclusive
        if rec.run_fidelity is not None:
            fids[i] = rec.run_fidelity
    return stages, conclusive, fids


def _summarize(values: np.ndarray) -> tuple[float, float, float, float]:
    """Mean, standard error, min, max of a fidelity sample (NaN if empty)."""
    values = values[~np.isnan(values)]
    if values.size == 0:
        return np.nan, np.nan, np.nan, np.nan
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else np.nan
    return mean, stderr, float(values.min()), float(values.max())


def monte_carlo(
    channel: SchmidtChannel,
    cfg: StrategyConfig,
    trials: int,
    seed: int,
    workers: int = 1,
    tie_tolerance: float = DEFAULT_TIE_TOL,
) -> AggregateStats:
    """Sample ``trials`` protocol runs on fresh Haar inputs.

    Deterministic given ``seed`` regardless of ``workers``: each trial owns
    a generator derived from (seed, trial index), and aggregation reduces
    the per-trial results in trial order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    # Validate the configuration against the channel before spawning work.
    ProtocolRunner(channel, cfg, tie_tolerance)

    args = (
        channel.D,
        tuple(float(c) for c in channel.coeffs),
        cfg.kind,
        cfg.k_max,
        cfg.fallback,
        tie_tolerance,
        seed,
    )
    if workers <= 1:
        stages, conclusive, fids = _mc_chunk(*args, 0, trials)
    else:
        bounds = np.linspace(0, trials, workers + 1).astype(int)
        chunks = [(int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_chunk_star, [(args, s, c) for s, c in chunks]))
        stages = np.concatenate([p[0] for p in parts])
        conclusive = np.concatenate([p[1] for p in parts])
        fids = np.concatenate([p[2] for p in parts])

    labels = _bucket_labels(cfg)
    counts = np.zeros(len(labels), dtype=int)
    stats = np.full((len(labels), 4), np.nan)
    for i, label in enumerate(labels):
        if label == "deterministic":
            mask = np.ones(trials, dtype=bool)
        elif label.startswith("stage"):
            mask = conclusive & (stages == int(label[5:]))
        else:
            mask = ~conclusive
        counts[i] = int(mask.sum())
        stats[i] = _summarize(fids[mask])

    overall_mean, overall_stderr, _, _ = _summarize(fids)
    return AggregateStats(
        trials=trials,
        labels=labels,
        counts=counts,
        probabilities=counts / trials,
        mean_fidelity=stats[:, 0],
        stderr_fidelity=stats[:, 1],
        min_fidelity=stats[:, 2],
        max_fidelity=stats[:, 3],
        conclusive_probability=float(np.mean(conclusive)),
        overall_mean_fidelity=overall_mean,
        overall_stderr_fidelity=overall_stderr,
    )


def _mc_chunk_star(packed):
    args, start, count = packed
    return _mc_chunk(*args, start, count)


# ---------------------------------------------------------------------------
# Exact branch enumeration


class _BranchEnumeration:
    """All measurement branches of a strategy as operators on the input.

    Everything before the measurements is linear in the input state, so
    feeding the D basis states through the pipeline and projecting on each
    outcome yields, branch by branch, a D x D operator M_i (receiver
    correction included).  The Haar-averaged fidelity of any branch set
    follows from Q = sum |tr M_i|^2 and T = sum tr(M_i^+ M_i) as
    (Q + T) / ((D + 1) T); T/D is the set's total probability.
    """

    def __init__(
        self,
        channel: SchmidtChannel,
        cfg: StrategyConfig,
        tie_tolerance: float = DEFAULT_TIE_TOL,
    ):
        D = channel.D
        self.D = D
        self.cfg = cfg
        chvec = channel_state(channel).amplitudes
        finv = fourier(D).dagger().entries
        corrections = _correction_matrices(D)

        # tensor[b, m2, m3, j]: amplitudes after the controlled shift, for
        # basis input |j>.
        tensor = np.zeros((D, D, D, D), dtype=complex)
        for j in range(D):
            basis = np.zeros(D, dtype=complex)
            basis[j] = 1.0
            amps = np.multiply.outer(chvec, basis).ravel()
            state = apply_gxor(QuditState((D, D, D), amps), 1, 2)
            tensor[..., j] = state.tensor()

        def me_branches(t: np.ndarray) -> list[np.ndarray]:
            rotated = np.einsum("ls,bsmj->blmj", finv, t)
            return [
                corrections[l][k] @ rotated[:, l, k, :]
                for l in range(D)
                for k in range(D)
            ]

        def guess_branches(t: np.ndarray) -> list[np.ndarray]:
            return [
                pauli_x_power(D, -k).entries @ t[:, m, k, :]
                for m in range(D)
                for k in range(D)
            ]

        def mass(t: np.ndarray) -> float:
            return float(np.sum(np.abs(t) ** 2)) / D

        self.conclusive_ops: dict[int, list[np.ndarray]] = {}
        self.conclusive_mass: dict[int, float] = {}
        if cfg.kind == KIND_DETERMINISTIC:
            self.deterministic_ops = me_branches(tensor)
            self.exhausted_mass = 0.0
            self.exhausted_me_ops: list[np.ndarray] = []
            self.exhausted_guess_ops: list[np.ndarray] = []
            total = mass(tensor)
        else:
            plan = build_stage_plan(channel, tie_tolerance)
            if cfg.k_max > plan.M:
                raise ValueError(
                    f"k_max={cfg.k_max} exceeds the {plan.M} stage(s) "
                    f"this channel admits"
                )
            self.deterministic_ops = []
            cur = tensor
            total = 0.0
            for k, stage in enumerate(plan.stages[: cfg.k_max], start=1):
                ks = np.diag(stage.K_s.entries)
                kf = np.diag(stage.K_f.entries)
                succ = cur * ks[None, :, None, None]
                self.conclusive_ops[k] = me_branches(succ)
                self.conclusive_mass[k] = mass(succ)
                total += self.conclusive_mass[k]
                cur = cur * kf[None, :, None, None]
            self.exhausted_mass = mass(cur)
            total += self.exhausted_mass
            if self.exhausted_mass > MIN_BRANCH_MASS:
                self.exhausted_me_ops = me_branches(cur)
                self.exhausted_guess_ops = guess_branches(cur)
            else:
                self.exhausted_me_ops = []
                self.exhausted_guess_ops = []
        if abs(total - 1.0) > 1e-10:
            raise AssertionError(f"branch probabilities sum to {total!r}, not 1")

    @staticmethod
    def average_fidelity(ops: list[np.ndarray], D: int) -> float:
        q = sum(abs(np.trace(m)) ** 2 for m in ops)
        t = sum(float(np.sum(np.abs(m) ** 2)) for m in ops)
        if t / D < MIN_BRANCH_MASS:
            raise ValueError("branch set has ~zero probability; fidelity undefined")
        return (q + t) / ((D + 1) * t)


def exact_average_fidelity(
    channel: SchmidtChannel,
    cfg: StrategyConfig,
    condition: str = "overall",
    stage: int | None = None,
    tie_tolerance: float = DEFAULT_TIE_TOL,
) -> float:
    """Haar-averaged teleportation fidelity by exact branch enumeration.

    ``condition`` selects which branches count:

    * ``overall``: every branch the strategy produces.  With the
      ``discard`` fallback this is conditioned on a conclusive outcome,
      since discarded attempts deliver no state.
    * ``conclusive-at-stage``: branches conclusive at stage ``stage``.
    * ``inconclusive-then-me``: the attempt filtered inconclusive through
      all ``k_max`` stages and was then finished with the minimum-error
      completion (whatever ``cfg.fallback`` says).

    Raises ValueError when the condition has no probability mass for the
    channel, e.g. a stage beyond ``k_max`` or an inconclusive branch that
    cannot occur.
    """
    enum = _BranchEnumeration(channel, cfg, tie_tolerance)
    D = channel.D
    if condition == "overall":
        if cfg.kind == KIND_DETERMINISTIC:
            ops = enum.deterministic_ops
        else:
            ops = [m for k in enum.conclusive_ops for m in enum.conclusive_ops[k]]
            if cfg.fallback == "me":
                ops += enum.exhausted_me_ops
            elif cfg.fallback == "guess":
                ops += enum.exhausted_guess_ops
        return _BranchEnumeration.average_fidelity(ops, D)
    if cfg.kind == KIND_DETERMINISTIC:
        raise ValueError(f"condition {condition!r} needs the staged strategy")
    if condition == "conclusive-at-stage":
        if stage is None:
            raise ValueError("condition 'conclusive-at-stage' requires a stage")
        if stage not in enum.conclusive_ops:
            raise ValueError(f"stage {stage} is outside the executed range")
        if enum.conclusive_mass[stage] < MIN_BRANCH_MASS:
            raise ValueError(f"stage {stage} is unreachable for this channel")
        return _BranchEnumeration.average_fidelity(enum.conclusive_ops[stage], D)
    if condition == "inconclusive-then-me":
        if enum.exhausted_mass < MIN_BRANCH_MASS:
            raise ValueError("the strategy has no inconclusive branch on this channel")
        return _BranchEnumeration.average_fidelity(enum.exhausted_me_ops, D)
    raise ValueError(f"unknown condition {condition!r}")


def exact_branch_probabilities(
    channel: SchmidtChannel,
    cfg: StrategyConfig,
    tie_tolerance: float = DEFAULT_TIE_TOL,
) -> dict[str, float]:
    """Haar-averaged probability of each branch bucket, from enumeration."""
    enum = _BranchEnumeration(channel, cfg, tie_tolerance)
    if cfg.kind == KIND_DETERMINISTIC:
        return {"deterministic": 1.0}
    out = {f"stage{k}": enum.conclusive_mass[k] for k in sorted(enum.conclusive_ops)}
    out["exhausted"] = enum.exhausted_mass
    return out
