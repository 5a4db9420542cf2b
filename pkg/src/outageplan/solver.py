"""Tabular Q-learning on the planning MDP, plus an exact solver.

Training runs in chunks: the uniform stream for a chunk of episodes is
drawn up front from one PCG64 generator and handed to the compiled kernel,
so a fixed seed reproduces training bit-for-bit on either backend. The
exact solver does backward induction with the factorized price-chain
expectation and serves as the oracle the learned policy is judged against.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from outageplan import _kernels, persist
from outageplan.errors import ArtifactMismatchError
from outageplan.mdp import InstallAction, PlanningEnv, PlanningState

CONVERGENCE_EPOCH = 10_000

QTABLE_FORMAT = "outageplan-qtable"


@dataclass(frozen=True)
class TrainingSchedule:
    """Episode budget and linear decay of the learning and exploration rates."""

    episodes: int
    alpha_start: float = 0.5
    alpha_end: float = 0.01
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        for name in ("alpha_start", "alpha_end"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        for name in ("epsilon_start", "epsilon_end"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.alpha_end > self.alpha_start:
            raise ValueError("alpha must not grow over training")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon must not grow over training")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")


def schedule_at(schedule: TrainingSchedule, episode: int) -> tuple[float, float]:
    """(alpha, epsilon) for one episode, linear in the episode index."""
    if not 0 <= episode < schedule.episodes:
        raise ValueError(f"episode {episode} outside [0, {schedule.episodes})")
    if schedule.episodes == 1:
        frac = 0.0
    else:
        frac = episode / (schedule.episodes - 1)
    alpha = schedule.alpha_start + (schedule.alpha_end - schedule.alpha_start) * frac
    epsilon = schedule.epsilon_start + (schedule.epsilon_end - schedule.epsilon_start) * frac
    return alpha, epsilon


@dataclass(frozen=True)
class ConvergencePoint:
    episode: int
    max_q_delta: float
    mean_return: float


class QTable:
    """Dense action values over the reachable non-terminal states.

    Terminal states store nothing; their value is zero by construction.
    Rows align with the codec's sorted state-code enumeration.
    """

    def __init__(
        self,
        state_codes: np.ndarray,
        values: np.ndarray,
        visits: np.ndarray,
        action_labels: Sequence[str],
        config_hash: str | None,
        schedule: dict,
        seed: int,
        codec_meta: dict,
    ):
        if values.shape != visits.shape or values.shape[0] != state_codes.shape[0]:
            raise ValueError("state_codes, values and visits must align")
        self.state_codes = state_codes
        self.values = values
        self.visits = visits
        self.action_labels = tuple(action_labels)
        self.config_hash = config_hash
        self.schedule = dict(schedule)
        self.seed = seed
        self.codec_meta = dict(codec_meta)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def index_of(self, code: int) -> int:
        i = int(np.searchsorted(self.state_codes, code))
        if i >= self.n_states or self.state_codes[i] != code:
            raise KeyError(f"state code {code} not stored; is the state reachable and non-terminal?")
        return i

    def action_values(self, code: int) -> np.ndarray:
        return self.values[self.index_of(code)]

    def greedy_index(self, code: int) -> int:
        # first maximum wins: do-nothing, then unit-major, level-minor
        return int(np.argmax(self.action_values(code)))

    def greedy_policy(self) -> np.ndarray:
        return np.argmax(self.values, axis=1).astype(np.int64)

    def save(self, path) -> None:
        meta = {
            "format": QTABLE_FORMAT,
            "version": 1,
            "config_hash": self.config_hash,
            "schedule": self.schedule,
            "seed": self.seed,
            "codec": self.codec_meta,
            "action_labels": list(self.action_labels),
        }
        persist.save_container(
            path,
            meta,
            {"state_codes": self.state_codes, "values": self.values, "visits": self.visits},
        )

    @classmethod
    def load(cls, path, expect_config_hash: str | None = None) -> "QTable":
        meta, arrays = persist.load_container(path)
        if meta.get("format") != QTABLE_FORMAT:
            raise ArtifactMismatchError(f"{path}: not a Q-table file")
        if expect_config_hash is not None and meta.get("config_hash") != expect_config_hash:
            raise ArtifactMismatchError(
                f"{path}: Q-table was trained for config {meta.get('config_hash')!r}, "
                f"active config is {expect_config_hash!r}"
            )
        return cls(
            state_codes=arrays["state_codes"],
            values=arrays["values"],
            visits=arrays["visits"],
            action_labels=meta["action_labels"],
            config_hash=meta.get("config_hash"),
            schedule=meta.get("schedule", {}),
            seed=meta.get("seed", 0),
            codec_meta=meta.get("codec", {}),
        )


@dataclass
class TrainResult:
    qtable: QTable
    convergence: list[ConvergencePoint]


def greedy_action(qtable: QTable, env: PlanningEnv, state: PlanningState) -> InstallAction:
    """Greedy action at a state; terminal states have none."""
    if env.is_terminal(state):
        raise ValueError(f"no greedy action at terminal period {state.period}")
    code = env.codec.code_of(state)
    return env.actions[qtable.greedy_index(code)]


def train(
    env: PlanningEnv,
    schedule: TrainingSchedule,
    rng: np.random.Generator | None = None,
    config_hash: str | None = None,
) -> TrainResult:
    """Epsilon-greedy tabular Q-learning over the configured episode budget.

    Q starts at zero, which is optimistic here because every reward is a
    cost; the convergence log records the largest absolute Q update and the
    mean behavior-policy return per epoch of up to 10^4 episodes.
    """
    tables = env.kernel_tables()
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(schedule.seed))
    kernel = _kernels.get_impl("qlearn_chunk")
    n_units = len(env.catalog)
    q = np.zeros((tables.state_codes.shape[0], tables.n_actions))
    visits = np.zeros_like(q, dtype=np.int64)
    log: list[ConvergencePoint] = []
    done = 0
    while done < schedule.episodes:
        m = min(CONVERGENCE_EPOCH, schedule.episodes - done)
        idx = np.arange(done, done + m, dtype=np.float64)
        if schedule.episodes == 1:
            frac = np.zeros(1)
        else:
            frac = idx / (schedule.episodes - 1)
        alphas = schedule.alpha_start + (schedule.alpha_end - schedule.alpha_start) * frac
        epsilons = schedule.epsilon_start + (schedule.epsilon_end - schedule.epsilon_start) * frac
        uniforms = rng.random((m, tables.horizon, 2 + n_units))
        max_delta, total_return, violations = kernel(
            q,
            visits,
            tables.state_codes,
            tables.cap_next,
            tables.invest,
            tables.cost_of_cap,
            tables.ladder_sizes,
            tables.price_strides,
            tables.advance_prob,
            tables.horizon,
            tables.p_full,
            tables.c_full,
            schedule.gamma,
            uniforms,
            alphas,
            epsilons,
            tables.q_lower,
        )
        if violations:
            raise RuntimeError(
                f"{violations} Q updates left [{tables.q_lower}, 0]; "
                "rewards or schedule are inconsistent"
            )
        done += m
        log.append(
            ConvergencePoint(episode=done, max_q_delta=float(max_delta), mean_return=float(total_return) / m)
        )
    labels = [env.action_label(a) for a in env.actions]
    qtable = QTable(
        state_codes=tables.state_codes.copy(),
        values=q,
        visits=visits,
        action_labels=labels,
        config_hash=config_hash,
        schedule=asdict(schedule),
        seed=schedule.seed,
        codec_meta={
            "horizon": tables.horizon,
            "p_full": tables.p_full,
            "c_full": tables.c_full,
            "n_actions": tables.n_actions,
        },
    )
    return TrainResult(qtable=qtable, convergence=log)


def write_convergence_csv(points: Sequence[ConvergencePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "max_q_delta", "mean_return"])
        for p in points:
            writer.writerow([p.episode, persist.format_float(p.max_q_delta), persist.format_float(p.mean_return)])


class ExactSolution:
    """Optimal state/action values from backward induction.

    Arrays are per period: q[t] has shape (P, C_t, A) over the full price
    grid and the capacity prefix reachable at t. Price expectation uses the
    per-unit chain matrices, so values are exact up to float rounding.
    """

    def __init__(self, env: PlanningEnv, q_per_period: list[np.ndarray], v_per_period: list[np.ndarray]):
        self.env = env
        self.q_per_period = q_per_period
        self.v_per_period = v_per_period

    def q_values(self, state: PlanningState) -> np.ndarray:
        codec = self.env.codec
        p = codec.price_combo(state.price_idx)
        c = codec.cap_index[tuple(state.installs)]
        return self.q_per_period[state.period][p, c]

    def value(self, state: PlanningState) -> float:
        if state.period >= self.env.horizon:
            return 0.0
        codec = self.env.codec
        p = codec.price_combo(state.price_idx)
        c = codec.cap_index[tuple(state.installs)]
        return float(self.v_per_period[state.period][p, c])

    def optimal_action_index(self, state: PlanningState) -> int:
        return int(np.argmax(self.q_values(state)))

    def expected_return(self) -> float:
        return float(self.v_per_period[0][0, 0])

    def greedy_policy(self) -> np.ndarray:
        """Optimal action per stored Q-table row, aligned with the codec."""
        codec = self.env.codec
        parts = []
        for t in range(self.env.horizon):
            combos = codec.period_combos[t]
            c_count = codec.cap_count_at(t)
            q_t = self.q_per_period[t][combos, :c_count, :]
            parts.append(np.argmax(q_t, axis=2).reshape(-1))
        return np.concatenate(parts).astype(np.int64)


def _price_expectation(env: PlanningEnv, v_next: np.ndarray) -> np.ndarray:
    """E[V(p', .) | p] over the factorized per-unit price transitions."""
    codec = env.codec
    shape = tuple(int(n) for n in codec.ladder_sizes) + (v_next.shape[1],)
    out = v_next.reshape(shape)
    for u, entry in enumerate(env.catalog):
        mat = entry.chain.transition_matrix()
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [u])), 0, u)
    return out.reshape(codec.p_full, v_next.shape[1])


def value_iteration(env: PlanningEnv, gamma: float = 1.0, max_states: int = 2_000_000) -> ExactSolution:
    """Finite-horizon backward induction over the full reachable state space.

    Refuses instances whose census exceeds max_states.
    """
    census = env.codec.census()
    if census.total > max_states:
        raise ValueError(
            f"state space has {census.total} states, above the enumeration cap {max_states}"
        )
    if env._cost_of_cap is None:
        raise RuntimeError("attach a metamodel before solving")
    codec = env.codec
    invest = env.invest_table()
    cost_of_cap = env._cost_of_cap
    q_per_period: list[np.ndarray] = [None] * env.horizon  # type: ignore[list-item]
    v_per_period: list[np.ndarray] = [None] * env.horizon  # type: ignore[list-item]
    v_next = np.zeros((codec.p_full, codec.cap_count_at(env.horizon)))
    for t in range(env.horizon - 1, -1, -1):
        c_count = codec.cap_count_at(t)
        ev = _price_expectation(env, v_next)
        cap_next = codec.cap_next[:c_count]
        q_t = (
            -invest[:, None, :]
            - cost_of_cap[cap_next][None, :, :]
            + gamma * ev[:, cap_next]
        )
        v_t = q_t.max(axis=2)
        q_per_period[t] = q_t
        v_per_period[t] = v_t
        v_next = v_t
    return ExactSolution(env=env, q_per_period=q_per_period, v_per_period=v_per_period)


def policy_value(env: PlanningEnv, policy: np.ndarray, gamma: float = 1.0) -> float:
    """Exact expected return of a fixed policy given per-row action indices
    aligned with the codec's state enumeration."""
    if env._cost_of_cap is None:
        raise RuntimeError("attach a metamodel before evaluating a policy")
    codec = env.codec
    if policy.shape != (codec.n_states,):
        raise ValueError(f"policy must have shape ({codec.n_states},)")
    invest = env.invest_table()
    cost_of_cap = env._cost_of_cap
    v_next = np.zeros((codec.p_full, codec.cap_count_at(env.horizon)))
    for t in range(env.horizon - 1, -1, -1):
        c_count = codec.cap_count_at(t)
        combos = codec.period_combos[t]
        start = codec.block_starts[t]
        block = policy[start : start + len(combos) * c_count].reshape(len(combos), c_count)
        actions = np.zeros((codec.p_full, c_count), dtype=np.int64)
        actions[combos, :] = block
        ev = _price_expectation(env, v_next)
        cap2 = codec.cap_next[np.arange(c_count)[None, :], actions]
        rows = np.arange(codec.p_full)[:, None]
        v_t = -invest[rows, actions] - cost_of_cap[cap2] + gamma * ev[rows, cap2]
        v_next = v_t
    return float(v_next[0, 0])
