"""Policy rollout along forced price paths, and cross-model comparison.

A trained table is rolled out deterministically along a fixed price
trajectory (greedy actions, no exploration); two traces built on the same
planning structure but different outage models are then diffed: total
capacity, first investment period, technology mix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

from outageplan import persist
from outageplan.errors import ArtifactMismatchError, ConfigError
from outageplan.mdp import PlanningEnv, PlanningState
from outageplan.outage import OutageModel, SingleModel, SuperposedModel, duration_pmf
from outageplan.simulate import model_meta
from outageplan.solver import QTable, greedy_action

TRACE_FORMAT = "outageplan-trace"


@dataclass(frozen=True)
class PriceTrajectory:
    """One forced price path per unit over the K decision periods."""

    units: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.units) != len(self.values):
            raise ValueError("one price row per unit required")
        lengths = {len(v) for v in self.values}
        if len(lengths) != 1:
            raise ValueError("all trajectory rows must cover the same number of periods")

    @property
    def periods(self) -> int:
        return len(self.values[0])

    @classmethod
    def from_csv(cls, path) -> "PriceTrajectory":
        units = []
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "unit" or len(header) < 2:
                raise ConfigError(f"{path}: expected header 'unit,p1,...,pK'")
            expected = [f"p{i}" for i in range(1, len(header))]
            if header[1:] != expected:
                raise ConfigError(f"{path}: period columns must be {expected}")
            for row in reader:
                if not row:
                    continue
                units.append(row[0])
                try:
                    rows.append(tuple(float(x) for x in row[1:]))
                except ValueError as exc:
                    raise ConfigError(f"{path}: bad price row {row!r}") from exc
        if not units:
            raise ConfigError(f"{path}: no trajectory rows")
        return cls(units=tuple(units), values=tuple(rows))

    def indices_for(self, env: PlanningEnv) -> list[tuple[int, ...]]:
        """Ladder indices per period, validated against the catalog.

        Every price must sit on its unit's ladder, start at the top, never
        move back up, and never advance further than the chain can have
        walked (index <= period), otherwise the forced state is unreachable.
        """
        if self.units != env.unit_names:
            raise ConfigError(
                f"trajectory units {self.units} do not match catalog {env.unit_names}"
            )
        if self.periods != env.horizon:
            raise ConfigError(
                f"trajectory covers {self.periods} periods, planning horizon is {env.horizon}"
            )
        per_period: list[tuple[int, ...]] = []
        idx_prev = [0] * len(self.units)
        for t in range(self.periods):
            idx_t = []
            for u, entry in enumerate(env.catalog):
                price = self.values[u][t]
                ladder = entry.chain.values
                try:
                    idx = ladder.index(price)
                except ValueError:
                    raise ConfigError(
                        f"{entry.name}: price {price} in period {t + 1} is not on the ladder {ladder}"
                    ) from None
                if t == 0 and idx != 0:
                    raise ConfigError(
                        f"{entry.name}: trajectory must start at the top of the ladder ({ladder[0]})"
                    )
                if idx < idx_prev[u]:
                    raise ConfigError(f"{entry.name}: prices may not move back up the ladder")
                if idx > t:
                    raise ConfigError(
                        f"{entry.name}: price {price} unreachable by period {t + 1} "
                        "(the chain advances at most one rung per period)"
                    )
                idx_t.append(idx)
            idx_prev = idx_t
            per_period.append(tuple(idx_t))
        return per_period


@dataclass(frozen=True)
class TraceRow:
    period: int
    state: tuple
    action_label: str
    action_unit: Optional[str]
    action_level_kwh: Optional[float]


@dataclass(frozen=True)
class PolicyTrace:
    """Greedy decisions along one trajectory, plus summary totals."""

    rows: tuple[TraceRow, ...]
    config_hash: str
    planning_hash: str
    outage_model: dict
    trajectory: dict
    totals: dict
    exact_expected_return: Optional[float] = None

    def to_doc(self) -> dict:
        return {
            "format": TRACE_FORMAT,
            "version": 1,
            "config_hash": self.config_hash,
            "planning_hash": self.planning_hash,
            "outage_model": self.outage_model,
            "trajectory": self.trajectory,
            "totals": self.totals,
            "exact_expected_return": self.exact_expected_return,
            "rows": [
                {
                    "period": r.period,
                    "state": list(r.state),
                    "action": r.action_label,
                    "action_unit": r.action_unit,
                    "action_level_kwh": r.action_level_kwh,
                }
                for r in self.rows
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_doc(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolicyTrace":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != TRACE_FORMAT:
            raise ArtifactMismatchError(f"{path}: not a policy trace file")
        rows = tuple(
            TraceRow(
                period=r["period"],
                state=tuple(r["state"]),
                action_label=r["action"],
                action_unit=r.get("action_unit"),
                action_level_kwh=r.get("action_level_kwh"),
            )
            for r in doc["rows"]
        )
        return cls(
            rows=rows,
            config_hash=doc["config_hash"],
            planning_hash=doc["planning_hash"],
            outage_model=doc["outage_model"],
            trajectory=doc["trajectory"],
            totals=doc["totals"],
            exact_expected_return=doc.get("exact_expected_return"),
        )


def rollout(
    qtable: QTable,
    env: PlanningEnv,
    trajectory: PriceTrajectory,
    config_hash: str,
    planning_hash: str,
    exact_expected_return: float | None = None,
) -> PolicyTrace:
    """Greedy rollout with prices forced to the trajectory. Deterministic."""
    indices = trajectory.indices_for(env)
    installs: tuple[int, ...] = ()
    rows = []
    mix: dict[str, float] = {u: 0.0 for u in env.unit_names}
    first_invest: Optional[int] = None
    for t in range(env.horizon):
        state = PlanningState(period=t, price_idx=indices[t], installs=installs)
        action = greedy_action(qtable, env, state)
        if action.is_install:
            a = env.action_index(action)
            installs = tuple(sorted(installs + (a - 1,)))
            unit_name = env.unit_names[action.unit]
            level = env.levels_kwh[action.level]
            mix[unit_name] += level
            if first_invest is None:
                first_invest = t + 1
            row_unit, row_level = unit_name, level
        else:
            row_unit, row_level = None, None
        rows.append(
            TraceRow(
                period=t + 1,
                state=env.display_tuple(state),
                action_label=env.action_label(action),
                action_unit=row_unit,
                action_level_kwh=row_level,
            )
        )
    totals = {
        "total_kwh": float(sum(mix.values())),
        "first_investment_period": first_invest,
        "mix_kwh": {k: float(v) for k, v in mix.items()},
    }
    model = env.outage_model
    return PolicyTrace(
        rows=tuple(rows),
        config_hash=config_hash,
        planning_hash=planning_hash,
        outage_model=model_meta(model) if model is not None else {},
        trajectory={u: list(v) for u, v in zip(trajectory.units, trajectory.values)},
        totals=totals,
        exact_expected_return=exact_expected_return,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Side-by-side policy summary for two outage models."""

    label_a: str
    label_b: str
    trace_a: dict
    trace_b: dict
    deltas: dict

    def to_doc(self) -> dict:
        return {
            "format": "outageplan-comparison",
            "version": 1,
            "labels": [self.label_a, self.label_b],
            self.label_a: self.trace_a,
            self.label_b: self.trace_b,
            "deltas": self.deltas,
        }

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_doc(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def format_text(self) -> str:
        lines = []
        width = max(len(self.label_a), len(self.label_b))
        for label, side in ((self.label_a, self.trace_a), (self.label_b, self.trace_b)):
            mix = ", ".join(f"{k}={v:g}" for k, v in sorted(side["totals"]["mix_kwh"].items()) if v)
            lines.append(
                f"{label:<{width}}  total={side['totals']['total_kwh']:g} kWh"
                f"  first-investment-period={side['totals']['first_investment_period']}"
                f"  mix=[{mix or 'none'}]"
            )
            for row in side["rows"]:
                state = ",".join(str(x) for x in row["state"])
                lines.append(f"  period {row['period']}: ({state}) -> {row['action']}")
        d = self.deltas
        lines.append(
            f"delta total kWh ({self.label_a} - {self.label_b}): {d['total_kwh']:g}"
        )
        lines.append(f"delta first investment period: {d['first_investment_period']}")
        mix_delta = ", ".join(f"{k}={v:g}" for k, v in sorted(d["mix_kwh"].items()) if v)
        lines.append(f"delta mix kWh: [{mix_delta or 'none'}]")
        return "\n".join(lines)


def compare(trace_a: PolicyTrace, trace_b: PolicyTrace, label_a: str = "model-a", label_b: str = "model-b") -> ComparisonReport:
    """Diff two traces that share planning structure and trajectory."""
    if trace_a.planning_hash != trace_b.planning_hash:
        raise ArtifactMismatchError(
            "traces were built on different planning structures "
            f"({trace_a.planning_hash} vs {trace_b.planning_hash})"
        )
    if trace_a.trajectory != trace_b.trajectory:
        raise ArtifactMismatchError("traces follow different price trajectories")
    ta, tb = trace_a.totals, trace_b.totals
    fa, fb = ta["first_investment_period"], tb["first_investment_period"]
    if fa is None or fb is None:
        first_delta = None
    else:
        first_delta = fa - fb
    deltas = {
        "total_kwh": float(ta["total_kwh"] - tb["total_kwh"]),
        "first_investment_period": first_delta,
        "mix_kwh": {
            k: float(ta["mix_kwh"][k] - tb["mix_kwh"][k]) for k in ta["mix_kwh"]
        },
    }
    if label_a == label_b:
        raise ValueError("comparison labels must differ")
    ra = trace_a.exact_expected_return
    rb = trace_b.exact_expected_return
    if ra is not None and rb is not None:
        deltas["exact_expected_return"] = float(ra - rb)
    doc_a = trace_a.to_doc()
    doc_b = trace_b.to_doc()
    return ComparisonReport(
        label_a=label_a,
        label_b=label_b,
        trace_a={k: doc_a[k] for k in ("totals", "rows", "outage_model", "exact_expected_return")},
        trace_b={k: doc_b[k] for k in ("totals", "rows", "outage_model", "exact_expected_return")},
        deltas=deltas,
    )


def emit_duration_plot_data(
    models: tuple[SingleModel, SuperposedModel], max_hours: float
) -> list[tuple[float, float, float]]:
    """Rows (duration_hours, pmf_single, pmf_superposed) over the shared support."""
    single, superposed = models
    if not isinstance(single, SingleModel) or not isinstance(superposed, SuperposedModel):
        raise ConfigError("expected (single, superposed) model pair")
    if single.shift != superposed.shift:
        raise ConfigError("models must share the duration shift to share a support")
    if max_hours < single.shift:
        raise ConfigError(f"max_hours {max_hours} is below the minimum duration {single.shift}")
    rows = []
    t = single.shift
    while t <= max_hours + 1e-9:
        rows.append((t, duration_pmf(single, t), duration_pmf(superposed, t)))
        t += 1.0
    return rows


def write_plot_csv(rows: Sequence[tuple[float, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["duration_hours", "pmf_single", "pmf_superposed"])
        for duration, pmf_s, pmf_m in rows:
            writer.writerow(
                [persist.format_float(duration), persist.format_float(pmf_s), persist.format_float(pmf_m)]
            )
