"""Evaluation protocol and metrics: success rate, success weighted by path
length (SPL), single-stage grasp/insert percentages, and deterministic report
generation over the 4-position x 5-angle placement grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .policy_high import MAX_PRIMITIVES, rollout_high
from .primitives import ExecContext, PrimitiveCall, PrimitiveId, dispatch
from .scenes import SceneSpec, UnknownObject
from .workcell import Workcell

SCHEMA = "arch-eval-1"
N_BOOTSTRAP = 1000
CONVENTIONS = ("paper", "standard")


class EmptyTrials(ValueError):
    """spl received no trials."""


# ---------------------------------------------------------------------------
# trial records


@dataclass
class TrialRecord:
    seed: int
    object: str
    success: bool
    l: int  # primitives executed
    l_opt: int  # oracle-minimal primitive count
    outcomes: list  # per-primitive {id, status, reason, steps_used}
    grasped: bool
    inserted: bool

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("l must be non-negative")
        if self.l_opt < 1:
            raise ValueError("l_opt must be at least 1")
        if self.success and self.l < self.l_opt:
            raise ValueError("a success cannot beat the oracle-minimal length")

    def to_json(self) -> dict:
        return {
            "seed": self.seed, "object": self.object,
            "success": bool(self.success), "l": self.l, "l_opt": self.l_opt,
            "outcomes": self.outcomes, "grasped": bool(self.grasped),
            "inserted": bool(self.inserted),
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrialRecord":
        return cls(int(d["seed"]), d["object"], bool(d["success"]), int(d["l"]),
                   int(d["l_opt"]), list(d["outcomes"]), bool(d["grasped"]),
                   bool(d["inserted"]))


def spl(trials, convention: str = "paper") -> float:
    """Success weighted by path length.

    ``paper``: (1/N) sum S_i * l_i / max(l_i, l_opt_i), the formula exactly
    as printed (its ratio rewards longer successful paths). ``standard``: the
    conventional l_opt_i / max(l_i, l_opt_i) numerator.
    """
    trials = list(trials)
    if not trials:
        raise EmptyTrials("spl needs at least one trial")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    total = 0.0
    for t in trials:
        if t.l_opt < 1:
            raise ValueError("every trial needs l_opt >= 1")
        if not t.success:
            continue
        num = t.l if convention == "paper" else t.l_opt
        total += num / max(t.l, t.l_opt)
    return total / len(trials)


def l_opt_for(scene: SceneSpec, object_name: str) -> int:
    """Oracle-minimal primitive count: 3 (Grasp, Move, Insert) when the spawn
    permits direct insertion, 6 when a fixture reorientation detour is needed
    (Grasp, Move, Place, Grasp, Move, Insert). Continuous symmetry (circle)
    always admits the direct sequence."""
    obj = next((o for o in scene.objects if o.name == object_name), None)
    if obj is None:
        raise UnknownObject(object_name)
    if obj.symmetry == 0:  # continuous symmetry
        return 3
    return 3 if obj.upright else 6


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    n_trials: int
    sr: float  # percent
    spl_mean: float
    spl_std: float  # bootstrap band
    grasped: float  # percent, single-stage
    inserted: float  # percent, single-stage
    per_object: dict  # name -> {n, sr, spl, grasped, inserted}
    trials: list = field(default_factory=list)  # TrialRecords
    spl_convention: str = "paper"
    seed: int = 0

    def __post_init__(self):
        for v in (self.sr, self.grasped, self.inserted):
            if not 0.0 <= v <= 100.0:
                raise ValueError("percentages must lie in [0, 100]")
        if not 0.0 <= self.spl_mean <= 1.0:
            raise ValueError("SPL must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "n_trials": self.n_trials,
            "sr": self.sr,
            "spl_mean": self.spl_mean,
            "spl_std": self.spl_std,
            "grasped": self.grasped,
            "inserted": self.inserted,
            "per_object": self.per_object,
            "spl_convention": self.spl_convention,
            "seed": self.seed,
            "trials": [t.to_json() for t in self.trials],
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unknown report schema {d.get('schema')!r}")
        return cls(int(d["n_trials"]), float(d["sr"]), float(d["spl_mean"]),
                   float(d["spl_std"]), float(d["grasped"]), float(d["inserted"]),
                   dict(d["per_object"]),
                   [TrialRecord.from_json(t) for t in d["trials"]],
                   d["spl_convention"], int(d["seed"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        """Human-readable per-object table in the column layout
        object | SR % | SPL | % Grasped | % Inserted."""
        header = f"{'object':<12} {'SR %':>6} {'SPL':>6} {'%Grasp':>7} {'%Insert':>8}  n"
        lines = [header, "-" * len(header)]
        for name in sorted(self.per_object):
            row = self.per_object[name]
            lines.append(f"{name:<12} {row['sr']:>6.1f} {row['spl']:>6.3f} "
                         f"{row['grasped']:>7.1f} {row['inserted']:>8.1f}  {row['n']}")
        lines.append("-" * len(header))
        lines.append(f"{'all':<12} {self.sr:>6.1f} "
                     f"{self.spl_mean:>6.3f} {self.grasped:>7.1f} "
                     f"{self.inserted:>8.1f}  {self.n_trials}")
        lines.append(f"SPL {self.spl_mean:.3f} +- {self.spl_std:.3f} "
                     f"(bootstrap {N_BOOTSTRAP}, {self.spl_convention} convention)")
        return "\n".join(lines)


def report_from_trials(trials, convention: str = "paper",
                       seed: int = 0) -> EvalReport:
    """Aggregate TrialRecords into an EvalReport; every field recomputes
    exactly from the stored records."""
    trials = list(trials)
    if not trials:
        raise EmptyTrials("report needs at least one trial")
    n = len(trials)
    sr = 100.0 * sum(t.success for t in trials) / n
    grasped = 100.0 * sum(t.grasped for t in trials) / n
    inserted = 100.0 * sum(t.inserted for t in trials) / n
    spl_mean = spl(trials, convention)
    g = np.random.default_rng(seed)
    resamples = [
        spl([trials[i] for i in g.integers(0, n, size=n)], convention)
        for _ in range(N_BOOTSTRAP)
    ]
    per_object: dict = {}
    for name in sorted({t.object for t in trials}):
        sub = [t for t in trials if t.object == name]
        per_object[name] = {
            "n": len(sub),
            "sr": 100.0 * sum(t.success for t in sub) / len(sub),
            "spl": spl(sub, convention),
            "grasped": 100.0 * sum(t.grasped for t in sub) / len(sub),
            "inserted": 100.0 * sum(t.inserted for t in sub) / len(sub),
        }
    return EvalReport(n, sr, spl_mean, float(np.std(resamples)), grasped,
                      inserted, per_object, trials, convention, seed)


# ---------------------------------------------------------------------------
# evaluation runs


def _random_rollout(env: Workcell, insert_policy, ctx: ExecContext, g) -> dict:
    """Uniform-random primitive and parameter baseline."""
    lo = np.asarray(env.spec.bounds_lo, dtype=float)
    hi = np.asarray(env.spec.bounds_hi, dtype=float)
    outcomes = []
    grasped = False
    success = False
    for _ in range(MAX_PRIMITIVES):
        pid = PrimitiveId(int(g.integers(0, 4)))
        call = PrimitiveCall(pid, lo + g.random(4) * (hi - lo))
        res = dispatch(env, call, ctx)
        outcomes.append({"id": int(pid), "status": res.status,
                         "reason": res.failure_reason,
                         "steps_used": res.steps_used})
        grasped = grasped or (pid == PrimitiveId.GRASP and res.success)
        if env.check_inserted():
            success = True
            break
    return {"object": env.target, "success": success, "l": len(outcomes),
            "outcomes": outcomes, "grasped": grasped,
            "inserted": success or env.check_inserted()}


def run_eval(policy, insert_policy, scene: SceneSpec, n_trials: int = 20,
             seed: int = 0, target: str = "hexagon", slip_prob: float = 0.0,
             convention: str = "paper") -> EvalReport:
    """``n_trials`` rollouts enumerating the 4-center x 5-angle placement
    grid; deterministic per seed. ``policy`` is a trained HighLevelPolicy, or
    the string "oracle" (scripted demonstrator upper bound) or "random"
    (uniform baseline)."""
    from .oracle import run_oracle_trial  # local import to avoid a cycle

    ctx = ExecContext(insert_policy=insert_policy)
    lopt = l_opt_for(scene, target)
    records = []
    for i in range(n_trials):
        cell = i % 20
        trial_seed = seed * 100_000 + i
        env = Workcell(scene, seed=trial_seed, target=target,
                       placement=(cell // 5, cell % 5), slip_prob=slip_prob)
        if policy == "oracle":
            rec = run_oracle_trial(env, insert_policy, ctx)
        elif policy == "random":
            g = np.random.default_rng(trial_seed)
            rec = _random_rollout(env, insert_policy, ctx, g)
        else:
            rec = rollout_high(env, policy, insert_policy, ctx=ctx)
        records.append(TrialRecord(trial_seed, target, rec["success"],
                                   max(rec["l"], lopt) if rec["success"] else rec["l"],
                                   lopt, rec["outcomes"], rec["grasped"],
                                   rec["inserted"]))
    return report_from_trials(records, convention, seed)


def write_report(report: EvalReport, json_path, figure_path=None) -> None:
    """Persist the JSON report (byte-deterministic) and optionally render a
    summary figure of the per-trial outcomes."""
    with open(json_path, "w") as fh:
        fh.write(report.dumps())
    if figure_path is None:
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    labels = ["SR", "SPL x100", "%Grasp", "%Insert"]
    values = [report.sr, 100 * report.spl_mean, report.grasped, report.inserted]
    ax0.bar(labels, values, color=["#4878d0", "#ee854a", "#6acc64", "#d65f5f"])
    ax0.set_ylim(0, 105)
    ax0.set_title(f"aggregate over {report.n_trials} trials")
    lengths = [t.l for t in report.trials]
    colors = ["#6acc64" if t.success else "#d65f5f" for t in report.trials]
    ax1.bar(range(len(lengths)), lengths, color=colors)
    ax1.axhline(report.trials[0].l_opt if report.trials else 3,
                color="k", ls="--", lw=1, label="l_opt")
    ax1.set_xlabel("trial")
    ax1.set_ylabel("primitives executed")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(figure_path, dpi=120)
    plt.close(fig)
