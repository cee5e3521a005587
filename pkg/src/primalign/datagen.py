"""Synthetic multi-task manipulation data.

Tasks are ordered compositions of primitive phases; each episode step emits a
synthetic observation-feature vector and a continuous 7-DoF action drawn
around the phase template's representative values, with noise clipped so the
action always discretizes back to its template.  Cross-task primitive overlap
is controlled by a sharing fraction: shared phases come from a common
template pool, the rest are task-unique.

Observation features combine a task-specific random linear map of the phase
context with a suite-wide random signature of the phase's primitive, so
primitives shared across tasks leave a common observable trace (the hook the
transfer experiments probe).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .actions import (
    Action7,
    BinningConfig,
    PrimitiveTriple,
    all_triples,
    discretize,
    render_language,
    representative_action,
)

DATASET_FORMAT = "primalign-dataset"
SUITE_FORMAT = "primalign-suite"
VERSION = 1


@dataclass(frozen=True)
class Phase:
    """One segment of a task: a primitive template held for some steps."""

    template: PrimitiveTriple
    duration: int
    noise: tuple[float, ...]  # per-dimension action noise sigma, length 7

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError(f"phase duration must be >= 1, got {self.duration}")
        if len(self.noise) != 7 or min(self.noise) < 0:
            raise ValueError("phase noise must be 7 non-negative sigmas")


@dataclass(frozen=True)
class TaskSpec:
    id: int
    instruction: str
    phases: tuple[Phase, ...]
    obs_seed: int
    is_transfer: bool = False

    def __post_init__(self):
        if not self.phases:
            raise ValueError("a task needs at least one phase")

    @property
    def steps_per_episode(self) -> int:
        return sum(p.duration for p in self.phases)


@dataclass
class Suite:
    """A task suite plus everything needed to regenerate its observations."""

    seed: int
    obs_seed: int
    obs_dim: int
    noise_dims: int
    phase_slots: int
    signature_scale: float
    binning: BinningConfig
    templates: tuple[PrimitiveTriple, ...]  # registry of all templates in use
    tasks: tuple[TaskSpec, ...]
    _shared_map: np.ndarray | None = field(default=None, repr=False)

    @property
    def training_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if not t.is_transfer)

    @property
    def transfer_tasks(self) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.is_transfer)

    def template_index(self, template: PrimitiveTriple) -> int:
        return self.templates.index(template)

    def shared_obs_map(self) -> np.ndarray:
        """Suite-wide primitive signatures: one random column per template."""
        if self._shared_map is None:
            rng = np.random.default_rng([self.obs_seed, 1])
            self._shared_map = self.signature_scale * rng.normal(
                size=(self.obs_dim, len(self.templates))
            )
        return self._shared_map

    def task_obs_map(self, task: TaskSpec) -> np.ndarray:
        z_dim = self.phase_slots + 1 + self.noise_dims
        rng = np.random.default_rng([task.obs_seed, 2])
        return rng.normal(size=(self.obs_dim, z_dim)) / math.sqrt(z_dim)

    def to_json(self) -> str:
        doc = {
            "format": SUITE_FORMAT,
            "version": VERSION,
            "seed": self.seed,
            "obs_seed": self.obs_seed,
            "obs_dim": self.obs_dim,
            "noise_dims": self.noise_dims,
            "phase_slots": self.phase_slots,
            "signature_scale": self.signature_scale,
            "binning": json.loads(self.binning.to_json()),
            "templates": [_triple_doc(t) for t in self.templates],
            "tasks": [
                {
                    "id": t.id,
                    "instruction": t.instruction,
                    "obs_seed": t.obs_seed,
                    "is_transfer": t.is_transfer,
                    "phases": [
                        {
                            "template": self.template_index(p.template),
                            "duration": p.duration,
                            "noise": list(p.noise),
                        }
                        for p in t.phases
                    ],
                }
                for t in self.tasks
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Suite":
        doc = json.loads(text)
        if doc.get("format") != SUITE_FORMAT:
            raise ValueError(f"not a suite document: format={doc.get('format')!r}")
        if doc.get("version") != VERSION:
            raise ValueError(f"unsupported suite version {doc.get('version')!r}")
        binning = BinningConfig.from_json(json.dumps(doc["binning"]))
        templates = tuple(_triple_from_doc(d) for d in doc["templates"])
        tasks = tuple(
            TaskSpec(
                id=td["id"],
                instruction=td["instruction"],
                obs_seed=td["obs_seed"],
                is_transfer=td["is_transfer"],
                phases=tuple(
                    Phase(templates[p["template"]], p["duration"], tuple(p["noise"]))
                    for p in td["phases"]
                ),
            )
            for td in doc["tasks"]
        )
        return cls(
            seed=doc["seed"],
            obs_seed=doc["obs_seed"],
            obs_dim=doc["obs_dim"],
            noise_dims=doc["noise_dims"],
            phase_slots=doc["phase_slots"],
            signature_scale=doc["signature_scale"],
            binning=binning,
            templates=templates,
            tasks=tasks,
        )


@dataclass
class Episode:
    task_id: int
    steps: list[tuple[np.ndarray, Action7]]


def _triple_doc(p: PrimitiveTriple) -> dict:
    return {
        "trans_axis": p.trans_axis,
        "trans_bin": p.trans_bin,
        "rot_axis": p.rot_axis,
        "rot_bin": p.rot_bin,
        "grip": p.grip,
    }


def _triple_from_doc(d: dict) -> PrimitiveTriple:
    return PrimitiveTriple(d["trans_axis"], d["trans_bin"], d["rot_axis"], d["rot_bin"], d["grip"])


def build_suite(
    seed: int,
    n_tasks: int,
    sharing: float,
    *,
    phases_per_task: int = 4,
    duration: int = 5,
    noise_t: float = 0.003,
    noise_r: float = 1.5,
    pool_size: int = 4,
    n_transfer_tasks: int = 0,
    binning: BinningConfig | None = None,
    obs_dim: int = 32,
    noise_dims: int = 4,
    signature_scale: float = 1.0,
) -> Suite:
    """Deterministically sample a task suite with controlled primitive overlap.

    ``sharing`` is the fraction of each training task's phases drawn from a
    common template pool; the remainder are unique to the task (and distinct
    across tasks).  Transfer tasks are composed exclusively of shared
    templates already used by a training task; they are meant to be held out
    of pretraining.
    """
    if n_tasks < 2:
        raise ValueError(f"need at least 2 tasks, got {n_tasks}")
    if not 0.0 <= sharing <= 1.0:
        raise ValueError(f"sharing must be in [0, 1], got {sharing}")
    if phases_per_task < 1 or duration < 1:
        raise ValueError("phases_per_task and duration must be >= 1")
    binning = binning if binning is not None else BinningConfig()

    rng = np.random.default_rng([seed, 0])
    deck = all_triples(binning)
    order = rng.permutation(len(deck))
    deck = [deck[i] for i in order]

    n_shared = round(sharing * phases_per_task)
    n_unique = phases_per_task - n_shared
    need = (pool_size if n_shared > 0 or n_transfer_tasks > 0 else 0) + n_unique * n_tasks
    if need > len(deck):
        raise ValueError(
            f"infeasible sharing: suite needs {need} distinct templates but only "
            f"{len(deck)} exist under this binning config"
        )
    if (n_shared > 0 or n_transfer_tasks > 0) and pool_size < 1:
        raise ValueError("a shared pool is required but pool_size < 1")
    if n_transfer_tasks > 0 and n_shared == 0:
        raise ValueError("transfer tasks require shared primitives (sharing > 0)")

    pool = deck[:pool_size] if (n_shared > 0 or n_transfer_tasks > 0) else []
    unique_deck = iter(deck[len(pool):])
    noise = (noise_t, noise_t, noise_t, noise_r, noise_r, noise_r, 0.0)

    tasks = []
    used_shared: list[PrimitiveTriple] = []
    for i in range(n_tasks):
        shared_idx = rng.choice(len(pool), size=n_shared, replace=n_shared > len(pool)) if n_shared else []
        templates = [pool[j] for j in shared_idx]
        used_shared.extend(templates)
        templates += [next(unique_deck) for _ in range(n_unique)]
        order = rng.permutation(len(templates))
        phases = tuple(Phase(templates[j], duration, noise) for j in order)
        tasks.append(
            TaskSpec(
                id=i,
                instruction=f"carry out routine {i}",
                phases=phases,
                obs_seed=int(rng.integers(2**31)),
            )
        )

    seen = sorted(set(used_shared), key=used_shared.index)
    for k in range(n_transfer_tasks):
        count = min(phases_per_task, len(seen))
        idx = rng.choice(len(seen), size=count, replace=False)
        templates = [seen[j] for j in idx]
        while len(templates) < phases_per_task:
            templates.append(seen[int(rng.integers(len(seen)))])
        tasks.append(
            TaskSpec(
                id=n_tasks + k,
                instruction=f"carry out routine {n_tasks + k}",
                phases=tuple(Phase(t, duration, noise) for t in templates),
                obs_seed=int(rng.integers(2**31)),
                is_transfer=True,
            )
        )

    registry: list[PrimitiveTriple] = []
    for task in tasks:
        for phase in task.phases:
            if phase.template not in registry:
                registry.append(phase.template)

    return Suite(
        seed=seed,
        obs_seed=int(np.random.default_rng([seed, 3]).integers(2**31)),
        obs_dim=obs_dim,
        noise_dims=noise_dims,
        phase_slots=max(len(t.phases) for t in tasks),
        signature_scale=signature_scale,
        binning=binning,
        templates=tuple(registry),
        tasks=tuple(tasks),
    )


def _clamp_component(noisy: list[float], template_axis: str | None, mag_bin: int,
                     epsilon: float, edges: tuple[float, ...], offset: int) -> None:
    """Clamp one 3-vector block of a noisy action into its template's bin."""
    block = noisy[offset : offset + 3]
    if template_axis is None:
        for k in range(3):
            noisy[offset + k] = float(np.clip(block[k], -0.9 * epsilon, 0.9 * epsilon))
        return
    dom = "xyz".index(template_axis[1])
    sign = 1.0 if template_axis[0] == "+" else -1.0
    lo = epsilon if mag_bin == 0 else edges[mag_bin - 1]
    hi = edges[mag_bin] if mag_bin < len(edges) else math.inf
    if math.isinf(hi):
        mag = max(abs(block[dom]), lo * 1.05)
    else:
        margin = 0.05 * (hi - lo)
        mag = float(np.clip(abs(block[dom]), lo + margin, hi - margin))
    noisy[offset + dom] = sign * mag
    for k in range(3):
        if k != dom:
            noisy[offset + k] = float(np.clip(block[k], -0.9 * mag, 0.9 * mag))


def _sample_action(
    rng: np.random.Generator, phase: Phase, binning: BinningConfig
) -> Action7:
    """Template representative plus clipped noise; always re-discretizes to
    the template (rejection-resample, then clamp into the bin interior)."""
    center = np.array(representative_action(phase.template, binning).as_tuple())
    sigma = np.array(phase.noise)
    for _ in range(10):
        noisy = center + sigma * rng.normal(size=7)
        noisy[6] = center[6]
        candidate = Action7(*noisy.tolist())
        if discretize(candidate, binning) == phase.template:
            return candidate
    noisy = (center + sigma * rng.normal(size=7)).tolist()
    noisy[6] = float(center[6])
    _clamp_component(noisy, phase.template.trans_axis, phase.template.trans_bin,
                     binning.epsilon_t, binning.dist_edges, 0)
    _clamp_component(noisy, phase.template.rot_axis, phase.template.rot_bin,
                     binning.epsilon_r, binning.angle_edges, 3)
    action = Action7(*noisy)
    assert discretize(action, binning) == phase.template
    return action


def generate_episode(suite: Suite, task: TaskSpec, seed) -> Episode:
    """One rollout of a task: per-step actions around the phase templates and
    observation features carrying phase context plus the primitive signature."""
    entropy = [seed] if isinstance(seed, int) else list(seed)
    rng = np.random.default_rng(entropy + [4])
    w_task = suite.task_obs_map(task)
    w_shared = suite.shared_obs_map()
    z_dim = suite.phase_slots + 1 + suite.noise_dims
    steps: list[tuple[np.ndarray, Action7]] = []
    for phase_idx, phase in enumerate(task.phases):
        signature = w_shared[:, suite.template_index(phase.template)]
        for t in range(phase.duration):
            action = _sample_action(rng, phase, suite.binning)
            z = np.zeros(z_dim)
            z[phase_idx] = 1.0
            z[suite.phase_slots] = t / phase.duration
            z[suite.phase_slots + 1 :] = rng.normal(size=suite.noise_dims)
            steps.append((w_task @ z + signature, action))
    return Episode(task.id, steps)


def generate_dataset(
    suite: Suite, episodes_per_task: int, base_seed: int
) -> list[Episode]:
    """Episodes for every task (transfer included), reproducible bit-for-bit."""
    episodes = []
    for task in suite.tasks:
        for e in range(episodes_per_task):
            episodes.append(generate_episode(suite, task, seed=[base_seed, task.id, e]))
    return episodes


# ---------------------------------------------------------------------------
# dataset serialization (JSON Lines, one step per line, header first)


def write_dataset(suite: Suite, episodes: list[Episode], path) -> None:
    tasks = {t.id: t for t in suite.tasks}
    header = {
        "format": DATASET_FORMAT,
        "version": VERSION,
        "obs_dim": suite.obs_dim,
        "episodes": [{"task_id": e.task_id, "steps": len(e.steps)} for e in episodes],
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for episode in episodes:
            task = tasks[episode.task_id]
            for features, action in episode.steps:
                row = {
                    "task_id": episode.task_id,
                    "instruction": task.instruction,
                    "obs": features.tolist(),
                    "action": list(action.as_tuple()),
                    "primitive_text": render_language(
                        discretize(action, suite.binning), suite.binning
                    ),
                }
                fh.write(json.dumps(row) + "\n")


def read_rows(path) -> list[dict]:
    """All step rows of a dataset file, with per-line validation."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError("dataset file is empty (missing header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed header at line 1: {exc}") from exc
    if header.get("format") != DATASET_FORMAT or header.get("version") != VERSION:
        raise ValueError("not a dataset file (bad format/version in header)")
    expected = sum(e["steps"] for e in header["episodes"])
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            if not {"task_id", "instruction", "obs", "action", "primitive_text"} <= set(row):
                raise ValueError("missing fields")
            if len(row["action"]) != 7:
                raise ValueError("action must have 7 entries")
        except (ValueError, TypeError) as exc:
            raise ValueError(f"malformed dataset line {i}: {exc}") from exc
        rows.append(row)
    if len(rows) != expected:
        raise ValueError(
            f"truncated dataset: header promises {expected} steps but file ends "
            f"after line {len(lines)} ({len(rows)} steps)"
        )
    rows.insert(0, header)
    return rows


def read_dataset(path) -> list[Episode]:
    """Inverse of :func:`write_dataset` (header carries episode boundaries)."""
    rows = read_rows(path)
    header, rows = rows[0], rows[1:]
    episodes = []
    cursor = 0
    for meta in header["episodes"]:
        steps = []
        for row in rows[cursor : cursor + meta["steps"]]:
            if row["task_id"] != meta["task_id"]:
                raise ValueError(
                    f"dataset row task_id {row['task_id']} does not match header "
                    f"episode task_id {meta['task_id']}"
                )
            steps.append((np.array(row["obs"], dtype=float), Action7(*row["action"])))
        cursor += meta["steps"]
        episodes.append(Episode(meta["task_id"], steps))
    return episodes
