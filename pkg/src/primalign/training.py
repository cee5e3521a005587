"""Pretraining, fine-tuning, and evaluation.

Pretraining optimizes the adaptively weighted sum of the contrastive
objective (action-action plus action-primitive branches, soft targets from
the symbolic affinity matrix) and the primitive-classification imitation
loss, with plain SGD + momentum and global gradient-norm clipping.
Fine-tuning regresses continuous actions with an L1 loss, by default through
the action head only.  Evaluation covers nearest-description retrieval,
rank correlation between embedding and symbolic similarities, and embedding
export.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import balance, model
from .actions import class_indices, discretize, render_language
from .affinity import (
    EXCLUDE_SELF,
    AffinityWeights,
    cross_similarity,
    row_normalize,
    similarity_matrix,
)
from .datagen import Episode, Suite
from .losses import (
    ContrastiveConfig,
    contrastive_total,
    imitation_loss,
    l1_trajectory_loss,
    loss_action_action,
    loss_action_primitive,
)
from .numerics import cosine_matrix

BATCH_RNG_TAG = 17  # batch sampling stream, distinct from parameter init
PROBE_RNG_TAG = 23  # affinity-correlation probe subsampling stream


class TrainingDiverged(RuntimeError):
    """A non-finite loss appeared; carries the last good parameters."""

    def __init__(self, step: int, params: model.ModelParams, cause: str):
        super().__init__(f"training diverged at step {step}: {cause}")
        self.step = step
        self.checkpoint = params


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    steps: int = 1500
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 10.0
    seed: int = 0
    weights: AffinityWeights = field(default_factory=AffinityWeights)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    ma_window: int = 100
    hard_labels: bool = False       # ablation: affinity matrix replaced by identity
    fixed_weights: bool = False     # ablation: constant (0.5, 0.5) loss weights
    freeze_encoders: bool = False   # train FiLM/adapter/heads only
    inverse_weighting: bool = False # give the smaller loss the larger weight
    eval_fraction: float = 0.2
    d_v: int = 32
    d_l: int = 32
    hidden: int = 64
    d: int = 16

    def __post_init__(self):
        for name in ("batch_size", "steps", "lr", "momentum", "clip_norm",
                     "ma_window", "d_v", "d_l", "hidden", "d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name!r} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in (0, 1)")


@dataclass
class MetricsLog:
    """Append-only per-step metrics with CSV export."""

    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def append(self, *values: float) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        for v in values:
            if not np.isfinite(v):
                raise ValueError("metrics entries must be finite")
        self.rows.append([float(v) for v in values])

    def column(self, name: str) -> np.ndarray:
        return np.array([row[self.columns.index(name)] for row in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([repr(v) for v in row])


PRETRAIN_COLUMNS = ["step", "l_a", "l_m", "l_cl", "l_il", "w_il", "w_cl", "total"]
FINETUNE_COLUMNS = ["step", "l1"]


@dataclass
class StepPool:
    """Flattened training steps with primitives precomputed."""

    features: np.ndarray     # (M, obs_dim)
    task_ids: np.ndarray     # (M,) doubles as instruction id
    actions: np.ndarray      # (M, 7)
    triples: list
    texts: list[str]
    labels: tuple[np.ndarray, np.ndarray, np.ndarray]


def build_step_pool(suite: Suite, episodes: list[Episode]) -> StepPool:
    features, task_ids, actions, triples, texts = [], [], [], [], []
    t_idx, r_idx, g_idx = [], [], []
    for episode in episodes:
        for obs, action in episode.steps:
            triple = discretize(action, suite.binning)
            ti, ri, gi = class_indices(triple, suite.binning)
            features.append(obs)
            task_ids.append(episode.task_id)
            actions.append(action.as_tuple())
            triples.append(triple)
            texts.append(render_language(triple, suite.binning))
            t_idx.append(ti)
            r_idx.append(ri)
            g_idx.append(gi)
    if not features:
        raise ValueError("no steps in dataset")
    return StepPool(
        features=np.array(features),
        task_ids=np.array(task_ids, dtype=int),
        actions=np.array(actions),
        triples=triples,
        texts=texts,
        labels=(np.array(t_idx), np.array(r_idx), np.array(g_idx)),
    )


def split_episodes(
    suite: Suite, episodes: list[Episode], eval_fraction: float = 0.2
) -> tuple[list[Episode], list[Episode], list[Episode]]:
    """(train, eval, transfer): the last fraction of each training task's
    episodes is held out; transfer-task episodes are never trained on."""
    train, held_out, transfer = [], [], []
    transfer_ids = {t.id for t in suite.transfer_tasks}
    for task in suite.tasks:
        eps = [e for e in episodes if e.task_id == task.id]
        if task.id in transfer_ids:
            transfer.extend(eps)
            continue
        n_eval = max(1, round(eval_fraction * len(eps))) if eps else 0
        train.extend(eps[: len(eps) - n_eval])
        held_out.extend(eps[len(eps) - n_eval :])
    if not train:
        raise ValueError("no training episodes after split")
    return train, held_out, transfer


def _dedupe(texts: list[str]) -> tuple[list[str], np.ndarray, list[int]]:
    """Distinct texts in first-occurrence order, each row's group id, and the
    representative row index of each group."""
    unique: list[str] = []
    index: dict[str, int] = {}
    representative: list[int] = []
    groups = np.zeros(len(texts), dtype=int)
    for i, text in enumerate(texts):
        if text not in index:
            index[text] = len(unique)
            unique.append(text)
            representative.append(i)
        groups[i] = index[text]
    return unique, groups, representative


def make_targets(
    triples, texts: list[str], weights: AffinityWeights, hard_labels: bool
) -> tuple[np.ndarray, list[str], np.ndarray]:
    """(T_aa, unique texts, T_ap) for one batch.

    Soft mode: the affinity matrix row-normalized without the self entry for
    the action-action branch; for the action-primitive branch, duplicate
    descriptions collapse onto one candidate each (their affinity columns are
    identical), so every row's target is its graded affinity to each distinct
    description, renormalized.  Hard mode: identity targets (own row / own
    description), the standard-InfoNCE special case.
    """
    n = len(texts)
    unique, groups, representative = _dedupe(texts)
    if hard_labels:
        t_aa = np.eye(n)
        t_ap = np.zeros((n, len(unique)))
        t_ap[np.arange(n), groups] = 1.0
        return t_aa, unique, t_ap
    s = similarity_matrix(triples, weights)
    t_aa = row_normalize(s, EXCLUDE_SELF)
    t_ap = cross_similarity(triples, [triples[r] for r in representative], weights)
    t_ap = t_ap / t_ap.sum(axis=1, keepdims=True)
    return t_aa, unique, t_ap


def _clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > clip_norm:
        scale = clip_norm / total
        for name in grads:
            grads[name] = grads[name] * scale


def _sgd_step(
    params: model.ModelParams,
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    for name, g in grads.items():
        velocity[name] = momentum * velocity[name] + g
        params.arrays[name] = params.arrays[name] - lr * velocity[name]


def pretrain(
    cfg: TrainConfig,
    suite: Suite,
    episodes: list[Episode],
    params: model.ModelParams | None = None,
) -> tuple[model.ModelParams, MetricsLog]:
    """Joint contrastive + imitation pretraining on the training split.

    Deterministic given the config seed.  Raises :class:`TrainingDiverged`
    (carrying the last good parameters) if any loss goes non-finite.
    """
    train_eps, _, _ = split_episodes(suite, episodes, cfg.eval_fraction)
    pool = build_step_pool(suite, train_eps)
    if params is None:
        dims = model.dims_for(
            suite.binning,
            n_instructions=len(suite.tasks),
            obs_dim=suite.obs_dim,
            d_v=cfg.d_v,
            d_l=cfg.d_l,
            hidden=cfg.hidden,
            d=cfg.d,
        )
        params = model.init_params(cfg.seed, dims, suite.binning)

    rng = np.random.default_rng([cfg.seed, BATCH_RNG_TAG])
    velocity = {name: np.zeros_like(a) for name, a in params.blocks()}
    ma = balance.MAState(cfg.ma_window)
    log = MetricsLog(PRETRAIN_COLUMNS)
    n_pool = pool.features.shape[0]
    tau, lam = cfg.contrastive.tau, cfg.contrastive.lam

    for step in range(cfg.steps):
        last_good = params.copy()
        idx = rng.choice(n_pool, size=cfg.batch_size, replace=n_pool < cfg.batch_size)
        batch_triples = [pool.triples[i] for i in idx]
        batch_texts = [pool.texts[i] for i in idx]
        try:
            t_aa, unique_texts, t_ap = make_targets(
                batch_triples, batch_texts, cfg.weights, cfg.hard_labels
            )
            a, fcache = model.forward_batch(
                params, pool.features[idx], pool.task_ids[idx]
            )
            p, tcache = model.embed_primitive_texts(unique_texts, params)
            l_a = loss_action_action(a, t_aa, tau)
            l_m = loss_action_primitive(a, p, t_ap, tau)
            cl = contrastive_total(l_a, l_m, lam)
            logits_t, logits_r, logits_g, _ = model.heads(a, params)
            labels = tuple(lab[idx] for lab in pool.labels)
            il = imitation_loss(logits_t, logits_r, logits_g, labels)

            balance.update(ma, il.value, cl.value)
            if cfg.fixed_weights:
                w_il, w_cl = 0.5, 0.5
            else:
                w_il, w_cl = balance.weights(ma)
                if cfg.inverse_weighting:
                    w_il, w_cl = w_cl, w_il
            total = balance.total_loss(cl.value, il.value, (w_il, w_cl))
            if not np.isfinite(total):
                raise ValueError(f"non-finite total loss {total!r}")

            head_grads, d_a_heads = model.heads_backward(
                params,
                a,
                d_logits_t=w_il * il.grads["logits_t"],
                d_logits_r=w_il * il.grads["logits_r"],
                d_logits_g=w_il * il.grads["logits_g"],
            )
            d_a = w_cl * cl.grads["embeddings"] + d_a_heads
            grads: dict[str, np.ndarray] = {}
            model.accumulate(grads, head_grads)
            model.accumulate(grads, model.backward_batch(params, fcache, d_a))
            model.accumulate(
                grads,
                model.backward_primitive_texts(params, tcache, w_cl * cl.grads["primitives"]),
            )
        except ValueError as exc:
            raise TrainingDiverged(step, last_good, str(exc)) from exc

        if cfg.freeze_encoders:
            for name in model.ENCODER_BLOCKS:
                grads.pop(name, None)
        _clip_gradients(grads, cfg.clip_norm)
        _sgd_step(params, grads, velocity, cfg.lr, cfg.momentum)
        log.append(step, l_a.value, l_m.value, cl.value, il.value, w_il, w_cl, total)

    return params, log


def finetune(
    cfg: TrainConfig,
    suite: Suite,
    episodes: list[Episode],
    params: model.ModelParams,
    unfreeze_all: bool = False,
    freeze_head: bool = False,
) -> tuple[model.ModelParams, MetricsLog]:
    """L1 regression of continuous actions, action head only by default.

    ``unfreeze_all`` trains every block; ``freeze_head`` freezes even the
    action head (a no-op run, useful as an experimental control).
    """
    dims = params.dims
    if dims.obs_dim != suite.obs_dim or dims.n_instructions < len(suite.tasks):
        raise ValueError(
            f"checkpoint dims (obs_dim={dims.obs_dim}, n_instructions="
            f"{dims.n_instructions}) do not match the suite"
        )
    train_eps, _, _ = split_episodes(suite, episodes, cfg.eval_fraction)
    pool = build_step_pool(suite, train_eps)
    params = params.copy()
    rng = np.random.default_rng([cfg.seed, BATCH_RNG_TAG, 1])
    velocity = {name: np.zeros_like(a) for name, a in params.blocks()}
    if freeze_head:
        trainable: set[str] | None = set()
    elif unfreeze_all:
        trainable = None
    else:
        trainable = {"act_w", "act_b"}
    log = MetricsLog(FINETUNE_COLUMNS)
    n_pool = pool.features.shape[0]

    for step in range(cfg.steps):
        last_good = params.copy()
        idx = rng.choice(n_pool, size=cfg.batch_size, replace=n_pool < cfg.batch_size)
        try:
            a, fcache = model.forward_batch(params, pool.features[idx], pool.task_ids[idx])
            _, _, _, pred = model.heads(a, params)
            loss = l1_trajectory_loss(pred, pool.actions[idx])
            head_grads, d_a = model.heads_backward(params, a, d_action=loss.grads["pred"])
            grads: dict[str, np.ndarray] = {}
            model.accumulate(grads, head_grads)
            if trainable is None:
                model.accumulate(grads, model.backward_batch(params, fcache, d_a))
        except ValueError as exc:
            raise TrainingDiverged(step, last_good, str(exc)) from exc
        if trainable is not None:
            grads = {k: v for k, v in grads.items() if k in trainable}
        _clip_gradients(grads, cfg.clip_norm)
        _sgd_step(params, grads, velocity, cfg.lr, cfg.momentum)
        log.append(step, loss.value)

    return params, log


def evaluate_l1(params: model.ModelParams, suite: Suite, episodes: list[Episode]) -> float:
    """Mean absolute error per action entry over the given episodes."""
    pool = build_step_pool(suite, episodes)
    a, _ = model.forward_batch(params, pool.features, pool.task_ids)
    _, _, _, pred = model.heads(a, params)
    return l1_trajectory_loss(pred, pool.actions).value


def candidate_texts(suite: Suite) -> list[str]:
    """All distinct primitive descriptions realizable in a suite."""
    return sorted({render_language(t, suite.binning) for t in suite.templates})


def evaluate_retrieval(
    params: model.ModelParams,
    suite: Suite,
    episodes: list[Episode],
    candidates: list[str] | None = None,
) -> dict:
    """Nearest-description retrieval by cosine similarity.

    For every step, all candidate descriptions are ranked against the latent
    action embedding; top-1 counts a hit when the nearest description is the
    one of the step's discretized action.  Reported overall and per task.
    """
    pool = build_step_pool(suite, episodes)
    candidates = list(candidates) if candidates is not None else sorted(set(pool.texts))
    lookup = {text: i for i, text in enumerate(candidates)}
    missing = next((t for t in pool.texts if t not in lookup), None)
    if missing is not None:
        raise ValueError(f"description {missing!r} not in the candidate set")
    a, _ = model.forward_batch(params, pool.features, pool.task_ids)
    p, _ = model.embed_primitive_texts(candidates, params)
    nearest = np.argmax(cosine_matrix(a, p), axis=1)
    truth = np.array([lookup[t] for t in pool.texts])
    hits = nearest == truth
    per_task = {
        int(tid): float(hits[pool.task_ids == tid].mean())
        for tid in np.unique(pool.task_ids)
    }
    return {
        "top1": float(hits.mean()),
        "per_task": per_task,
        "n": int(hits.size),
        "n_candidates": len(candidates),
    }


def spearman_affinity(
    a: np.ndarray, triples, weights: AffinityWeights = AffinityWeights()
) -> float:
    """Spearman rank correlation between embedding cosine similarities and
    symbolic affinities over all off-diagonal pairs."""
    if len(set(triples)) < 2:
        raise ValueError("degenerate probe: fewer than 2 distinct primitive triples")
    s = similarity_matrix(triples, weights)
    iu = np.triu_indices(len(triples), k=1)
    s_vals = s[iu]
    if np.all(s_vals == s_vals[0]):
        raise ValueError("degenerate probe: all off-diagonal affinities are equal")
    c_vals = cosine_matrix(a, a)[iu]
    return float(stats.spearmanr(s_vals, c_vals).statistic)


def affinity_correlation(
    params: model.ModelParams,
    suite: Suite,
    episodes: list[Episode],
    weights: AffinityWeights = AffinityWeights(),
    probe_size: int = 256,
    seed: int = 0,
) -> float:
    """:func:`spearman_affinity` of a fixed probe batch under a checkpoint."""
    pool = build_step_pool(suite, episodes)
    n = pool.features.shape[0]
    if n > probe_size:
        rng = np.random.default_rng([seed, PROBE_RNG_TAG])
        idx = rng.choice(n, size=probe_size, replace=False)
    else:
        idx = np.arange(n)
    a, _ = model.forward_batch(params, pool.features[idx], pool.task_ids[idx])
    return spearman_affinity(a, [pool.triples[i] for i in idx], weights)


def export_embeddings(
    params: model.ModelParams, suite: Suite, episodes: list[Episode], path
) -> None:
    """CSV of per-step embeddings with task and primitive annotations."""
    pool = build_step_pool(suite, episodes)
    a, _ = model.forward_batch(params, pool.features, pool.task_ids)
    d = params.dims.d
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["task_id", "primitive_text", "t_idx", "r_idx", "g_idx"]
            + [f"e_{k}" for k in range(d)]
        )
        for i in range(a.shape[0]):
            writer.writerow(
                [
                    int(pool.task_ids[i]),
                    pool.texts[i],
                    int(pool.labels[0][i]),
                    int(pool.labels[1][i]),
                    int(pool.labels[2][i]),
                ]
                + [repr(float(v)) for v in a[i]]
            )


# ---------------------------------------------------------------------------
# ablation grid


ABLATION_CONFIGS = (
    ("soft+adaptive", False, False),
    ("soft+fixed", False, True),
    ("hard+adaptive", True, False),
    ("hard+fixed", True, True),
)


def run_experiment(
    cfg: TrainConfig, suite: Suite, episodes: list[Episode]
) -> dict:
    """One pretraining run plus the standard evaluation bundle."""
    params, log = pretrain(cfg, suite, episodes)
    _, held_out, transfer = split_episodes(suite, episodes, cfg.eval_fraction)
    candidates = candidate_texts(suite)
    result = {
        "retrieval": evaluate_retrieval(params, suite, held_out, candidates)["top1"],
        "rho": affinity_correlation(params, suite, held_out, cfg.weights, seed=cfg.seed),
        "final_total": float(np.mean(log.column("total")[-100:])),
        "n_candidates": len(candidates),
    }
    if transfer:
        result["transfer_retrieval"] = evaluate_retrieval(
            params, suite, transfer, candidates
        )["top1"]
    return result


def ablation_grid(
    base_cfg: TrainConfig, suite: Suite, episodes: list[Episode], seeds: list[int]
) -> list[dict]:
    """The 2x2 grid {soft, hard} x {adaptive, fixed}: per-config medians
    of the evaluation bundle across seeds."""
    rows = []
    for label, hard, fixed in ABLATION_CONFIGS:
        runs = [
            run_experiment(
                replace(base_cfg, seed=seed, hard_labels=hard, fixed_weights=fixed),
                suite,
                episodes,
            )
            for seed in seeds
        ]
        row = {"config": label}
        for key in runs[0]:
            if key != "n_candidates":
                row[key] = float(np.median([r[key] for r in runs]))
        row["n_candidates"] = runs[0]["n_candidates"]
        rows.append(row)
    return rows
