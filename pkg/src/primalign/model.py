"""The trainable embedding path and its manual backward pass.

A small stand-in for large pretrained encoders: a 2-layer MLP over synthetic
observation features (visual side), an embedding table over task instructions
plus a bag-of-tokens encoder for primitive sentences (language side).  Visual
features are conditioned on the instruction embedding through feature-wise
linear modulation (scale and shift generated from the instruction), then an
MLP adapter produces the latent action embedding.  Linear heads classify the
three primitives and regress the continuous 7-DoF action.

Everything is float64 numpy with hand-written gradients; the forward pass is
deterministic given parameters and inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .actions import BinningConfig, all_triples, parse_language, render_language

CHECKPOINT_FORMAT = "primalign-checkpoint"
CHECKPOINT_VERSION = 1

ENCODER_BLOCKS = ("v_w1", "v_b1", "v_w2", "v_b2", "instr_table", "tok_table")


def tokenize(text: str) -> list[str]:
    """Whitespace tokens of a sentence, commas stripped."""
    return text.replace(",", " ").split()


def vocabulary(cfg: BinningConfig) -> tuple[str, ...]:
    """The closed token vocabulary of all canonical sentences under a config."""
    tokens: set[str] = set()
    for p in all_triples(cfg):
        tokens.update(tokenize(render_language(p, cfg)))
    return tuple(sorted(tokens))


@dataclass(frozen=True)
class Dims:
    """Mutually consistent layer sizes of the embedding path."""

    obs_dim: int = 32
    d_v: int = 32
    d_l: int = 32
    hidden: int = 64
    d: int = 16
    n_instructions: int = 4
    vocab_size: int = 0
    n_trans_classes: int = 19
    n_rot_classes: int = 19

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ValueError(f"dimension {name!r} must be positive, got {value}")


def dims_for(
    cfg: BinningConfig,
    n_instructions: int,
    obs_dim: int = 32,
    d_v: int = 32,
    d_l: int = 32,
    hidden: int = 64,
    d: int = 16,
) -> Dims:
    """Dims matching a binning config (class counts, vocabulary size)."""
    return Dims(
        obs_dim=obs_dim,
        d_v=d_v,
        d_l=d_l,
        hidden=hidden,
        d=d,
        n_instructions=n_instructions,
        vocab_size=len(vocabulary(cfg)),
        n_trans_classes=cfg.n_trans_classes,
        n_rot_classes=cfg.n_rot_classes,
    )


@dataclass(frozen=True)
class Observation:
    """One model input: synthetic visual features plus the task instruction."""

    features: np.ndarray
    instruction_id: int
    instruction_tokens: tuple[str, ...] = ()


def _block_specs(dims: Dims) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, kind) for every parameter block, in a fixed order.

    kind: 'weight' blocks initialize uniform with fan-in scaling (fan-in =
    second shape entry), 'bias' blocks start at zero, 'table' rows are
    uniform in [-1, 1].
    """
    return [
        ("v_w1", (dims.hidden, dims.obs_dim), "weight"),
        ("v_b1", (dims.hidden,), "bias"),
        ("v_w2", (dims.d_v, dims.hidden), "weight"),
        ("v_b2", (dims.d_v,), "bias"),
        ("instr_table", (dims.n_instructions, dims.d_l), "table"),
        ("tok_table", (dims.vocab_size, dims.d_l), "table"),
        ("text_w", (dims.d, dims.d_l), "weight"),
        ("text_b", (dims.d,), "bias"),
        ("film_wg", (dims.d_v, dims.d_l), "weight"),
        ("film_bg", (dims.d_v,), "bias"),
        ("film_wb", (dims.d_v, dims.d_l), "weight"),
        ("film_bb", (dims.d_v,), "bias"),
        ("a_w1", (dims.hidden, dims.d_v), "weight"),
        ("a_b1", (dims.hidden,), "bias"),
        ("a_w2", (dims.d, dims.hidden), "weight"),
        ("a_b2", (dims.d,), "bias"),
        ("head_t_w", (dims.n_trans_classes, dims.d), "weight"),
        ("head_t_b", (dims.n_trans_classes,), "bias"),
        ("head_r_w", (dims.n_rot_classes, dims.d), "weight"),
        ("head_r_b", (dims.n_rot_classes,), "bias"),
        ("head_g_w", (2, dims.d), "weight"),
        ("head_g_b", (2,), "bias"),
        ("act_w", (7, dims.d), "weight"),
        ("act_b", (7,), "bias"),
    ]


@dataclass
class ModelParams:
    """All parameter blocks plus the configuration they were built for."""

    dims: Dims
    binning: BinningConfig
    vocab: tuple[str, ...]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays", {})
        if name in arrays:
            return arrays[name]
        raise AttributeError(name)

    def blocks(self) -> Iterable[tuple[str, np.ndarray]]:
        for name, _, _ in _block_specs(self.dims):
            yield name, self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims, self.binning, self.vocab, {k: v.copy() for k, v in self.arrays.items()}
        )

    def token_id(self, token: str) -> int:
        try:
            return self.vocab.index(token)
        except ValueError:
            raise ValueError(f"token {token!r} not in vocabulary") from None


def init_params(seed: int, dims: Dims, binning: BinningConfig | None = None) -> ModelParams:
    """Deterministic initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    biases zero.  Embedding tables use their width as fan-in, keeping rows
    that never receive gradient (e.g. unseen task instructions) small enough
    not to swamp the layers they feed."""
    binning = binning if binning is not None else BinningConfig()
    vocab = vocabulary(binning)
    if dims.vocab_size != len(vocab):
        raise ValueError(
            f"dims.vocab_size={dims.vocab_size} does not match the config's "
            f"vocabulary size {len(vocab)}"
        )
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape, kind in _block_specs(dims):
        if kind == "bias":
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(dims, binning, vocab, arrays)


# ---------------------------------------------------------------------------
# forward / backward


def film(v: np.ndarray, l: np.ndarray, params: ModelParams) -> np.ndarray:
    """Feature-wise linear modulation: gamma(l) * v + beta(l), affine in l."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    l = np.atleast_2d(np.asarray(l, dtype=float))
    gamma = l @ params.film_wg.T + params.film_bg
    beta = l @ params.film_wb.T + params.film_bb
    out = gamma * v + beta
    return out[0] if out.shape[0] == 1 and v.shape[0] == 1 else out


@dataclass
class ForwardCache:
    features: np.ndarray
    instruction_ids: np.ndarray
    h1: np.ndarray
    v: np.ndarray
    l: np.ndarray
    gamma: np.ndarray
    fused: np.ndarray
    h2: np.ndarray


def forward_batch(
    params: ModelParams, features: np.ndarray, instruction_ids: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch of observations into latent actions.

    A = adapter(FiLM(f_v(features), f_l(instruction))); tanh hidden layers.
    """
    x = np.asarray(features, dtype=float)
    ids = np.asarray(instruction_ids, dtype=int)
    if x.ndim != 2 or x.shape[1] != params.dims.obs_dim:
        raise ValueError(f"features shape {x.shape} does not match obs_dim {params.dims.obs_dim}")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= params.dims.n_instructions:
        raise ValueError("instruction id out of range")
    h1 = np.tanh(x @ params.v_w1.T + params.v_b1)
    v = h1 @ params.v_w2.T + params.v_b2
    l = params.instr_table[ids]
    gamma = l @ params.film_wg.T + params.film_bg
    beta = l @ params.film_wb.T + params.film_bb
    fused = gamma * v + beta
    h2 = np.tanh(fused @ params.a_w1.T + params.a_b1)
    a = h2 @ params.a_w2.T + params.a_b2
    return a, ForwardCache(x, ids, h1, v, l, gamma, fused, h2)


def backward_batch(
    params: ModelParams, cache: ForwardCache, d_a: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients of the embedding path given dLoss/dA."""
    grads: dict[str, np.ndarray] = {}
    d_a = np.asarray(d_a, dtype=float)

    grads["a_w2"] = d_a.T @ cache.h2
    grads["a_b2"] = d_a.sum(axis=0)
    d_h2 = d_a @ params.a_w2
    d_pre2 = d_h2 * (1.0 - cache.h2 **2)
    grads["a_w1"] = d_pre2.T @ cache.fused
    grads["a_b1"] = d_pre2.sum(axis=0)
    d_fused = d_pre2 @ params.a_w1

    d_gamma = d_fused * cache.v
    d_beta = d_fused
    d_v = d_fused * cache.gamma
    grads["film_wg"] = d_gamma.T @ cache.l
    grads["film_bg"] = d_gamma.sum(axis=0)
    grads["film_wb"] = d_beta.T @ cache.l
    grads["film_bb"] = d_beta.sum(axis=0)
    d_l = d_gamma @ params.film_wg + d_beta @ params.film_wb
    grads["instr_table"] = np.zeros_like(params.instr_table)
    np.add.at(grads["instr_table"], cache.instruction_ids, d_l)

    grads["v_w2"] = d_v.T @ cache.h1
    grads["v_b2"] = d_v.sum(axis=0)
    d_h1 = d_v @ params.v_w2
    d_pre1 = d_h1 * (1.0 - cache.h1 **2)
    grads["v_w1"] = d_pre1.T @ cache.features
    grads["v_b1"] = d_pre1.sum(axis=0)
    return grads


def embed_action(obs: Observation, params: ModelParams) -> np.ndarray:
    """Latent action embedding of a single observation."""
    a, _ = forward_batch(params, obs.features[None, :], np.array([obs.instruction_id]))
    return a[0]


@dataclass
class TextCache:
    token_ids: list[np.ndarray]
    means: np.ndarray


def embed_primitive_texts(
    texts: Sequence[str], params: ModelParams
) -> tuple[np.ndarray, TextCache]:
    """Embed canonical primitive sentences: mean token embedding, projected.

    Rejects sentences outside the canonical grammar.  Identical texts map to
    identical vectors.
    """
    token_ids = []
    for text in texts:
        parse_language(text, params.binning)  # reject non-canonical input
        token_ids.append(np.array([params.token_id(t) for t in tokenize(text)], dtype=int))
    means = np.stack([params.tok_table[ids].mean(axis=0) for ids in token_ids])
    p = means @ params.text_w.T + params.text_b
    return p, TextCache(token_ids, means)


def embed_primitive_text(text: str, params: ModelParams) -> np.ndarray:
    p, _ = embed_primitive_texts([text], params)
    return p[0]


def backward_primitive_texts(
    params: ModelParams, cache: TextCache, d_p: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients of the sentence-embedding path given dLoss/dP."""
    d_p = np.asarray(d_p, dtype=float)
    grads = {
        "text_w": d_p.T @ cache.means,
        "text_b": d_p.sum(axis=0),
        "tok_table": np.zeros_like(params.tok_table),
    }
    d_means = d_p @ params.text_w
    for j, ids in enumerate(cache.token_ids):
        np.add.at(grads["tok_table"], ids, d_means[j][None, :] / len(ids))
    return grads


def heads(a: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Linear heads over the latent embedding: three primitive classifiers
    and the continuous 7-DoF action regressor (used in fine-tuning)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return (
        a @ params.head_t_w.T + params.head_t_b,
        a @ params.head_r_w.T + params.head_r_b,
        a @ params.head_g_w.T + params.head_g_b,
        a @ params.act_w.T + params.act_b,
    )


def heads_backward(
    params: ModelParams,
    a: np.ndarray,
    d_logits_t: np.ndarray | None = None,
    d_logits_r: np.ndarray | None = None,
    d_logits_g: np.ndarray | None = None,
    d_action: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Head parameter gradients plus the gradient flowing back into A."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    grads: dict[str, np.ndarray] = {}
    d_a = np.zeros_like(a)
    for d_out, w_name, b_name in (
        (d_logits_t, "head_t_w", "head_t_b"),
        (d_logits_r, "head_r_w", "head_r_b"),
        (d_logits_g, "head_g_w", "head_g_b"),
        (d_action, "act_w", "act_b"),
    ):
        if d_out is None:
            continue
        d_out = np.asarray(d_out, dtype=float)
        grads[w_name] = d_out.T @ a
        grads[b_name] = d_out.sum(axis=0)
        d_a += d_out @ params.arrays[w_name]
    return grads, d_a


# ---------------------------------------------------------------------------
# parameter vector helpers (finite-difference checks, optimizer bookkeeping)


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in params.blocks()])


def vector_to_params(params: ModelParams, vec: np.ndarray) -> ModelParams:
    out = params.copy()
    offset = 0
    for name, a in params.blocks():
        out.arrays[name] = vec[offset : offset + a.size].reshape(a.shape).copy()
        offset += a.size
    if offset != vec.size:
        raise ValueError(f"vector length {vec.size} does not match parameter count {offset}")
    return out


def grads_to_vector(params: ModelParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    parts = []
    for name, a in params.blocks():
        parts.append(np.asarray(grads.get(name, np.zeros_like(a))).ravel())
    return np.concatenate(parts)


def accumulate(total: dict[str, np.ndarray], part: dict[str, np.ndarray], scale: float = 1.0) -> None:
    """total += scale * part, creating entries as needed."""
    for name, g in part.items():
        if name in total:
            total[name] = total[name] + scale * g
        else:
            total[name] = scale * g


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path) -> None:
    """Versioned JSON checkpoint: named float64 arrays plus configuration."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": dict(params.dims.__dict__),
        "binning": json.loads(params.binning.to_json()),
        "params": {name: a.tolist() for name, a in params.blocks()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> ModelParams:
    """Load a checkpoint, rejecting format or dimension mismatches."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: format={doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    dims = Dims(**doc["dims"])
    binning = BinningConfig.from_json(json.dumps(doc["binning"]))
    vocab = vocabulary(binning)
    if len(vocab) != dims.vocab_size:
        raise ValueError("checkpoint vocabulary size does not match its binning config")
    arrays = {}
    for name, shape, _ in _block_specs(dims):
        if name not in doc["params"]:
            raise ValueError(f"checkpoint missing parameter block {name!r}")
        a = np.array(doc["params"][name], dtype=float)
        if a.shape != shape:
            raise ValueError(f"parameter {name!r} has shape {a.shape}, expected {shape}")
        arrays[name] = a
    return ModelParams(dims, binning, vocab, arrays)
