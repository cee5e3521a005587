"""Continuous 7-DoF actions, their discretization into primitives, and the
bidirectional mapping between primitives and canonical language.

An action is a translation delta (meters), a rotation delta per axis
(degrees), and a gripper command.  Discretization picks the dominant
translation / rotation axis, bins its magnitude, and thresholds the gripper,
producing a triple of symbolic primitives.  Every triple renders to exactly
one canonical sentence (see ``docs/sentence_grammar.ebnf``) and every
canonical sentence parses back to the triple.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

GRIP_OPEN = 0
GRIP_CLOSE = 1

#: Signed axes in fixed priority order (ties resolved left to right).
AXES = ("+x", "-x", "+y", "-y", "+z", "-z")

_DEFAULT_AXIS_NAMES = {
    "+x": "forward",
    "-x": "backward",
    "+y": "left",
    "-y": "right",
    "+z": "up",
    "-z": "down",
}


class ParseError(ValueError):
    """Raised when a sentence is not in the canonical grammar."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


def format_number(x: float) -> str:
    """Render a magnitude label the way it appears in sentences (90, 0.5)."""
    if float(x) == int(x):
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class Action7:
    """A continuous end-effector delta: translation (m), rotation (deg), grip."""

    dx: float
    dy: float
    dz: float
    rx: float
    ry: float
    rz: float
    g: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.dx, self.dy, self.dz, self.rx, self.ry, self.rz, self.g)


def validate_action(action: Action7) -> None:
    """Reject non-finite fields (named) and out-of-range gripper commands."""
    for name in ("dx", "dy", "dz", "rx", "ry", "rz", "g"):
        value = getattr(action, name)
        if not math.isfinite(value):
            raise ValueError(f"action field {name!r} is not finite: {value!r}")
    if not 0.0 <= action.g <= 1.0:
        raise ValueError(f"action field 'g' outside [0, 1]: {action.g!r}")


@dataclass(frozen=True)
class BinningConfig:
    """Thresholds, magnitude bin edges, and per-bin representative labels.

    ``dist_edges`` / ``angle_edges`` split magnitudes into right-open bins
    ``[prev_edge, edge)`` with one extra unbounded top bin, so there is one
    label per bin (``len(edges) + 1`` labels).  Labels are the values rendered
    into sentences and must sit strictly inside their bin (and above the
    no-motion threshold for bin 0) so that a label is always realizable as a
    continuous action.
    """

    epsilon_t: float = 0.005
    epsilon_r: float = 2.0
    dist_edges: tuple[float, ...] = (0.02, 0.10)
    angle_edges: tuple[float, ...] = (15.0, 60.0)
    dist_labels: tuple[float, ...] = (0.01, 0.05, 0.5)
    angle_labels: tuple[float, ...] = (5.0, 30.0, 90.0)
    axis_names: dict[str, str] = field(default_factory=lambda: dict(_DEFAULT_AXIS_NAMES))

    def __post_init__(self):
        if self.epsilon_t <= 0 or self.epsilon_r <= 0:
            raise ValueError("no-motion thresholds must be > 0")
        for edges, labels, eps, what in (
            (self.dist_edges, self.dist_labels, self.epsilon_t, "dist"),
            (self.angle_edges, self.angle_labels, self.epsilon_r, "angle"),
        ):
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"{what}_edges must be strictly increasing")
            if len(labels) != len(edges) + 1:
                raise ValueError(
                    f"{what}_labels must have {len(edges) + 1} entries, got {len(labels)}"
                )
            for i, label in enumerate(labels):
                lo = eps if i == 0 else edges[i - 1]
                hi = edges[i] if i < len(edges) else math.inf
                if not lo < label < hi:
                    raise ValueError(
                        f"{what}_labels[{i}]={label} not inside its bin ({lo}, {hi})"
                    )
            if len({format_number(x) for x in labels}) != len(labels):
                raise ValueError(f"{what}_labels render to duplicate strings")
        if set(self.axis_names) != set(AXES):
            raise ValueError(f"axis_names must map exactly the axes {AXES}")
        if len(set(self.axis_names.values())) != 6:
            raise ValueError("axis_names values must be distinct")

    @property
    def n_dist_bins(self) -> int:
        return len(self.dist_labels)

    @property
    def n_angle_bins(self) -> int:
        return len(self.angle_labels)

    @property
    def n_trans_classes(self) -> int:
        return 1 + 6 * self.n_dist_bins

    @property
    def n_rot_classes(self) -> int:
        return 1 + 6 * self.n_angle_bins

    def to_json(self) -> str:
        doc = {
            "epsilon_t": self.epsilon_t,
            "epsilon_r": self.epsilon_r,
            "dist_edges": list(self.dist_edges),
            "angle_edges": list(self.angle_edges),
            "dist_labels": list(self.dist_labels),
            "angle_labels": list(self.angle_labels),
            "axis_names": self.axis_names,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BinningConfig":
        doc = json.loads(text)
        return cls(
            epsilon_t=doc["epsilon_t"],
            epsilon_r=doc["epsilon_r"],
            dist_edges=tuple(doc["dist_edges"]),
            angle_edges=tuple(doc["angle_edges"]),
            dist_labels=tuple(doc["dist_labels"]),
            angle_labels=tuple(doc["angle_labels"]),
            axis_names=dict(doc["axis_names"]),
        )


@dataclass(frozen=True)
class PrimitiveTriple:
    """Discretized (translation, rotation, gripper) primitives.

    ``trans_axis`` / ``rot_axis`` are one of :data:`AXES` or ``None`` for the
    reserved no-motion bin, in which case the magnitude bin is 0 by
    convention.  ``grip`` is :data:`GRIP_OPEN` or :data:`GRIP_CLOSE`.
    """

    trans_axis: str | None
    trans_bin: int
    rot_axis: str | None
    rot_bin: int
    grip: int


def validate_triple(p: PrimitiveTriple, cfg: BinningConfig) -> None:
    for axis, mag, n_bins, what in (
        (p.trans_axis, p.trans_bin, cfg.n_dist_bins, "translation"),
        (p.rot_axis, p.rot_bin, cfg.n_angle_bins, "rotation"),
    ):
        if axis is None:
            if mag != 0:
                raise ValueError(f"{what} axis is NONE but mag_bin is {mag}, expected 0")
        else:
            if axis not in AXES:
                raise ValueError(f"unknown {what} axis {axis!r}")
            if not 0 <= mag < n_bins:
                raise ValueError(f"{what} mag_bin {mag} out of range [0, {n_bins})")
    if p.grip not in (GRIP_OPEN, GRIP_CLOSE):
        raise ValueError(f"grip must be {GRIP_OPEN} or {GRIP_CLOSE}, got {p.grip!r}")


def _bin_index(magnitude: float, edges: tuple[float, ...]) -> int:
    # Right-open bins: magnitude == edge falls in the upper bin.
    idx = 0
    for edge in edges:
        if magnitude >= edge:
            idx += 1
    return idx


def _dominant(components: tuple[float, float, float], epsilon: float) -> tuple[str | None, float]:
    best = max(range(3), key=lambda i: abs(components[i]))
    # max() keeps the first maximum, giving the x > y > z tie priority.
    magnitude = abs(components[best])
    if magnitude < epsilon:
        return None, 0.0
    sign = "+" if components[best] > 0 else "-"
    return sign + "xyz"[best], magnitude


def discretize(action: Action7, cfg: BinningConfig) -> PrimitiveTriple:
    """Project a continuous action onto its primitive triple.

    The dominant translation / rotation component (largest absolute value,
    ties broken by the fixed x > y > z axis priority) selects the signed axis;
    its magnitude selects the bin.  Motion below the threshold maps to the
    reserved no-motion primitive.  Gripper values >= 0.5 close.
    """
    validate_action(action)
    t_axis, t_mag = _dominant((action.dx, action.dy, action.dz), cfg.epsilon_t)
    r_axis, r_mag = _dominant((action.rx, action.ry, action.rz), cfg.epsilon_r)
    return PrimitiveTriple(
        trans_axis=t_axis,
        trans_bin=_bin_index(t_mag, cfg.dist_edges) if t_axis is not None else 0,
        rot_axis=r_axis,
        rot_bin=_bin_index(r_mag, cfg.angle_edges) if r_axis is not None else 0,
        grip=GRIP_CLOSE if action.g >= 0.5 else GRIP_OPEN,
    )


def render_language(p: PrimitiveTriple, cfg: BinningConfig) -> str:
    """Render the canonical sentence for a primitive triple."""
    validate_triple(p, cfg)
    if p.trans_axis is None:
        trans = "stay in place"
    else:
        dist = format_number(cfg.dist_labels[p.trans_bin])
        trans = f"move {dist} meters {cfg.axis_names[p.trans_axis]}"
    if p.rot_axis is None:
        rot = "keep orientation"
    else:
        mag = format_number(cfg.angle_labels[p.rot_bin])
        sign, letter = p.rot_axis[0], p.rot_axis[1]
        axis = letter if sign == "+" else f"negative {letter}"
        rot = f"rotate {mag} degrees around the {axis}-axis"
    grip = "close" if p.grip == GRIP_CLOSE else "open"
    return f"{trans}, {rot}, and {grip} the gripper"


class _Cursor:
    """Tracks a position in the original text for error offsets."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def expect(self, literal: str, what: str) -> None:
        if not self.text.startswith(literal, self.pos):
            raise ParseError(f"expected {what}", self.pos)
        self.pos += len(literal)

    def take_word(self, what: str) -> str:
        end = self.pos
        while end < len(self.text) and self.text[end] not in " ,":
            end += 1
        if end == self.pos:
            raise ParseError(f"expected {what}", self.pos)
        word, self.pos = self.text[self.pos:end], end
        return word


def parse_language(text: str, cfg: BinningConfig) -> PrimitiveTriple:
    """Parse a canonical sentence back into its primitive triple.

    Exact inverse of :func:`render_language`; only surrounding whitespace is
    tolerated.  Malformed input raises :class:`ParseError` carrying the
    character offset into the original string.
    """
    cur = _Cursor(text)
    cur.pos = len(text) - len(text.lstrip())
    if cur.pos == len(text):
        raise ParseError("empty sentence", cur.pos)

    name_to_axis = {name: axis for axis, name in cfg.axis_names.items()}
    dist_bins = {format_number(x): i for i, x in enumerate(cfg.dist_labels)}
    angle_bins = {format_number(x): i for i, x in enumerate(cfg.angle_labels)}

    if cur.text.startswith("stay", cur.pos):
        cur.expect("stay in place", "no-motion clause 'stay in place'")
        t_axis, t_bin = None, 0
    else:
        cur.expect("move ", "translation clause starting with 'move '")
        word = cur.take_word("distance label")
        if word not in dist_bins:
            raise ParseError(f"unlabeled distance magnitude {word!r}", cur.pos - len(word))
        t_bin = dist_bins[word]
        cur.expect(" meters ", "' meters '")
        word = cur.take_word("direction")
        if word not in name_to_axis:
            raise ParseError(f"unknown direction {word!r}", cur.pos - len(word))
        t_axis = name_to_axis[word]

    cur.expect(", ", "', ' before the rotation clause")
    if cur.text.startswith("keep", cur.pos):
        cur.expect("keep orientation", "no-rotation clause 'keep orientation'")
        r_axis, r_bin = None, 0
    else:
        cur.expect("rotate ", "rotation clause starting with 'rotate '")
        word = cur.take_word("angle label")
        if word not in angle_bins:
            raise ParseError(f"unlabeled angle magnitude {word!r}", cur.pos - len(word))
        r_bin = angle_bins[word]
        cur.expect(" degrees around the ", "' degrees around the '")
        sign = "+"
        if cur.text.startswith("negative ", cur.pos):
            cur.expect("negative ", "'negative '")
            sign = "-"
        word = cur.take_word("axis")
        if word not in ("x-axis", "y-axis", "z-axis"):
            raise ParseError(f"unknown axis token {word!r}", cur.pos - len(word))
        r_axis = sign + word[0]

    cur.expect(", and ", "', and ' before the gripper clause")
    if cur.text.startswith("open", cur.pos):
        cur.expect("open", "'open'")
        grip = GRIP_OPEN
    elif cur.text.startswith("close", cur.pos):
        cur.expect("close", "'close'")
        grip = GRIP_CLOSE
    else:
        raise ParseError("expected gripper command 'open' or 'close'", cur.pos)
    cur.expect(" the gripper", "' the gripper'")
    if cur.text[cur.pos:].strip():
        raise ParseError("trailing text after sentence", cur.pos)

    triple = PrimitiveTriple(t_axis, t_bin, r_axis, r_bin, grip)
    validate_triple(triple, cfg)
    return triple


def class_indices(p: PrimitiveTriple, cfg: BinningConfig) -> tuple[int, int, int]:
    """Flatten a triple into one class id per imitation head.

    Index 0 is the reserved no-motion class; the remaining ids enumerate
    (axis, magnitude bin) pairs.  Bijective with the triple.
    """
    validate_triple(p, cfg)
    if p.trans_axis is None:
        t_idx = 0
    else:
        t_idx = 1 + AXES.index(p.trans_axis) * cfg.n_dist_bins + p.trans_bin
    if p.rot_axis is None:
        r_idx = 0
    else:
        r_idx = 1 + AXES.index(p.rot_axis) * cfg.n_angle_bins + p.rot_bin
    return t_idx, r_idx, p.grip


def triple_from_indices(t_idx: int, r_idx: int, g_idx: int, cfg: BinningConfig) -> PrimitiveTriple:
    """Inverse of :func:`class_indices`."""
    if not 0 <= t_idx < cfg.n_trans_classes:
        raise ValueError(f"t_idx {t_idx} out of range [0, {cfg.n_trans_classes})")
    if not 0 <= r_idx < cfg.n_rot_classes:
        raise ValueError(f"r_idx {r_idx} out of range [0, {cfg.n_rot_classes})")
    if t_idx == 0:
        t_axis, t_bin = None, 0
    else:
        t_axis = AXES[(t_idx - 1) // cfg.n_dist_bins]
        t_bin = (t_idx - 1) % cfg.n_dist_bins
    if r_idx == 0:
        r_axis, r_bin = None, 0
    else:
        r_axis = AXES[(r_idx - 1) // cfg.n_angle_bins]
        r_bin = (r_idx - 1) % cfg.n_angle_bins
    triple = PrimitiveTriple(t_axis, t_bin, r_axis, r_bin, g_idx)
    validate_triple(triple, cfg)
    return triple


def all_triples(cfg: BinningConfig) -> list[PrimitiveTriple]:
    """Enumerate every valid triple under a config."""
    return [
        triple_from_indices(t, r, g, cfg)
        for t in range(cfg.n_trans_classes)
        for r in range(cfg.n_rot_classes)
        for g in (GRIP_OPEN, GRIP_CLOSE)
    ]


def representative_action(p: PrimitiveTriple, cfg: BinningConfig) -> Action7:
    """The canonical continuous action for a triple (label values on axes)."""
    validate_triple(p, cfg)
    trans = [0.0, 0.0, 0.0]
    if p.trans_axis is not None:
        sign = 1.0 if p.trans_axis[0] == "+" else -1.0
        trans["xyz".index(p.trans_axis[1])] = sign * cfg.dist_labels[p.trans_bin]
    rot = [0.0, 0.0, 0.0]
    if p.rot_axis is not None:
        sign = 1.0 if p.rot_axis[0] == "+" else -1.0
        rot["xyz".index(p.rot_axis[1])] = sign * cfg.angle_labels[p.rot_bin]
    g = 1.0 if p.grip == GRIP_CLOSE else 0.0
    return Action7(trans[0], trans[1], trans[2], rot[0], rot[1], rot[2], g)


def default_config(**overrides) -> BinningConfig:
    """The default binning used across the project, with optional overrides."""
    return replace(BinningConfig(), **overrides) if overrides else BinningConfig()
