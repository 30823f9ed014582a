"""CMU-style skeleton (ASF) and motion (AMC) parsing and angle normalization.

Only what is needed to turn recordings into grouped joint-angle datasets is
read: the root channel order, each bone's name, degrees of freedom and
limits, and the per-frame channel values.  Bone geometry is skipped.
Angles stay in degrees.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, GroupedDataset
from .model import GroupSpec

DOF_TOKENS = ("tx", "ty", "tz", "rx", "ry", "rz", "l")
ROOT_MODES = ("rotation", "full", "exclude")


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class Joint:
    name: str
    dofs: tuple[str, ...]
    limits: tuple[tuple[float, float], ...]


@dataclass
class SkeletonDef:
    """Bones with at least one degree of freedom, in file order, plus the root.

    ``root_order`` lists the root's channels as they appear in motion
    frames (``tx ty tz rx ry rz`` in CMU files).  Bones without degrees of
    freedom are kept in ``static_bones`` but never appear in motion data.
    """

    root_order: tuple[str, ...]
    joints: list[Joint]
    static_bones: list[str] = field(default_factory=list)
    hierarchy: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    units: dict = field(default_factory=dict)

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def joint(self, name: str) -> Joint:
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(name)

    @property
    def n_channels(self) -> int:
        return len(self.root_order) + sum(len(j.dofs) for j in self.joints)

    def channel_layout(self) -> list[tuple[str, int]]:
        """``(name, channel count)`` in the order motion frames list them."""
        return [("root", len(self.root_order))] + [(j.name, len(j.dofs)) for j in self.joints]


_LIMIT_RE = re.compile(r"\(\s*([^\s()]+)\s+([^\s()]+)\s*\)")


def _parse_limit(text: str, lineno: int) -> tuple[float, float]:
    m = _LIMIT_RE.search(text)
    if not m:
        raise ParseError(f"malformed limit {text.strip()!r}", lineno)
    try:
        lo, hi = (float(v) for v in m.groups())
    except ValueError:
        raise ParseError(f"non-numeric limit {m.group(0)!r}", lineno) from None
    return lo, hi


def parse_skeleton(text: str) -> SkeletonDef:
    """Parse ASF text into a :class:`SkeletonDef`."""
    lines = text.splitlines()
    section = None
    root_order: tuple[str, ...] = ()
    units: dict = {}
    joints: list[Joint] = []
    static: list[str] = []
    hierarchy: list[tuple[str, tuple[str, ...]]] = []
    bone = None
    pending_limits = 0
    seen_sections = set()

    def finish_bone(lineno):
        nonlocal bone
        if bone is None:
            raise ParseError("'end' without matching 'begin'", lineno)
        if "name" not in bone:
            raise ParseError("bone without a name", lineno)
        dofs = bone.get("dof", ())
        limits = bone.get("limits", [])
        if dofs and len(limits) != len(dofs):
            raise ParseError(
                f"bone {bone['name']!r} declares {len(dofs)} dof but {len(limits)} limits",
                lineno,
            )
        if dofs:
            joints.append(Joint(bone["name"], tuple(dofs), tuple(limits)))
        else:
            static.append(bone["name"])
        bone = None

    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith(":"):
            if pending_limits:
                raise ParseError(f"bone {bone['name']!r}: missing limits", lineno)
            key = stripped.split()[0][1:]
            section = key
            seen_sections.add(key)
            continue
        tokens = stripped.split()
        if section == "units":
            if len(tokens) != 2:
                raise ParseError(f"malformed units entry {stripped!r}", lineno)
            units[tokens[0]] = tokens[1]
        elif section == "root":
            if tokens[0] == "order":
                order = tuple(t.lower() for t in tokens[1:])
                bad = [t for t in order if t not in DOF_TOKENS]
                if bad:
                    raise ParseError(f"unknown root channel {bad[0]!r}", lineno)
                root_order = order
        elif section == "bonedata":
            if pending_limits:
                if tokens[0] == "limits":
                    raise ParseError("unexpected second 'limits' keyword", lineno)
                if not stripped.startswith("("):
                    raise ParseError(f"bone {bone['name']!r}: missing limits", lineno)
                bone["limits"].append(_parse_limit(stripped, lineno))
                pending_limits -= 1
                continue
            if tokens[0] == "begin":
                if bone is not None:
                    raise ParseError("nested 'begin'", lineno)
                bone = {}
            elif tokens[0] == "end":
                finish_bone(lineno)
            elif bone is None:
                raise ParseError(f"bone attribute {tokens[0]!r} outside begin/end", lineno)
            elif tokens[0] == "name":
                if len(tokens) != 2:
                    raise ParseError("malformed bone name", lineno)
                bone["name"] = tokens[1]
            elif tokens[0] == "dof":
                dofs = [t.lower() for t in tokens[1:]]
                bad = [t for t in dofs if t not in DOF_TOKENS]
                if bad:
                    raise ParseError(f"unknown dof token {bad[0]!r}", lineno)
                if not 1 <= len(dofs) <= 3:
                    raise ParseError("a bone must declare between 1 and 3 dofs", lineno)
                bone["dof"] = dofs
                bone["limits"] = []
            elif tokens[0] == "limits":
                if "dof" not in bone:
                    raise ParseError("'limits' before 'dof'", lineno)
                bone["limits"].append(_parse_limit(stripped, lineno))
                pending_limits = len(bone["dof"]) - 1
            # id, direction, length, axis, bodymass, cofmass: geometry, ignored
        elif section == "hierarchy":
            if tokens[0] in ("begin", "end"):
                continue
            hierarchy.append((tokens[0], tuple(tokens[1:])))
        # :version, :name, :documentation are free-form
    if pending_limits:
        raise ParseError(f"bone {bone['name']!r}: missing limits", len(lines))
    if bone is not None:
        raise ParseError(f"bone {bone.get('name', '?')!r} not closed with 'end'", len(lines))
    for required in ("root", "bonedata"):
        if required not in seen_sections:
            raise ParseError(f"missing :{required} section")
    if not root_order:
        raise ParseError("root section has no 'order' line")
    names = [j.name for j in joints] + static
    if len(set(names)) != len(names):
        raise ParseError("duplicate bone names")
    return SkeletonDef(root_order, joints, static, hierarchy, units)


@dataclass
class MotionSequence:
    """``T x channels`` raw values laid out as :meth:`SkeletonDef.channel_layout`."""

    frames: np.ndarray
    frame_rate: float = 120.0
    trial_id: str = ""


def parse_motion(text: str, skeleton: SkeletonDef, trial_id: str = "", frame_rate: float = 120.0):
    """Parse AMC text into a dense :class:`MotionSequence`."""
    layout = skeleton.channel_layout()
    offsets = {}
    pos = 0
    for name, n in layout:
        offsets[name] = (pos, n)
        pos += n
    total = pos
    frames: list[np.ndarray] = []
    current = None
    filled: set[str] = set()
    last_index = None
    frame_line = 0

    def close(lineno):
        missing = [n for n, _ in layout if n not in filled]
        if missing:
            raise ParseError(f"frame {last_index}: missing joint line(s) {missing}", lineno)
        frames.append(current)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(":"):
            continue
        tokens = line.split()
        if len(tokens) == 1 and tokens[0].lstrip("-").isdigit():
            idx = int(tokens[0])
            if current is not None:
                close(frame_line)
            if last_index is not None and idx <= last_index:
                raise ParseError(f"frame number {idx} does not increase (after {last_index})", lineno)
            last_index, frame_line = idx, lineno
            current = np.full(total, np.nan)
            filled = set()
            continue
        if current is None:
            raise ParseError("joint values before the first frame number", lineno)
        name = tokens[0]
        if name not in offsets:
            raise ParseError(f"frame {last_index}: unknown joint {name!r}", lineno)
        start, n = offsets[name]
        if len(tokens) - 1 != n:
            raise ParseError(
                f"frame {last_index}: joint {name!r} has {len(tokens) - 1} values, expected {n}",
                lineno,
            )
        if name in filled:
            raise ParseError(f"frame {last_index}: joint {name!r} listed twice", lineno)
        try:
            current[start : start + n] = [float(t) for t in tokens[1:]]
        except ValueError:
            raise ParseError(f"frame {last_index}: non-numeric value for {name!r}", lineno) from None
        filled.add(name)
    if current is not None:
        close(frame_line)
    data = np.vstack(frames) if frames else np.zeros((0, total))
    return MotionSequence(data, frame_rate, trial_id)


# ---------------------------------------------------------------------------
# writers (fixtures and round-trip tests)
# ---------------------------------------------------------------------------


def _num(v: float) -> str:
    return repr(float(v))


def write_skeleton(skel: SkeletonDef) -> str:
    out = [":version 1.10", ":name oivae", ":units"]
    for k, v in (skel.units or {"angle": "deg"}).items():
        out.append(f"  {k} {v}")
    out += [":root", "   order " + " ".join(t.upper() for t in skel.root_order), "   axis XYZ"]
    out.append(":bonedata")
    bone_id = 1
    for name in skel.static_bones:
        out += ["  begin", f"     id {bone_id}", f"     name {name}", "  end"]
        bone_id += 1
    for j in skel.joints:
        out += ["  begin", f"     id {bone_id}", f"     name {j.name}"]
        out.append("    dof " + " ".join(j.dofs))
        for i, (lo, hi) in enumerate(j.limits):
            prefix = "    limits " if i == 0 else "           "
            out.append(f"{prefix}({_num(lo)} {_num(hi)})")
        out.append("  end")
        bone_id += 1
    if skel.hierarchy:
        out += [":hierarchy", "  begin"]
        out += ["    " + " ".join((parent,) + children) for parent, children in skel.hierarchy]
        out.append("  end")
    return "\n".join(out) + "\n"


def write_motion(seq: MotionSequence, skel: SkeletonDef) -> str:
    out = [":FULLY-SPECIFIED", ":DEGREES"]
    layout = skel.channel_layout()
    for t, frame in enumerate(seq.frames, start=1):
        out.append(str(t))
        pos = 0
        for name, n in layout:
            out.append(name + " " + " ".join(_num(v) for v in frame[pos : pos + n]))
            pos += n
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass
class ChannelRanges:
    """Per-channel ``(min, max)`` used to map values onto [0, 1]."""

    names: tuple[str, ...]
    widths: tuple[int, ...]
    lo: np.ndarray
    hi: np.ndarray

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "widths": list(self.widths),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
        }


def _root_columns(skel: SkeletonDef, root_mode: str) -> list[int]:
    if root_mode == "exclude":
        return []
    if root_mode == "full":
        return list(range(len(skel.root_order)))
    return [i for i, t in enumerate(skel.root_order) if t.startswith("r")]


def channel_ranges(skel: SkeletonDef, seq_frames, root_mode: str = "rotation") -> ChannelRanges:
    """Declared limits for joints; empirical min/max of ``seq_frames`` for the root."""
    if root_mode not in ROOT_MODES:
        raise ValueError(f"root_mode must be one of {ROOT_MODES}")
    frames = np.asarray(seq_frames, dtype=np.float64)
    names, widths, lo, hi = [], [], [], []
    rcols = _root_columns(skel, root_mode)
    if rcols:
        if frames.shape[0] == 0:
            raise DataError("root ranges need at least one frame")
        names.append("root")
        widths.append(len(rcols))
        lo.extend(frames[:, rcols].min(axis=0))
        hi.extend(frames[:, rcols].max(axis=0))
    for j in skel.joints:
        names.append(j.name)
        widths.append(len(j.dofs))
        for a, b in j.limits:
            lo.append(a)
            hi.append(b)
    return ChannelRanges(tuple(names), tuple(widths), np.array(lo), np.array(hi))


def _select_columns(skel: SkeletonDef, root_mode: str) -> np.ndarray:
    n_root = len(skel.root_order)
    return np.array(_root_columns(skel, root_mode) + list(range(n_root, skel.n_channels)), dtype=int)


def normalize_angles(
    seq: MotionSequence,
    skel: SkeletonDef,
    root_mode: str = "rotation",
    ranges: ChannelRanges | None = None,
):
    """Map each channel onto [0, 1] by its range; one group per joint.

    Values outside a declared range are kept (no clamping) and reported.
    Returns ``(dataset, warnings)``; ``dataset.provenance["ranges"]`` holds
    the ranges used so held-out trials can be normalized identically.
    """
    if ranges is None:
        ranges = channel_ranges(skel, seq.frames, root_mode)
    span = ranges.hi - ranges.lo
    bad = np.flatnonzero(~(span > 0) | ~np.isfinite(span))
    if bad.size:
        raise DataError(f"degenerate limit interval for channel(s) {bad.tolist()}")
    raw = np.asarray(seq.frames, dtype=np.float64)[:, _select_columns(skel, root_mode)]
    if raw.shape[1] != span.size:
        raise DataError("channel ranges do not match the skeleton layout")
    out = (raw - ranges.lo) / span
    warnings = []
    col = 0
    for name, w in zip(ranges.names, ranges.widths):
        block = out[:, col : col + w]
        n_out = int(np.sum((block < 0) | (block > 1)))
        if n_out:
            warnings.append(f"{name}: {n_out} value(s) outside declared range")
        col += w
    groups = GroupSpec(ranges.names, ranges.widths)
    prov = {
        "source": "mocap",
        "trial": seq.trial_id,
        "root_mode": root_mode,
        "ranges": ranges.to_dict(),
    }
    return GroupedDataset(out, groups, prov), warnings


def denormalize_angles(values, ranges: ChannelRanges) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * (ranges.hi - ranges.lo) + ranges.lo


def load_subject(directory, subject: str, trials, root_mode: str = "rotation"):
    """Read ``<subject>.asf`` and ``<subject>_<trial>.amc`` files.

    Returns ``(skeleton, {trial: MotionSequence})``.
    """
    directory = Path(directory)
    skel = parse_skeleton((directory / f"{subject}.asf").read_text())
    seqs = {}
    for t in trials:
        path = directory / f"{subject}_{int(t):02d}.amc"
        seqs[int(t)] = parse_motion(path.read_text(), skel, trial_id=path.stem)
    return skel, seqs


def normalize_trials(skel: SkeletonDef, seqs: dict, train_ids, root_mode: str = "rotation"):
    """Normalize every trial using ranges fitted on ``train_ids`` only.

    Returns ``({trial: GroupedDataset}, warnings)``.
    """
    train_frames = np.vstack([seqs[t].frames for t in train_ids])
    ranges = channel_ranges(skel, train_frames, root_mode)
    out, warnings = {}, []
    for t, seq in seqs.items():
        ds, w = normalize_angles(seq, skel, root_mode, ranges)
        out[t] = ds
        warnings += [f"trial {t}: {m}" for m in w]
    return out, warnings

