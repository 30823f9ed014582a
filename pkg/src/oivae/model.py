"""Group-structured VAE with per-group latent-to-group matrices.

Each group ``g`` of output columns gets its own generator ``f_g`` that sees
the shared latent code only through a ``p x K`` matrix ``W[g]``::

    z ~ N(0, I)
    x_g ~ N(f_g(W[g] @ z), diag(exp(log_noise[g]))**2)

Column ``j`` of ``W[g]`` being exactly zero means latent dimension ``j`` has
no influence on group ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DimensionError, Node

DEFAULT_STD_FLOOR = 1e-3
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GroupSpec:
    """Ordered, named column blocks of the observation vector."""

    names: tuple[str, ...]
    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.names) != len(self.widths):
            raise ValueError("GroupSpec: names and widths differ in length")
        if not self.names:
            raise ValueError("GroupSpec: at least one group is required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("GroupSpec: group names must be unique")
        if any(w < 1 for w in self.widths):
            raise ValueError("GroupSpec: group widths must be >= 1")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, int]]) -> "GroupSpec":
        return cls(tuple(n for n, _ in pairs), tuple(w for _, w in pairs))

    @classmethod
    def single(cls, width: int, name: str = "all") -> "GroupSpec":
        return cls((name,), (width,))

    @property
    def n_groups(self) -> int:
        return len(self.names)

    @property
    def total_width(self) -> int:
        return sum(self.widths)

    @property
    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for w in self.widths:
            out.append(out[-1] + w)
        return tuple(out)

    def slices(self) -> list[slice]:
        o = self.offsets
        return [slice(o[i], o[i + 1]) for i in range(self.n_groups)]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "widths": list(self.widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupSpec":
        return cls(tuple(d["names"]), tuple(d["widths"]))


_LAYER_TOKENS = ("affine", "tanh", "relu", "exp")


def _parse_layer(token: str) -> tuple[str, int | None]:
    kind, _, size = token.partition(":")
    if kind not in _LAYER_TOKENS:
        raise ValueError(f"unknown layer {token!r}; expected one of {_LAYER_TOKENS}")
    if size:
        if kind != "affine":
            raise ValueError(f"layer {token!r}: only affine layers take a size")
        n = int(size)
        if n < 1:
            raise ValueError(f"layer {token!r}: size must be >= 1")
        return kind, n
    return kind, None


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer lists for the inference and generator networks.

    Layers are tokens from a closed family: ``"affine:N"`` (affine map to
    ``N`` units), ``"tanh"``, ``"relu"``, ``"exp"``.  In the generator the
    final layer may be a bare ``"affine"``, which maps to the group width.
    An empty generator is the identity (requires ``p`` equal to every group
    width).  The inference network always ends in two affine heads of size
    ``K`` (mean and log standard deviation) on top of ``inference_hidden``.
    """

    latent_dim: int
    p: int
    inference_hidden: tuple[str, ...] = ()
    generator: tuple[str, ...] = ("affine",)

    def __post_init__(self):
        object.__setattr__(self, "inference_hidden", tuple(self.inference_hidden))
        object.__setattr__(self, "generator", tuple(self.generator))
        if self.latent_dim < 1 or self.p < 1:
            raise ValueError("ArchitectureSpec: latent_dim and p must be >= 1")
        for tok in self.inference_hidden:
            kind, size = _parse_layer(tok)
            if kind == "affine" and size is None:
                raise ValueError("inference hidden affine layers need an explicit size")
        for i, tok in enumerate(self.generator):
            kind, size = _parse_layer(tok)
            if kind == "affine" and size is None and i != len(self.generator) - 1:
                raise ValueError("only the final generator layer may be a bare 'affine'")

    def validate_for(self, groups: GroupSpec) -> None:
        width = self.p
        for tok in self.generator:
            kind, size = _parse_layer(tok)
            if kind == "affine":
                width = size if size is not None else None
        if width is not None:
            bad = [(n, w) for n, w in zip(groups.names, groups.widths) if w != width]
            if bad:
                raise DimensionError(
                    f"generator output width {width} does not match groups {bad}"
                )

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "p": self.p,
            "inference_hidden": list(self.inference_hidden),
            "generator": list(self.generator),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(
            int(d["latent_dim"]),
            int(d["p"]),
            tuple(d.get("inference_hidden", ())),
            tuple(d.get("generator", ("affine",))),
        )


@dataclass
class OiVaeParams:
    """All learnable state plus the structure it was built for.

    ``phi`` holds the inference network, ``theta[g]`` the generator of
    group ``g``, ``W[g]`` its ``p x K`` latent-to-group matrix and
    ``log_noise[g]`` the per-column log standard deviation of its Gaussian
    likelihood.  Entries are numpy arrays, or :class:`Node` leaves inside a
    training step (see :meth:`as_nodes`).
    """

    groups: GroupSpec
    arch: ArchitectureSpec
    phi: dict
    theta: list
    W: list
    log_noise: list
    step: int = 0

    def as_nodes(self) -> "OiVaeParams":
        """Copy with every tensor wrapped as a gradient-tracking leaf."""
        return replace(
            self,
            phi={k: dc.parameter(v) for k, v in self.phi.items()},
            theta=[{k: dc.parameter(v) for k, v in t.items()} for t in self.theta],
            W=[dc.parameter(w) for w in self.W],
            log_noise=[dc.parameter(v) for v in self.log_noise],
        )

    def as_arrays(self) -> "OiVaeParams":
        def val(v):
            return v.value.copy() if isinstance(v, Node) else np.array(v, dtype=np.float64)

        return replace(
            self,
            phi={k: val(v) for k, v in self.phi.items()},
            theta=[{k: val(v) for k, v in t.items()} for t in self.theta],
            W=[val(w) for w in self.W],
            log_noise=[val(v) for v in self.log_noise],
        )

    def copy(self) -> "OiVaeParams":
        return self.as_arrays()

    def with_tensors(self, named: dict) -> "OiVaeParams":
        """Copy with the tensors in ``named`` (keyed as in :meth:`named_tensors`) replaced."""
        p = self.as_arrays()
        for name, value in named.items():
            head, _, rest = name.partition(".")
            if head == "phi":
                p.phi[rest] = value
            elif head == "theta":
                g, _, key = rest.partition(".")
                p.theta[int(g)][key] = value
            elif head == "log_noise":
                p.log_noise[int(rest)] = value
            elif head == "W":
                p.W[int(rest)] = value
            else:
                raise KeyError(name)
        return p

    def named_tensors(self) -> Iterator[tuple[str, object]]:
        """Every tensor under a stable dotted name, in a fixed order."""
        for k, v in self.phi.items():
            yield f"phi.{k}", v
        for g, t in enumerate(self.theta):
            for k, v in t.items():
                yield f"theta.{g}.{k}", v
        for g, w in enumerate(self.W):
            yield f"W.{g}", w
        for g, v in enumerate(self.log_noise):
            yield f"log_noise.{g}", v


def _layer_params(rng, tokens, n_in, out_width, prefix):
    """Initialise the affine layers in ``tokens``; returns (params, n_out)."""
    params = {}
    width = n_in
    for i, tok in enumerate(tokens):
        kind, size = _parse_layer(tok)
        if kind != "affine":
            continue
        n_out = size if size is not None else out_width
        bound = 1.0 / math.sqrt(width)
        params[f"{prefix}{i}.weight"] = rng.uniform(-bound, bound, size=(n_out, width))
        params[f"{prefix}{i}.bias"] = np.zeros(n_out)
        width = n_out
    return params, width


def init_params(groups: GroupSpec, arch: ArchitectureSpec, rng) -> OiVaeParams:
    """Fan-in uniform affine weights, zero biases, ``W ~ N(0, 1/p)``, unit noise."""
    arch.validate_for(groups)
    K, p = arch.latent_dim, arch.p
    phi, width = _layer_params(rng, arch.inference_hidden, groups.total_width, None, "hidden.")
    bound = 1.0 / math.sqrt(width)
    phi["mu.weight"] = rng.uniform(-bound, bound, size=(K, width))
    phi["mu.bias"] = np.zeros(K)
    phi["logsigma.weight"] = rng.uniform(-bound, bound, size=(K, width))
    phi["logsigma.bias"] = np.zeros(K)
    theta = []
    for w in groups.widths:
        t, _ = _layer_params(rng, arch.generator, p, w, "")
        theta.append(t)
    W = [rng.normal(0.0, 1.0 / math.sqrt(p), size=(p, K)) for _ in groups.widths]
    log_noise = [np.zeros(w) for w in groups.widths]
    return OiVaeParams(groups, arch, phi, theta, W, log_noise)


def _apply_layers(h: Node, tokens, params: dict, prefix: str) -> Node:
    for i, tok in enumerate(tokens):
        kind, _ = _parse_layer(tok)
        if kind == "affine":
            h = dc.affine(h, params[f"{prefix}{i}.weight"], params[f"{prefix}{i}.bias"])
        elif kind == "tanh":
            h = dc.tanh_op(h)
        elif kind == "relu":
            h = dc.relu_op(h)
        else:
            h = dc.exp_op(h)
    return h


def _check_width(x: Node, width: int, op: str) -> None:
    if x.value.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{op}: expected batch x {width} input, got {x.shape}")


def encode(params: OiVaeParams, x, throttle: float = 1.0, std_floor: float = DEFAULT_STD_FLOOR):
    """Posterior mean and standard deviation, each ``batch x K``.

    ``sigma = exp(logsigma_head) * throttle + std_floor``.
    """
    x = dc.lift(x)
    _check_width(x, params.groups.total_width, "encode")
    h = _apply_layers(x, params.arch.inference_hidden, params.phi, "hidden.")
    mu = dc.affine(h, params.phi["mu.weight"], params.phi["mu.bias"])
    s = dc.exp_op(dc.affine(h, params.phi["logsigma.weight"], params.phi["logsigma.bias"]))
    if throttle != 1.0:
        s = dc.scale(s, throttle)
    if std_floor != 0.0:
        s = dc.add(s, std_floor)
    return mu, s


def reparameterize(mu, sigma, eps) -> Node:
    mu, sigma, eps = dc.lift(mu), dc.lift(sigma), dc.lift(eps)
    if not (mu.shape == sigma.shape == eps.shape):
        raise DimensionError(
            f"reparameterize: shapes differ mu={mu.shape} sigma={sigma.shape} eps={eps.shape}"
        )
    return dc.add(mu, dc.mul(sigma, eps))


def decode_group(params: OiVaeParams, g: int, z) -> Node:
    """Generator mean for group ``g``: ``f_g(W[g] z)``."""
    if not 0 <= g < params.groups.n_groups:
        raise IndexError(f"group index {g} out of range for {params.groups.n_groups} groups")
    z = dc.lift(z)
    _check_width(z, params.arch.latent_dim, "decode_group")
    h = dc.affine(z, params.W[g])
    return _apply_layers(h, params.arch.generator, params.theta[g], "")


def decode(params: OiVaeParams, z) -> Node:
    parts = [decode_group(params, g, z) for g in range(params.groups.n_groups)]
    return parts[0] if len(parts) == 1 else dc.concat(parts, axis=1)


def noise_log_std(params: OiVaeParams) -> Node:
    parts = [dc.lift(v) for v in params.log_noise]
    return parts[0] if len(parts) == 1 else dc.concat(parts, axis=0)


def gaussian_loglik_graph(x, mean, log_std) -> Node:
    """Per-row diagonal Gaussian log density with ``std = exp(log_std)``."""
    x, mean, log_std = dc.lift(x), dc.lift(mean), dc.lift(log_std)
    if x.shape != mean.shape or log_std.shape != (x.shape[1],):
        raise DimensionError(
            f"gaussian_loglik: x {x.shape}, mean {mean.shape}, std {log_std.shape}"
        )
    inv_var = dc.exp_op(dc.scale(log_std, -2.0))
    sq = dc.mul(dc.square(dc.sub(x, mean)), inv_var)
    per_entry = dc.sub(dc.scale(sq, -0.5), log_std)
    return dc.add(dc.sum_op(per_entry, axis=1), -HALF_LOG_2PI * x.shape[1])


def gaussian_loglik(x, mean, std) -> np.ndarray:
    """Per-row log density of ``N(mean, diag(std**2))`` evaluated at ``x``."""
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError("gaussian_loglik: std must be strictly positive")
    return gaussian_loglik_graph(x, mean, np.log(std)).value


def sample_prior(params: OiVaeParams, n: int, rng, with_noise: bool = False):
    """Draw ``n`` latent codes from ``N(0, I)`` and decode them.

    Returns ``(x, z)``.  Only generator means are returned unless
    ``with_noise`` is set.
    """
    K = params.arch.latent_dim
    z = rng.standard_normal((n, K))
    if n == 0:
        return np.zeros((0, params.groups.total_width)), z
    x = decode(params, z).value
    if with_noise:
        std = np.exp(noise_log_std(params).value)
        x = x + std * rng.standard_normal(x.shape)
    return x, z


def conditional_perturb(
    params: OiVaeParams, x, n: int, rng, std_floor: float = DEFAULT_STD_FLOOR, eps=None
):
    """Encode one datum and decode ``n`` draws from its posterior.

    Returns ``(reconstructions, z)`` with ``n`` rows each.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    mu, sigma = encode(params, x, std_floor=std_floor)
    K = params.arch.latent_dim
    if eps is None:
        eps = rng.standard_normal((n, K))
    z = mu.value + sigma.value * np.asarray(eps, dtype=np.float64)
    return decode(params, z).value, z
