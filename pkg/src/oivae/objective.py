"""Collapsed variational objective and the group-lasso proximal operator.

Integrating the per-column Gamma scales out of the hierarchical prior on
``W`` leaves ``lam * sum_{g,j} ||W[g][:, j]||_2``, so the objective that is
maximised is::

    L = E_q[log p(x | z, W, theta)] - KL(q(z|x) || N(0, I))
        + log N(theta; 0, I) - lam * sum ||W[g][:, j]||_2

Everything but the penalty is smooth; the penalty is handled by
:func:`prox_group_lasso` after each gradient step on ``W``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .model import (
    DEFAULT_STD_FLOOR,
    HALF_LOG_2PI,
    OiVaeParams,
    decode,
    encode,
    gaussian_loglik_graph,
    noise_log_std,
    reparameterize,
)


@dataclass(frozen=True)
class ElboBreakdown:
    reconstruction: float
    kl: float
    theta_prior: float
    penalty: float
    smooth_total: float
    full_total: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Knobs of the collapsed objective.

    ``data_scale`` multiplies the summed per-datum terms (reconstruction
    and KL).  ``None`` means 1.
    """

    lam: float = 1.0
    data_scale: float | None = None
    include_theta_prior: bool = True
    throttle: float = 1.0
    std_floor: float = DEFAULT_STD_FLOOR

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def kl_diag_gaussian_graph(mu, sigma):
    mu, sigma = dc.lift(mu), dc.lift(sigma)
    log_var = dc.scale(dc.log_op(sigma), 2.0)
    inner = dc.sub(dc.add(dc.square(mu), dc.square(sigma)), log_var)
    return dc.scale(dc.add(dc.sum_op(inner, axis=1), -float(mu.shape[1])), 0.5)


def kl_diag_gaussian(mu, sigma) -> np.ndarray:
    """Per-row ``KL(N(mu, diag(sigma^2)) || N(0, I))``."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if np.any(sigma <= 0):
        raise ValueError("kl_diag_gaussian: sigma must be strictly positive")
    return 0.5 * np.sum(mu**2 + sigma**2 - 2.0 * np.log(sigma) - 1.0, axis=1)


def column_norms(W) -> list[np.ndarray]:
    return [np.sqrt(np.sum(np.asarray(w) ** 2, axis=0)) for w in W]


def group_lasso_penalty(W, lam: float) -> float:
    """``lam`` times the sum of Euclidean norms of every column of every ``W[g]``."""
    if lam == 0:
        return 0.0
    return float(lam * sum(n.sum() for n in column_norms(W)))


def _theta_entries(theta) -> list:
    return [v for t in theta for v in t.values()]


def theta_log_prior_graph(theta):
    entries = _theta_entries(theta)
    count = sum(int(np.size(dc.lift(v).value)) for v in entries)
    if count == 0:
        return dc.constant(0.0)
    sq = None
    for v in entries:
        s = dc.sum_op(dc.square(v))
        sq = s if sq is None else dc.add(sq, s)
    return dc.add(dc.scale(sq, -0.5), -HALF_LOG_2PI * count)


def theta_log_prior(theta) -> float:
    """Standard normal log density summed over every generator parameter."""
    return float(theta_log_prior_graph(theta).value)


def build_objective(
    params: OiVaeParams, batch, mc_eps, config: ObjectiveConfig = ObjectiveConfig()
):
    """Graph of the smooth part of the collapsed objective.

    ``mc_eps`` is ``batch x K`` or ``S x batch x K`` standard-normal noise;
    the reconstruction term averages over the ``S`` draws.

    Returns ``(smooth_total_node, breakdown, per_datum)`` where
    ``per_datum`` holds unscaled per-row reconstruction and KL arrays.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("collapsed_elbo: batch must be a nonempty 2-d array")
    eps = np.asarray(mc_eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[None]
    n_samples = eps.shape[0]

    mu, sigma = encode(params, batch, throttle=config.throttle, std_floor=config.std_floor)
    log_std = noise_log_std(params)
    recon = None
    for s in range(n_samples):
        z = reparameterize(mu, sigma, eps[s])
        ll = gaussian_loglik_graph(batch, decode(params, z), log_std)
        recon = ll if recon is None else dc.add(recon, ll)
    if n_samples > 1:
        recon = dc.scale(recon, 1.0 / n_samples)
    kl = kl_diag_gaussian_graph(mu, sigma)

    scale = 1.0 if config.data_scale is None else float(config.data_scale)
    recon_total = dc.scale(dc.sum_op(recon), scale)
    kl_total = dc.scale(dc.sum_op(kl), scale)
    smooth = dc.sub(recon_total, kl_total)
    if config.include_theta_prior:
        prior = theta_log_prior_graph(params.theta)
        smooth = dc.add(smooth, prior)
        prior_value = float(prior.value)
    else:
        prior_value = 0.0

    penalty = group_lasso_penalty([dc.lift(w).value for w in params.W], config.lam)
    smooth_value = float(smooth.value)
    breakdown = ElboBreakdown(
        reconstruction=float(recon_total.value),
        kl=float(kl_total.value),
        theta_prior=prior_value,
        penalty=penalty,
        smooth_total=smooth_value,
        full_total=smooth_value - penalty,
    )
    return smooth, breakdown, {"reconstruction": recon.value.copy(), "kl": kl.value.copy()}


def collapsed_elbo(
    params: OiVaeParams, batch, mc_eps, config: ObjectiveConfig = ObjectiveConfig()
) -> ElboBreakdown:
    return build_objective(params, batch, mc_eps, config)[1]


def prox_group_lasso(W, eta: float, lam: float) -> list[np.ndarray]:
    """Block soft-thresholding of every column of every ``W[g]``.

    Columns with norm ``<= eta * lam`` become exactly zero; the rest are
    shrunk towards the origin by ``eta * lam`` in norm.
    """
    if eta < 0:
        raise ValueError("prox_group_lasso: eta must be nonnegative")
    threshold = eta * lam
    out = []
    for w in W:
        w = np.array(w, dtype=np.float64)
        if threshold == 0:
            out.append(w)
            continue
        norms = np.sqrt(np.sum(w * w, axis=0))
        keep = norms > threshold
        factor = np.zeros_like(norms)
        factor[keep] = 1.0 - threshold / norms[keep]
        w = w * factor
        w[:, ~keep] = 0.0
        out.append(w)
    return out

