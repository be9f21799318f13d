"""Utility-side price construction.

Three signal families: a one-way feedback learner that climbs the aggregate
demand gradient inside the smoothness ellipsoid, a soft-clustering contextual
learner that keeps one price column per latent day regime and mixes them with
classifier weights, and static time-of-use tariffs.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ValidationError
from .projection import SmoothnessMetric, project_cluster_bank, project_ellipsoid

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
FEAS_SLACK = 1e-6          # cluster-column membership slack
_ENTROPY_CLIP = 1e-12
_DIVERGENCE_CAP = 1e6
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PriceSignal:
    """A per-slot price vector for one day."""

    values: np.ndarray
    day_index: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValidationError("price signal must be a non-empty vector")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("price signal has non-finite entries")
        object.__setattr__(self, "values", vals)


@dataclass
class Hyperparams:
    """Knobs for both the online learners and the offline classifier."""

    k: int = 6
    hidden: int = 60
    d_in: int = 48
    lambda_l2: float = 0.1
    lambda_variation: float = 0.9
    lambda_entropy: float = -0.4
    lambda_contrast: float = 0.5
    gamma_offline: float = 0.001
    eta_base: float = 0.1
    offline_epochs: int = 400

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"cluster count must be >= 1, got {self.k}")
        if self.hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {self.hidden}")
        if self.d_in < 2 or self.d_in % 2:
            raise ConfigError(f"context dimension must be even >= 2, got {self.d_in}")
        if self.eta_base <= 0:
            raise ConfigError(f"eta_base must be > 0, got {self.eta_base}")
        if self.lambda_l2 <= 0:
            raise ConfigError("lambda_l2 must be > 0 (it scales the metric)")
        if self.lambda_variation < 0:
            raise ConfigError("lambda_variation must be >= 0")
        if self.gamma_offline <= 0 or self.offline_epochs < 1:
            raise ConfigError("offline training needs a positive step and epochs")

    def metric_for(self, dim: int) -> SmoothnessMetric:
        # K = I + (lambda_variation/lambda_l2) D'D: dividing through by the
        # l2 weight leaves the admissible set unchanged
        return SmoothnessMetric(dim=dim, lam=self.lambda_variation / self.lambda_l2)


def _ascent_step(values: np.ndarray, gradient: np.ndarray, eta_base: float,
                 weight: float = 1.0) -> np.ndarray:
    # normalized ascent step; callers guarantee a nonzero gradient
    norm = float(np.linalg.norm(gradient))
    return values + (eta_base / norm) * (weight * gradient)


def feedback_update(alpha: PriceSignal, mean_demand: np.ndarray, eta_base: float,
                    metric: SmoothnessMetric) -> PriceSignal:
    """One day of the context-agnostic learner: ascend the demand gradient,
    then project back into the admissible ellipsoid."""
    g = np.asarray(mean_demand, dtype=float)
    if g.shape != alpha.values.shape:
        raise ValidationError(
            f"demand length {g.size} does not match price length {alpha.values.size}")
    if not np.all(np.isfinite(g)):
        raise ValidationError("mean demand has non-finite entries")
    if float(np.linalg.norm(g)) == 0.0:
        log.warning("day %d: zero-norm demand gradient, price left unchanged",
                    alpha.day_index)
        return PriceSignal(values=alpha.values.copy(), day_index=alpha.day_index + 1)
    stepped = _ascent_step(alpha.values, g, eta_base)
    return PriceSignal(values=project_ellipsoid(stepped, metric),
                       day_index=alpha.day_index + 1)


# ---------------------------------------------------------------------------
# soft-clustering classifier


@dataclass
class ClassifierParams:
    w1: np.ndarray            # hidden x d_in
    b1: np.ndarray            # hidden
    w2: np.ndarray            # k x hidden
    b2: np.ndarray            # k
    mu_temp: np.ndarray       # T x k centroid targets, normalized units
    mu_solar: np.ndarray      # T x k
    feature_mean: np.ndarray  # d_in
    feature_scale: np.ndarray # d_in, strictly positive
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "mu_temp", "mu_solar",
                     "feature_mean", "feature_scale", "loss_trace"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        hidden, d_in = self.w1.shape
        k = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (k, hidden) \
                or self.b2.shape != (k,):
            raise ValidationError("classifier layer shapes are inconsistent")
        t = self.mu_temp.shape[0]
        if self.mu_temp.shape != (t, k) or self.mu_solar.shape != (t, k):
            raise ValidationError("centroid shapes are inconsistent")
        if 2 * t != d_in:
            raise ValidationError(
                f"context dim {d_in} must be twice the centroid horizon {t}")
        if self.feature_mean.shape != (d_in,) or self.feature_scale.shape != (d_in,):
            raise ValidationError("normalization vectors must have length d_in")
        if np.any(self.feature_scale <= 0):
            raise ValidationError("normalization scales must be positive")

    @property
    def n_clusters(self) -> int:
        return self.w2.shape[0]

    @property
    def horizon(self) -> int:
        return self.mu_temp.shape[0]


def context_raw(temperature_f: np.ndarray, irradiance_w_m2: np.ndarray) -> np.ndarray:
    """Stack one day's weather into the raw context vector [temps; irradiance]."""
    return np.concatenate([np.asarray(temperature_f, dtype=float),
                           np.asarray(irradiance_w_m2, dtype=float)])


def normalize_context(params: ClassifierParams, raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != params.feature_mean.shape:
        raise ValidationError(
            f"context length {raw.size} does not match d_in {params.feature_mean.size}")
    return (raw - params.feature_mean) / params.feature_scale


def _forward(params: ClassifierParams, x_batch: np.ndarray):
    # x_batch: n x d_in (normalized). Returns hidden activations and weights.
    t_h = np.tanh(x_batch @ params.w1.T + params.b1)
    z2 = t_h @ params.w2.T + params.b2
    z2 = z2 - z2.max(axis=1, keepdims=True)
    e = np.exp(z2)
    w = e / e.sum(axis=1, keepdims=True)
    return t_h, w


def classifier_forward(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    """Soft cluster weights for one normalized context vector (simplex point)."""
    x = np.asarray(x, dtype=float)
    _, w = _forward(params, x[None, :])
    return w[0]


def _batch_arrays(batch):
    xs = np.stack([np.asarray(b[0], dtype=float) for b in batch])
    yt = np.stack([np.asarray(b[1], dtype=float) for b in batch])
    ys = np.stack([np.asarray(b[2], dtype=float) for b in batch])
    return xs, yt, ys


def offline_loss(params: ClassifierParams, batch, hyper: Hyperparams) -> float:
    return offline_loss_and_grad(params, batch, hyper)[0]


def offline_loss_and_grad(params: ClassifierParams, batch, hyper: Hyperparams):
    """Total offline loss and its gradient in every parameter block.

    Loss = mean reconstruction error of the normalized weather through the
    centroids, plus lambda_entropy * mean assignment entropy and
    lambda_contrast * (-sum ||w_i - w_j||^2 / sum ||x_i - x_j||^2).  Both
    regularizer formulas are applied literally, signs included.
    """
    if not batch:
        raise ValidationError("offline loss needs a non-empty batch")
    xs, yt, ys = _batch_arrays(batch)
    n = xs.shape[0]
    t_h, w = _forward(params, xs)

    # reconstruction: y_hat = mu @ psi per sample
    rt = w @ params.mu_temp.T - yt          # n x T
    rs = w @ params.mu_solar.T - ys
    loss_rec = float((rt ** 2).sum() + (rs ** 2).sum()) / n
    dw = (2.0 / n) * (rt @ params.mu_temp + rs @ params.mu_solar)   # n x k
    g_mu_t = (2.0 / n) * rt.T @ w
    g_mu_s = (2.0 / n) * rs.T @ w

    # entropy term, clamped logs
    wc = np.maximum(w, _ENTROPY_CLIP)
    loss_ent = -float((w * np.log(wc)).sum()) / n
    dw += hyper.lambda_entropy * (-(np.log(wc) + (w > _ENTROPY_CLIP)) / n)

    # contrast term; the denominator depends only on the data
    diff_x = xs[:, None, :] - xs[None, :, :]
    s_x = float((diff_x ** 2).sum())
    if s_x == 0.0:
        if n > 1:
            log.warning("contrast denominator is zero (identical contexts); "
                        "term dropped")
        loss_con = 0.0
    else:
        diff_w = w[:, None, :] - w[None, :, :]
        s_w = float((diff_w ** 2).sum())
        loss_con = -s_w / s_x
        dw += hyper.lambda_contrast * (-4.0 * n * (w - w.mean(axis=0)) / s_x)

    loss = loss_rec + hyper.lambda_entropy * loss_ent \
        + hyper.lambda_contrast * loss_con

    # softmax + tanh backward
    dz2 = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    g_w2 = dz2.T @ t_h
    g_b2 = dz2.sum(axis=0)
    dth = dz2 @ params.w2
    dz1 = dth * (1.0 - t_h ** 2)
    g_w1 = dz1.T @ xs
    g_b1 = dz1.sum(axis=0)

    grads = {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2,
             "mu_temp": g_mu_t, "mu_solar": g_mu_s}
    return loss, grads


def fit_normalization(history) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/scale over a weather history; constant features
    (night-time irradiance) get unit scale instead of zero."""
    raws = np.stack([context_raw(d.temperature_f, d.irradiance_w_m2)
                     for d in history])
    mean = raws.mean(axis=0)
    std = raws.std(axis=0)
    scale = np.where(std > 1e-9, std, 1.0)
    return mean, scale


def build_training_batch(history, params: ClassifierParams):
    """Normalized (context, y_temp, y_solar) triples for a weather history."""
    t = params.horizon
    batch = []
    for day in history:
        x = normalize_context(params, context_raw(day.temperature_f,
                                                  day.irradiance_w_m2))
        batch.append((x, x[:t], x[t:]))
    return batch


def _seed_centroids(feats: np.ndarray, k: int, rng: np.random.Generator):
    # k-means++-style spread: first pick uniform, then proportional to the
    # squared distance from the nearest chosen row
    n = feats.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        d2 = np.min(
            ((feats[:, None, :] - feats[chosen][None, :, :]) ** 2).sum(axis=2),
            axis=1)
        total = d2.sum()
        if total <= 0:
            chosen.append(int(rng.integers(n)))
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    return feats[chosen]


def offline_train(history, hyper: Hyperparams, seed: int) -> ClassifierParams:
    """Full-batch gradient descent on the offline loss from a seeded init."""
    if len(history) < hyper.k:
        raise ValidationError(
            f"need at least k={hyper.k} history days, got {len(history)}")
    t = len(history[0].temperature_f)
    if 2 * t != hyper.d_in:
        raise ConfigError(
            f"d_in={hyper.d_in} does not fit {t}-slot days (expected {2 * t})")
    mean, scale = fit_normalization(history)
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-0.05, 0.05, shape)
    feats = np.stack([
        (context_raw(d.temperature_f, d.irradiance_w_m2) - mean) / scale
        for d in history])
    seeds = _seed_centroids(feats, hyper.k, rng)
    params = ClassifierParams(
        w1=u(hyper.hidden, hyper.d_in), b1=u(hyper.hidden),
        w2=u(hyper.k, hyper.hidden), b2=u(hyper.k),
        mu_temp=seeds[:, :t].T.copy(), mu_solar=seeds[:, t:].T.copy(),
        feature_mean=mean, feature_scale=scale)
    batch = [(f, f[:t], f[t:]) for f in feats]

    trace = np.zeros(hyper.offline_epochs)
    for epoch in range(hyper.offline_epochs):
        loss, grads = offline_loss_and_grad(params, batch, hyper)
        trace[epoch] = loss
        if not np.isfinite(loss) or loss > _DIVERGENCE_CAP:
            raise NumericalError(
                f"offline training diverged at epoch {epoch} "
                f"(loss {loss:.3e}); trace head {trace[:epoch + 1][:5]}")
        for name, g in grads.items():
            setattr(params, name, getattr(params, name) - hyper.gamma_offline * g)
    params.loss_trace = trace
    return params


# ---------------------------------------------------------------------------
# cluster bank


@dataclass
class ClusterBank:
    """One admissible price column per latent day regime."""

    kappa: np.ndarray         # H x k
    metric: SmoothnessMetric

    def __post_init__(self):
        self.kappa = np.asarray(self.kappa, dtype=float)
        if self.kappa.ndim != 2:
            raise ValidationError("cluster bank must be an H x k matrix")
        if self.kappa.shape[0] != self.metric.dim:
            raise ValidationError(
                f"bank rows {self.kappa.shape[0]} != metric dim {self.metric.dim}")
        for j in range(self.kappa.shape[1]):
            q = self.metric.quad_form(self.kappa[:, j])
            if q > 1.0 + FEAS_SLACK:
                raise ValidationError(
                    f"cluster column {j} outside the admissible set "
                    f"(quadratic form {q:.6f})")

    @property
    def n_clusters(self) -> int:
        return self.kappa.shape[1]


def zero_bank(metric: SmoothnessMetric, k: int) -> ClusterBank:
    return ClusterBank(kappa=np.zeros((metric.dim, k)), metric=metric)


def _check_simplex(weights: np.ndarray, k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (k,):
        raise ValidationError(f"expected {k} cluster weights, got shape {w.shape}")
    if np.any(w < -SIMPLEX_TOL) or abs(float(w.sum()) - 1.0) > SIMPLEX_TOL:
        raise ValidationError("cluster weights must lie on the probability simplex")
    return w


def cluster_price(bank: ClusterBank, weights: np.ndarray,
                  day_index: int = 0) -> PriceSignal:
    """Mix the bank columns with simplex weights; stays admissible by
    convexity of the ellipsoid."""
    w = _check_simplex(weights, bank.n_clusters)
    return PriceSignal(values=bank.kappa @ w, day_index=day_index)


def cluster_update(bank: ClusterBank, weights: np.ndarray,
                   mean_demand: np.ndarray, eta_base: float) -> ClusterBank:
    """Per-cluster ascent: each column moves along the shared demand gradient
    scaled by its assignment weight, then is projected back column-wise."""
    w = _check_simplex(weights, bank.n_clusters)
    g = np.asarray(mean_demand, dtype=float)
    if g.shape != (bank.metric.dim,):
        raise ValidationError(
            f"demand length {g.size} does not match price length {bank.metric.dim}")
    if float(np.linalg.norm(g)) == 0.0:
        log.warning("zero-norm demand gradient, cluster bank left unchanged")
        return ClusterBank(kappa=bank.kappa.copy(), metric=bank.metric)
    stepped = np.empty_like(bank.kappa)
    for j in range(bank.n_clusters):
        stepped[:, j] = _ascent_step(bank.kappa[:, j], g, eta_base, w[j])
    return ClusterBank(kappa=project_cluster_bank(stepped, bank.metric),
                       metric=bank.metric)


# ---------------------------------------------------------------------------
# static time-of-use tariff


@dataclass(frozen=True)
class TouTier:
    start_hour: float
    end_hour: float
    rate: float


@dataclass(frozen=True)
class TouSchedule:
    """Piecewise-constant daily tariff; tiers must partition [0, 24)."""

    tiers: tuple[TouTier, ...]

    def __post_init__(self):
        tiers = tuple(sorted(self.tiers, key=lambda t: t.start_hour))
        if not tiers:
            raise ConfigError("TOU schedule needs at least one tier")
        cursor = 0.0
        for t in tiers:
            if t.end_hour <= t.start_hour:
                raise ConfigError(
                    f"TOU tier [{t.start_hour}, {t.end_hour}) is empty or inverted")
            if t.start_hour < cursor - 1e-9:
                raise ConfigError(
                    f"TOU tiers overlap at hour {t.start_hour:g}")
            if t.start_hour > cursor + 1e-9:
                raise ConfigError(f"TOU tiers leave a gap at hour {cursor:g}")
            cursor = t.end_hour
        if abs(cursor - 24.0) > 1e-9:
            raise ConfigError("TOU tiers must cover the full day to hour 24")
        object.__setattr__(self, "tiers", tiers)

    def rate_at(self, hour: float) -> float:
        for t in self.tiers:
            if t.start_hour - 1e-9 <= hour < t.end_hour - 1e-9:
                return t.rate
        return self.tiers[-1].rate


def default_tou_schedule() -> TouSchedule:
    # classic residential summer shape: overnight off-peak, midday shoulder,
    # evening on-peak ending at 22:00
    return TouSchedule(tiers=(
        TouTier(0.0, 7.0, 0.02),
        TouTier(7.0, 18.0, 0.10),
        TouTier(18.0, 22.0, 0.30),
        TouTier(22.0, 24.0, 0.02),
    ))


def tou_signal(schedule: TouSchedule, grid) -> PriceSignal:
    """Expand a tier schedule onto the slot grid; identical every day."""
    hours = np.arange(grid.slots_per_day) * grid.slot_duration_hours
    values = np.array([schedule.rate_at(h) for h in hours])
    return PriceSignal(values=values, day_index=0)


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, params: ClassifierParams, bank: ClusterBank) -> None:
    """Persist classifier + bank (exact float round-trip via npz)."""
    np.savez(path,
             version=np.int64(_CHECKPOINT_VERSION),
             w1=params.w1, b1=params.b1, w2=params.w2, b2=params.b2,
             mu_temp=params.mu_temp, mu_solar=params.mu_solar,
             feature_mean=params.feature_mean,
             feature_scale=params.feature_scale,
             loss_trace=params.loss_trace,
             kappa=bank.kappa,
             metric_dim=np.int64(bank.metric.dim),
             metric_lam=np.float64(bank.metric.lam))


def load_checkpoint(path) -> tuple[ClassifierParams, ClusterBank]:
    with np.load(path) as blob:
        version = int(blob["version"])
        if version != _CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        params = ClassifierParams(
            w1=blob["w1"], b1=blob["b1"], w2=blob["w2"], b2=blob["b2"],
            mu_temp=blob["mu_temp"], mu_solar=blob["mu_solar"],
            feature_mean=blob["feature_mean"],
            feature_scale=blob["feature_scale"],
            loss_trace=blob["loss_trace"])
        metric = SmoothnessMetric(dim=int(blob["metric_dim"]),
                                  lam=float(blob["metric_lam"]))
        bank = ClusterBank(kappa=blob["kappa"], metric=metric)
    return params, bank
