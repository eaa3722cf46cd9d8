"""ECG-conditioned latent diffusion: schedule algebra, training loss,
DDIM sampling, and the latent autoencoder / denoiser training loops.

Step indices t are 1-based (t in [1, T]); internal tables are 0-indexed.
The forward marginal is z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps and
the exact posterior q(z_{t-1} | z_t, z0) has

    mean = sqrt(abar_{t-1}) beta_t / (1 - abar_t) * z0
         + sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t) * z_t
    var  = (1 - abar_{t-1}) / (1 - abar_t) * beta_t

(the Gaussian Bayes-rule solution, with abar_0 = 1 so t=1 collapses onto
z0 deterministically).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .models.autoencoder import AutoencoderConfig, ConvAutoencoder
from .models.unet import CondUNet, UNetConfig
from .seeding import subseed, substream
from .trainutil import (
    check_finite,
    epoch_batches,
    freeze,
    params_hash,
    set_lr,
    state_to_numpy,
)


@dataclass
class NoiseSchedule:
    """beta/alpha tables for T steps plus derived posterior coefficients."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 1 or self.beta.size < 2:
            raise ValueError("schedule needs at least two steps")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("beta values must lie in (0, 1)")
        if np.any(np.diff(self.beta) <= 0):
            raise ValueError("beta must be strictly increasing")
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)

    @property
    def n_steps(self) -> int:
        return self.beta.size

    def _check_t(self, t: int):
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"t={t} outside [1, {self.n_steps}]")

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def beta_tilde(self, t: int) -> float:
        """Posterior variance of q(z_{t-1} | z_t, z0); zero at t=1."""
        self._check_t(t)
        ab_prev = self.alpha_bar_at(t - 1)
        ab = self.alpha_bar_at(t)
        return float((1.0 - ab_prev) / (1.0 - ab) * self.beta_at(t))


def linear_beta_schedule(n_steps: int, beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> NoiseSchedule:
    """beta linearly increasing from 1e-4 to 0.02 over n_steps."""
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    return NoiseSchedule(beta=np.linspace(beta_start, beta_end, n_steps))


def q_sample(z0, t: int, eps, schedule: NoiseSchedule):
    """Forward marginal draw: sqrt(abar_t) z0 + sqrt(1-abar_t) eps."""
    if np.shape(z0) != np.shape(eps):
        raise ValueError("noise must match z0's shape")
    ab = schedule.alpha_bar_at(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def posterior_params(z_t, z0, t: int, schedule: NoiseSchedule):
    """Mean and variance of q(z_{t-1} | z_t, z0).

    t=1 returns (z0, 0.0): the chain collapses onto the clean latent.
    """
    schedule._check_t(t)
    if t == 1:
        return z0, 0.0
    ab = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    beta_t = schedule.beta_at(t)
    alpha_t = schedule.alpha_at(t)
    coef_z0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab)
    coef_zt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab)
    return coef_z0 * z0 + coef_zt * z_t, schedule.beta_tilde(t)


def ddim_sigma(schedule: NoiseSchedule, t: int, t_next: int, eta: float) -> float:
    """eta-scaled DDIM noise level for the (possibly strided) step t -> t_next.

    For consecutive steps this is eta * sqrt(beta_tilde(t)); the strided
    generalization keeps the same marginals.
    """
    ab = schedule.alpha_bar_at(t)
    ab_next = schedule.alpha_bar_at(t_next)
    if t_next == 0:
        return 0.0
    var = (1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next)
    return float(eta * np.sqrt(max(var, 0.0)))


def ddim_step(z_t, eps_hat, t: int, t_next: int, schedule: NoiseSchedule,
              eta: float, noise=None):
    """One DDIM update from step t to t_next (t_next < t, 0 = clean).

    z0_hat = (z_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
    z_next = sqrt(abar_next) z0_hat + sqrt(1-abar_next-sigma^2) eps_hat
             + sigma * noise
    """
    ab = schedule.alpha_bar_at(t)
    ab_next = schedule.alpha_bar_at(t_next)
    z0_hat = (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    sigma = ddim_sigma(schedule, t, t_next, eta)
    dir_coef = np.sqrt(max(1.0 - ab_next - sigma ** 2, 0.0))
    out = np.sqrt(ab_next) * z0_hat + dir_coef * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ValueError("stochastic DDIM step requires noise")
        out = out + sigma * noise
    return out


def ddim_timesteps(n_total: int, n_steps: int) -> list:
    """Evenly spaced decreasing subsequence T = tau_S > ... > tau_1 > 0."""
    if n_steps > n_total:
        raise ValueError("n_steps cannot exceed the schedule length")
    taus = np.unique(np.round(np.linspace(0, n_total, n_steps + 1)).astype(int))
    return list(taus[::-1])


@torch.no_grad()
def ddim_sample(unet: CondUNet, cond: torch.Tensor, schedule: NoiseSchedule,
                n_steps: int, eta: float, seed: int, latent_shape,
                ae: ConvAutoencoder | None = None) -> torch.Tensor:
    """Generate latents (decoded to clips when ae is given).

    Starts from seeded z_T ~ N(0, I); eta=0 is fully deterministic given
    the seed. cond: [B, S, D] condition tokens; latent_shape: (T, C, h, w).
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    gen = torch.Generator().manual_seed(subseed(seed, "ddim"))
    b = cond.shape[0]
    z = torch.randn((b, *latent_shape), generator=gen)
    steps = ddim_timesteps(schedule.n_steps, n_steps)
    for t, t_next in zip(steps[:-1], steps[1:]):
        t_batch = torch.full((b,), t, dtype=torch.long)
        eps_hat = unet(z, t_batch, cond)
        sigma = ddim_sigma(schedule, t, t_next, eta)
        noise = (torch.randn(z.shape, generator=gen) if sigma > 0 else None)
        z = ddim_step(z, eps_hat, t, t_next, schedule, eta, noise)
    return ae.decode(z) if ae is not None else z


def ldm_loss(batch: dict, unet: CondUNet, ae: ConvAutoencoder | None,
             ecg_encoder, schedule: NoiseSchedule, seed: int) -> torch.Tensor:
    """Noise-prediction MSE.

    batch carries either precomputed {"z0": [B,T,C,h,w], "cond": [B,S,D]}
    or raw {"cmr": [B,T,H,W], "ecg": [B,12,L]} plus the frozen autoencoder
    and ECG encoder to derive them. Per-item t is uniform on [1, T].
    """
    if "z0" in batch:
        z0, cond = batch["z0"], batch["cond"]
    else:
        with torch.no_grad():
            z0 = ae.encode(batch["cmr"])
            cond = ecg_encoder.tokens(batch["ecg"])
    b = z0.shape[0]
    t = substream(seed, "t").integers(1, schedule.n_steps + 1, size=b)
    gen = torch.Generator().manual_seed(subseed(seed, "eps"))
    eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
    ab = torch.as_tensor(schedule.alpha_bar[t - 1], dtype=z0.dtype)
    shape = (b,) + (1,) * (z0.ndim - 1)
    z_t = (torch.sqrt(ab).reshape(shape) * z0
           + torch.sqrt(1.0 - ab).reshape(shape) * eps)
    pred = unet(z_t, torch.as_tensor(t, dtype=torch.long), cond)
    loss = ((pred - eps) ** 2).mean()
    check_finite(loss, "diffusion loss")
    return loss


# ---------------------------------------------------------------------------
# autoencoder training
# ---------------------------------------------------------------------------

@dataclass
class AutoencoderTrainConfig:
    epochs: int = 3
    batch_size: int = 8
    lr: float = 1e-3
    target_mse: float = 5e-3
    seed: int = 0
    model: AutoencoderConfig = field(default_factory=AutoencoderConfig)


def train_autoencoder(clip_loader, train_ids, val_ids, view: str,
                      cfg: AutoencoderTrainConfig):
    """Train the per-frame reconstruction autoencoder; returns (ae, report).

    A validation MSE above target_mse is reported, not fatal.
    """
    torch.manual_seed(subseed(cfg.seed, "ae-init", view))
    ae = ConvAutoencoder(cfg.model)
    opt = torch.optim.Adam(ae.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        ae.train()
        for ids in epoch_batches(train_ids, cfg.batch_size, cfg.seed, epoch):
            clips = torch.stack([
                torch.as_tensor(clip_loader(sid, view), dtype=torch.float32)
                for sid in ids])
            recon = ae.decode(ae.encode(clips))
            loss = ((recon - clips) ** 2).mean()
            check_finite(loss, "autoencoder training")
            opt.zero_grad()
            loss.backward()
            opt.step()
    ae.eval()
    with torch.no_grad():
        errs = []
        for ids in epoch_batches(val_ids, cfg.batch_size, cfg.seed, 10_000):
            clips = torch.stack([
                torch.as_tensor(clip_loader(sid, view), dtype=torch.float32)
                for sid in ids])
            errs.append(float(((ae.decode(ae.encode(clips)) - clips) ** 2
                               ).mean()))
    val_mse = float(np.mean(errs)) if errs else float("nan")
    report = {"val_mse": val_mse, "target_mse": cfg.target_mse,
              "reached_target": bool(val_mse <= cfg.target_mse)}
    return ae, report


# ---------------------------------------------------------------------------
# diffusion training
# ---------------------------------------------------------------------------

@dataclass
class DiffusionTrainConfig:
    n_steps: int = 100           # schedule length T
    epochs: int = 6
    batch_size: int = 4
    lr: float = 2e-4             # constant, per contract
    seed: int = 0
    unet: UNetConfig = field(default_factory=UNetConfig)


def train_diffusion(z0_by_id: dict, cond_by_id: dict, train_ids, val_ids,
                    view: str, cfg: DiffusionTrainConfig, out_path,
                    frozen_modules: dict | None = None,
                    refs: dict | None = None) -> dict:
    """Train the conditional denoiser on precomputed latents/conditions.

    The learning rate is constant; the lowest-validation-loss checkpoint
    is saved. frozen_modules ({name: nn.Module}) are hash-checked
    bit-identical before and after training.
    """
    if view not in ("long_axis", "short_axis"):
        raise ValueError(f"unknown view {view!r}")
    hashes_before = {k: params_hash(m) for k, m in (frozen_modules or {}).items()}

    schedule = linear_beta_schedule(cfg.n_steps)
    torch.manual_seed(subseed(cfg.seed, "unet-init", view))
    unet = CondUNet(cfg.unet)
    opt = torch.optim.Adam(unet.parameters(), lr=cfg.lr)

    def batch_for(ids):
        return {"z0": torch.stack([z0_by_id[i] for i in ids]),
                "cond": torch.stack([cond_by_id[i] for i in ids])}

    best = {"val_loss": float("inf"), "state": None, "epoch": -1}
    curve = []
    for epoch in range(cfg.epochs):
        set_lr(opt, cfg.lr)  # constant by contract
        unet.train()
        total, count = 0.0, 0
        for step, ids in enumerate(
                epoch_batches(train_ids, cfg.batch_size, cfg.seed, epoch)):
            loss = ldm_loss(batch_for(ids), unet, None, None, schedule,
                            seed=subseed(cfg.seed, "step", epoch, step))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.detach().item()
            count += 1
        val = _diffusion_val_loss(unet, batch_for, val_ids, schedule, cfg)
        curve.append({"epoch": epoch, "train_loss": total / max(count, 1),
                      "val_loss": val})
        if val < best["val_loss"]:
            best = {"val_loss": val, "state": state_to_numpy(unet),
                    "epoch": epoch}

    for name, module in (frozen_modules or {}).items():
        if params_hash(module) != hashes_before[name]:
            raise RuntimeError(f"frozen module {name!r} changed during "
                               "diffusion training")
    meta = {"config": asdict(cfg), "view": view, "curve": curve,
            "best_val_loss": best["val_loss"], "best_epoch": best["epoch"],
            "refs": refs or {}, "frozen_hashes": hashes_before}
    save_checkpoint(out_path, "diffusion", meta, best["state"])
    return {"path": str(out_path), "curve": curve,
            "best_val_loss": best["val_loss"]}


def _diffusion_val_loss(unet, batch_for, val_ids, schedule, cfg) -> float:
    unet.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for step, ids in enumerate(epoch_batches(val_ids, cfg.batch_size,
                                                 cfg.seed, 10_000)):
            total += float(ldm_loss(batch_for(ids), unet, None, None,
                                    schedule,
                                    seed=subseed(cfg.seed, "val", step)))
            count += 1
    return total / max(count, 1)


def load_unet(meta: dict, params: dict) -> CondUNet:
    from .trainutil import load_numpy_state
    ucfg = dict(meta["config"]["unet"])
    ucfg["channel_mults"] = tuple(ucfg["channel_mults"])
    unet = CondUNet(UNetConfig(**ucfg))
    load_numpy_state(unet, params)
    return unet


def load_autoencoder_ckpt(path) -> ConvAutoencoder:
    kind, meta, params = load_checkpoint(path)
    if kind != "autoencoder":
        raise ValueError(f"expected autoencoder checkpoint, got {kind!r}")
    from .trainutil import load_numpy_state
    ae = ConvAutoencoder(AutoencoderConfig(**meta["config"]["model"]))
    load_numpy_state(ae, params)
    return freeze(ae)
