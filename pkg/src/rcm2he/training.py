"""Losses, alternating inner/outer training, evaluation, checkpoints, inference.

Training alternates two phases. Inner phases optimize the channel
generators against their channel critics on the H and E targets (structure
learning); the color layer and the output critic are untouched. Outer
phases treat the two generators plus the color layer as one composite
generator optimized against the output critic on the RGB target, with
channel L1 regularizers and the channel critics acting as frozen
regularizers (their parameters receive no update). A fixed-alpha policy
trains everything jointly instead, with the inner and outer objectives
mixed by alpha.

Every run is a pure function of (dataset, config): model init, batch
order, and dropout draws all derive from the config seed.
"""

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import CHECKPOINT_FORMAT_VERSION
from .model import (DiscriminatorSpec, GeneratorSpec, NetworkAssembly,
                    SingleAssembly)

EPS_D = 1e-7            # critic outputs are clamped to [EPS_D, 1 - EPS_D] in logs
ALT_LEARNING_RATE = 1e-4  # documented alternative preset (default is 2e-4)

ABLATIONS = ("none", "no_inout", "no_dout", "no_dhde", "no_branches")


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; adversarial training failure must be loud."""


@dataclass(frozen=True)
class TrainingConfig:
    lambda0: float = 100.0
    lambda1: float = 50.0
    lambda2: float = 50.0
    learning_rate: float = 2e-4
    color_lr_scale: float = 100.0   # lr multiplier for the 6 color-layer scalars
    beta1: float = 0.5
    batch_size: int = 16
    n_alternate: int = 10
    total_epochs: int = 400
    alpha_policy: str = "alternating"   # "alternating" or "fixed:<value in [0,1]>"
    ablation: str = "none"
    seed: int = 0
    checkpoint_every: int = 0           # 0 = final checkpoint only

    def __post_init__(self):
        if min(self.lambda0, self.lambda1, self.lambda2) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.n_alternate < 1 or self.total_epochs < 1:
            raise ValueError("n_alternate and total_epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation tag: {self.ablation!r}")
        self.fixed_alpha()  # validates the policy string

    def fixed_alpha(self):
        """Fixed alpha value, or None when alternating."""
        if self.alpha_policy == "alternating":
            return 0.5 if self.ablation == "no_inout" else None
        if self.alpha_policy.startswith("fixed:"):
            alpha = float(self.alpha_policy.split(":", 1)[1])
            if not (0.0 <= alpha <= 1.0):
                raise ValueError(f"fixed alpha must be in [0, 1], got {alpha}")
            return alpha
        raise ValueError(f"alpha_policy must be 'alternating' or 'fixed:<v>', "
                         f"got {self.alpha_policy!r}")


@dataclass(frozen=True)
class Phase:
    kind: str            # "inner" | "outer"
    first_epoch: int     # inclusive, 1-based
    last_epoch: int      # inclusive


def make_schedule(n_alternate: int, total_epochs: int) -> list:
    """Alternating phases of length n starting with inner, last one truncated.

    The phases tile [1, total_epochs] with no gaps or overlap.
    """
    if n_alternate < 1:
        raise ValueError("n_alternate must be >= 1")
    phases = []
    start = 1
    kind = "inner"
    while start <= total_epochs:
        end = min(start + n_alternate - 1, total_epochs)
        phases.append(Phase(kind=kind, first_epoch=start, last_epoch=end))
        start = end + 1
        kind = "outer" if kind == "inner" else "inner"
    return phases


def phase_of_epoch(phases, epoch: int) -> Phase:
    for p in phases:
        if p.first_epoch <= epoch <= p.last_epoch:
            return p
    raise ValueError(f"epoch {epoch} outside schedule")


# --- loss functions -----------------------------------------------------------


@dataclass
class LossBreakdown:
    """Per-term scalars; 'gen/' terms form the generator objective and
    'disc/' terms the critic objective."""

    terms: dict = field(default_factory=dict)

    @property
    def generator_objective(self):
        return sum(v for k, v in self.terms.items() if k.startswith("gen/"))

    @property
    def discriminator_objective(self):
        return sum(v for k, v in self.terms.items() if k.startswith("disc/"))

    @property
    def total(self):
        return self.generator_objective + self.discriminator_objective

    def floats(self) -> dict:
        return {k: float(v.detach() if torch.is_tensor(v) else v)
                for k, v in self.terms.items()}


def _log(p):
    return torch.log(torch.clamp(p, EPS_D, 1.0 - EPS_D))


def _pix2pix_terms(disc, gen_output, x, y, lambda0):
    d_fake = disc(x, gen_output)
    d_fake_detached = disc(x, gen_output.detach())
    d_real = disc(x, y)
    gan = -_log(d_fake).mean()                       # non-saturating generator term
    l1 = lambda0 * (y - gen_output).abs().mean()
    d_obj = -_log(d_real).mean() - _log(1.0 - d_fake_detached).mean()
    return gan, l1, d_obj


def pix2pix_loss(disc, gen_output, x, y, lambda0):
    """Conditional adversarial + weighted L1 objective pair.

    Returns (generator_objective, discriminator_objective):
      generator_objective     = -E[log D(x, G(x))] + lambda0 * E[|y - G(x)|]
      discriminator_objective = -E[log D(x, y)] - E[log(1 - D(x, G(x)))]
    Critic outputs are clamped to [1e-7, 1 - 1e-7] inside the logs. The
    generator term is the non-saturating form; the critic sees the
    generator output detached.
    """
    for t in (gen_output, y):
        if not torch.isfinite(t).all():
            raise ValueError("non-finite values in loss inputs")
    gan, l1, d_obj = _pix2pix_terms(disc, gen_output, x, y, lambda0)
    return gan + l1, d_obj


@contextmanager
def frozen(*modules, eval_mode=True):
    """Temporarily freeze parameters (and optionally switch to eval mode)."""
    saved_grad = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    saved_mode = [(m, m.training) for m in modules]
    for p, _ in saved_grad:
        p.requires_grad_(False)
    if eval_mode:
        for m in modules:
            m.eval()
    try:
        yield
    finally:
        for p, flag in saved_grad:
            p.requires_grad_(flag)
        for m, mode in saved_mode:
            m.train(mode)


def inner_loss(assembly: NetworkAssembly, batch, config: TrainingConfig) -> LossBreakdown:
    """Channel-branch loss: one adversarial+L1 objective per channel.

    Neither the color layer weights nor the output critic appear in any
    term, so their gradients are identically zero. With the no_dhde
    ablation the adversarial terms are dropped and only the weighted L1
    terms remain.
    """
    x, y_h, y_e, _ = batch
    if y_h is None or y_e is None:
        raise ValueError("inner loss needs h_target and e_target")
    bd = LossBreakdown()
    i_h = (assembly.g_h(x) + 1.0) * 0.5
    i_e = (assembly.g_e(x) + 1.0) * 0.5
    use_critics = config.ablation != "no_dhde"
    if use_critics:
        gan_h, l1_h, d_h = _pix2pix_terms(assembly.d_h, i_h, x, y_h, config.lambda0)
        gan_e, l1_e, d_e = _pix2pix_terms(assembly.d_e, i_e, x, y_e, config.lambda0)
        bd.terms["gen/cgan_h"] = gan_h
        bd.terms["gen/cgan_e"] = gan_e
        bd.terms["disc/d_h"] = d_h
        bd.terms["disc/d_e"] = d_e
    else:
        l1_h = config.lambda0 * (y_h - i_h).abs().mean()
        l1_e = config.lambda0 * (y_e - i_e).abs().mean()
    bd.terms["gen/l1_h"] = l1_h
    bd.terms["gen/l1_e"] = l1_e
    return bd


def outer_loss(assembly: NetworkAssembly, batch, config: TrainingConfig) -> LossBreakdown:
    """Composite loss: adversarial+L1 on RGB, channel L1 regularizers, and
    the channel critics as frozen regularizers.

    The frozen-critic terms are computed with the channel critics' weights
    frozen in eval mode; those parameters receive no update from this loss.
    """
    x, y_h, y_e, y_rgb = batch
    if y_rgb is None or y_h is None or y_e is None:
        raise ValueError("outer loss needs rgb_target and both channel targets")
    bd = LossBreakdown()
    i_h, i_e, i_rgb = assembly.forward_full(x)
    if config.ablation != "no_dout":
        gan, l1_rgb, d_out = _pix2pix_terms(assembly.d_out, i_rgb, x, y_rgb, config.lambda0)
        bd.terms["gen/cgan_out"] = gan
        bd.terms["disc/d_out"] = d_out
    else:
        l1_rgb = config.lambda0 * (y_rgb - i_rgb).abs().mean()
    bd.terms["gen/l1_rgb"] = l1_rgb
    bd.terms["gen/l1_h"] = config.lambda1 * (y_h - i_h).abs().mean()
    bd.terms["gen/l1_e"] = config.lambda2 * (y_e - i_e).abs().mean()
    if config.ablation != "no_dhde":
        with frozen(assembly.d_h, assembly.d_e):
            bd.terms["gen/frozen_h"] = _log(1.0 - assembly.d_h(x, i_h)).mean()
            bd.terms["gen/frozen_e"] = _log(1.0 - assembly.d_e(x, i_e)).mean()
    return bd


# --- data plumbing -------------------------------------------------------------


def batch_tensors(samples, dtype=torch.float32):
    """Stack PairedSamples into (x, y_h, y_e, y_rgb) channel-first tensors."""
    x = torch.as_tensor(np.stack([s.rcm for s in samples])[:, None], dtype=dtype)
    y_h = torch.as_tensor(np.stack([s.h_target for s in samples])[:, None], dtype=dtype)
    y_e = torch.as_tensor(np.stack([s.e_target for s in samples])[:, None], dtype=dtype)
    y_rgb = torch.as_tensor(
        np.stack([s.rgb_target for s in samples]).transpose(0, 3, 1, 2), dtype=dtype)
    return x, y_h, y_e, y_rgb


def _batches(n, batch_size, rng):
    order = rng.permutation(n).tolist()
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # a trailing singleton would break batch statistics; merge it backward
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2].extend(chunks.pop())
    return chunks


def eval_loss(assembly, samples, batch_size: int = 16) -> float:
    """Mean absolute difference between composite output and RGB target.

    Averaged per image, then across images; computed with dropout disabled
    on the raw (unclamped) composite output.
    """
    if not samples:
        raise ValueError("eval_loss needs a non-empty dataset")
    was_training = next(iter(assembly.modules().values())).training
    assembly.eval()
    per_image = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, _, _, y_rgb = batch_tensors(chunk)
            pred = assembly.predict_rgb(x)
            per_image.extend((pred - y_rgb).abs().mean(dim=(1, 2, 3)).tolist())
    assembly.train(was_training)
    return float(np.mean(per_image))


# --- history and checkpoints ----------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    terms: dict
    eval_loss: float
    wall_time_s: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    def eval_curve(self):
        return [r.eval_loss for r in self.records]

    def numeric_equal(self, other) -> bool:
        """Bit-exact comparison of everything except wall time."""
        if len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if (a.epoch, a.phase, a.eval_loss) != (b.epoch, b.phase, b.eval_loss):
                return False
            if a.terms != b.terms:
                return False
        return True

    def to_jsonl(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        hist = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    hist.append(EpochRecord(**json.loads(line)))
        return hist


@dataclass
class Checkpoint:
    format_version: int
    epoch: int
    config: TrainingConfig
    gen_spec: GeneratorSpec
    disc_spec: DiscriminatorSpec
    states: dict
    rng_state: dict


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": ckpt.format_version,
        "epoch": ckpt.epoch,
        "config": asdict(ckpt.config),
        "gen_spec": asdict(ckpt.gen_spec),
        "disc_spec": asdict(ckpt.disc_spec),
        "states": ckpt.states,
        "rng_state": ckpt.rng_state,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(Path(path), weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"incompatible checkpoint format {version!r}, "
                         f"this build reads {CHECKPOINT_FORMAT_VERSION}")
    gen_kw = dict(payload["gen_spec"])
    gen_kw["dropout_levels"] = tuple(gen_kw["dropout_levels"])
    return Checkpoint(
        format_version=version,
        epoch=payload["epoch"],
        config=TrainingConfig(**payload["config"]),
        gen_spec=GeneratorSpec(**gen_kw),
        disc_spec=DiscriminatorSpec(**payload["disc_spec"]),
        states=payload["states"],
        rng_state=payload["rng_state"],
    )


def build_assembly(config: TrainingConfig, gen_spec: GeneratorSpec,
                   disc_spec: DiscriminatorSpec):
    seed = derive_seed(config.seed, "model-init")
    if config.ablation == "no_branches":
        return SingleAssembly(gen_spec, disc_spec, seed=seed)
    return NetworkAssembly(gen_spec, disc_spec, seed=seed)


def derive_seed(master: int, purpose: str) -> int:
    """Documented sub-seed hash: first 8 bytes of sha256(master:purpose)."""
    digest = hashlib.sha256(f"{master}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# --- the training loop -----------------------------------------------------------


def _check_finite(values: dict, epoch: int):
    for name, v in values.items():
        if not np.isfinite(v):
            raise TrainingDivergedError(
                f"loss term {name!r} became {v} at epoch {epoch}; aborting")


def train(dataset, config: TrainingConfig, gen_spec: GeneratorSpec = None,
          disc_spec: DiscriminatorSpec = None, run_dir=None, progress=None,
          epoch_hook=None):
    """Train on a patient-level split; returns (Checkpoint, TrainHistory).

    The eval loss over the test split is appended to the history every
    epoch. If run_dir is given, history and checkpoints are written there.
    `progress` receives each EpochRecord; `epoch_hook(record, assembly)`
    additionally exposes the live assembly (for state inspection). Reruns
    with the same (dataset, config) reproduce the history exactly.
    """
    if not dataset.train:
        raise ValueError("empty train split")
    gen_spec = gen_spec or GeneratorSpec()
    disc_spec = disc_spec or DiscriminatorSpec(base_width=gen_spec.base_width)

    torch.use_deterministic_algorithms(True)
    assembly = build_assembly(config, gen_spec, disc_spec)
    torch.manual_seed(derive_seed(config.seed, "train-stream"))
    assembly.train()

    lr, betas = config.learning_rate, (config.beta1, 0.999)
    if config.ablation == "no_branches":
        opts = {
            "gen": torch.optim.Adam(assembly.gen.parameters(), lr=lr, betas=betas),
            "d": torch.optim.Adam(assembly.disc.parameters(), lr=lr, betas=betas),
        }
    else:
        opts = {
            "gen": torch.optim.Adam(
                list(assembly.g_h.parameters()) + list(assembly.g_e.parameters()),
                lr=lr, betas=betas),
            # six scalars need far larger steps than conv kernels to traverse
            # their range within a run
            "w": torch.optim.Adam(assembly.concat.parameters(),
                                  lr=lr * config.color_lr_scale, betas=betas),
            "d_in": torch.optim.Adam(
                list(assembly.d_h.parameters()) + list(assembly.d_e.parameters()),
                lr=lr, betas=betas),
            "d_out": torch.optim.Adam(assembly.d_out.parameters(), lr=lr, betas=betas),
        }

    fixed_alpha = config.fixed_alpha()
    phases = make_schedule(config.n_alternate, config.total_epochs)
    history = TrainHistory()
    run_dir = Path(run_dir) if run_dir is not None else None

    for epoch in range(1, config.total_epochs + 1):
        t0 = time.perf_counter()
        if fixed_alpha is None:
            phase = phase_of_epoch(phases, epoch).kind
            alpha = 1.0 if phase == "inner" else 0.0
        else:
            phase, alpha = "joint", fixed_alpha

        order_rng = np.random.default_rng(derive_seed(config.seed, f"order-{epoch}"))
        sums, batches = {}, 0
        for idx in _batches(len(dataset.train), config.batch_size, order_rng):
            batch = batch_tensors([dataset.train[i] for i in idx])
            terms = _train_step(assembly, batch, config, opts, alpha)
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
        means = {k: v / batches for k, v in sums.items()}
        _check_finite(means, epoch)

        ev = eval_loss(assembly, dataset.test) if dataset.test else float("nan")
        if dataset.test and not np.isfinite(ev):
            raise TrainingDivergedError(f"eval loss became {ev} at epoch {epoch}")
        rec = EpochRecord(epoch=epoch, phase=phase, terms=means, eval_loss=ev,
                          wall_time_s=time.perf_counter() - t0)
        history.append(rec)
        if progress:
            progress(rec)
        if epoch_hook:
            epoch_hook(rec, assembly)
        if run_dir is not None:
            history.to_jsonl(run_dir / "history.jsonl")
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_checkpoint(_make_checkpoint(assembly, config, gen_spec,
                                                 disc_spec, epoch),
                                run_dir / f"checkpoint_ep{epoch:04d}.pt")

    final = _make_checkpoint(assembly, config, gen_spec, disc_spec, config.total_epochs)
    if run_dir is not None:
        save_checkpoint(final, run_dir / "checkpoint_final.pt")
    return final, history


def _make_checkpoint(assembly, config, gen_spec, disc_spec, epoch) -> Checkpoint:
    return Checkpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        epoch=epoch,
        config=config,
        gen_spec=gen_spec,
        disc_spec=disc_spec,
        states=assembly.state_dicts(),
        rng_state={"torch": torch.get_rng_state()},
    )


def _critic_objective(disc, x, real, fake_detached):
    return -_log(disc(x, real)).mean() - _log(1.0 - disc(x, fake_detached)).mean()


def _train_step(assembly, batch, config, opts, alpha) -> dict:
    """One batch: critics step first, then the generator side against the
    updated critics (the standard alternating regimen)."""
    if config.ablation == "no_branches":
        return _single_step(assembly, batch, config, opts)

    x, y_h, y_e, y_rgb = batch
    terms = {}
    use_inner = alpha > 0.0
    use_outer = alpha < 1.0
    inner_critics = use_inner and config.ablation != "no_dhde"
    outer_critic = use_outer and config.ablation != "no_dout"

    i_h = (assembly.g_h(x) + 1.0) * 0.5
    i_e = (assembly.g_e(x) + 1.0) * 0.5
    i_rgb = assembly.concat(i_h, i_e) if use_outer else None

    disc_obj = 0.0
    if inner_critics:
        d_h = _critic_objective(assembly.d_h, x, y_h, i_h.detach())
        d_e = _critic_objective(assembly.d_e, x, y_e, i_e.detach())
        disc_obj = disc_obj + alpha * (d_h + d_e)
        terms["in/disc/d_h"] = float(d_h.detach())
        terms["in/disc/d_e"] = float(d_e.detach())
    if outer_critic:
        d_out = _critic_objective(assembly.d_out, x, y_rgb, i_rgb.detach())
        disc_obj = disc_obj + (1.0 - alpha) * d_out
        terms["out/disc/d_out"] = float(d_out.detach())
    if torch.is_tensor(disc_obj):
        opts["d_in"].zero_grad(set_to_none=True)
        opts["d_out"].zero_grad(set_to_none=True)
        disc_obj.backward()
        if inner_critics:
            opts["d_in"].step()
        if outer_critic:
            opts["d_out"].step()

    gen_obj = 0.0
    critic_mods = [assembly.d_h, assembly.d_e, assembly.d_out]
    with frozen(*critic_mods, eval_mode=False):
        if use_inner:
            gen_in = 0.0
            if inner_critics:
                gan_h = -_log(assembly.d_h(x, i_h)).mean()
                gan_e = -_log(assembly.d_e(x, i_e)).mean()
                gen_in = gen_in + gan_h + gan_e
                terms["in/gen/cgan_h"] = float(gan_h.detach())
                terms["in/gen/cgan_e"] = float(gan_e.detach())
            l1_h = config.lambda0 * (y_h - i_h).abs().mean()
            l1_e = config.lambda0 * (y_e - i_e).abs().mean()
            gen_in = gen_in + l1_h + l1_e
            terms["in/gen/l1_h"] = float(l1_h.detach())
            terms["in/gen/l1_e"] = float(l1_e.detach())
            gen_obj = gen_obj + alpha * gen_in
        if use_outer:
            gen_out = 0.0
            if outer_critic:
                gan_out = -_log(assembly.d_out(x, i_rgb)).mean()
                gen_out = gen_out + gan_out
                terms["out/gen/cgan_out"] = float(gan_out.detach())
            l1_rgb = config.lambda0 * (y_rgb - i_rgb).abs().mean()
            l1_ho = config.lambda1 * (y_h - i_h).abs().mean()
            l1_eo = config.lambda2 * (y_e - i_e).abs().mean()
            gen_out = gen_out + l1_rgb + l1_ho + l1_eo
            terms["out/gen/l1_rgb"] = float(l1_rgb.detach())
            terms["out/gen/l1_h"] = float(l1_ho.detach())
            terms["out/gen/l1_e"] = float(l1_eo.detach())
            if config.ablation != "no_dhde":
                # channel critics act as frozen regularizers in this phase
                with frozen(assembly.d_h, assembly.d_e):
                    froz_h = _log(1.0 - assembly.d_h(x, i_h)).mean()
                    froz_e = _log(1.0 - assembly.d_e(x, i_e)).mean()
                gen_out = gen_out + froz_h + froz_e
                terms["out/gen/frozen_h"] = float(froz_h.detach())
                terms["out/gen/frozen_e"] = float(froz_e.detach())
            gen_obj = gen_obj + (1.0 - alpha) * gen_out

    opts["gen"].zero_grad(set_to_none=True)
    opts["w"].zero_grad(set_to_none=True)
    gen_obj.backward()
    opts["gen"].step()
    if use_outer:
        opts["w"].step()
    return terms


def _single_step(assembly, batch, config, opts) -> dict:
    x, _, _, y_rgb = batch
    rgb = assembly.predict_rgb(x)
    d_obj = _critic_objective(assembly.disc, x, y_rgb, rgb.detach())
    opts["d"].zero_grad(set_to_none=True)
    d_obj.backward()
    opts["d"].step()
    with frozen(assembly.disc, eval_mode=False):
        gan = -_log(assembly.disc(x, rgb)).mean()
        l1 = config.lambda0 * (y_rgb - rgb).abs().mean()
    gen_obj = gan + l1
    opts["gen"].zero_grad(set_to_none=True)
    gen_obj.backward()
    opts["gen"].step()
    return {"out/disc/d_out": float(d_obj.detach()),
            "out/gen/cgan_out": float(gan.detach()),
            "out/gen/l1_rgb": float(l1.detach())}


# --- inference -------------------------------------------------------------------


def _pad_to_multiple(x, multiple):
    h, w = x.shape[-2:]
    th = -(-h // multiple) * multiple
    tw = -(-w // multiple) * multiple
    pt, pl = (th - h) // 2, (tw - w) // 2
    pad = (pl, tw - w - pl, pt, th - h - pt)
    if any(pad):
        x = torch.nn.functional.pad(x, pad, mode="replicate")
    return x, (pt, pl, h, w)


def infer(checkpoint, inputs, out_dir=None, ids=None):
    """Run the checkpointed model on grayscale images.

    Inputs of any size are center-padded to the next multiple of
    2^levels and cropped back afterwards. Dropout is disabled, so repeated
    calls are identical. Returns a list of (i_h, i_e, i_rgb) numpy arrays
    with i_rgb clamped to [0, 1]; single-branch checkpoints yield
    (None, None, i_rgb). With out_dir set, images plus a provenance record
    are written to disk.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    assembly = build_assembly(checkpoint.config, checkpoint.gen_spec,
                              checkpoint.disc_spec)
    assembly.load_state_dicts(checkpoint.states)
    assembly.eval()
    single = checkpoint.config.ablation == "no_branches"
    multiple = 2 ** checkpoint.gen_spec.levels

    results = []
    with torch.no_grad():
        for img in inputs:
            x = torch.as_tensor(np.asarray(img, dtype=np.float32))[None, None]
            x, (pt, pl, h, w) = _pad_to_multiple(x, multiple)
            if single:
                rgb = assembly.predict_rgb(x)
                i_h = i_e = None
            else:
                i_h, i_e, rgb = assembly.forward_full(x)
                i_h = i_h[0, 0, pt:pt + h, pl:pl + w].numpy()
                i_e = i_e[0, 0, pt:pt + h, pl:pl + w].numpy()
            rgb = rgb[0, :, pt:pt + h, pl:pl + w].clamp(0.0, 1.0)
            results.append((i_h, i_e, rgb.permute(1, 2, 0).numpy()))

    if out_dir is not None:
        from .imagecore import save_gray16, save_rgb8
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ids = ids or [f"img{i:04d}" for i in range(len(results))]
        for name, (i_h, i_e, rgb) in zip(ids, results):
            if i_h is not None:
                save_gray16(i_h, out_dir / f"{name}_h.tiff")
                save_gray16(i_e, out_dir / f"{name}_e.tiff")
            save_rgb8(rgb, out_dir / f"{name}_rgb.png")
        provenance = {
            "checkpoint_epoch": checkpoint.epoch,
            "format_version": checkpoint.format_version,
            "config": asdict(checkpoint.config),
            "inputs": list(ids),
        }
        with open(out_dir / "provenance.json", "w") as fh:
            json.dump(provenance, fh, indent=2)
    return results


def apply_ablation(config: TrainingConfig) -> dict:
    """Describe how an ablation tag modifies the assembly and losses."""
    tag = config.ablation
    if tag == "none":
        return {"assembly": "dual-branch", "schedule": "alternating", "drops": []}
    if tag == "no_inout":
        return {"assembly": "dual-branch", "schedule": "joint alpha=0.5", "drops": []}
    if tag == "no_dout":
        return {"assembly": "dual-branch", "schedule": "per alpha policy",
                "drops": ["output critic and its adversarial terms"]}
    if tag == "no_dhde":
        return {"assembly": "dual-branch", "schedule": "per alpha policy",
                "drops": ["channel critics, their adversarial and frozen terms"]}
    if tag == "no_branches":
        return {"assembly": "single generator to RGB, single critic",
                "schedule": "plain adversarial+L1", "drops": ["channel branches"]}
    raise ValueError(f"unknown ablation tag: {tag!r}")
