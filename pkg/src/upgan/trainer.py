"""Progressive training: per-phase initialization with frozen predecessors,
then joint fine-tuning of the whole cascade at a reduced learning rate.

Each batch alternates one discriminator step with one generator step. During
``init_phase(m)`` only phase m's networks receive updates; earlier weights
are bitwise constant. ``finetune_all`` backpropagates the sum of all phases'
generator losses through the full cascade.

Checkpoints use the repository tensor container (one file per tensor) with a
JSON header carrying the config, counters, and RNG state; resuming from an
epoch-boundary checkpoint reproduces the continuous run exactly because batch
order is derived statelessly from (seed, stage, epoch).
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tensorio
from .cascade import attention_map, cascade_input, upgan_forward
from .dataset import DatasetManifest
from .ggd import ggd_sigma
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    UncertaintyGenerator,
)
from .objectives import LossWeights, disc_loss, gen_total_loss

CHECKPOINT_SCHEMA_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when a loss goes non-finite; message carries stage/step."""


@dataclass
class TrainConfig:
    phases: int = 3
    epochs_init: int = 30
    epochs_finetune: int = 30
    lr_init: float = 0.002
    lr_finetune: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 8
    anneal_period: int = 1000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    # architecture
    base_width: int = 32
    depth: int = 4
    disc_layers: int = 3
    disc_width: int = 32
    conditional_disc: bool = False
    # numerical guards and scheme options
    beta_min: float = 0.2
    beta_max: float = 5.0
    alpha_floor: float = 1e-3
    residual_eps: float = 1e-6
    guided: bool = True
    freeze_generators_only: bool = False
    grad_clip: float | None = None
    checkpoint_every: int = 1

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        positives = {
            "phases": self.phases, "epochs_init": self.epochs_init,
            "epochs_finetune": self.epochs_finetune, "lr_init": self.lr_init,
            "lr_finetune": self.lr_finetune, "batch_size": self.batch_size,
            "anneal_period": self.anneal_period,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive, got {value}")
        if self.lr_finetune >= self.lr_init:
            raise ValueError("lr_finetune must be smaller than lr_init")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


def runtime_device() -> torch.device:
    """Compute backend from the optional UPGAN_DEVICE env var (default cpu)."""
    name = os.environ.get("UPGAN_DEVICE", "cpu")
    if name.startswith("cuda") and not torch.cuda.is_available():
        warnings.warn(f"UPGAN_DEVICE={name} but CUDA is unavailable; using cpu")
        return torch.device("cpu")
    return torch.device(name)


def cosine_lr(step: int, total: int, lr_max: float) -> float:
    """lr_max * (1 + cos(pi * step / total)) / 2, clamped to 0 past ``total``."""
    if step < 0:
        raise ValueError(f"negative schedule step {step}")
    if total <= 0:
        raise ValueError(f"schedule length must be positive, got {total}")
    if step >= total:
        return 0.0
    return lr_max * (1.0 + math.cos(math.pi * step / total)) / 2.0


def weight_checksum(module: torch.nn.Module) -> str:
    """Bitwise digest of all parameters (used by the freeze invariant)."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class Batcher:
    """In-memory batch iterator with stateless per-epoch shuffling."""

    def __init__(self, manifest: DatasetManifest, split: str, batch_size: int):
        samples = manifest.samples_for(split)
        if not samples:
            raise ValueError(f"manifest has no samples in split {split!r}")
        a_maps, b_maps = [], []
        for s in samples:
            a, b = s.load(manifest.root)
            a_maps.append(a)
            b_maps.append(b)
        self.a = torch.from_numpy(np.stack(a_maps)[:, None, :, :])
        self.b = torch.from_numpy(np.stack(b_maps)[:, None, :, :])
        self.samples = samples
        self.batch_size = batch_size
        self.device = runtime_device()

    def __len__(self):
        return len(self.samples)

    def batches(self, seed_parts=None):
        idx = np.arange(len(self.samples))
        if seed_parts is not None:
            rng = np.random.default_rng(np.random.SeedSequence(list(seed_parts)))
            rng.shuffle(idx)
        for start in range(0, len(idx), self.batch_size):
            sel = idx[start:start + self.batch_size]
            yield self.a[sel].to(self.device), self.b[sel].to(self.device)


@dataclass
class TrainState:
    config: TrainConfig
    generators: list[UncertaintyGenerator]
    discriminators: list[PatchDiscriminator]
    opt_g: list[torch.optim.Adam]
    opt_d: list[torch.optim.Adam]
    opt_finetune: torch.optim.Adam | None = None
    initialized: list[bool] = field(default_factory=list)
    stage: str = "init0"
    epoch: int = 0
    global_step: int = 0
    history: list[dict] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    best_snapshot: list[dict] | None = None
    log_path: Path | None = None

    def log(self, record: dict) -> None:
        self.history.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def _adam(params, lr: float, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(config.adam_beta1, config.adam_beta2))


def _all_gen_params(state: TrainState):
    return [p for g in state.generators for p in g.parameters()]


def build_state(config: TrainConfig) -> TrainState:
    """Construct all phase networks and optimizers, seeded deterministically."""
    torch.manual_seed(config.seed)
    generators, discriminators = [], []
    for m in range(config.phases):
        gcfg = GeneratorConfig(
            in_channels=1 if m == 0 else 2,
            base_width=config.base_width,
            depth=config.depth,
            beta_min=config.beta_min,
            beta_max=config.beta_max,
            alpha_floor=config.alpha_floor,
        )
        dcfg = DiscriminatorConfig(
            in_channels=2 if config.conditional_disc else 1,
            layers=config.disc_layers,
            base_width=config.disc_width,
        )
        generators.append(UncertaintyGenerator(gcfg))
        discriminators.append(PatchDiscriminator(dcfg))
    device = runtime_device()
    for module in generators + discriminators:
        module.to(device)
    opt_g = [_adam(g.parameters(), config.lr_init, config) for g in generators]
    opt_d = [_adam(d.parameters(), config.lr_init, config) for d in discriminators]
    return TrainState(
        config=config,
        generators=generators,
        discriminators=discriminators,
        opt_g=opt_g,
        opt_d=opt_d,
        initialized=[False] * config.phases,
    )


def _set_lr(optimizers, lr: float) -> None:
    for opt in optimizers:
        for group in opt.param_groups:
            group["lr"] = lr


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def _check_finite(value: float, what: str, stage: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"{what} became non-finite ({value}) at stage {stage!r}, global step {step}"
        )


def _disc_input(image: torch.Tensor, source: torch.Tensor, config: TrainConfig) -> torch.Tensor:
    if config.conditional_disc:
        return torch.cat([image, source], dim=1)
    return image


def _frozen_prefix(state: TrainState, a: torch.Tensor, upto: int):
    """Phase-``upto`` input stack plus the frozen predecessors' predictions."""
    config = state.config
    means = []
    if upto == 0:
        return a, means
    with torch.no_grad():
        feature = None
        for m in range(upto):
            inp = a if m == 0 else cascade_input(feature, a)
            pred = state.generators[m](inp)
            sigma = ggd_sigma(pred.alpha, pred.beta)
            feature = pred.mean * attention_map(sigma, guided=config.guided)
            means.append(pred.mean)
    return cascade_input(feature, a), means


def _d_step(state: TrainState, m: int, fake_image: torch.Tensor,
            real_image: torch.Tensor, source: torch.Tensor) -> float:
    config = state.config
    disc = state.discriminators[m]
    state.opt_d[m].zero_grad(set_to_none=True)
    real_scores = disc(_disc_input(real_image, source, config))
    fake_scores = disc(_disc_input(fake_image.detach(), source, config))
    loss = disc_loss(real_scores, fake_scores)
    loss.backward()
    state.opt_d[m].step()
    return float(loss.detach())


def _validate(state: TrainState, val: Batcher, upto: int) -> dict:
    """Per-phase MAE on the validation split (normalized intensity scale)."""
    gens = state.generators[:upto]
    modes = [g.training for g in gens]
    for g in gens:
        g.eval()
    sums = np.zeros(upto)
    count = 0
    with torch.no_grad():
        for a, b in val.batches(None):
            out = upgan_forward(a, gens, guided=state.config.guided)
            for m, phase in enumerate(out.phases):
                sums[m] += float(torch.abs(phase.prediction.mean - b).mean()) * a.shape[0]
            count += a.shape[0]
    for g, mode in zip(gens, modes):
        g.train(mode)
    maes = (sums / count).tolist()
    record = {
        "type": "val", "stage": state.stage, "epoch": state.epoch,
        "mae_per_phase": maes, "mae": maes[-1],
    }
    state.val_history.append(record)
    state.log(record)
    if maes[-1] < state.best_val and upto == state.config.phases:
        state.best_val = maes[-1]
        record["improved"] = True
        state.best_snapshot = [
            {k: v.detach().clone() for k, v in g.state_dict().items()}
            for g in state.generators
        ]
    return record


def restore_best(state: TrainState) -> bool:
    """Load the best-validation-MAE generator weights (checkpoint selection
    criterion). Returns False when no snapshot was recorded."""
    if state.best_snapshot is None:
        return False
    for g, snap in zip(state.generators, state.best_snapshot):
        g.load_state_dict(snap)
    return True


def init_phase(m: int, data: Batcher, state: TrainState, val: Batcher | None = None,
               on_epoch_end=None, on_step_end=None) -> TrainState:
    """Train phase m's GAN alone; phases < m stay bitwise frozen."""
    config = state.config
    if m < 0 or m >= config.phases:
        raise ValueError(f"phase index {m} outside [0, {config.phases})")
    if not all(state.initialized[:m]):
        missing = state.initialized[:m].index(False)
        raise ValueError(f"init_phase({m}) called before init_phase({missing})")

    for idx in range(m):
        state.generators[idx].requires_grad_(False).eval()
        freeze_disc = not config.freeze_generators_only
        state.discriminators[idx].requires_grad_(not freeze_disc)
        state.discriminators[idx].train(not freeze_disc)
    gen = state.generators[m].requires_grad_(True).train()
    disc = state.discriminators[m].requires_grad_(True).train()

    state.stage = f"init{m}"
    while state.epoch < config.epochs_init:
        epoch = state.epoch
        lr = cosine_lr(epoch, config.anneal_period, config.lr_init)
        _set_lr([state.opt_g[m], state.opt_d[m]], lr)
        for a, b in data.batches((config.seed, m, epoch)):
            try:
                inp, prefix_means = _frozen_prefix(state, a, m)
                pred = gen(inp)

                d_loss_val = _d_step(state, m, pred.mean, b, a)
                if config.freeze_generators_only:
                    # earlier discriminators keep learning on their frozen fakes
                    for idx, prev_mean in enumerate(prefix_means):
                        _d_step(state, idx, prev_mean, b, a)

                state.opt_g[m].zero_grad(set_to_none=True)
                fake_scores = disc(_disc_input(pred.mean, a, config))
                g_loss, parts = gen_total_loss(
                    pred, b, fake_scores, config.weights,
                    alpha_floor=config.alpha_floor, residual_eps=config.residual_eps,
                )
            except ValueError as exc:
                raise TrainingDivergedError(
                    f"loss computation failed at stage {state.stage!r}, "
                    f"global step {state.global_step}: {exc}"
                ) from exc
            g_loss.backward()
            grad_norm = _grad_norm(gen.parameters())
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(gen.parameters(), config.grad_clip)
            state.opt_g[m].step()

            _check_finite(float(g_loss.detach()), "generator loss", state.stage, state.global_step)
            _check_finite(d_loss_val, "discriminator loss", state.stage, state.global_step)
            state.log({
                "type": "step", "stage": state.stage, "epoch": epoch,
                "global_step": state.global_step, "lr": lr,
                "g_loss": float(g_loss.detach()), "d_loss": d_loss_val,
                "fidelity": {f"phase{m}": parts["fidelity"]},
                "adversarial": parts["adversarial"], "grad_norm": grad_norm,
            })
            state.global_step += 1
            if on_step_end is not None:
                on_step_end(state)
        if val is not None:
            _validate(state, val, upto=m + 1)
        state.epoch += 1
        if on_epoch_end is not None:
            on_epoch_end(state)

    state.initialized[m] = True
    state.epoch = 0
    return state


def finetune_all(data: Batcher, state: TrainState, val: Batcher | None = None,
                 on_epoch_end=None, on_step_end=None) -> TrainState:
    """Joint fine-tuning: sum of all phases' generator losses, smaller LR."""
    config = state.config
    if not all(state.initialized):
        missing = state.initialized.index(False)
        raise ValueError(f"finetune_all before init_phase({missing})")
    for g in state.generators:
        g.requires_grad_(True).train()
    for d in state.discriminators:
        d.requires_grad_(True).train()
    if state.opt_finetune is None:
        state.opt_finetune = _adam(_all_gen_params(state), config.lr_finetune, config)

    state.stage = "finetune"
    while state.epoch < config.epochs_finetune:
        epoch = state.epoch
        lr = cosine_lr(epoch, config.anneal_period, config.lr_finetune)
        _set_lr([state.opt_finetune] + state.opt_d, lr)
        for a, b in data.batches((config.seed, config.phases, epoch)):
            try:
                out = upgan_forward(a, state.generators, guided=config.guided)

                d_total = 0.0
                for m, phase in enumerate(out.phases):
                    d_total += _d_step(state, m, phase.prediction.mean, b, a)

                state.opt_finetune.zero_grad(set_to_none=True)
                total = None
                fid = {}
                adv_sum = 0.0
                for m, phase in enumerate(out.phases):
                    fake_scores = state.discriminators[m](_disc_input(phase.prediction.mean, a, config))
                    loss_m, parts = gen_total_loss(
                        phase.prediction, b, fake_scores, config.weights,
                        alpha_floor=config.alpha_floor, residual_eps=config.residual_eps,
                    )
                    total = loss_m if total is None else total + loss_m
                    fid[f"phase{m}"] = parts["fidelity"]
                    adv_sum += parts["adversarial"]
            except ValueError as exc:
                raise TrainingDivergedError(
                    f"loss computation failed at stage {state.stage!r}, "
                    f"global step {state.global_step}: {exc}"
                ) from exc
            total.backward()
            grad_norm = _grad_norm(_all_gen_params(state))
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(_all_gen_params(state), config.grad_clip)
            state.opt_finetune.step()

            _check_finite(float(total.detach()), "generator loss", state.stage, state.global_step)
            _check_finite(d_total, "discriminator loss", state.stage, state.global_step)
            state.log({
                "type": "step", "stage": state.stage, "epoch": epoch,
                "global_step": state.global_step, "lr": lr,
                "g_loss": float(total.detach()), "d_loss": d_total,
                "fidelity": fid, "adversarial": adv_sum, "grad_norm": grad_norm,
            })
            state.global_step += 1
            if on_step_end is not None:
                on_step_end(state)
        if val is not None:
            _validate(state, val, upto=config.phases)
        state.epoch += 1
        if on_epoch_end is not None:
            on_epoch_end(state)

    state.stage = "done"
    state.epoch = 0
    return state


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> TrainState:
    """Full progressive schedule: init each phase in order, then fine-tune.

    Writes per-step JSON-lines logs, per-stage checkpoints (``init{m}``,
    ``latest``, ``best``, ``final``) when ``out_dir`` is given. Deterministic
    for a fixed (config, seed) on one backend.
    """
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        config = state.config
    else:
        state = build_state(config)

    train_b = Batcher(manifest, "train", config.batch_size)
    val_b = Batcher(manifest, "val", config.batch_size)

    out_path: Path | None = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        state.log_path = out_path / "log.jsonl"
        tensorio.write_json(out_path / "train_config.json", config.to_dict())

    def on_epoch_end(st: TrainState):
        if out_path is None:
            return
        if st.epoch % config.checkpoint_every == 0 or st.epoch >= _stage_epochs(st):
            save_checkpoint(st, out_path / "checkpoints" / "latest")
        if st.val_history and st.val_history[-1].get("improved"):
            save_checkpoint(st, out_path / "checkpoints" / "best")

    for m in range(config.phases):
        if not state.initialized[m]:
            init_phase(m, train_b, state, val=val_b, on_epoch_end=on_epoch_end)
            if out_path is not None:
                save_checkpoint(state, out_path / "checkpoints" / f"init{m}")
    if state.stage != "done":
        finetune_all(train_b, state, val=val_b, on_epoch_end=on_epoch_end)
    if out_path is not None:
        save_checkpoint(state, out_path / "checkpoints" / "final")
    return state


def _stage_epochs(state: TrainState) -> int:
    return state.config.epochs_finetune if state.stage == "finetune" else state.config.epochs_init


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def _weight_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    tensors = {}
    for m, g in enumerate(state.generators):
        for k, v in g.state_dict().items():
            tensors[f"g{m}.{k}"] = v
    for m, d in enumerate(state.discriminators):
        for k, v in d.state_dict().items():
            tensors[f"d{m}.{k}"] = v
    return tensors


def _optimizer_entries(state: TrainState) -> dict[str, tuple[torch.optim.Adam, list]]:
    entries = {}
    for m, (g, opt) in enumerate(zip(state.generators, state.opt_g)):
        entries[f"optg{m}"] = (opt, [(f"g{m}.{n}", p) for n, p in g.named_parameters()])
    for m, (d, opt) in enumerate(zip(state.discriminators, state.opt_d)):
        entries[f"optd{m}"] = (opt, [(f"d{m}.{n}", p) for n, p in d.named_parameters()])
    if state.opt_finetune is not None:
        named = [
            (f"g{m}.{n}", p)
            for m, g in enumerate(state.generators)
            for n, p in g.named_parameters()
        ]
        entries["optf"] = (state.opt_finetune, named)
    return entries


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    index = {}
    for name, tensor in _weight_tensors(state).items():
        rel = f"tensors/{name}.upg1"
        tensorio.write_tensor(path / rel, tensor.detach().cpu().numpy())
        index[name] = rel

    opt_steps: dict[str, dict[str, float]] = {}
    for opt_name, (opt, named) in _optimizer_entries(state).items():
        steps = {}
        for pname, p in named:
            st = opt.state.get(p)
            if not st:
                continue
            for key in ("exp_avg", "exp_avg_sq"):
                rel = f"tensors/{opt_name}.{pname}.{key}.upg1"
                tensorio.write_tensor(path / rel, st[key].detach().cpu().numpy())
                index[f"{opt_name}.{pname}.{key}"] = rel
            steps[pname] = float(st["step"])
        opt_steps[opt_name] = steps

    header = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": state.config.to_dict(),
        "stage": state.stage,
        "epoch": state.epoch,
        "global_step": state.global_step,
        "best_val": state.best_val if math.isfinite(state.best_val) else None,
        "initialized": state.initialized,
        "rng_torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode(),
        "tensor_index": index,
        "optimizer_steps": opt_steps,
        "val_history": state.val_history,
    }
    tensorio.write_json(path / "header.json", header)
    return path


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    if header.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {header.get('schema_version')!r}")
    config = TrainConfig.from_dict(header["config"])
    state = build_state(config)
    index = header["tensor_index"]

    def tensor_of(name):
        return torch.from_numpy(tensorio.read_tensor(path / index[name]))

    for m, g in enumerate(state.generators):
        g.load_state_dict({k: tensor_of(f"g{m}.{k}") for k in g.state_dict()})
    for m, d in enumerate(state.discriminators):
        d.load_state_dict({k: tensor_of(f"d{m}.{k}") for k in d.state_dict()})

    if header["optimizer_steps"].get("optf"):
        state.opt_finetune = _adam(_all_gen_params(state), config.lr_finetune, config)
    for opt_name, (opt, named) in _optimizer_entries(state).items():
        steps = header["optimizer_steps"].get(opt_name, {})
        for pname, p in named:
            if pname not in steps:
                continue
            opt.state[p] = {
                "step": torch.tensor(steps[pname]),
                "exp_avg": tensor_of(f"{opt_name}.{pname}.exp_avg"),
                "exp_avg_sq": tensor_of(f"{opt_name}.{pname}.exp_avg_sq"),
            }

    state.stage = header["stage"]
    state.epoch = int(header["epoch"])
    state.global_step = int(header["global_step"])
    state.best_val = header["best_val"] if header["best_val"] is not None else math.inf
    state.initialized = list(header["initialized"])
    state.val_history = list(header.get("val_history", []))
    rng = np.frombuffer(base64.b64decode(header["rng_torch"]), dtype=np.uint8)
    torch.set_rng_state(torch.from_numpy(rng.copy()))
    return state
