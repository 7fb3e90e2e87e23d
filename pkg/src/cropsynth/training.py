"""Training loop, batching schemes and epoch selection."""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import seqnet
from .errors import ConfigError, DivergenceError
from .features import Assembly, mask_input
from .seqnet import AdamState, Checkpoint, NetConfig

log = logging.getLogger(__name__)

DIVERGENCE_MODES = ("signed", "absolute")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-3
    divergence_mode: str = "signed"
    loss_orientation: str = "estimate_target"

    def __post_init__(self):
        if self.divergence_mode not in DIVERGENCE_MODES:
            raise ConfigError(f"divergence_mode must be one of {DIVERGENCE_MODES}")
        if self.loss_orientation not in seqnet.LOSS_ORIENTATIONS:
            raise ConfigError(f"loss_orientation must be one of {seqnet.LOSS_ORIENTATIONS}")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be positive")


def weighted_divergence(vl_usur, vl_asyn):
    """Signed square of the validation-loss gap, halved: ``|d| d / 2`` with ``d = vl_usur - vl_asyn``."""
    d = vl_usur - vl_asyn
    return abs(d) * d / 2.0


def paired_batch_loss(loss_usur, loss_asyn):
    return (loss_usur + loss_asyn) / 2.0


def criterion_values(table, criterion, divergence_mode="signed"):
    """Per-epoch selection quantity from a list of loss rows."""
    if criterion == "loss":
        return np.array([row["vl"] for row in table], dtype=float)
    if criterion != "divergence":
        raise ConfigError(f"unknown selection criterion {criterion!r}")
    d = np.array([weighted_divergence(row["vl_usur"], row["vl_asyn"]) for row in table])
    return np.abs(d) if divergence_mode == "absolute" else d


def select_epoch(table, criterion, divergence_mode="signed"):
    """Index of the first epoch minimising the criterion."""
    return int(np.argmin(criterion_values(table, criterion, divergence_mode)))


class SamplePool:
    """One sample per (dataset, target week): masked input and weekly distribution."""

    def __init__(self, datasets):
        self.datasets = list(datasets)
        self.inputs = [d.inputs() for d in self.datasets]
        self.index = [(i, w) for i, d in enumerate(self.datasets) for w in range(len(d.target_days))]
        if len({x.shape for x in self.inputs}) > 1:
            raise ConfigError("datasets in one pool must share the sequence length")

    def __len__(self):
        return len(self.index)

    def batch(self, idx):
        x = np.stack([mask_input(self.inputs[self.index[k][0]], self.datasets[self.index[k][0]].target_days[self.index[k][1]])
                      for k in idx])
        q = np.stack([self.datasets[self.index[k][0]].targets[self.index[k][1]] for k in idx])
        return x, q

    def loss(self, params, cfg, chunk=512, orientation="estimate_target"):
        """Mean KL loss over every sample in the pool."""
        total = 0.0
        for s in range(0, len(self), chunk):
            x, q = self.batch(range(s, min(s + chunk, len(self))))
            total += float(np.sum(seqnet.kl_loss(seqnet.predict(params, x, cfg), q, orientation=orientation)))
        return total / len(self)


@dataclass
class TrainRun:
    combination: str
    seed: int
    criterion: str
    divergence_mode: str
    net_config: NetConfig
    train_config: TrainConfig
    losses: list = field(default_factory=list)  # per epoch: train_loss and vl / vl_usur / vl_asyn
    selected_epoch: int = None
    checkpoint: Checkpoint = None  # selected epoch
    last_checkpoint: Checkpoint = None
    checkpoint_path: str = None

    @property
    def params(self):
        return self.checkpoint.params

    def criterion_values(self):
        return criterion_values(self.losses, self.criterion, self.divergence_mode)

    def to_dict(self):
        return {
            "combination": self.combination,
            "seed": int(self.seed),
            "criterion": self.criterion,
            "divergence_mode": self.divergence_mode,
            "net_config": asdict(self.net_config),
            "train_config": asdict(self.train_config),
            "losses": self.losses,
            "selected_epoch": self.selected_epoch,
            "checkpoint": self.checkpoint_path,
        }

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.checkpoint.save(out / "selected.json")
        self.last_checkpoint.save(out / "last.json")
        self.checkpoint_path = "selected.json"
        (out / "run.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        keys = ["epoch", "train_loss", "vl", "vl_usur", "vl_asyn", "criterion"]
        with (out / "losses.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for row in self.losses:
                w.writerow(["" if row.get(k) is None else repr(row[k]) if isinstance(row[k], float) else row[k]
                            for k in keys])
        return out


def load_run(out_dir):
    out = Path(out_dir)
    doc = json.loads((out / "run.json").read_text())
    ck = Checkpoint.load(out / (doc["checkpoint"] or "selected.json"))
    return TrainRun(doc["combination"], doc["seed"], doc["criterion"], doc["divergence_mode"],
                    NetConfig(**doc["net_config"]), TrainConfig(**doc["train_config"]), doc["losses"],
                    doc["selected_epoch"], ck, None, doc["checkpoint"])


def default_validator(assembly, cfg, orientation="estimate_target"):
    """Validation-loss callable for the pools of ``assembly``."""
    sur = SamplePool(assembly.val_surveyed) if assembly.val_surveyed else None
    syn = SamplePool(assembly.val_synthetic) if assembly.val_synthetic else None

    def validate(params, epoch):
        out = {}
        if sur is not None:
            out["vl_usur"] = sur.loss(params, cfg, orientation=orientation)
        if syn is not None:
            out["vl_asyn"] = syn.loss(params, cfg, orientation=orientation)
        n_s = len(sur) if sur is not None else 0
        n_a = len(syn) if syn is not None else 0
        if n_s + n_a:
            out["vl"] = (out.get("vl_usur", 0.0) * n_s + out.get("vl_asyn", 0.0) * n_a) / (n_s + n_a)
        return out

    return validate


def _mean_grads(a, b):
    return {k: (a[k] + b[k]) / 2.0 for k in a}


def train(assembly, net_cfg=NetConfig(), train_cfg=TrainConfig(), seed=0, validate=None, out_dir=None,
          progress=None):
    """Train one combination and restore the parameters of the selected epoch.

    Parameters
    ----------
    assembly : Assembly
        Pools from :func:`cropsynth.features.assemble`.
    validate : callable, optional
        ``validate(params, epoch) -> dict`` with any of ``vl``, ``vl_usur``
        and ``vl_asyn``. Defaults to losses on the assembly's validation pools.
    progress : callable, optional
        Called with each finished loss row.
    """
    if not isinstance(assembly, Assembly):
        raise ConfigError("train expects an Assembly")
    pool = SamplePool(assembly.train)
    if len(pool) == 0:
        raise ConfigError(f"{assembly.combination}: empty training pool")
    partner = None
    if assembly.paired:
        partner = SamplePool(assembly.train_surveyed)
        if len(partner) == 0:
            raise ConfigError("AsynUsur: empty surveyed training pool")
    validate = validate or default_validator(assembly, net_cfg, train_cfg.loss_orientation)

    rng = np.random.default_rng(seed)
    params = seqnet.init_params(net_cfg, rng)
    adam = AdamState.fresh(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    run = TrainRun(assembly.combination, seed, assembly.criterion, train_cfg.divergence_mode, net_cfg, train_cfg)
    last_ok = Checkpoint(net_cfg, params, adam, -1, rng.bit_generator.state)
    best_value = None
    B = train_cfg.batch

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(pool))
        total, count = 0.0, 0
        for s in range(0, len(order), B):
            idx = order[s:s + B]
            x, q = pool.batch(idx)
            loss, grads = seqnet.loss_and_grad(params, x, q, net_cfg, orientation=train_cfg.loss_orientation)
            if partner is not None:
                xu, qu = partner.batch(rng.integers(len(partner), size=len(idx)))
                loss_u, grads_u = seqnet.loss_and_grad(params, xu, qu, net_cfg, orientation=train_cfg.loss_orientation)
                loss = paired_batch_loss(loss_u, loss)
                grads = _mean_grads(grads_u, grads)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise DivergenceError(f"non-finite training loss in epoch {epoch}", checkpoint=last_ok)
            params, adam = seqnet.adam_step(params, grads, adam)
            total += loss * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "train_loss": total / count}
        row.update({k: float(v) for k, v in validate(params, epoch).items()})
        if run.criterion == "divergence" and not {"vl_usur", "vl_asyn"} <= set(row):
            raise ConfigError("divergence selection needs surveyed and synthetic validation losses")
        if run.criterion == "loss" and "vl" not in row:
            raise ConfigError("loss selection needs a validation loss")
        value = criterion_values([row], run.criterion, run.divergence_mode)[0]
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite validation loss in epoch {epoch}", checkpoint=last_ok)
        row["criterion"] = float(value)
        run.losses.append(row)
        last_ok = Checkpoint(net_cfg, params, adam, epoch, rng.bit_generator.state)
        if best_value is None or value < best_value:
            best_value = value
            run.checkpoint = last_ok
        if progress is not None:
            progress(row)
        log.info("epoch %d train %.5f %s", epoch, row["train_loss"],
                 " ".join(f"{k} {row[k]:.5f}" for k in ("vl", "vl_usur", "vl_asyn") if k in row))

    run.last_checkpoint = last_ok
    run.selected_epoch = select_epoch(run.losses, run.criterion, run.divergence_mode)
    assert run.checkpoint.epoch == run.selected_epoch
    if out_dir is not None:
        run.save(out_dir)
    return run


def srr_split(surveyed, holdout):
    """Withhold the (zone, season) pairs in ``holdout`` from a surveyed pool.

    Returns ``(kept, held_out)``.
    """
    pairs = {(str(z), str(s)) for z, s in holdout}
    held = [d for d in surveyed if (d.zone_id, d.season_id) in pairs]
    kept = [d for d in surveyed if (d.zone_id, d.season_id) not in pairs]
    if pairs and not held:
        raise ConfigError("holdout filter matches no surveyed season")
    if not kept:
        raise ConfigError("holdout filter removes every surveyed season")
    return kept, held


def srr_protocol(surveyed, holdout, net_cfg=NetConfig(), train_cfg=TrainConfig(), seed=0, val_fraction=0.2,
                 out_dir=None):
    """Train on surveyed data with the holdout seasons removed; return the run and the holdout set."""
    from .features import assemble

    kept, held = srr_split(surveyed, holdout)
    run = train(assemble("Usur", kept, [], val_fraction=val_fraction, seed=seed), net_cfg, train_cfg, seed,
                out_dir=out_dir)
    return run, held
