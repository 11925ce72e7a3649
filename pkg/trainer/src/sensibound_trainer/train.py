"""Training and evaluation loops for the bound predictor."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import BatchSampler, build_sequence, discover_dgp_ids, load_dgp
from .model import BoundPredictor, gmm_nll, monotonicity_penalty


@dataclass
class TrainerConfig:
    embed_dim: int = 64
    n_heads: int = 2
    ff_dim: int = 256
    n_layers: int = 4
    n_mixture_components: int = 3
    lr: float = 1e-3
    weight_decay: float = 1e-5
    grad_clip: float = 1.0
    dgps_per_step: int = 8
    query_groups_per_dgp: int = 8
    gamma_points_per_group: int = 5
    n_context: int = 256
    mono_weight: float = 1.0
    max_epochs: int = 60
    steps_per_epoch: int = 32
    lr_plateau_factor: float = 0.5
    lr_plateau_patience: int = 5
    early_stop_patience: int = 15
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "weight_decay", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mono_weight < 0:
            raise ValueError("mono_weight must be non-negative")

    @property
    def sequence_length_for(self):
        return self.n_context + self.query_groups_per_dgp * self.gamma_points_per_group


def _to_tensors(batch, device):
    feats = torch.as_tensor(batch.features, dtype=torch.float32, device=device)
    lower = torch.as_tensor(batch.lower, dtype=torch.float32, device=device)
    upper = torch.as_tensor(batch.upper, dtype=torch.float32, device=device)
    return feats, lower, upper


def _masked_nll(pred, labels):
    mask = torch.isfinite(labels)
    if not mask.any():
        return labels.new_zeros(())
    safe = torch.where(mask, labels, torch.zeros_like(labels))
    nll = gmm_nll(pred, safe)
    return nll[mask].mean()


def batch_loss(model, batch, mono_weight, device):
    feats, lower, upper = _to_tensors(batch, device)
    pred_lower, pred_upper = model(feats, batch.split)
    loss_lower = _masked_nll(pred_lower, lower)
    loss_upper = _masked_nll(pred_upper, upper)
    penalty = monotonicity_penalty(pred_lower.mean(), pred_upper.mean(),
                                   batch.group_sizes)
    total = loss_lower + loss_upper + mono_weight * penalty
    return total, {"nll_lower": float(loss_lower), "nll_upper": float(loss_upper),
                   "mono_penalty": float(penalty), "loss": float(total)}


def train(config: TrainerConfig, data_dir, out_dir, dgp_ids=None,
          device: str = "cpu", log_every: int = 1):
    """Fit the predictor on a labeled corpus; returns (checkpoint path, metrics).

    Writes checkpoint.pt (best validation loss) and metrics.jsonl under
    out_dir.  dgp_ids defaults to every labeled DGP in data_dir.
    """
    torch.manual_seed(config.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = sorted(dgp_ids if dgp_ids is not None else discover_dgp_ids(data_dir))
    if not ids:
        raise FileNotFoundError(f"no labeled DGPs found under {data_dir}")
    records = [load_dgp(data_dir, i) for i in ids]
    n_val = max(1, int(round(config.val_fraction * len(records))))
    val_records = records[-n_val:]
    train_records = records[:-n_val] or records

    sampler = BatchSampler(train_records, config.n_context,
                           config.query_groups_per_dgp,
                           config.gamma_points_per_group, seed=config.seed)
    val_sampler = BatchSampler(val_records, config.n_context,
                               config.query_groups_per_dgp,
                               config.gamma_points_per_group,
                               seed=config.seed + 1)

    model = BoundPredictor(d_x=records[0].d_x, embed_dim=config.embed_dim,
                           n_heads=config.n_heads, ff_dim=config.ff_dim,
                           n_layers=config.n_layers,
                           n_mixture_components=config.n_mixture_components
                           ).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr,
                           weight_decay=config.weight_decay)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, factor=config.lr_plateau_factor,
        patience=config.lr_plateau_patience)

    ckpt_path = out_dir / "checkpoint.pt"
    metrics_path = out_dir / "metrics.jsonl"
    best_val = math.inf
    stale = 0
    history = []
    with open(metrics_path, "w") as log:
        for epoch in range(config.max_epochs):
            model.train()
            t0 = time.time()
            running = []
            for _ in range(config.steps_per_epoch):
                batch = sampler.sample(config.dgps_per_step)
                loss, parts = batch_loss(model, batch, config.mono_weight, device)
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(),
                                               config.grad_clip)
                opt.step()
                running.append(parts)
            model.eval()
            with torch.no_grad():
                val_parts = []
                for _ in range(4):
                    vb = val_sampler.sample(min(config.dgps_per_step,
                                                len(val_records)))
                    _, parts = batch_loss(model, vb, config.mono_weight, device)
                    val_parts.append(parts)
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean([p["loss"] for p in running])),
                "train_mono": float(np.mean([p["mono_penalty"] for p in running])),
                "val_loss": float(np.mean([p["loss"] for p in val_parts])),
                "lr": opt.param_groups[0]["lr"],
                "seconds": time.time() - t0,
            }
            history.append(row)
            log.write(json.dumps(row) + "\n")
            log.flush()
            sched.step(row["val_loss"])
            if row["val_loss"] < best_val - 1e-6:
                best_val = row["val_loss"]
                stale = 0
                torch.save({"model": model.state_dict(),
                            "config": asdict(config),
                            "d_x": records[0].d_x}, ckpt_path)
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
            if log_every and epoch % log_every == 0:
                print(f"epoch {epoch}: train {row['train_loss']:.4f} "
                      f"val {row['val_loss']:.4f} mono {row['train_mono']:.5f}",
                      flush=True)
    if not ckpt_path.exists():
        torch.save({"model": model.state_dict(), "config": asdict(config),
                    "d_x": records[0].d_x}, ckpt_path)
    return ckpt_path, history


def load_checkpoint(path, device: str = "cpu") -> tuple:
    blob = torch.load(path, map_location=device, weights_only=True)
    config = TrainerConfig(**blob["config"])
    model = BoundPredictor(d_x=blob["d_x"], embed_dim=config.embed_dim,
                           n_heads=config.n_heads, ff_dim=config.ff_dim,
                           n_layers=config.n_layers,
                           n_mixture_components=config.n_mixture_components)
    model.load_state_dict(blob["model"])
    model.eval()
    return model, config


def evaluate(checkpoint, data_dir, dgp_ids=None, device: str = "cpu",
             max_queries_per_dgp: int = 32, seed: int = 0) -> dict:
    """Coverage, one-sided failures, bias, RMSE, monotonicity violations."""
    from .model import PredictiveDistribution

    model, config = load_checkpoint(checkpoint, device)
    ids = sorted(dgp_ids if dgp_ids is not None else discover_dgp_ids(data_dir))
    rng = np.random.default_rng(seed)
    acc = {head: {"in90": [], "in50": [], "below": [], "above": [],
                  "err": [], "viol": []} for head in ("lower", "upper")}
    with torch.no_grad():
        for dgp_id in ids:
            rec = load_dgp(data_dir, dgp_id)
            qids = rec.query_ids
            if len(qids) > max_queries_per_dgp:
                qids = list(rng.choice(qids, size=max_queries_per_dgp,
                                       replace=False))
            ctx = rng.choice(rec.x_context.shape[0],
                             size=min(config.n_context, rec.x_context.shape[0]),
                             replace=False)
            for qid in qids:
                lab = rec.labels[qid]
                g = lab["gamma"]
                feats, split = build_sequence(
                    rec.x_context[ctx], rec.a_context[ctx], rec.y_context[ctx],
                    np.repeat(rec.query_x[qid][None, :], g.size, axis=0),
                    np.full(g.size, rec.query_a[qid], dtype=float), g)
                t = torch.as_tensor(feats[None], dtype=torch.float32,
                                    device=device)
                pred_lower, pred_upper = model(t, split)
                for head, pred in (("lower", pred_lower), ("upper", pred_upper)):
                    slot = acc[head]
                    means = pred.mean()[0].numpy()
                    diffs = np.diff(means)
                    slot["viol"].extend(
                        (diffs > 0).tolist() if head == "lower"
                        else (diffs < 0).tolist())
                    labels = lab[head]
                    ok = np.isfinite(labels)
                    if not ok.any():
                        continue
                    truth = torch.as_tensor(labels[ok], dtype=torch.float32)
                    sel = torch.as_tensor(np.flatnonzero(ok))
                    sub = PredictiveDistribution(weights=pred.weights[0, sel],
                                                 means=pred.means[0, sel],
                                                 scales=pred.scales[0, sel])
                    q05, q25 = sub.quantile(0.05), sub.quantile(0.25)
                    q75, q95 = sub.quantile(0.75), sub.quantile(0.95)
                    slot["in90"].extend(((truth >= q05) & (truth <= q95)).tolist())
                    slot["in50"].extend(((truth >= q25) & (truth <= q75)).tolist())
                    slot["below"].extend((truth < q05).tolist())
                    slot["above"].extend((truth > q95).tolist())
                    slot["err"].extend((sub.mean() - truth).tolist())

    out = {}
    for head, slot in acc.items():
        err = np.array(slot["err"])
        out[head] = {
            "coverage90": float(np.mean(slot["in90"])),
            "coverage50": float(np.mean(slot["in50"])),
            "failure_rate_low": float(np.mean(slot["below"])),
            "failure_rate_high": float(np.mean(slot["above"])),
            "bias": float(err.mean()),
            "rmse": float(np.sqrt((err ** 2).mean())),
            "violation_fraction": float(np.mean(slot["viol"])),
            "n_pairs": int(err.size),
        }
    out["violation_fraction"] = float(np.mean(
        acc["lower"]["viol"] + acc["upper"]["viol"]))
    return out
