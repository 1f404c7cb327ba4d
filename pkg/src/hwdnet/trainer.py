"""Training loop: balanced batches, two-stream forward, loss composition,
SGD with momentum, checkpointing and deterministic resume."""

from __future__ import annotations

import io
import json
import os
import pickle
from pathlib import Path

import numpy as np
import torch

from . import losses
from .config import DEFAULTS, load_config
from .data.records import DatasetIndex, Split
from .data.sampler import AugmentConfig, Batch, BatchSpec, sample_balanced_batch
from .models.full import HWDNetModel

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def batch_spec_from_config(cfg: dict) -> BatchSpec:
    return BatchSpec(
        ids_per_batch=int(cfg["batch.ids_per_batch"]),
        images_per_id_per_modality=int(cfg["batch.images_per_id"]),
        image_height=int(cfg["batch.height"]),
        image_width=int(cfg["batch.width"]),
    )


def augment_from_config(cfg: dict) -> AugmentConfig:
    return AugmentConfig(
        flip=bool(cfg["augment.flip"]),
        crop=bool(cfg["augment.crop"]),
        crop_padding=int(cfg["augment.pad"]),
        erase=bool(cfg["augment.erase"]),
    )


def loss_weights_from_config(cfg: dict) -> losses.LossWeights:
    return losses.LossWeights(
        margin=float(cfg["loss.margin"]),
        wr=float(cfg["loss.weight.wr"]),
        id=float(cfg["loss.weight.id"]),
        tri=float(cfg["loss.weight.tri"]),
        orient=float(cfg["loss.weight.orient"]),
        centroid=float(cfg["loss.weight.centroid"]),
        enable={name: bool(cfg[f"loss.enable.{name}"])
                for name in ("wr", "id", "tri", "orient", "centroid")},
    )


def build_model(cfg: dict, num_identities: int) -> HWDNetModel:
    torch.manual_seed(int(cfg["train.seed"]))
    return HWDNetModel(num_identities, cfg)


def build_optimizer(model: HWDNetModel, cfg: dict) -> torch.optim.SGD:
    wd = float(cfg["train.weight_decay"])
    restrainer = model.encoder.restrainer_parameters()
    restrainer_ids = {id(p) for p in restrainer}
    decayed = [p for p in model.parameters() if id(p) not in restrainer_ids]
    groups = [{"params": decayed, "weight_decay": wd}]
    if restrainer:
        # no decay on restrainer scalars: decaying `a` would fight its identity init
        groups.append({"params": restrainer, "weight_decay": 0.0})
    return torch.optim.SGD(groups, lr=float(cfg["train.lr"]),
                           momentum=float(cfg["train.momentum"]))


def _lr_at_epoch(cfg: dict, epoch: int) -> float:
    lr = float(cfg["train.lr"])
    if cfg["train.lr_schedule"] == "constant":
        return lr
    boundaries = [int(e) for e in str(cfg["train.lr_decay_epochs"]).split(",") if e.strip()]
    factor = float(cfg["train.lr_decay_factor"])
    for boundary in boundaries:
        if epoch >= boundary:
            lr *= factor
    return lr


def compute_batch_losses(model: HWDNetModel, batch: Batch, cfg: dict,
                         label_map: dict[int, int]) -> dict[str, torch.Tensor]:
    (out_rgb, dec_rgb), (out_ir, dec_ir) = model.forward_pair(
        batch.rgb_images, batch.ir_images)
    labels_rgb = torch.tensor([label_map[int(y)] for y in batch.rgb_labels])
    labels_ir = torch.tensor([label_map[int(y)] for y in batch.ir_labels])
    reduction = cfg["loss.reduction"]
    enable = {name: bool(cfg[f"loss.enable.{name}"])
              for name in ("wr", "id", "tri", "orient", "centroid")}

    terms: dict[str, torch.Tensor] = {}
    if enable["wr"]:
        terms["wr"] = model.encoder.restrainer_loss()
    if enable["id"]:
        mu_all = torch.cat([dec_rgb.mu, dec_ir.mu])
        terms["id"] = losses.id_loss(mu_all, model.heads,
                                     torch.cat([labels_rgb, labels_ir]), reduction)
    if enable["tri"]:
        if cfg["loss.triplet_input"] == "z":
            tri_rgb, tri_ir = out_rgb.features, out_ir.features
        else:
            tri_rgb, tri_ir = dec_rgb.mu, dec_ir.mu
        terms["tri"] = losses.cross_modality_triplet(
            tri_rgb, tri_ir, labels_rgb, labels_ir,
            margin=float(cfg["loss.margin"]), reduction=reduction)
    if enable["orient"]:
        ups_all = torch.cat([dec_rgb.upsilon, dec_ir.upsilon])
        terms["orient"] = losses.orientation_loss(
            ups_all, model.heads, torch.cat([batch.rgb_orient, batch.ir_orient]), reduction)
    if enable["centroid"]:
        terms["centroid"] = losses.similarity_enforcement_loss(
            dec_rgb.mu, labels_rgb, dec_ir.mu, labels_ir,
            mode=cfg["loss.centroid_mode"], similarity=cfg["loss.similarity"],
            reduction=reduction)
    return terms


def _encode(obj):
    """Replace tensors with (dtype, shape, raw bytes) triples.

    torch's own serialization keys storages by memory address, so identical
    states produced in different runs serialize to different bytes; this
    encoding is a pure function of the values.
    """
    if isinstance(obj, torch.Tensor):
        t = obj.detach().cpu().contiguous()
        return {"__tensor__": str(t.dtype).removeprefix("torch."),
                "shape": tuple(t.shape), "data": t.numpy().tobytes()}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_encode(v) for v in obj)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            dtype = getattr(torch, obj["__tensor__"])
            flat = torch.frombuffer(bytearray(obj["data"]), dtype=dtype)
            return flat.reshape(obj["shape"]).clone()
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_decode(v) for v in obj)
    return obj


def save_checkpoint(path, model: HWDNetModel, optimizer, epoch: int, step: int,
                    cfg: dict, rng: np.random.Generator,
                    num_identities: int) -> None:
    state = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch": epoch,
        "step": step,
        "num_identities": num_identities,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "numpy_rng": rng.bit_generator.state,
        "torch_rng": torch.get_rng_state(),
        "config": dict(cfg),
    }
    buf = io.BytesIO()
    pickler = pickle.Pickler(buf, protocol=4)
    # no memo: output must not depend on incidental object sharing between
    # equal values (the encoded state is acyclic, so this is safe)
    pickler.fast = True
    pickler.dump(_encode(state))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    try:
        state = _decode(pickle.loads(Path(path).read_bytes()))
    except Exception as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict):
        raise CheckpointError(f"checkpoint {path} is not a state dictionary")
    version = state.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != {CHECKPOINT_FORMAT_VERSION}"
        )
    return state


def restore_model(state: dict) -> tuple[HWDNetModel, dict]:
    cfg = dict(DEFAULTS, **state["config"])
    model = build_model(cfg, int(state["num_identities"]))
    model.load_state_dict(state["model"])
    return model, cfg


def train(cfg: dict, index: DatasetIndex, out_dir,
          resume_state: dict | None = None) -> Path:
    """Run the optimization; returns the final checkpoint path.

    Writes ``checkpoint_final.pt``, periodic ``checkpoint_epoch{N}.pt`` and a
    JSONL metric log ``train_log.jsonl`` under *out_dir*.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records = [r for r in index.records if r.split is Split.TRAIN]
    if not train_records:
        raise ValueError("index has no train records")
    label_map = {ident: i for i, ident in enumerate(index.identities)}
    num_identities = len(label_map)

    spec = batch_spec_from_config(cfg)
    augment = augment_from_config(cfg)
    weights = loss_weights_from_config(cfg)

    if resume_state is None:
        model = build_model(cfg, num_identities)
        optimizer = build_optimizer(model, cfg)
        rng = np.random.default_rng(int(cfg["train.seed"]))
        start_epoch, step = 0, 0
    else:
        # model architecture comes from the checkpoint snapshot; training
        # hyperparameters come from the (possibly overridden) passed cfg
        model, _ = restore_model(resume_state)
        optimizer = build_optimizer(model, cfg)
        optimizer.load_state_dict(resume_state["optimizer"])
        rng = np.random.default_rng(0)
        rng.bit_generator.state = resume_state["numpy_rng"]
        torch.set_rng_state(resume_state["torch_rng"])
        start_epoch, step = int(resume_state["epoch"]), int(resume_state["step"])
        spec = batch_spec_from_config(cfg)
        augment = augment_from_config(cfg)
        weights = loss_weights_from_config(cfg)

    batch_total = 2 * spec.ids_per_batch * spec.images_per_id_per_modality
    steps_per_epoch = max(1, len(train_records) // batch_total)
    epochs = int(cfg["train.epochs"])
    checkpoint_every = int(cfg["train.checkpoint_every"])
    log_path = out_dir / "train_log.jsonl"

    model.train()
    with open(log_path, "a", encoding="utf-8") as log:
        for epoch in range(start_epoch, epochs):
            lr = _lr_at_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            for _ in range(steps_per_epoch):
                batch = sample_balanced_batch(index, spec, rng, augment)
                terms = compute_batch_losses(model, batch, cfg, label_map)
                try:
                    total, breakdown = losses.total_loss(terms, weights)
                except losses.DivergenceError as exc:
                    raise TrainingDiverged(f"step {step}: {exc}") from exc
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                step += 1
                entry = {"step": step, "epoch": epoch, "lr": lr,
                         "total": float(total.detach())}
                entry.update({k: round(v, 6) for k, v in breakdown.items()})
                log.write(json.dumps(entry) + "\n")
            if checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.pt",
                                model, optimizer, epoch + 1, step, cfg, rng,
                                num_identities)
        final = out_dir / "checkpoint_final.pt"
        save_checkpoint(final, model, optimizer, epochs, step, cfg, rng,
                        num_identities)
    return final


def resume(checkpoint_path, index: DatasetIndex, out_dir,
           overrides: dict | None = None) -> Path:
    """Continue training from a checkpoint; overrides update the stored config."""
    state = load_checkpoint(checkpoint_path)
    cfg = dict(DEFAULTS, **state["config"])
    cfg.update(overrides or {})
    return train(cfg, index, out_dir, resume_state=state)
