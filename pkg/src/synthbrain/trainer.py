"""Training loops for the segmenters, the denoiser, and the quality regressor.

Determinism contract: step i draws all of its randomness from a Philox
stream keyed (seed, i), so a run resumed from a checkpoint reproduces the
uninterrupted loss trajectory bitwise. Segmenters train on synthetic images
only; the denoiser and regressor corrupt (real or stand-in) images with
widened priors and keep every upstream network frozen.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError
from .nn.adam import AdamState, DEFAULT_LR, adam_step
from .nn.losses import soft_dice_loss, sum_squares_loss
from .nn.network import Network
from .nn.weights_io import load_weights, save_weights
from .pipeline import run_stage, _qc_onehot
from .rng import RngStream
from .schema import QC_REGIONS, one_hot, to_coarse
from .stats import hard_dice_sets, dice_table
from .synthgen import GenPriors, degrade_real, generate_pair, widen_priors

SEGMENTER_ROLES = ("s1", "s2", "s3")

# rng sub-stream tags within one training step (0 is the parent itself)
_DRAW_PAIR = 1
_DRAW_CORRUPT = 2


@dataclass
class TrainConfig:
    steps: int
    lr: float = DEFAULT_LR
    seed: int = 0
    checkpoint_every: int = 0     # 0 disables periodic checkpoints
    validation_every: int = 0
    priors: GenPriors = field(default_factory=GenPriors)
    widening_factor: float = 2.0  # denoiser/regressor corruption strength
    fixed_pairs: bool = False     # pre-generate one pair per label map

    def __post_init__(self):
        if self.steps <= 0:
            raise ValidationError("steps must be positive")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.widening_factor < 1:
            raise ValidationError("widening_factor must be >= 1")

    def to_dict(self):
        doc = {"steps": self.steps, "lr": self.lr, "seed": self.seed,
               "checkpoint_every": self.checkpoint_every,
               "validation_every": self.validation_every,
               "priors": self.priors.to_dict(),
               "widening_factor": self.widening_factor,
               "fixed_pairs": self.fixed_pairs}
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "priors" in doc:
            doc["priors"] = GenPriors.from_dict(doc["priors"])
        return cls(**doc)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)


# -- checkpoints --------------------------------------------------------------

def checkpoint_save(net: Network, opt: AdamState, step: int, prefix):
    save_weights(net.state(), prefix + "_model")
    blob = {f"m.{k}": v for k, v in opt.m.items()}
    blob.update({f"v.{k}": v for k, v in opt.v.items()})
    save_weights(blob, prefix + "_opt")
    with open(prefix + "_meta.json", "w") as f:
        json.dump({"step": step, "adam_t": opt.t}, f)


def checkpoint_load(net: Network, prefix):
    """Restore weights + optimizer state in place; returns the step count."""
    net.set_params(load_weights(prefix + "_model",
                                expected_names=list(net.state())))
    blob = load_weights(prefix + "_opt")
    opt = AdamState(net.params())
    for key in opt.m:
        opt.m[key] = blob[f"m.{key}"]
        opt.v[key] = blob[f"v.{key}"]
    with open(prefix + "_meta.json") as f:
        meta = json.load(f)
    opt.t = meta["adam_t"]
    return opt, meta["step"]


class _StepLog:
    """Line-delimited JSON training log: one record per step."""

    def __init__(self, path):
        self.path = path
        self.f = open(path, "a") if path else None

    def write(self, step, loss):
        if self.f:
            rec = {"step": step, "loss": float(loss),
                   "wall_time": time.time()}
            self.f.write(json.dumps(rec) + "\n")
            self.f.flush()

    def close(self):
        if self.f:
            self.f.close()


def _audit_write(out_dir, role, data_source, steps):
    if out_dir is None:
        return
    path = os.path.join(out_dir, f"{role}_data_audit.json")
    with open(path, "w") as f:
        json.dump({"role": role, "data_source": data_source,
                   "real_images_touched": 0 if data_source == "synthetic"
                   else None, "steps": steps}, f, indent=1)


def _check_loss(loss, step, role):
    if not np.isfinite(loss):
        raise ValidationError(
            f"non-finite loss {loss!r} at step {step} training {role}")


def _train_loop(net, config, step_fn, role, out_dir=None, start_step=0,
                opt=None, log_path=None):
    """Shared descent loop: step_fn(step, rng) -> (loss value)."""
    if opt is None:
        opt = AdamState(net.params())
    log = _StepLog(log_path)
    history = []
    try:
        for step in range(start_step, config.steps):
            rng = RngStream(config.seed, stream=step)
            loss = step_fn(step, rng)
            _check_loss(loss, step, role)
            params = net.params()
            adam_step(params, net.grads(), opt, lr=config.lr)
            net.set_params(params)
            history.append(float(loss))
            log.write(step, loss)
            if (config.checkpoint_every and out_dir
                    and (step + 1) % config.checkpoint_every == 0):
                checkpoint_save(net, opt, step + 1,
                                os.path.join(out_dir, f"{role}_ckpt"))
    finally:
        log.close()
    return history, opt


# -- target construction -------------------------------------------------

def coarse_target(labels, schema):
    """[5, X, Y, Z] one-hot of the coarse tissue classes."""
    coarse = to_coarse(labels, schema)
    return one_hot(coarse, list(range(5)))


def fine_target(labels, schema):
    return one_hot(labels, schema.fine_ids)


def parcel_target(labels, schema):
    """[69, X, Y, Z]: non-cortex channel followed by the 68 parcels."""
    parcel_ids = set(schema.parcel_ids)
    arr = labels.labels
    oh = np.zeros((len(schema.parcel_ids) + 1,) + arr.shape,
                  dtype=np.float32)
    oh[0] = ~np.isin(arr, list(parcel_ids))
    for i, pid in enumerate(schema.parcel_ids):
        oh[i + 1] = arr == pid
    return oh


def corrupt_prior(coarse_onehot, rng):
    """Emulate a denoiser-style coarse prior from the ground truth.

    Smooths the one-hot channels with a random sigma ~ U(0, 2) voxels and,
    with probability 0.2, drops one foreground class entirely; channels are
    renormalized to a soft probability map afterwards.
    """
    soft = coarse_onehot.astype(np.float32, copy=True)
    sigma = float(rng.uniform(0.0, 2.0))
    if sigma > 1e-3:
        for c in range(soft.shape[0]):
            soft[c] = gaussian_filter(soft[c], sigma, mode="nearest")
    if rng.uniform() < 0.2:
        drop = int(rng.integers(1, soft.shape[0]))
        soft[drop] = 0.0
    total = soft.sum(axis=0, keepdims=True)
    np.maximum(total, 1e-6, out=total)
    return soft / total


def _labels_for_role(role, labels, schema):
    if role == "s1":
        return coarse_target(labels, schema)
    if role == "s2":
        return fine_target(labels, schema)
    return parcel_target(labels, schema)


def _inputs_for_role(role, image, labels, schema, rng):
    img = image.data[np.newaxis]
    if role == "s1":
        return img
    if role == "s2":
        prior = corrupt_prior(coarse_target(labels, schema),
                              rng.child(_DRAW_CORRUPT))
        return np.concatenate([img, prior], axis=0)
    cortex = np.isin(labels.labels, list(schema.parcel_ids)
                     + list(schema.cortex_ids()))
    return np.concatenate([img, cortex[np.newaxis].astype(np.float32)],
                          axis=0)


def make_fixed_pairs(labelmaps, config):
    """The (image, labels) pairs a fixed_pairs training run sees: one pair
    per label map, drawn from per-map streams under the config seed."""
    pairs = []
    for i, lab in enumerate(labelmaps):
        rng = RngStream(config.seed, stream=i).child(_DRAW_PAIR)
        img, dlab, _ = generate_pair([lab], config.priors, rng)
        pairs.append((img, dlab))
    return pairs


def train_segmenter(net: Network, role, labelmaps, schema, config,
                    out_dir=None, log_path=None, resume=None):
    """Train s1, s2 or s3 on synthetic pairs generated from label maps.

    Returns (loss history, final AdamState). The data source is synthetic
    by construction; an audit record saying so lands next to the
    checkpoints when out_dir is given.
    """
    if role not in SEGMENTER_ROLES:
        raise ValidationError(f"unknown segmenter role {role!r}")
    if not labelmaps:
        raise ValidationError("empty label map corpus")

    fixed = make_fixed_pairs(labelmaps, config) if config.fixed_pairs \
        else None

    def step_fn(step, rng):
        if fixed is not None:
            image, dlab = fixed[step % len(fixed)]
        else:
            lab = labelmaps[step % len(labelmaps)]
            image, dlab, _ = generate_pair([lab], config.priors,
                                           rng.child(_DRAW_PAIR))
        x = _inputs_for_role(role, image, dlab, schema, rng)
        target = _labels_for_role(role, dlab, schema)
        pred = net.forward(x, mode="train")
        loss, grad = soft_dice_loss(pred, target)
        net.backward(grad)
        return loss

    opt, start = (resume if resume else (None, 0))
    history, opt = _train_loop(net, config, step_fn, role, out_dir=out_dir,
                               start_step=start, opt=opt, log_path=log_path)
    _audit_write(out_dir, role, "synthetic", config.steps)
    return history, opt


def train_denoiser(net: Network, s1_frozen: Network, corpus, schema, config,
                   out_dir=None, log_path=None, resume=None):
    """Train the denoiser to map the frozen s1's softmax on degraded images
    back to the (identically deformed) ground-truth coarse segmentation.

    corpus: list of (IntensityVolume, LabelVolume) pairs.
    """
    if not corpus:
        raise ValidationError("empty training corpus")
    wide = widen_priors(config.priors, config.widening_factor)

    def step_fn(step, rng):
        image, labels = corpus[step % len(corpus)]
        degraded, deformation, _ = degrade_real(image, wide,
                                                rng.child(_DRAW_PAIR))
        dlab = deformation.apply_to_labels(labels)
        coarse_soft = s1_frozen.forward(degraded.data[np.newaxis],
                                        mode="infer")
        target = coarse_target(dlab, schema)
        pred = net.forward(coarse_soft, mode="train")
        loss, grad = soft_dice_loss(pred, target)
        net.backward(grad)
        return loss

    opt, start = (resume if resume else (None, 0))
    history, opt = _train_loop(net, config, step_fn, "d", out_dir=out_dir,
                               start_step=start, opt=opt, log_path=log_path)
    _audit_write(out_dir, "d", "degraded-corpus", config.steps)
    return history, opt


def region_dice_targets(pred_labels, true_labels, schema):
    """Per-QC-region hard Dice between two fine label arrays (10 values)."""
    out = np.empty(len(QC_REGIONS), dtype=np.float32)
    for i, region in enumerate(QC_REGIONS):
        ids = list(schema.qc_region_ids(region))
        out[i] = hard_dice_sets(np.isin(pred_labels, ids),
                                np.isin(true_labels, ids))
    return out


def train_regressor(net: Network, frozen, corpus, schema, config,
                    out_dir=None, log_path=None, resume=None):
    """Train the QC regressor against true per-region Dice scores.

    frozen: dict with trained, frozen "s1", "d" and "s2" networks. Each
    step degrades a corpus image, runs the frozen cascade, and regresses
    the region-grouped one-hot of the s2 argmax onto the measured Dice.
    """
    for stage in ("s1", "d", "s2"):
        if stage not in frozen:
            raise ValidationError(f"regressor training needs a frozen "
                                  f"{stage} network")
    if not corpus:
        raise ValidationError("empty training corpus")
    wide = widen_priors(config.priors, config.widening_factor)
    fine_ids = np.asarray(schema.fine_ids, dtype=np.uint32)

    def step_fn(step, rng):
        image, labels = corpus[step % len(corpus)]
        degraded, deformation, _ = degrade_real(image, wide,
                                                rng.child(_DRAW_PAIR))
        dlab = deformation.apply_to_labels(labels)
        img = degraded.data[np.newaxis]
        coarse = frozen["s1"].forward(img, mode="infer")
        den = frozen["d"].forward(coarse, mode="infer")
        fine = frozen["s2"].forward(np.concatenate([img, den], axis=0),
                                    mode="infer")
        pred_labels = fine_ids[np.argmax(fine, axis=0)]
        target = region_dice_targets(pred_labels, dlab.labels, schema)
        x = _qc_onehot(pred_labels, schema)
        pred = net.forward(x, mode="train")
        loss, grad = sum_squares_loss(pred, target)
        net.backward(grad)
        return loss

    opt, start = (resume if resume else (None, 0))
    history, opt = _train_loop(net, config, step_fn, "r", out_dir=out_dir,
                               start_step=start, opt=opt, log_path=log_path)
    _audit_write(out_dir, "r", "degraded-corpus", config.steps)
    return history, opt


def evaluate(predict_fn, eval_pairs, label_ids):
    """Per-label and macro hard Dice over (input, LabelVolume truth) pairs.

    predict_fn maps the pair's first element to a LabelVolume prediction.
    Returns {"per_label": {id: mean dice}, "macro": mean over labels}.
    """
    if not eval_pairs:
        raise ValidationError("empty evaluation set")
    per_label = {lid: [] for lid in label_ids}
    for x, truth in eval_pairs:
        table, _ = dice_table(predict_fn(x), truth, label_ids)
        for lid in label_ids:
            per_label[lid].append(table[lid])
    means = {lid: float(np.mean(v)) for lid, v in per_label.items()}
    return {"per_label": means,
            "macro": float(np.mean(list(means.values())))}
