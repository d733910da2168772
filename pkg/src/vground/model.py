"""The three-task grounded model.

A shared trainable embedding table and a single mapping matrix feed three
image-conditioned tasks: forward and backward next-word prediction and
image-sentence match discrimination. The mapping matrix encodes tokens
into the grounded space and its transpose (a storage view, never a copy)
decodes GRU states back toward the textual space, where the transposed
embedding table produces vocabulary logits.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from vground import corpus
from vground.corpus import CaptionBatch, EmbeddingTable, ImageFeatureStore
from vground.errors import ConfigError, DataError, NumericsError
from vground.numerics import tensor as T
from vground.numerics.nn import batch_norm, gru_cell_forward, masked_batch_norm
from vground.numerics.optim import nadam_step
from vground.numerics.params import (BatchNormState, GruParams, ParamStore,
                                     glorot_uniform)
from vground.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

LOSS_FW = "fw"
LOSS_BW = "bw"
LOSS_BIN = "bin"
_ALL_TERMS = (LOSS_FW, LOSS_BW, LOSS_BIN)


@dataclass
class TrainConfig:
    """Dimensions, optimization settings, and task selection."""

    d: int
    c: int
    p: int
    q: int | None = None  # projector hidden width; defaults to c
    batch_size: int = 256
    lr: float = 0.001
    epochs: int = 20
    patience: int = 5
    alpha: float = 0.001
    beta: float = 1.0
    seed: int = 0
    freeze_embeddings: bool = False
    loss_mask: tuple[str, ...] = _ALL_TERMS
    reg_enabled: bool = True

    def __post_init__(self):
        if self.q is None:
            self.q = self.c
        self.loss_mask = tuple(t for t in _ALL_TERMS if t in set(self.loss_mask))
        self.validate()

    def validate(self):
        if not self.loss_mask:
            raise ConfigError("loss_mask must enable at least one task")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        for dim in ("d", "c", "p", "q"):
            if getattr(self, dim) < 1:
                raise ConfigError(f"dimension {dim} must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def reverse_batch_tokens(ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Reverse each caption within its true length; padding stays trailing."""
    out = ids.copy()
    for row in range(ids.shape[0]):
        n = int(mask[row].sum())
        out[row, :n] = ids[row, :n][::-1]
    return out


class GroundedModel:
    """Parameters and loss graphs for the multi-task grounding network."""

    def __init__(self, embeddings: EmbeddingTable, config: TrainConfig):
        if embeddings.dim != config.d:
            raise ConfigError(f"embedding dim {embeddings.dim} does not match "
                              f"config d={config.d}")
        self.config = config
        self.vocab = embeddings.vocab
        dt = T.default_dtype()
        rng = np.random.default_rng(np.random.PCG64(config.seed))
        store = ParamStore()
        self.store = store

        self.T_e = store.register("T_e", embeddings.vectors.astype(dt),
                                  trainable=not config.freeze_embeddings)
        self.T_e_orig = embeddings.vectors.astype(dt).copy()
        self.T_e_orig.setflags(write=False)

        d, c, p, q = config.d, config.c, config.p, config.q
        self.M = store.register("M", glorot_uniform(rng, d, c))
        self.proj_W1 = store.register("proj.W1", glorot_uniform(rng, p, q))
        self.proj_b1 = store.register("proj.b1", np.zeros(q, dtype=dt))
        self.proj_W2 = store.register("proj.W2", glorot_uniform(rng, q, c))
        self.proj_b2 = store.register("proj.b2", np.zeros(c, dtype=dt))
        self.gru_f = GruParams.create(store, "gru_f", c, c, rng)
        self.gru_b = GruParams.create(store, "gru_b", c, c, rng)
        self.gru_m = GruParams.create(store, "gru_m", c, c, rng)
        self.bn_f = BatchNormState.create(store, "bn_f", c)
        self.bn_b = BatchNormState.create(store, "bn_b", c)
        self.bn_m = BatchNormState.create(store, "bn_m", c)
        self.head_w = store.register("head.w", glorot_uniform(rng, c, 1))
        self.head_b = store.register("head.b", np.zeros(1, dtype=dt))

    # ---- forward building blocks ----------------------------------------

    def _ground(self, ids: np.ndarray) -> Tensor:
        """Token ids -> grounded vectors, x = T_e[ids] @ M."""
        return T.take_rows(self.T_e, ids) @ self.M

    def _project(self, feats: np.ndarray) -> Tensor:
        x = Tensor(np.asarray(feats, dtype=self.T_e.data.dtype))
        hidden = T.tanh(x @ self.proj_W1 + self.proj_b1)
        return hidden @ self.proj_W2 + self.proj_b2

    def ground_words(self, token_ids) -> np.ndarray:
        """Grounded vectors for a sequence of vocab ids (no bias, no nonlinearity)."""
        ids = np.asarray(token_ids, dtype=np.int64)
        return self._ground(ids).data

    def project_image(self, feature: np.ndarray) -> np.ndarray:
        """Image feature vector(s) -> initial GRU hidden state(s)."""
        feature = np.asarray(feature)
        single = feature.ndim == 1
        out = self._project(feature[None] if single else feature).data
        return out[0] if single else out

    def _bn_step(self, h: Tensor, state: BatchNormState, active: np.ndarray,
                 training: bool, update_stats: bool) -> Tensor:
        if training:
            state.mode = "train"
            return masked_batch_norm(h, state, active, update_stats=update_stats)
        state.mode = "infer"
        return batch_norm(h, state)

    # ---- losses ----------------------------------------------------------

    def lm_loss(self, batch: CaptionBatch, direction: str = "forward",
                training: bool = True, update_stats: bool = True,
                trace: list | None = None) -> Tensor:
        """Image-conditioned next-word loss, masked mean over positions.

        Inputs are tokens 1..n-1 and targets are tokens 2..n of each
        caption (no BOS/EOS); the backward direction runs the same graph
        over mask-aware reversed captions with its own GRU and norm state.
        """
        if direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {direction!r}")
        ids, mask = batch.token_ids, batch.mask
        if direction == "backward":
            ids = reverse_batch_tokens(ids, mask)
            gru, bn = self.gru_b, self.bn_b
        else:
            gru, bn = self.gru_f, self.bn_f

        lengths = mask.sum(axis=1).astype(int)
        n_steps = int(lengths.max()) - 1
        if sum(max(n - 1, 0) for n in lengths) == 0:
            raise DataError("batch contains no prediction targets "
                            "(every caption has length <= 1)")
        h = self._project(batch.image_feats)
        loss_sum = None
        count = 0.0
        for t in range(n_steps):
            active = mask[:, t + 1]
            acol = active[:, None].astype(h.data.dtype)
            h_next = gru_cell_forward(self._ground(ids[:, t]), h, gru)
            h = h_next * acol + h * (1.0 - acol)
            o_t = self._bn_step(h, bn, active, training, update_stats)
            w_next = o_t @ self.M.T
            logits = w_next @ self.T_e.T
            part, n = T.softmax_cross_entropy_parts(logits, ids[:, t + 1], active)
            loss_sum = part if loss_sum is None else loss_sum + part
            count += n
            if trace is not None:
                trace.append({"o": o_t.data, "logits": logits.data,
                              "targets": ids[:, t + 1], "active": active})
        return loss_sum * (1.0 / count)

    def matcher_logits(self, batch: CaptionBatch, training: bool = True,
                       update_stats: bool = True) -> Tensor:
        """Final-state discrimination logits, one per caption."""
        ids, mask = batch.token_ids, batch.mask
        h = self._project(batch.image_feats)
        n_steps = int(mask.sum(axis=1).max())
        for t in range(n_steps):
            acol = mask[:, t][:, None].astype(h.data.dtype)
            h_next = gru_cell_forward(self._ground(ids[:, t]), h, self.gru_m)
            h = h_next * acol + h * (1.0 - acol)
        # h now holds the state at each caption's true last token
        if training:
            self.bn_m.mode = "train"
            o = batch_norm(h, self.bn_m, update_stats=update_stats)
        else:
            self.bn_m.mode = "infer"
            o = batch_norm(h, self.bn_m)
        return T.reshape(o @ self.head_w, (-1,)) + self.head_b

    def matcher_loss(self, batch: CaptionBatch, training: bool = True,
                     update_stats: bool = True) -> Tensor:
        logits = self.matcher_logits(batch, training, update_stats)
        return T.sigmoid_bce(logits, batch.match_label)

    def regularizer(self) -> Tensor:
        """(alpha/|V|) * sum over vocab of |beta - cos(original, current)|.

        Zero-norm rows (on either side) use cosine = 0 and carry no
        gradient.
        """
        cfg = self.config
        w_n = self.T_e
        w_e = self.T_e_orig
        sumsq = T.tsum(w_n * w_n, axis=1)
        norm_e = np.linalg.norm(w_e, axis=1)
        nz = ((sumsq.data > 0) & (norm_e > 0)).astype(w_e.dtype)
        # gated rows get a dummy sqrt(1) so no 0/0 appears in the backward pass
        norm_n = T.sqrt(sumsq + (1.0 - nz))
        denom_e = np.where(norm_e > 0, norm_e, 1.0).astype(w_e.dtype)
        dot = T.tsum(w_n * w_e, axis=1)
        cos = (dot / (norm_n * denom_e)) * nz
        dev = T.absolute(cfg.beta - cos)
        return T.tsum(dev) * (cfg.alpha / len(self.vocab))

    def total_loss(self, batch: CaptionBatch, training: bool = True,
                   update_stats: bool = True) -> tuple[Tensor, dict]:
        """Unweighted sum of the enabled task losses plus the regularizer.

        Returns the scalar graph and a per-term float breakdown with None
        for disabled terms.
        """
        cfg = self.config
        parts: dict[str, float | None] = {t: None for t in _ALL_TERMS}
        parts["reg"] = None
        total = None

        def accumulate(term, value):
            nonlocal total
            parts[term] = value.item()
            total = value if total is None else total + value

        if LOSS_FW in cfg.loss_mask:
            accumulate(LOSS_FW, self.lm_loss(batch, "forward", training, update_stats))
        if LOSS_BW in cfg.loss_mask:
            accumulate(LOSS_BW, self.lm_loss(batch, "backward", training, update_stats))
        if LOSS_BIN in cfg.loss_mask:
            accumulate(LOSS_BIN, self.matcher_loss(batch, training, update_stats))
        if cfg.reg_enabled:
            accumulate("reg", self.regularizer())
        return total, parts

    # ---- persistence -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.store.state_arrays())
        for prefix, bn in (("bn_f", self.bn_f), ("bn_b", self.bn_b),
                           ("bn_m", self.bn_m)):
            arrays[f"{prefix}.running_mean"] = bn.running_mean
            arrays[f"{prefix}.running_var"] = bn.running_var
        arrays["T_e_orig"] = self.T_e_orig
        return arrays

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        self.store.load_state_arrays(arrays)
        for prefix, bn in (("bn_f", self.bn_f), ("bn_b", self.bn_b),
                           ("bn_m", self.bn_m)):
            bn.running_mean = arrays[f"{prefix}.running_mean"].astype(
                bn.running_mean.dtype).copy()
            bn.running_var = arrays[f"{prefix}.running_var"].astype(
                bn.running_var.dtype).copy()

    def checkpoint_meta(self) -> dict:
        cfg = asdict(self.config)
        cfg["loss_mask"] = list(cfg["loss_mask"])
        return {"format": 1,
                "dims": {"d": self.config.d, "c": self.config.c,
                         "p": self.config.p, "q": self.config.q},
                "step": self.store.step,
                "mu_product": self.store.mu_product,
                "config": cfg,
                "vocab": list(self.vocab.words)}


@dataclass
class TrainResult:
    best_arrays: dict[str, np.ndarray]
    meta: dict
    log: list[dict] = field(default_factory=list)
    diverged: bool = False
    stopped_epoch: int = 0


def matcher_accuracy(model: GroundedModel, batches: list[CaptionBatch]) -> float:
    """Infer-mode discrimination accuracy: sigmoid(logit) > 0.5 vs label."""
    correct = 0
    total = 0
    for batch in batches:
        logits = model.matcher_logits(batch, training=False).data
        pred = (logits > 0).astype(np.float32)
        correct += int((pred == batch.match_label).sum())
        total += batch.size
    return correct / total if total else 0.0


def train(model: GroundedModel, train_records, val_records,
          feature_store: ImageFeatureStore) -> TrainResult:
    """Run the multi-task training loop with early stopping.

    Per epoch: seeded shuffle and mining (negatives only when the
    discrimination task is enabled), one NAdam step per batch, then a
    validation pass with infer-mode batch norm and an epoch-independent
    mining seed so validation losses stay comparable. The best-validation
    snapshot is kept; training stops after `patience` epochs without
    improvement (at least one) or at the epoch budget. A non-finite loss
    aborts with the last good snapshot.
    """
    cfg = model.config
    mining = LOSS_BIN in cfg.loss_mask
    val_batches = corpus.make_batches(val_records, feature_store, model.vocab,
                                      cfg.batch_size, mining, seed=cfg.seed)
    result = TrainResult(best_arrays=model.snapshot(), meta=model.checkpoint_meta())
    best_val = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        batches = corpus.make_batches(train_records, feature_store, model.vocab,
                                      cfg.batch_size, mining, seed=cfg.seed + epoch)
        sums = {t: 0.0 for t in (*_ALL_TERMS, "reg")}
        seen = {t: 0 for t in (*_ALL_TERMS, "reg")}
        total_sum = 0.0
        n_batches = 0
        try:
            for batch in batches:
                if batch.size < 2:
                    logger.warning("skipping trailing batch of size 1 "
                                   "(batch norm needs >= 2 rows)")
                    continue
                loss, parts = model.total_loss(batch, training=True)
                loss.backward()
                nadam_step(model.store, cfg.lr)
                for term, value in parts.items():
                    if value is not None:
                        sums[term] += value
                        seen[term] += 1
                total_sum += loss.item()
                n_batches += 1
            if n_batches == 0:
                raise DataError("no usable training batches (need size >= 2)")
            val_total = 0.0
            n_val = 0
            for batch in val_batches:
                if batch.size < 2:
                    continue
                loss, _ = model.total_loss(batch, training=False,
                                           update_stats=False)
                val_total += loss.item()
                n_val += 1
            if n_val == 0:
                raise DataError("no usable validation batches (need size >= 2)")
            val_total /= n_val
        except NumericsError as e:
            logger.error("aborting at epoch %d: %s", epoch, e)
            result.diverged = True
            result.stopped_epoch = epoch
            break

        record = {"epoch": epoch,
                  "L_FW": sums["fw"] / seen["fw"] if seen["fw"] else None,
                  "L_BW": sums["bw"] / seen["bw"] if seen["bw"] else None,
                  "L_B": sums["bin"] / seen["bin"] if seen["bin"] else None,
                  "R": sums["reg"] / seen["reg"] if seen["reg"] else None,
                  "total": total_sum / n_batches,
                  "val_total": val_total,
                  "improved": bool(val_total < best_val)}
        result.log.append(record)
        result.stopped_epoch = epoch
        if val_total < best_val:
            best_val = val_total
            result.best_arrays = model.snapshot()
            result.meta = model.checkpoint_meta()
            stale = 0
        else:
            stale += 1
            if stale >= max(1, cfg.patience):
                break
    return result
