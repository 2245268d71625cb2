"""
Training loop

Per step: decouple both modalities, build the x-semantic components from the
sparsified correlation weights, evaluate the regularizers, back-propagate and
apply one AdamW update. Every random draw derives from the run seed and the
step (or epoch) number, so a resumed run replays the same trajectory.
"""

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from cddsalign.alignment.cache import CorrelationCache
from cddsalign.alignment.correlation import gated_weights
from cddsalign.alignment.transport import build_x_semantic
from cddsalign.config.models import Ablation, TrainConfig
from cddsalign.core.errors import ConfigError, NumericError, TrainingAborted
from cddsalign.data.batch import EmbeddingBatch
from cddsalign.model.cdds import AlignmentModel
from cddsalign.model.checkpoint import Checkpoint
from cddsalign.model.decoupler import DecoupledSet
from cddsalign.objectives.losses import (
    LossBreakdown, loss_integrity, loss_matching, loss_modal, loss_semantic, loss_x_integrity, total_loss,
)
from cddsalign.tensor import ops
from cddsalign.tensor.tape import Tape, no_record
from cddsalign.tensor.tensor import Tensor
from cddsalign.training.optimizer import AdamW

logger = logging.getLogger(__name__)

LOSS_FIELDS = ("l_s", "l_m", "l_f", "l_x")


def uses_matching_term(config: TrainConfig) -> bool:
    """The optional matching term joins the total only with alpha_c > 0 and sampling on"""
    return config.losses.alpha_c > 0 and not config.has(Ablation.SAM)


def metric_fields(config: TrainConfig) -> Tuple[str, ...]:
    """Columns of metrics.csv for a run"""
    extra = ("l_c",) if uses_matching_term(config) else ()
    return ("step", *LOSS_FIELDS, *extra, "total", "wall_ms")


@dataclass
class StepResult:
    """
    Attributes:
        step: 1-based step index
        breakdown: Loss terms of the step
        intermediates: Detached tensors of the step (components, x-semantics, S)
    """
    step: int
    breakdown: LossBreakdown
    intermediates: Dict[str, np.ndarray] = field(default_factory=dict)

    def metrics(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"step": self.step}
        row.update(self.breakdown.values())
        return row


def decouple_batch(model: AlignmentModel, config: TrainConfig, images: np.ndarray, texts: np.ndarray,
                   rng: np.random.Generator, noise_std: Optional[float] = None
                   ) -> Tuple[DecoupledSet, DecoupledSet]:
    """
    Decoupled image and text components, or the raw embeddings when decoupling is ablated.
    noise_std overrides the configured perturbation; it is always 0 with Gau ablated.
    """
    v, t = Tensor(images), Tensor(texts)
    if config.has(Ablation.DEC):
        return DecoupledSet(v, v), DecoupledSet(t, t)
    if config.has(Ablation.GAU):
        noise_std = 0.0
    return model.image.decouple(v, rng, noise_std), model.text.decouple(t, rng, noise_std)


class Trainer:
    """
    Usage:
        trainer = Trainer(config, train_batch)
        history = trainer.train()
        checkpoint = trainer.to_checkpoint()
    """

    def __init__(self, config: TrainConfig, data: EmbeddingBatch):
        data.validate()
        if data.d != config.decoupler.d:
            raise ConfigError(f"data feature size {data.d} != model feature size {config.decoupler.d}")
        self.n_batches = data.n_images // config.batch_size
        if self.n_batches < 1:
            raise ConfigError(
                f"batch_size {config.batch_size} exceeds the number of training images {data.n_images}"
            )
        self.config = config
        self.data = data
        self.model = AlignmentModel(config)
        self.optimizer_params = self.model.trainable_parameters(config)
        self.optimizer = AdamW(self.optimizer_params, lr=config.learning_rate, betas=config.betas,
                               eps=config.eps, weight_decay=config.weight_decay)
        self.cache = CorrelationCache(config.correlation_mode, config.n_bins, config.seed,
                                      config.refresh_fraction)
        self.step = 0
        self.history: List[Dict[str, Any]] = []
        frozen = self.model.frozen_groups(config)
        if frozen:
            logger.info(f"Ablations {[a.value for a in config.ablations]} freeze {frozen}")

    # ------------------------------------------------------------------
    # batching
    # ------------------------------------------------------------------

    def epoch_batches(self, epoch: int) -> List[np.ndarray]:
        """Image ids of every full batch of an epoch; the partial remainder is dropped"""
        order = np.random.default_rng([self.config.seed, epoch]).permutation(self.data.n_images)
        size = self.config.batch_size
        return [order[b * size:(b + 1) * size] for b in range(self.n_batches)]

    def batch_for_step(self, step: int) -> EmbeddingBatch:
        epoch, index = divmod(step - 1, self.n_batches)
        return self.data.subset(self.epoch_batches(epoch)[index].tolist())

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def prepare_correlation(self) -> None:
        """Full-dataset correlation pass with the current model (all mode)"""
        if not self.cache.needs_dataset_pass or self.config.has(Ablation.SAM):
            return
        rng = np.random.default_rng([self.config.seed, 4])
        with no_record():
            v_set, t_set = decouple_batch(self.model, self.config, self.data.images, self.data.texts, rng,
                                          noise_std=0.0)
        d = self.config.decoupler.d
        self.cache.prepare(v_set.semantic.data.reshape(-1, d), t_set.semantic.data.reshape(-1, d))

    def _forward(self, batch: EmbeddingBatch, step: int, cache: CorrelationCache) -> StepResult:
        config = self.config
        d = config.decoupler.d
        rng = np.random.default_rng([config.seed, 1, step])
        v_set, t_set = decouple_batch(self.model, config, batch.images, batch.texts, rng)

        v_s = ops.reshape(v_set.semantic, (-1, d))
        t_s = ops.reshape(t_set.semantic, (-1, d))
        v_m = ops.reshape(v_set.modal, (-1, d))
        t_m = ops.reshape(t_set.modal, (-1, d))
        intermediates: Dict[str, np.ndarray] = {
            "image_semantic": v_s.numpy(), "text_semantic": t_s.numpy(),
            "image_modal": v_m.numpy(), "text_modal": t_m.numpy(),
        }

        if config.has(Ablation.SAM):
            v_x, t_x = v_s, t_s
            l_s = loss_matching(v_set.semantic, t_set.semantic, batch.pairs, config.matching_temperature)
        else:
            s = cache.matrix(v_s.data, t_s.data)
            sparsity = self.model.sparsity
            w_v = gated_weights(s, sparsity.alpha_v, "row", config.gate_temperature)
            w_t = gated_weights(s, sparsity.alpha_t, "column", config.gate_temperature)
            v_x = build_x_semantic(v_s, t_s, w_v)
            t_x = build_x_semantic(t_s, v_s, ops.transpose(w_t))
            negatives_rng = np.random.default_rng([config.seed, 3, step])
            l_s = loss_semantic(v_x, v_s, t_x, t_s, config.semantic_loss, config.max_negatives, negatives_rng)
            intermediates["s"] = np.array(s)
        intermediates["image_x_semantic"] = v_x.numpy()
        intermediates["text_x_semantic"] = t_x.numpy()

        l_m = loss_modal(v_m, t_m, config.modal_loss)
        if config.has(Ablation.INT):
            l_f = l_x = Tensor(0.0)
        else:
            weights = self.model.weights
            v_rows = Tensor(batch.images.reshape(-1, d))
            t_rows = Tensor(batch.texts.reshape(-1, d))
            l_f = loss_integrity(v_m, v_s, v_rows, t_m, t_s, t_rows, weights.w_m, weights.w_s)
            l_x = loss_x_integrity(v_m, v_x, v_rows, t_m, t_x, t_rows, weights.w_m, weights.w_x)

        alphas = config.losses
        l_c = None
        if uses_matching_term(config):
            l_c = loss_matching(v_set.semantic, t_set.semantic, batch.pairs, config.matching_temperature)
        if config.has(Ablation.MOD):
            alphas = alphas.replace(alpha_m=0.0)
        return StepResult(step, total_loss(l_s, l_m, l_f, l_x, alphas, l_c), intermediates)

    def forward_losses(self, step: Optional[int] = None) -> StepResult:
        """Evaluate a step without recording, updating the model or touching the live cache"""
        step = self.step + 1 if step is None else step
        self.prepare_correlation()
        cache = copy.deepcopy(self.cache)
        cache.begin_epoch((step - 1) // self.n_batches, self.config.decoupler.d)
        with no_record():
            return self._forward(self.batch_for_step(step), step, cache)

    # ------------------------------------------------------------------
    # update
    # ------------------------------------------------------------------

    def train_step(self) -> StepResult:
        step = self.step + 1
        batch = self.batch_for_step(step)
        started = time.perf_counter()
        self.model.zero_grad()
        try:
            with Tape() as tape:
                tape.watch(*self.optimizer_params.values())
                result = self._forward(batch, step, self.cache)
            total = result.breakdown.total
            if total.tape is tape:
                tape.backward(total)
            else:
                logger.warning(f"Step {step}: loss does not depend on any trainable parameter")
        except NumericError as e:
            raise TrainingAborted(step, e.op_name, str(e)) from e

        for name, p in self.optimizer_params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingAborted(step, "backward", f"non-finite gradient for {name}")
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.step = step

        wall_ms = (time.perf_counter() - started) * 1000.0
        self.history.append(dict(result.metrics(), wall_ms=wall_ms))
        logger.debug(f"Step {step}: total={result.breakdown.total.item():.6f} ({wall_ms:.1f} ms)")
        return result

    def train(self) -> List[Dict[str, Any]]:
        """Run (or continue) training to the configured number of epochs"""
        self.prepare_correlation()
        d = self.config.decoupler.d
        total_steps = self.config.epochs * self.n_batches
        while self.step < total_steps:
            epoch = self.step // self.n_batches
            self.cache.begin_epoch(epoch, d)
            result = self.train_step()
            if self.step % self.n_batches == 0:
                terms = " ".join(f"{name}={value:.4f}" for name, value in result.breakdown.values().items())
                logger.info(f"Epoch {epoch + 1}/{self.config.epochs}: {terms}")
        return self.history

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.config,
            step=self.step,
            params=self.model.state_dict(),
            first_moments=self.optimizer.first_moments(),
            second_moments=self.optimizer.second_moments(),
            correlation=self.cache.s,
            correlation_state=dict(self.cache.state(), optimizer_t=self.optimizer.t),
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, data: EmbeddingBatch) -> "Trainer":
        trainer = cls(checkpoint.config, data)
        trainer.model.load_state_dict(checkpoint.params)
        state = checkpoint.correlation_state
        trainer.optimizer.load_moments(checkpoint.first_moments, checkpoint.second_moments,
                                       int(state.get("optimizer_t", checkpoint.step)))
        trainer.cache.restore(checkpoint.correlation, state)
        trainer.step = checkpoint.step
        logger.info(f"Resumed from step {checkpoint.step}")
        return trainer


def train(data: EmbeddingBatch, config: TrainConfig) -> Tuple[Checkpoint, List[Dict[str, Any]]]:
    """Train from scratch and return the final checkpoint and per-step metrics"""
    trainer = Trainer(config, data)
    history = trainer.train()
    return trainer.to_checkpoint(), history
