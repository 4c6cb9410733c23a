"""
Adversarial training: boundary patches feed the generator (Param-Net + Matte-Net),
non-shadow patches are the critic's reals. Each step updates the critic first, then
the generator, with separate optimizers.
"""

import os
import math
import time
import logging
from dataclasses import replace
from typing import Dict, Iterator, Optional

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from config.settings import TrainConfig
from models.checkpoint import CheckpointStore
from models.manifest import PatchManifest
from models.networks import NetworkBundle, d_net_forward
from services.losses import ShadowLosses
from services.patch_pipeline import PatchDataset, build_manifest
from utils.constants import ADAM_BETAS, ERROR_MESSAGES
from utils.error_handlers import ConfigurationError, TrainingStepError
from utils.monitoring import ApplicationMetrics, PerformanceMonitor, TrainingLog

LOSS_KEYS = ('l_mat', 'l_sm', 'l_bd', 'l_adv', 'l_total', 'd_loss')


def _cycle(loader: DataLoader) -> Iterator[Dict[str, torch.Tensor]]:
    """Endless batches; every pass over the loader reshuffles"""
    while True:
        for batch in loader:
            yield batch


class AdversarialTrainer:
    def __init__(self, bundle: NetworkBundle, config: TrainConfig, device: str = 'cpu'):
        self.bundle = bundle.to(device)
        self.config = config
        self.device = device
        self.weights = config.effective_weights
        self.epoch = 0
        self.step = 0

        self.gen_optimizer = torch.optim.Adam([
            {'params': bundle.param_net.parameters(), 'lr': config.lr_param},
            {'params': bundle.matte_net.parameters(), 'lr': config.lr_matte_d},
        ], betas=ADAM_BETAS)
        self.critic_optimizer = torch.optim.Adam(bundle.d_net.parameters(), lr=config.lr_matte_d,
                                                 betas=ADAM_BETAS)
        self._base_lrs = {
            'generator': [g['lr'] for g in self.gen_optimizer.param_groups],
            'critic': [g['lr'] for g in self.critic_optimizer.param_groups],
        }
        logging.info(f"Trainer ready: weights={self.weights}, ablations={config.ablations}, "
                     f"mode={config.adversarial_mode}, bounded={config.bounded}")

    @property
    def optimizers(self) -> Dict[str, torch.optim.Optimizer]:
        return {'generator': self.gen_optimizer, 'critic': self.critic_optimizer}

    def load_optimizer_state(self, states: Dict):
        for name, optimizer in self.optimizers.items():
            if name in states:
                optimizer.load_state_dict(states[name])

    def lr_factor(self, epoch: int) -> float:
        """1 until lr_decay_start, then linear to 0 at the final epoch"""
        start = self.config.lr_decay_start
        if start is None or epoch < start:
            return 1.0
        remaining = max(self.config.epochs - start, 1)
        return max(0.0, 1.0 - (epoch - start) / remaining)

    def _apply_lr_schedule(self, epoch: int):
        factor = self.lr_factor(epoch)
        for name, optimizer in self.optimizers.items():
            for group, base in zip(optimizer.param_groups, self._base_lrs[name]):
                group['lr'] = base * factor

    def _to_device(self, batch: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
        return {k: v.to(self.device) for k, v in batch.items()}

    def train_step(self, batch_b: Dict[str, torch.Tensor], batch_n: Dict[str, torch.Tensor]) -> Dict:
        """One critic update on (N reals, composed fakes) followed by one generator update"""
        batch_b = self._to_device(batch_b)
        reals = batch_n['patch'].to(self.device)
        patch, mask, regions = batch_b['patch'], batch_b['mask'], batch_b['regions']
        self.bundle.train()

        generated = self.bundle.generate(patch, mask)

        self.critic_optimizer.zero_grad()
        score_real = d_net_forward(self.bundle.d_net, reals)
        score_fake = d_net_forward(self.bundle.d_net, generated['output'].detach())
        d_loss = ShadowLosses.critic_loss(score_real, score_fake)
        if not torch.isfinite(d_loss):
            raise TrainingStepError(f"Non-finite d_loss at step {self.step}", component='d_loss', step=self.step)
        d_loss.backward()
        self.critic_optimizer.step()

        self.gen_optimizer.zero_grad()
        alpha, output = generated['alpha'], generated['output']
        parts = {
            'l_mat': ShadowLosses.matting_loss(alpha, regions),
            'l_sm': ShadowLosses.smoothness_loss(alpha),
            'l_bd': ShadowLosses.boundary_loss(output, regions),
            'l_adv': ShadowLosses.adversarial_loss_generator(
                d_net_forward(self.bundle.d_net, output), self.config.adversarial_mode),
        }
        total = ShadowLosses.total_generator_loss(parts, self.weights, step=self.step)
        total.backward()
        self.gen_optimizer.step()

        record = {'step': self.step, 'epoch': self.epoch, 'l_total': float(total.detach()),
                  'd_loss': float(d_loss.detach())}
        record.update({name: float(value.detach()) for name, value in parts.items()})
        self.step += 1
        return record

    def _loader(self, dataset: PatchDataset, seed_offset: int) -> DataLoader:
        generator = torch.Generator().manual_seed(self.config.seed + seed_offset)
        options = {}
        if self.config.workers > 0:
            # worker prefetch is the bounded queue between patch cutting and the optimizer
            options.update(num_workers=self.config.workers, prefetch_factor=2, persistent_workers=True)
        return DataLoader(dataset, batch_size=self.config.batch_size, shuffle=True,
                          drop_last=False, generator=generator, **options)

    def _checkpoint_config(self, manifest: PatchManifest) -> Dict:
        return {'train': self.config.to_dict(), 'stride': manifest.stride,
                'edge_policy': manifest.edge_policy}

    @PerformanceMonitor.monitor_stage('train')
    def train(self, manifest: PatchManifest, out_dir: str, final_name: str = 'checkpoint.pt',
              log_name: str = 'train_log.jsonl', keep_intermediate: bool = True,
              show_progress: bool = True) -> str:
        """Run epochs from self.epoch to config.epochs; returns the final checkpoint path"""
        boundary = PatchDataset(manifest, ('B',), radius=self.config.radius)
        nonshadow = PatchDataset(manifest, ('N',), radius=self.config.radius)
        if len(boundary) == 0 or len(nonshadow) == 0:
            raise ConfigurationError(f"{ERROR_MESSAGES['EMPTY_TRAINING_SET']} "
                                     f"(B={len(boundary)}, N={len(nonshadow)})")
        if manifest.patch_size != self.bundle.patch_size:
            raise ConfigurationError(f"Manifest patch size {manifest.patch_size} does not match "
                                     f"network patch size {self.bundle.patch_size}")

        os.makedirs(out_dir, exist_ok=True)
        b_loader = self._loader(boundary, 0)
        n_batches = _cycle(self._loader(nonshadow, 1))
        steps_per_epoch = math.ceil(len(boundary) / self.config.batch_size)
        logging.info(f"Training on {len(boundary)} B / {len(nonshadow)} N patches, "
                     f"{steps_per_epoch} steps per epoch, epochs {self.epoch}..{self.config.epochs}")

        final_path = os.path.join(out_dir, final_name)
        checkpoint_config = self._checkpoint_config(manifest)
        with TrainingLog(os.path.join(out_dir, log_name), append=self.step > 0) as training_log:
            for epoch in range(self.epoch, self.config.epochs):
                if self._budget_spent():
                    break
                self.epoch = epoch
                self._apply_lr_schedule(epoch)
                start_time = time.time()
                sums = {key: 0.0 for key in LOSS_KEYS}
                steps = 0
                for batch_b in tqdm(b_loader, desc=f'epoch {epoch + 1}/{self.config.epochs}',
                                    disable=not show_progress, leave=False):
                    batch_n = next(n_batches)
                    record = self.train_step(batch_b, batch_n)
                    training_log.write(record)
                    for key in LOSS_KEYS:
                        sums[key] += record[key]
                    steps += 1
                    if self._budget_spent():
                        break

                self.epoch = epoch + 1
                ApplicationMetrics.track_epoch(self.epoch, steps, {k: v / max(steps, 1) for k, v in sums.items()},
                                               time.time() - start_time)
                if keep_intermediate and self.epoch % self.config.checkpoint_every == 0:
                    CheckpointStore.save(os.path.join(out_dir, f'checkpoint_epoch_{self.epoch:04d}.pt'),
                                         self.bundle, checkpoint_config, self.epoch, self.step, self.optimizers)

        CheckpointStore.save(final_path, self.bundle, checkpoint_config, self.epoch, self.step, self.optimizers)
        return final_path

    def _budget_spent(self) -> bool:
        return self.config.max_steps is not None and self.step >= self.config.max_steps


def finetune_on_video(checkpoint: str, frames_dir: str, masks_dir: str, epochs: int = 1,
                      out_path: Optional[str] = None, stride: Optional[int] = None,
                      device: str = 'cpu', show_progress: bool = True) -> str:
    """Continue training on patches cut from one video's frames and masks"""
    if out_path is None:
        stem, _ = os.path.splitext(checkpoint)
        out_path = f'{stem}_finetuned.pt'
    if epochs < 0:
        raise ConfigurationError(f"epochs must be >= 0, got {epochs}")
    if epochs == 0:
        logging.info("Zero fine-tuning epochs; copying checkpoint unchanged")
        return CheckpointStore.copy(checkpoint, out_path)

    state = CheckpointStore.load(checkpoint)
    train_payload = state.config.get('train', {})
    config = replace(TrainConfig.from_dict(train_payload) if train_payload else TrainConfig(),
                     epochs=epochs, max_steps=None, lr_decay_start=None)
    manifest = build_manifest(frames_dir, masks_dir, state.bundle.patch_size,
                              stride or state.config.get('stride', max(state.bundle.patch_size // 4, 1)),
                              show_progress=show_progress)
    if manifest.counts['B'] == 0:
        raise ConfigurationError(f"No boundary patches found in {frames_dir}")

    trainer = AdversarialTrainer(state.bundle, config, device=device)
    trainer.load_optimizer_state(state.optimizers)
    stem = os.path.splitext(os.path.basename(out_path))[0]
    return trainer.train(manifest, os.path.dirname(os.path.abspath(out_path)),
                         final_name=os.path.basename(out_path), log_name=f'{stem}_log.jsonl',
                         keep_intermediate=False, show_progress=show_progress)
