"""
Alternating hinge-GAN training with checkpoints, validation and exact resume.

Each iteration draws its batch from an RNG keyed on (seed, iteration), so a run
resumed from a checkpoint follows the same trajectory as an uninterrupted one.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from services.exceptions import TrainingError
from services.gan.losses import d_loss, g_loss
from services.gan.models import Discriminator, Generator
from services.gan.sampling import PatchPair, sample_batch, sample_patch_pairs, stack_pairs
from services.metrics_service import patch_metrics
from services.neural.checkpoint import (
    load_checkpoint,
    load_model_state,
    meta_tensors,
    model_state,
    read_meta,
    save_checkpoint,
)
from services.neural.optim import AdamConfig, adam_step
from services.schemas.gan_schemas import TrainConfig
from utils.volume import Volume

logger = logging.getLogger(__name__)

LOG_COLUMNS = ['iteration', 'd_loss', 'g_loss_adv', 'g_loss_l1', 'val_psnr', 'val_ssim', 'val_perc']
LAST_CHECKPOINT = 'last.ctw'
BEST_CHECKPOINT = 'best.ctw'
TRAIN_LOG = 'train_log.csv'

VolumePair = Tuple[Volume, Volume]


@dataclass
class TrainingData:
    """[0,1]-scaled (low, reference) volume pairs"""
    train: List[VolumePair]
    val: List[VolumePair] = field(default_factory=list)


@dataclass
class TrainState:
    iteration: int = 0
    step_g: int = 0
    step_d: int = 0
    best_val_perc: float = math.inf
    rows: List[dict] = field(default_factory=list)


def _adam(cfg: TrainConfig, lr: float) -> AdamConfig:
    return AdamConfig(lr=lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)


def validation_pairs(data: TrainingData, cfg: TrainConfig) -> List[PatchPair]:
    """Fixed validation patches drawn once from the validation (or training) volumes"""
    volumes = data.val or data.train
    rng = np.random.default_rng([cfg.seed, 0x5A1])
    pairs = []
    for k in range(cfg.val_patches):
        low, ref = volumes[k % len(volumes)]
        pairs.extend(sample_patch_pairs(low, ref, cfg, int(rng.integers(2 ** 63)), 1))
    return pairs


def _checkpoint_tensors(generator, discriminator, state: TrainState, cfg: TrainConfig) -> Dict[str, np.ndarray]:
    tensors = model_state('G', generator)
    if discriminator is not None:
        tensors.update(model_state('D', discriminator))
    tensors.update(meta_tensors({
        'iteration': state.iteration,
        'step_g': state.step_g,
        'step_d': state.step_d,
        'alpha_adv': cfg.alpha_adv,
        'alpha_l1': cfg.alpha_l1,
        'baseline': float(cfg.is_baseline),
        'best_val_perc': state.best_val_perc if math.isfinite(state.best_val_perc) else -1.0,
    }))
    return tensors


def write_checkpoint(path: Path, generator, discriminator, state: TrainState, cfg: TrainConfig) -> Path:
    """CTW1 weights plus a JSON sidecar recording the configuration"""
    save_checkpoint(path, _checkpoint_tensors(generator, discriminator, state, cfg))
    sidecar = {
        'iteration': state.iteration,
        'baseline_cnn': cfg.is_baseline,
        'alpha_adv': cfg.alpha_adv,
        'alpha_l1': cfg.alpha_l1,
        'generator': generator.cfg.model_dump(),
        'discriminator': discriminator.cfg.model_dump() if discriminator is not None else None,
        'train': cfg.model_dump(),
    }
    path.with_suffix('.json').write_text(json.dumps(sidecar, indent=2))
    return path


def restore(path: Path, generator, discriminator, cfg: TrainConfig) -> TrainState:
    tensors = load_checkpoint(path)
    load_model_state('G', generator, tensors)
    if discriminator is not None and not cfg.is_baseline:
        load_model_state('D', discriminator, tensors)
    meta = read_meta(tensors)
    best = meta.get('best_val_perc', -1.0)
    return TrainState(
        iteration=int(meta['iteration']),
        step_g=int(meta['step_g']),
        step_d=int(meta['step_d']),
        best_val_perc=best if best >= 0 else math.inf,
    )


def _write_log(path: Path, rows: List[dict]) -> None:
    pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(path, index=False)


def _read_log(path: Path, up_to: int) -> List[dict]:
    if not path.exists():
        return []
    frame = pd.read_csv(path)
    frame = frame[frame['iteration'] <= up_to]
    return frame.astype(object).where(frame.notna(), None).to_dict('records')


def _check_finite(values: Dict[str, float], iteration: int, last_checkpoint: Optional[str]) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {name}={value}", iteration=iteration, last_checkpoint=last_checkpoint)


def train(
    generator: Generator,
    discriminator: Optional[Discriminator],
    data: TrainingData,
    cfg: TrainConfig,
    out_dir,
    callbacks: Sequence[Callable[[dict], None]] = (),
    resume: bool = True,
) -> dict:
    """
    Train a generator (and, unless alpha_adv is 0, a discriminator).

    Per iteration: one discriminator step on real and generated patches with a
    fresh power iteration, then `d_g_ratio` generator steps.

    Args:
        generator: Model to train
        discriminator: Critic; unused for the L1-only baseline
        data: Training and validation volume pairs in [0,1]
        cfg: Hyperparameters; cfg.iterations is the total iteration count
        out_dir: Directory for checkpoints and the CSV log
        callbacks: Called with every log row
        resume: Continue from out_dir/last.ctw when present

    Returns:
        Result dict with success, iterations, checkpoint paths and best validation distance

    Raises:
        TrainingError: On a non-finite loss or gradient (carries iteration and last checkpoint)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path = out_dir / LAST_CHECKPOINT
    log_path = out_dir / TRAIN_LOG
    use_critic = not cfg.is_baseline and discriminator is not None

    state = TrainState()
    last_checkpoint: Optional[str] = None
    if resume and last_path.exists():
        state = restore(last_path, generator, discriminator, cfg)
        state.rows = _read_log(log_path, state.iteration)
        last_checkpoint = str(last_path)
        logger.info(f"Resuming from {last_path} at iteration {state.iteration}")

    val_pairs = validation_pairs(data, cfg)
    val_x, val_y = stack_pairs(val_pairs)
    adam_g = _adam(cfg, cfg.lr_g)
    adam_d = _adam(cfg, cfg.lr_d)

    def save(path: Path) -> None:
        nonlocal last_checkpoint
        write_checkpoint(path, generator, discriminator if use_critic else None, state, cfg)
        last_checkpoint = str(path)

    progress = tqdm(range(state.iteration, cfg.iterations), desc='train', leave=False, disable=None)
    for it in progress:
        rng = np.random.default_rng([cfg.seed, it])
        x, y = stack_pairs(sample_batch(data.train, cfg, rng, cfg.batch_size))
        batch = x.shape[0]

        try:
            loss_d = math.nan
            if use_critic:
                discriminator.refresh_spectral(discriminator.cfg.power_iterations)
                fake = generator.forward(x)
                scores = discriminator.forward(np.concatenate([y, fake]))
                terms_d = d_loss(scores[:batch], scores[batch:])
                discriminator.backward(np.concatenate([terms_d.d_real, terms_d.d_fake]))
                state.step_d += 1
                adam_step(discriminator.parameters(), adam_d, state.step_d)
                loss_d = terms_d.loss

            for _ in range(cfg.d_g_ratio):
                fake = generator.forward(x)
                scores = discriminator.forward(fake) if use_critic else None
                terms_g = g_loss(scores, fake, y, cfg.alpha_adv if use_critic else 0.0, cfg.alpha_l1)
                grad = terms_g.d_output
                if use_critic:
                    grad = grad + discriminator.backward(terms_g.d_scores)
                    discriminator.zero_grad()
                generator.backward(grad)
                state.step_g += 1
                adam_step(generator.parameters(), adam_g, state.step_g)
        except TrainingError as exc:
            raise TrainingError(str(exc), iteration=it + 1, last_checkpoint=last_checkpoint) from exc

        values = {'g_loss_adv': terms_g.adversarial, 'g_loss_l1': terms_g.l1}
        if use_critic:
            values['d_loss'] = loss_d
        _check_finite(values, it + 1, last_checkpoint)
        state.iteration = it + 1

        row = {
            'iteration': state.iteration,
            'd_loss': loss_d if use_critic else None,
            'g_loss_adv': terms_g.adversarial,
            'g_loss_l1': terms_g.l1,
            'val_psnr': None,
            'val_ssim': None,
            'val_perc': None,
        }
        if state.iteration % cfg.val_every == 0 or state.iteration == cfg.iterations:
            metrics = patch_metrics(generator.forward(val_x), val_y)
            row.update(val_psnr=metrics['psnr'], val_ssim=metrics['ssim'], val_perc=metrics['perceptual'])
            if metrics['perceptual'] < state.best_val_perc:
                state.best_val_perc = float(np.float32(metrics['perceptual']))
                save(out_dir / BEST_CHECKPOINT)
            logger.info(
                f"iter {state.iteration}: l1={terms_g.l1:.5f} d={loss_d:.4f} "
                f"val psnr={metrics['psnr']:.2f} ssim={metrics['ssim']:.4f} perc={metrics['perceptual']:.5f}"
            )
        state.rows.append(row)
        for callback in callbacks:
            callback(row)

        if state.iteration % cfg.checkpoint_every == 0 or state.iteration == cfg.iterations:
            save(out_dir / f"ckpt_{state.iteration:06d}.ctw")
            save(last_path)
            _write_log(log_path, state.rows)

    if state.iteration == 0 or not last_path.exists():
        save(last_path)
        _write_log(log_path, state.rows)
    best_path = out_dir / BEST_CHECKPOINT
    logger.info(f"Training finished at iteration {state.iteration} ({'cnn' if cfg.is_baseline else 'gan'})")
    return {
        'success': True,
        'iterations': state.iteration,
        'last_checkpoint': str(last_path),
        'best_checkpoint': str(best_path) if best_path.exists() else str(last_path),
        'log_path': str(log_path),
        'best_val_perc': state.best_val_perc if math.isfinite(state.best_val_perc) else None,
    }
