"""
ctnorm - desk-scale CT acquisition normalization benchmark
Command-line entry point: one subcommand per pipeline stage
"""

import json
import logging
import sys
from pathlib import Path
from typing import Callable, Optional

import click
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from services.config import PathConfig, get_runtime_config
from services.exceptions import (
    EXIT_INVALID_CONFIG,
    EXIT_RUNTIME,
    CTNormError,
    OverwriteRefusedError,
)
from services.pipeline_service import (
    MANIFEST_FILE,
    cmd_evaluate,
    cmd_normalize,
    cmd_normalize_batch,
    cmd_phantom,
    cmd_report,
    cmd_scan,
    cmd_train,
    default_manifest,
    load_manifest,
    run_pipeline,
    save_manifest,
)
from services.schemas.gan_schemas import TileConfig

logger = logging.getLogger("ctnorm")
console = Console(stderr=True)


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=False, show_path=False)],
        force=True,
    )


class Context:
    """Global options shared by every subcommand"""

    def __init__(self, manifest_path: str, seed: Optional[int], threads: int, force: bool, deterministic: bool):
        self.manifest_path = Path(manifest_path)
        self.seed = seed
        self.threads = threads
        self.force = force
        self.deterministic = deterministic

    def manifest(self):
        manifest = load_manifest(self.manifest_path)
        if self.seed is not None:
            manifest = manifest.model_copy(update={
                'seed': self.seed,
                'train': manifest.train.model_copy(update={'seed': self.seed}),
            })
        return manifest


def run_stage(fn: Callable[[], dict]) -> dict:
    """Run a stage, mapping failures onto exit codes"""
    try:
        result = fn()
    except OverwriteRefusedError as e:
        logger.warning(str(e))
        sys.exit(e.exit_code)
    except CTNormError as e:
        logger.error(str(e))
        sys.exit(e.exit_code)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        sys.exit(EXIT_INVALID_CONFIG)
    except OSError as e:
        logger.error(f"I/O error: {e}")
        sys.exit(EXIT_RUNTIME)
    summary = {k: v for k, v in result.items() if isinstance(v, (str, int, float, bool))}
    console.print_json(json.dumps(summary))
    return result


@click.group()
@click.option('--manifest', 'manifest_path', default=MANIFEST_FILE, show_default=True,
              help='Experiment manifest (JSON)')
@click.option('--seed', type=int, default=None, help='Override the manifest seed')
@click.option('--threads', type=int, default=None, help='Worker threads (env CTNORM_THREADS)')
@click.option('--force', is_flag=True, help='Overwrite existing stage outputs')
@click.option('--deterministic', is_flag=True, help='Single-threaded, bit-reproducible execution')
@click.option('--log-level', default=None, help='Logging level (env CTNORM_LOG_LEVEL)')
@click.pass_context
def cli(ctx, manifest_path, seed, threads, force, deterministic, log_level):
    """Desk-scale CT dose / slice-thickness normalization benchmark."""
    runtime = get_runtime_config(threads=threads, deterministic=deterministic or None)
    setup_logging(log_level or runtime['log_level'])
    ctx.obj = Context(manifest_path, seed, runtime['threads'], force, runtime['deterministic'])
    logger.debug(f"Runtime: {runtime}")


@cli.command()
@click.option('--cases', type=int, default=12, show_default=True, help='Number of phantom cases')
@click.option('--output-dir', default=PathConfig.OUTPUT_DIR, show_default=True)
@click.pass_obj
def init(obj: Context, cases, output_dir):
    """Write the desk-scale default manifest."""
    def stage():
        if obj.manifest_path.exists() and not obj.force:
            raise OverwriteRefusedError(obj.manifest_path)
        manifest = default_manifest(seed=obj.seed or 0, output_dir=output_dir, n_cases=cases)
        path = save_manifest(manifest, obj.manifest_path)
        return {'success': True, 'manifest': str(path), 'cases': len(manifest.cases)}
    run_stage(stage)


@cli.command()
@click.pass_obj
def phantom(obj: Context):
    """Generate phantom volumes and nodule ROI manifests."""
    run_stage(lambda: cmd_phantom(obj.manifest(), obj.threads, obj.force))


@cli.command()
@click.pass_obj
def scan(obj: Context):
    """Simulate the reference and every scenario acquisition."""
    run_stage(lambda: cmd_scan(obj.manifest(), obj.threads, obj.force))


@cli.command()
@click.option('--scenario', required=True, help='Scenario name (e.g. B)')
@click.option('--baseline-cnn', is_flag=True, help='Train the L1-only CNN baseline (alpha_adv = 0)')
@click.pass_obj
def train(obj: Context, scenario, baseline_cnn):
    """Train the GAN (or CNN baseline) for one scenario; resumes from last.ctw."""
    run_stage(lambda: cmd_train(obj.manifest(), scenario, baseline_cnn, obj.threads, obj.force))


@cli.command()
@click.option('--checkpoint', type=click.Path(), default=None, help='Checkpoint (.ctw) for single-volume mode')
@click.option('--input', 'source', type=click.Path(), default=None, help='Input CTV1 volume')
@click.option('--output', 'target', type=click.Path(), default=None, help='Output CTV1 volume')
@click.option('--scenario', default=None, help='Batch mode: normalize the test split of a scenario')
@click.option('--method', type=click.Choice(['cnn', 'gan']), default='gan', show_default=True)
@click.pass_obj
def normalize(obj: Context, checkpoint, source, target, scenario, method):
    """Normalize one volume, or every test volume of a scenario."""
    if scenario is not None:
        run_stage(lambda: cmd_normalize_batch(obj.manifest(), scenario, method, obj.threads, obj.force))
        return
    if not (checkpoint and source and target):
        logger.error("single-volume mode needs --checkpoint, --input and --output (or use --scenario)")
        sys.exit(EXIT_INVALID_CONFIG)

    def stage():
        tile = obj.manifest().inference if obj.manifest_path.exists() else TileConfig()
        return cmd_normalize(checkpoint, source, target, tile, obj.force)
    run_stage(stage)


@cli.command()
@click.option('--scenario', 'scenarios', multiple=True, help='Scenario(s) to evaluate (default: all)')
@click.pass_obj
def evaluate(obj: Context, scenarios):
    """Metrics, radiomic errors and Wilcoxon tests over the test split."""
    run_stage(lambda: cmd_evaluate(obj.manifest(), scenarios or None, obj.threads, obj.force))


@cli.command()
@click.pass_obj
def report(obj: Context):
    """Render the text report and SVG box plots from evaluate outputs."""
    run_stage(lambda: cmd_report(obj.manifest()))


@cli.command()
@click.option('--scenario', 'scenarios', multiple=True, help='Scenario(s) to run (default: all)')
@click.pass_obj
def pipeline(obj: Context, scenarios):
    """phantom -> scan -> train -> normalize -> evaluate -> report."""
    run_stage(lambda: run_pipeline(obj.manifest(), scenarios or None, obj.threads, obj.force))


if __name__ == "__main__":
    cli()
