"""
Pipeline Service - stage orchestration over an ExperimentManifest
phantom -> scan -> train -> normalize -> evaluate -> report, with a fixed
directory layout under the manifest's output directory:

    <output>/manifest.json
    <output>/cases/<case>/phantom.ctv, rois.json
    <output>/cases/<case>/reference/volume.ctv
    <output>/cases/<case>/<scenario>/volume.ctv
    <output>/cases/<case>/<scenario>/<method>/normalized.ctv (+ .json sidecar)
    <output>/models/<scenario>/<method>/{best,last}.ctw, train_log.csv
    <output>/reports/*.csv, *.json, *.svg, report.txt
"""

import json
import logging
import os
import time
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.acquisition_service import simulate_acquisition
from services.activity_log_service import get_activity_log_service
from services.config import MetricsConfig, PathConfig, RadiomicsConfig
from services.exceptions import ConfigError, MissingArtifactError, OverwriteRefusedError
from services.gan.inference import normalize_volume
from services.gan.models import Generator, build_discriminator, build_generator
from services.gan.trainer import BEST_CHECKPOINT, LAST_CHECKPOINT, TrainingData, train
from services.metrics_service import aggregate_reports, evaluate_volume_pair, perceptual_improvement
from services.neural.checkpoint import checkpoint_digest, load_checkpoint, load_model_state
from services.phantom_service import generate_phantom, jitter_nodule
from services.radiomics_service import (
    build_error_table,
    error_reduction_count,
    summarize_error_table,
    z_matched_roi,
)
from services.report_service import (
    BOXPLOT_CSV,
    ERRORS_CSV,
    METRICS_CSV,
    STATS_CSV,
    SUMMARY_JSON,
    metric_table,
    render_report,
    write_table,
)
from services.schemas.acquisition_schemas import PhantomSpec
from services.schemas.gan_schemas import GeneratorConfig, TileConfig, TrainConfig
from services.schemas.manifest_schemas import CaseSpec, CaseSplit, ExperimentManifest
from services.schemas.metrics_schemas import MetricReport
from utils.formats import load_volume, save_volume
from utils.volume import RoiBox, Volume, hu_to_unit, repeat_z

logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'
TRAINED_METHODS = ('cnn', 'gan')
DESK_CASES = 12
DESK_SPLIT = (8, 2, 2)


# ============ MANIFESTS ============

def default_manifest(seed: int = 0, output_dir: Optional[str] = None, n_cases: int = DESK_CASES) -> ExperimentManifest:
    """
    Desk-scale manifest: `n_cases` phantoms with jittered nodules, split 8/2/2
    for the default twelve, scenarios A/B/C and the 1.0mm reference.
    """
    if n_cases < 3:
        raise ConfigError(f"a manifest needs at least 3 cases for train/val/test, got {n_cases}")
    base = PhantomSpec()
    cases = [
        CaseSpec(case_id=f"case{k:03d}", seed=seed * 1000 + k, phantom=jitter_nodule(base, seed * 1000 + k))
        for k in range(n_cases)
    ]
    n_val = max(1, round(n_cases * DESK_SPLIT[1] / DESK_CASES))
    n_test = max(1, round(n_cases * DESK_SPLIT[2] / DESK_CASES))
    ids = [c.case_id for c in cases]
    split = CaseSplit(
        train=ids[:n_cases - n_val - n_test],
        val=ids[n_cases - n_val - n_test:n_cases - n_test],
        test=ids[n_cases - n_test:],
    )
    manifest = ExperimentManifest(
        name='desk',
        seed=seed,
        output_dir=output_dir or PathConfig.OUTPUT_DIR,
        cases=cases,
        split=split,
        train=TrainConfig(seed=seed),
    )
    return manifest


def load_manifest(path) -> ExperimentManifest:
    """
    Raises:
        MissingArtifactError: If the file does not exist
        pydantic.ValidationError: If the manifest is invalid
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, "create one with the init command")
    return ExperimentManifest.model_validate_json(path.read_text())


def save_manifest(manifest: ExperimentManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    return path


# ============ SERVICE ============

class PipelineService:
    """Runs pipeline stages for one manifest; every stage returns a result dict"""

    def __init__(self, manifest: ExperimentManifest, threads: int = 1, force: bool = False):
        self.manifest = manifest
        self.threads = max(1, int(threads))
        self.force = force
        self.root = Path(manifest.output_dir)
        self.activity = get_activity_log_service(str(self.root))

    # ---------- layout ----------

    def case_dir(self, case_id: str) -> Path:
        return self.root / PathConfig.CASES_DIR / case_id

    def phantom_path(self, case_id: str) -> Path:
        return self.case_dir(case_id) / PathConfig.PHANTOM_FILE

    def roi_path(self, case_id: str) -> Path:
        return self.case_dir(case_id) / PathConfig.ROI_MANIFEST_FILE

    def acquisition_path(self, case_id: str, scenario: str) -> Path:
        return self.case_dir(case_id) / scenario / PathConfig.VOLUME_FILE

    def normalized_path(self, case_id: str, scenario: str, method: str) -> Path:
        return self.case_dir(case_id) / scenario / method / PathConfig.NORMALIZED_FILE

    def model_dir(self, scenario: str, method: str) -> Path:
        return self.root / PathConfig.MODELS_DIR / scenario / method

    @property
    def reports_dir(self) -> Path:
        return self.root / PathConfig.REPORTS_DIR

    def _check_writable(self, stage: str, paths: Iterable[Path]) -> None:
        if self.force:
            return
        for path in paths:
            if path.exists():
                self.activity.log_refused(stage, str(path))
                raise OverwriteRefusedError(path)

    @staticmethod
    def _require(path: Path, hint: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(path, hint)
        return path

    def _scenario_names(self, scenarios: Optional[Sequence[str]]) -> List[str]:
        names = list(scenarios) if scenarios else list(self.manifest.scenarios)
        unknown = [s for s in names if s not in self.manifest.scenarios]
        if unknown:
            raise ConfigError(f"unknown scenario(s) {unknown}; manifest has {list(self.manifest.scenarios)}")
        return names

    # ---------- stages ----------

    def phantom(self) -> dict:
        """One CTV1 phantom and one JSON ROI manifest per case"""
        cases = self.manifest.cases
        self._check_writable('phantom', (self.phantom_path(c.case_id) for c in cases))
        save_manifest(self.manifest, self.root / MANIFEST_FILE)
        for case in cases:
            volume, rois = generate_phantom(case.phantom, case.seed)
            save_volume(volume, self.phantom_path(case.case_id))
            self.roi_path(case.case_id).write_text(json.dumps({
                'case_id': case.case_id,
                'spacing': list(volume.spacing),
                'rois': [roi.to_dict() for roi in rois],
            }, indent=2))
        result = {'success': True, 'cases': len(cases), 'output_dir': str(self.root)}
        self.activity.log_stage('phantom', 'phantom', result)
        logger.info(f"Phantom stage: {len(cases)} case(s) written under {self.root}")
        return result

    def scan(self) -> dict:
        """Reference plus every scenario acquisition for every case"""
        acquisitions = {PathConfig.REFERENCE_NAME: self.manifest.reference, **self.manifest.scenarios}
        cases = self.manifest.cases
        self._check_writable('scan', (
            self.acquisition_path(c.case_id, name) for c in cases for name in acquisitions
        ))
        count = 0
        for case in cases:
            phantom = load_volume(self._require(self.phantom_path(case.case_id), "run the phantom stage first"))
            seed = self.manifest.acquisition_seed(case)
            for name, acquisition in acquisitions.items():
                cfg = acquisition.model_copy(update={'seed': seed})
                volume = simulate_acquisition(phantom, cfg, self.threads)
                save_volume(volume, self.acquisition_path(case.case_id, name))
                count += 1
        result = {'success': True, 'volumes': count, 'cases': len(cases)}
        self.activity.log_stage('scan', 'acquisition', result)
        logger.info(f"Scan stage: {count} acquisition volume(s)")
        return result

    def _volume_pairs(self, case_ids: Sequence[str], scenario: str) -> List[Tuple[Volume, Volume]]:
        pairs = []
        for case_id in case_ids:
            low = load_volume(self._require(self.acquisition_path(case_id, scenario), "run the scan stage first"))
            ref = load_volume(self._require(
                self.acquisition_path(case_id, PathConfig.REFERENCE_NAME), "run the scan stage first"
            ))
            pairs.append((hu_to_unit(low), hu_to_unit(ref)))
        return pairs

    def train(self, scenario: str, baseline_cnn: bool = False) -> dict:
        """
        Train the GAN (or the L1-only CNN baseline) for one scenario.
        Resumes from last.ctw unless --force restarts training.
        """
        self._scenario_names([scenario])
        method = 'cnn' if baseline_cnn else 'gan'
        split = self.manifest.split
        data = TrainingData(
            train=self._volume_pairs(split.train, scenario),
            val=self._volume_pairs(split.val, scenario),
        )
        cfg = self.manifest.train
        if baseline_cnn:
            cfg = cfg.model_copy(update={'alpha_adv': 0.0})
        generator = build_generator(self.manifest.generator, seed=cfg.seed)
        discriminator = None if cfg.is_baseline else build_discriminator(self.manifest.discriminator, seed=cfg.seed + 1)

        out_dir = self.model_dir(scenario, method)
        try:
            result = train(generator, discriminator, data, cfg, out_dir, resume=not self.force)
        except Exception as e:
            self.activity.log_stage('train', 'training', {'success': False, 'error': str(e)}, f"{scenario}/{method}")
            raise
        result.update(scenario=scenario, method=method)
        self.activity.log_stage('train', 'training', result, f"{scenario}/{method}")
        return result

    def normalize(self, scenario: str, method: str) -> dict:
        """Normalize every test case of a scenario with a trained method"""
        self._scenario_names([scenario])
        if method not in TRAINED_METHODS:
            raise ConfigError(f"method must be one of {TRAINED_METHODS}, got '{method}'")
        model_dir = self.model_dir(scenario, method)
        checkpoint = model_dir / BEST_CHECKPOINT
        if not checkpoint.exists():
            # no validation distance was measurable (patches below 32px)
            checkpoint = self._require(model_dir / LAST_CHECKPOINT, "run the train stage first")
        test_ids = self.manifest.split.test
        self._check_writable('normalize', (self.normalized_path(c, scenario, method) for c in test_ids))
        outputs = []
        for case_id in test_ids:
            source = self._require(self.acquisition_path(case_id, scenario), "run the scan stage first")
            target = self.normalized_path(case_id, scenario, method)
            outputs.append(normalize_file(checkpoint, source, target, self.manifest.inference)['output'])
        result = {'success': True, 'scenario': scenario, 'method': method, 'volumes': len(outputs)}
        self.activity.log_stage('normalize', 'inference', result, f"{scenario}/{method}")
        return result

    def _case_rois(self, case_id: str) -> List[RoiBox]:
        """Nodule ROIs mapped from the 0.5mm phantom grid onto the reference grid"""
        data = json.loads(self._require(self.roi_path(case_id), "run the phantom stage first").read_text())
        factor = int(round(self.manifest.reference.slice_thickness_mm / data['spacing'][0]))
        return [RoiBox.from_dict(roi).rescale_z(factor) for roi in data['rois']]

    def _evaluate_scenario(self, scenario: str) -> Tuple[dict, List[pd.DataFrame]]:
        per_method: Dict[str, list] = {m: [] for m in RadiomicsConfig.METHODS}
        error_tables = []
        for case_id in self.manifest.split.test:
            reference = load_volume(self._require(
                self.acquisition_path(case_id, PathConfig.REFERENCE_NAME), "run the scan stage first"
            ))
            raw = load_volume(self._require(self.acquisition_path(case_id, scenario), "run the scan stage first"))
            z_factor = reference.dims[0] // raw.dims[0]
            candidates = {'raw': repeat_z(raw, z_factor)}
            for method in TRAINED_METHODS:
                candidates[method] = load_volume(self._require(
                    self.normalized_path(case_id, scenario, method), "run the normalize stage first"
                ))

            for method, candidate in candidates.items():
                per_method[method].append(evaluate_volume_pair(candidate, reference, self.threads))

            for k, roi in enumerate(self._case_rois(case_id)):
                roi_sets = {
                    'raw': z_matched_roi(raw, roi, z_factor),
                    'cnn': z_matched_roi(candidates['cnn'], roi),
                    'gan': z_matched_roi(candidates['gan'], roi),
                }
                error_tables.append(build_error_table(
                    roi_sets, z_matched_roi(reference, roi), f"{case_id}#{k}", self.threads
                ))
        reports = {method: aggregate_reports(reports) for method, reports in per_method.items()}
        return reports, error_tables

    def evaluate(self, scenarios: Optional[Sequence[str]] = None) -> dict:
        """
        Metrics, radiomic errors and Wilcoxon tests over the test split, written
        as CSV / JSON under reports/, then rendered.
        """
        names = self._scenario_names(scenarios)
        reports_dir = self.reports_dir
        self._check_writable('evaluate', [reports_dir / SUMMARY_JSON])

        metric_reports = {}
        errors, boxplots, stats = [], [], []
        summary = {
            'manifest': self.manifest.name,
            'n_test_cases': len(self.manifest.split.test),
            'scenarios': names,
            'perceptual_improvement': {},
            'trends': {},
            'gan_vs_raw_p': {},
        }
        for scenario in names:
            reports, error_tables = self._evaluate_scenario(scenario)
            for method, report in reports.items():
                metric_reports[(scenario, method)] = report

            table = pd.concat(error_tables, ignore_index=True)
            boxplot, stat = summarize_error_table(table)
            for frame in (table, boxplot, stat):
                frame.insert(0, 'scenario', scenario)
            errors.append(table)
            boxplots.append(boxplot)
            stats.append(stat)

            summary['perceptual_improvement'][scenario] = {
                **{plane: perceptual_improvement(reports['cnn'], reports['gan'], plane) for plane in MetricsConfig.PLANES},
                'average': perceptual_improvement(reports['cnn'], reports['gan']),
            }
            summary['trends'][scenario] = trend_flags(reports, boxplot)
            gan_raw = stat[stat['comparison'] == 'gan_vs_raw']
            summary['gan_vs_raw_p'][scenario] = dict(zip(gan_raw['feature'], gan_raw['p']))

        write_table(metric_table(metric_reports), reports_dir / METRICS_CSV, with_json=True)
        write_table(pd.concat(errors, ignore_index=True), reports_dir / ERRORS_CSV)
        write_table(pd.concat(boxplots, ignore_index=True), reports_dir / BOXPLOT_CSV)
        write_table(pd.concat(stats, ignore_index=True), reports_dir / STATS_CSV)
        (reports_dir / SUMMARY_JSON).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))

        rendered = render_report(reports_dir, title=f"CT normalization benchmark: {self.manifest.name}")
        result = {
            'success': True,
            'scenarios': len(names),
            'reports_dir': str(reports_dir),
            'report_path': rendered['report_path'],
            'summary': summary,
        }
        self.activity.log_stage('evaluate', 'evaluation', result)
        return result

    def report(self) -> dict:
        result = render_report(self.reports_dir, title=f"CT normalization benchmark: {self.manifest.name}")
        activity = self.activity.get_activity_summary()
        result.update({
            'stages_logged': activity['total_activities'],
            'stages_failed': activity['by_status'].get('failed', 0),
            'stages_refused': activity['by_type'].get('stage_refused', 0),
        })
        refused = self.activity.get_recent_activities(limit=1, action_type='stage_refused')
        if refused:
            result['last_refusal'] = refused[0]['description']
        self.activity.log_stage('report', 'reporting', result)
        return result

    def run(self, scenarios: Optional[Sequence[str]] = None) -> dict:
        """phantom -> scan -> train (gan, cnn) -> normalize -> evaluate -> report"""
        names = self._scenario_names(scenarios)
        stages = {'phantom': self.phantom(), 'scan': self.scan()}
        for scenario in names:
            for method in TRAINED_METHODS:
                stages[f"train:{scenario}:{method}"] = self.train(scenario, baseline_cnn=(method == 'cnn'))
                stages[f"normalize:{scenario}:{method}"] = self.normalize(scenario, method)
        stages['evaluate'] = self.evaluate(names)
        return {'success': True, 'stages': list(stages), 'summary': stages['evaluate']['summary']}


# ============ HELPERS ============

def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"not JSON serializable: {type(value)}")


def trend_flags(reports: Dict[str, MetricReport], boxplot: pd.DataFrame) -> dict:
    """Directional checks of one scenario's results"""
    planes = MetricsConfig.PLANES

    def below(a: Optional[float], b: Optional[float]) -> bool:
        return a is not None and b is not None and a < b

    gan_below_raw = all(below(reports['gan'].value('perceptual', p), reports['raw'].value('perceptual', p)) for p in planes)
    cnn_psnr, gan_psnr = reports['cnn'].plane_average('psnr'), reports['gan'].plane_average('psnr')
    cnn_perc, gan_perc = reports['cnn'].plane_average('perceptual'), reports['gan'].plane_average('perceptual')
    reduced = error_reduction_count(boxplot, 'gan', 'raw')
    return {
        'gan_perceptual_below_raw_all_planes': gan_below_raw,
        'cnn_psnr_ge_gan': cnn_psnr is not None and gan_psnr is not None and cnn_psnr >= gan_psnr,
        'gan_perceptual_le_cnn': cnn_perc is not None and gan_perc is not None and gan_perc <= cnn_perc,
        'radiomic_features_reduced': reduced,
        'radiomic_reduction_ok': reduced >= 6,
    }


def _clip_tile(tile: TileConfig, dims: Tuple[int, int, int]) -> TileConfig:
    tile_dims = tuple(min(t, n) for t, n in zip(tile.tile_dims, dims))
    return tile.model_copy(update={'tile_dims': tile_dims})


def load_generator(checkpoint) -> Generator:
    """Generator rebuilt from a checkpoint's JSON sidecar and weights"""
    checkpoint = Path(checkpoint)
    sidecar = checkpoint.with_suffix('.json')
    if not sidecar.exists():
        raise MissingArtifactError(sidecar, "checkpoint sidecar with the generator configuration")
    cfg = GeneratorConfig.model_validate(json.loads(sidecar.read_text())['generator'])
    generator = build_generator(cfg)
    load_model_state('G', generator, load_checkpoint(checkpoint))
    return generator


def normalize_file(checkpoint, source, target, tile: Optional[TileConfig] = None) -> dict:
    """
    Normalize one CTV1 volume with a checkpoint; writes CTV1 plus a JSON
    sidecar (checkpoint digest, tiling). Sidecar paths are relative to the
    output directory and wall time is only reported in the returned dict.
    """
    tile = tile or TileConfig()
    generator = load_generator(checkpoint)
    low = load_volume(source)
    tile = _clip_tile(tile, low.dims)
    started = time.perf_counter()
    normalized = normalize_volume(generator, low, tile.tile_dims, tile.z_overlap, tile.xy_overlap)
    wall_time = time.perf_counter() - started
    target = save_volume(normalized, target)
    sidecar = {
        'checkpoint': os.path.relpath(checkpoint, target.parent),
        'checkpoint_xxh64': checkpoint_digest(checkpoint),
        'input': os.path.relpath(source, target.parent),
        'input_dims': list(low.dims),
        'output_dims': list(normalized.dims),
        'tile_dims': list(tile.tile_dims),
        'z_overlap': tile.z_overlap,
        'xy_overlap': tile.xy_overlap,
    }
    target.with_suffix('.json').write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    logger.info(f"Normalized {source} -> {target} in {wall_time:.1f}s")
    return {'success': True, 'output': str(target), **sidecar, 'wall_time_s': round(wall_time, 3)}


# ============ COMMANDS ============

def cmd_phantom(manifest: ExperimentManifest, threads: int = 1, force: bool = False) -> dict:
    return PipelineService(manifest, threads, force).phantom()


def cmd_scan(manifest: ExperimentManifest, threads: int = 1, force: bool = False) -> dict:
    return PipelineService(manifest, threads, force).scan()


def cmd_train(manifest: ExperimentManifest, scenario: str, baseline_cnn: bool = False,
              threads: int = 1, force: bool = False) -> dict:
    return PipelineService(manifest, threads, force).train(scenario, baseline_cnn)


def cmd_normalize(checkpoint, source, target, tile: Optional[TileConfig] = None, force: bool = False) -> dict:
    """Single-volume normalization; refuses to overwrite `target` without force"""
    target = Path(target)
    if target.exists() and not force:
        raise OverwriteRefusedError(target)
    for path in (Path(checkpoint), Path(source)):
        if not path.exists():
            raise MissingArtifactError(path)
    return normalize_file(checkpoint, source, target, tile)


def cmd_normalize_batch(manifest: ExperimentManifest, scenario: str, method: str,
                        threads: int = 1, force: bool = False) -> dict:
    return PipelineService(manifest, threads, force).normalize(scenario, method)


def cmd_evaluate(manifest: ExperimentManifest, scenarios: Optional[Sequence[str]] = None,
                 threads: int = 1, force: bool = False) -> dict:
    return PipelineService(manifest, threads, force).evaluate(scenarios)


def cmd_report(manifest: ExperimentManifest) -> dict:
    return PipelineService(manifest).report()


def run_pipeline(manifest: ExperimentManifest, scenarios: Optional[Sequence[str]] = None,
                 threads: int = 1, force: bool = False) -> dict:
    return PipelineService(manifest, threads, force).run(scenarios)
