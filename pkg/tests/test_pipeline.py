import json
from pathlib import Path

import pytest
from click.testing import CliRunner
from numpy.testing import assert_allclose

from conftest import build_tiny_manifest
from main import cli
from services.config import get_runtime_config
from services.exceptions import ConfigError, MissingArtifactError, OverwriteRefusedError
from services.gan.models import build_generator
from services.gan.trainer import TrainState, write_checkpoint
from services.pipeline_service import PipelineService, default_manifest, load_manifest, run_pipeline, save_manifest
from services.report_service import REPORT_TXT, SUMMARY_JSON
from services.schemas.gan_schemas import TrainConfig
from utils.formats import load_volume, save_volume
from utils.volume import Volume, repeat_z


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def manifest_file(tmp_path, tiny_manifest):
    return save_manifest(tiny_manifest, tmp_path / "manifest.json")


class TestManifest:
    def test_default_split(self):
        manifest = default_manifest(seed=2, output_dir="runs/x")
        assert len(manifest.cases) == 12
        assert [len(manifest.split.train), len(manifest.split.val), len(manifest.split.test)] == [8, 2, 2]
        assert set(manifest.scenarios) == {'A', 'B', 'C'}
        assert manifest.reference.slice_thickness_mm == 1.0

    def test_too_few_cases(self):
        with pytest.raises(ConfigError):
            default_manifest(n_cases=2)

    def test_round_trip(self, tmp_path, tiny_manifest):
        assert load_manifest(save_manifest(tiny_manifest, tmp_path / "m.json")) == tiny_manifest

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_manifest(tmp_path / "absent.json")


class TestPipelineService:
    def test_phantom_layout_and_refusal(self, tiny_manifest):
        service = PipelineService(tiny_manifest)
        result = service.phantom()
        assert result['cases'] == 3
        rois = json.loads(service.roi_path('c0').read_text())
        assert rois['spacing'][0] == 0.5
        assert len(rois['rois']) == 1
        assert load_volume(service.phantom_path('c2')).dims == (16, 32, 32)
        with pytest.raises(OverwriteRefusedError):
            service.phantom()
        PipelineService(tiny_manifest, force=True).phantom()
        refused = service.activity.get_recent_activities(action_type='stage_refused')
        assert len(refused) == 1

    def test_scan_grids(self, tiny_manifest):
        service = PipelineService(tiny_manifest)
        service.phantom()
        assert service.scan()['volumes'] == 6
        assert load_volume(service.acquisition_path('c0', 'reference')).dims == (8, 32, 32)
        low = load_volume(service.acquisition_path('c0', 'B'))
        assert low.dims == (4, 32, 32)
        assert low.spacing[0] == 2.0

    def test_scan_is_reproducible(self, tmp_path, small_spec):
        volumes = []
        for name in ("a", "b"):
            service = PipelineService(build_tiny_manifest(tmp_path / name, small_spec), threads=2)
            service.phantom()
            service.scan()
            volumes.append(service.acquisition_path('c1', 'B').read_bytes())
        assert volumes[0] == volumes[1]

    def test_scan_needs_phantoms(self, tiny_manifest):
        with pytest.raises(MissingArtifactError):
            PipelineService(tiny_manifest).scan()

    def test_unknown_scenario(self, tiny_manifest):
        with pytest.raises(ConfigError):
            PipelineService(tiny_manifest).train('Z')

    @pytest.mark.slow
    def test_full_run(self, tiny_manifest):
        result = run_pipeline(tiny_manifest)
        root = tiny_manifest.output_dir
        service = PipelineService(tiny_manifest)
        assert 'evaluate' in result['stages']
        normalized = load_volume(service.normalized_path('c2', 'B', 'gan'))
        assert normalized.dims == (8, 32, 32)

        reports = service.reports_dir
        summary = json.loads((reports / SUMMARY_JSON).read_text())
        assert summary['scenarios'] == ['B']
        assert list(summary) == sorted(summary)
        assert set(summary['gan_vs_raw_p']['B']) >= {'mean', 'entropy', 'idm'}
        assert (reports / REPORT_TXT).exists()
        assert (reports / "boxplot_B_mean.svg").exists()
        assert (reports / "metrics.json").exists()
        assert service.activity.get_activity_summary()['by_type']['evaluation_finished'] == 1
        assert str(reports).startswith(root)

        with pytest.raises(OverwriteRefusedError):
            service.phantom()
        report = service.report()
        assert report['stages_refused'] == 1
        assert report['stages_failed'] == 0
        assert report['stages_logged'] >= len(result['stages'])
        assert 'phantom' in report['last_refusal']

    @pytest.mark.slow
    def test_rerun_is_bit_identical(self, tmp_path, small_spec):
        trees = []
        for name in ("first", "second"):
            manifest = build_tiny_manifest(tmp_path / name, small_spec)
            run_pipeline(manifest, threads=1)
            root = Path(manifest.output_dir)
            # the manifest records its own output_dir; the activity log is timestamped
            trees.append({
                path.relative_to(root): path.read_bytes()
                for path in sorted(root.rglob("*"))
                if path.is_file() and path.name not in ("manifest.json", "activity_log.jsonl")
            })
        assert trees[0].keys() == trees[1].keys()
        suffixes = {path.suffix for path in trees[0]}
        assert {".ctv", ".ctw", ".json", ".csv", ".svg", ".txt"} <= suffixes
        for path, content in trees[0].items():
            assert trees[1][path] == content, path


class TestCli:
    def test_init_refuses_existing_manifest(self, runner, tmp_path):
        args = ['--manifest', str(tmp_path / "m.json"), 'init', '--cases', '3', '--output-dir', str(tmp_path / "run")]
        assert runner.invoke(cli, args).exit_code == 0
        manifest = load_manifest(tmp_path / "m.json")
        assert len(manifest.cases) == 3
        assert runner.invoke(cli, args).exit_code == 2
        assert runner.invoke(cli, ['--force'] + args).exit_code == 0

    def test_phantom_then_refusal(self, runner, manifest_file):
        args = ['--manifest', str(manifest_file)]
        assert runner.invoke(cli, args + ['phantom']).exit_code == 0
        assert runner.invoke(cli, args + ['phantom']).exit_code == 2
        assert runner.invoke(cli, args + ['--force', 'phantom']).exit_code == 0

    def test_scan_before_phantom(self, runner, manifest_file):
        assert runner.invoke(cli, ['--manifest', str(manifest_file), 'scan']).exit_code == 1

    def test_unknown_scenario(self, runner, manifest_file):
        result = runner.invoke(cli, ['--manifest', str(manifest_file), 'train', '--scenario', 'Z'])
        assert result.exit_code == 3

    def test_invalid_manifest(self, runner, tmp_path, manifest_file):
        data = json.loads(manifest_file.read_text())
        data['split']['test'] = ['nobody']
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(data))
        assert runner.invoke(cli, ['--manifest', str(bad), 'phantom']).exit_code == 3

    def test_missing_manifest(self, runner, tmp_path):
        assert runner.invoke(cli, ['--manifest', str(tmp_path / "none.json"), 'phantom']).exit_code == 1

    def test_unwritable_output(self, runner, tmp_path, small_spec):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        path = save_manifest(build_tiny_manifest(blocker / "run", small_spec), tmp_path / "m.json")
        assert runner.invoke(cli, ['--manifest', str(path), 'phantom']).exit_code == 1

    def test_normalize_needs_arguments(self, runner, tmp_path):
        assert runner.invoke(cli, ['--manifest', str(tmp_path / "none.json"), 'normalize']).exit_code == 3

    def test_single_volume_normalize(self, runner, tmp_path, tiny_generator_cfg, rng):
        checkpoint = write_checkpoint(
            tmp_path / "last.ctw", build_generator(tiny_generator_cfg), None, TrainState(), TrainConfig(alpha_adv=0.0)
        )
        low = Volume(voxels=rng.uniform(-1000.0, 800.0, size=(4, 16, 16)), spacing=(2.0, 0.8, 0.8))
        source = save_volume(low, tmp_path / "in.ctv")
        target = tmp_path / "out.ctv"
        args = ['--manifest', str(tmp_path / "none.json"), 'normalize',
                '--checkpoint', str(checkpoint), '--input', str(source), '--output', str(target)]
        assert runner.invoke(cli, args).exit_code == 0
        normalized = load_volume(target)
        assert normalized.dims == (8, 16, 16)
        assert_allclose(normalized.voxels, repeat_z(low, 2).voxels, atol=1e-2)
        sidecar = json.loads(target.with_suffix('.json').read_text())
        assert sidecar['output_dims'] == [8, 16, 16]
        assert len(sidecar['checkpoint_xxh64']) == 16
        assert sidecar['checkpoint'] == 'last.ctw' and sidecar['input'] == 'in.ctv'
        assert 'wall_time_s' not in sidecar
        assert runner.invoke(cli, args).exit_code == 2

        again = tmp_path / "again.ctv"
        assert runner.invoke(cli, args[:-1] + [str(again)]).exit_code == 0
        assert again.read_bytes() == target.read_bytes()
        assert again.with_suffix('.json').read_bytes() == target.with_suffix('.json').read_bytes()

    def test_deterministic_forces_one_thread(self):
        assert get_runtime_config(threads=4, deterministic=True)['threads'] == 1
        assert get_runtime_config(threads=4, deterministic=False)['threads'] == 4
