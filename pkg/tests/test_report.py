import json
import math

import numpy as np
import pandas as pd
import pytest

from services.config import MetricsConfig
from services.exceptions import MissingArtifactError
from services.radiomics_service import compare_methods
from services.report_service import (
    BOXPLOT_CSV,
    METRICS_CSV,
    REPORT_TXT,
    STATS_CSV,
    SUMMARY_JSON,
    frame_to_text,
    metric_pivot,
    metric_table,
    render_boxplot_svg,
    render_report,
    write_table,
)
from services.schemas.metrics_schemas import MetricReport


def _filled_report(offset: float) -> MetricReport:
    report = MetricReport()
    for metric in MetricsConfig.METRICS:
        for plane in MetricsConfig.PLANES:
            report.means[metric][plane] = offset + len(plane)
            report.counts[metric][plane] = 8
    return report


@pytest.fixture
def comparison(rng):
    reference = rng.integers(-900, 100, size=(3, 6, 6)).astype(np.float64)
    roi_sets = {
        'raw': reference + rng.normal(0.0, 40.0, size=reference.shape),
        'cnn': reference + rng.normal(0.0, 15.0, size=reference.shape),
        'gan': reference + rng.normal(0.0, 5.0, size=reference.shape),
    }
    return compare_methods(roi_sets, reference, case_id='c0')


class TestTables:
    def test_metric_table_and_pivot(self):
        table = metric_table({('B', 'cnn'): _filled_report(1.0), ('B', 'gan'): _filled_report(2.0)})
        assert len(table) == 18
        assert list(table.columns[:2]) == ['scenario', 'method']
        pivot = metric_pivot(table)
        assert list(pivot.columns) == ['scenario', 'method', 'metric', 'axial', 'coronal', 'sagittal']
        assert len(pivot) == 6

    def test_empty_metric_table(self):
        assert metric_table({}).empty

    def test_frame_to_text(self):
        frame = pd.DataFrame({'feature': ['mean', 'idm'], 'median': [math.nan, math.inf]})
        text = frame_to_text(frame, title='errors')
        assert 'feature' in text and 'median' in text
        assert 'idm' in text and 'inf' in text and '-' in text

    def test_write_table_with_json(self, tmp_path):
        frame = pd.DataFrame({'a': [1, 2]})
        path = write_table(frame, tmp_path / "out" / "t.csv", with_json=True)
        assert pd.read_csv(path)['a'].tolist() == [1, 2]
        assert json.loads((tmp_path / "out" / "t.json").read_text()) == [{'a': 1}, {'a': 2}]


class TestBoxplotSvg:
    def test_one_box_per_method(self, comparison):
        rows = comparison['boxplot'][comparison['boxplot']['feature'] == 'variance']
        svg = render_boxplot_svg('variance', rows)
        assert svg.startswith('<svg')
        assert svg.rstrip().endswith('</svg>')
        for method in ('raw', 'cnn', 'gan'):
            assert f'data-method="{method}"' in svg
        assert svg.count('<g class="box"') == 3

    def test_all_zero_errors(self):
        rows = pd.DataFrame([{'feature': 'mean', 'method': 'gan', 'n': 3,
                              'min': 0.0, 'q1': 0.0, 'median': 0.0, 'q3': 0.0, 'max': 0.0}])
        assert 'data-method="gan"' in render_boxplot_svg('mean', rows)


class TestRenderReport:
    def _write_artifacts(self, reports_dir, comparison):
        write_table(metric_table({('B', 'cnn'): _filled_report(1.0), ('B', 'gan'): _filled_report(2.0)}),
                    reports_dir / METRICS_CSV)
        for name, key in ((BOXPLOT_CSV, 'boxplot'), (STATS_CSV, 'stats')):
            frame = comparison[key].copy()
            frame.insert(0, 'scenario', 'B')
            write_table(frame, reports_dir / name)
        (reports_dir / SUMMARY_JSON).write_text(json.dumps({
            'manifest': 'tiny',
            'n_test_cases': 1,
            'perceptual_improvement': {'B': {'axial': 12.5, 'average': 10.0}},
            'trends': {'B': {'radiomic_features_reduced': 7, 'radiomic_reduction_ok': True}},
        }))

    def test_renders_text_and_svgs(self, tmp_path, comparison):
        self._write_artifacts(tmp_path, comparison)
        result = render_report(tmp_path, title='tiny benchmark')
        assert result['success']
        text = (tmp_path / REPORT_TXT).read_text()
        assert text.startswith('tiny benchmark')
        assert 'Paired Wilcoxon signed-rank tests' in text
        assert 'Manifest: tiny' in text
        assert len(result['svg_paths']) == 9
        assert (tmp_path / "boxplot_B_entropy.svg").exists()

    def test_missing_artifacts(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            render_report(tmp_path)

    def test_missing_summary(self, tmp_path, comparison):
        self._write_artifacts(tmp_path, comparison)
        (tmp_path / SUMMARY_JSON).unlink()
        with pytest.raises(MissingArtifactError):
            render_report(tmp_path)
