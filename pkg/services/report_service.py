"""
Report Service - tables, text reports and SVG box plots of an evaluation
Reads and writes the CSV / JSON artifacts of the evaluate stage and renders
them through the templates in services/report_templates.
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import pandas as pd
from rich import box
from rich.console import Console
from rich.table import Table

from services.config import MetricsConfig, RadiomicsConfig
from services.exceptions import MissingArtifactError
from services.report_templates import load_template
from services.schemas.metrics_schemas import MetricReport

logger = logging.getLogger(__name__)

METRICS_CSV = 'metrics.csv'
METRICS_JSON = 'metrics.json'
ERRORS_CSV = 'radiomics_errors.csv'
BOXPLOT_CSV = 'radiomics_boxplot.csv'
STATS_CSV = 'radiomics_stats.csv'
SUMMARY_JSON = 'summary.json'
REPORT_TXT = 'report.txt'

METHOD_COLORS = {'raw': '#d9d9d9', 'cnn': '#9ecae1', 'gan': '#fdae6b', 'reference': '#c7e9c0'}
_SVG = {'width': 360, 'height': 280, 'left': 70, 'right': 20, 'top': 36, 'bottom': 40}


# ============ TABLES ============

def metric_table(reports: Mapping[Tuple[str, str], MetricReport]) -> pd.DataFrame:
    """Long table: scenario, method, metric, plane, mean, count, infinite"""
    frames = []
    for (scenario, method), report in reports.items():
        frame = report.to_frame()
        frame.insert(0, 'method', method)
        frame.insert(0, 'scenario', scenario)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=['scenario', 'method', 'metric', 'plane', 'mean', 'count', 'infinite'])
    return pd.concat(frames, ignore_index=True)


def metric_pivot(frame: pd.DataFrame) -> pd.DataFrame:
    """Scenario x method x metric rows, one column per plane"""
    pivot = frame.pivot_table(index=['scenario', 'method', 'metric'], columns='plane', values='mean', dropna=False)
    return pivot.reindex(columns=[p for p in MetricsConfig.PLANES if p in pivot.columns]).reset_index()


def write_table(frame: pd.DataFrame, path: Path, with_json: bool = False) -> Path:
    """CSV (and optionally JSON records) of a frame"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    if with_json:
        path.with_suffix('.json').write_text(frame.to_json(orient='records', indent=2))
    return path


def _format_cell(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return '-'
        if math.isinf(value):
            return 'inf'
        return f"{value:.4g}"
    return str(value)


def frame_to_text(frame: pd.DataFrame, title: Optional[str] = None, width: int = 120) -> str:
    """Plain-text rendering of a frame as a rich table"""
    table = Table(title=title, box=box.SIMPLE_HEAVY, show_lines=False)
    for column in frame.columns:
        table.add_column(str(column), justify='left' if frame[column].dtype == object else 'right')
    for row in frame.itertuples(index=False):
        table.add_row(*(_format_cell(v) for v in row))
    console = Console(width=width, color_system=None, force_terminal=False)
    with console.capture() as capture:
        console.print(table)
    return capture.get().rstrip()


# ============ SVG BOX PLOTS ============

def render_boxplot_svg(feature: str, rows: pd.DataFrame, y_label: str = 'normalized error') -> str:
    """One box per method from five-number summary rows (min, q1, median, q3, max)"""
    width, height = _SVG['width'], _SVG['height']
    plot_top, plot_bottom = _SVG['top'], height - _SVG['bottom']
    axis_x, plot_right = _SVG['left'], width - _SVG['right']
    upper = float(rows['max'].max()) if len(rows) else 0.0
    upper = upper if upper > 0 and math.isfinite(upper) else 1.0

    def y_of(value: float) -> float:
        return round(plot_bottom - (plot_bottom - plot_top) * min(value, upper) / upper, 2)

    tick_template = load_template('boxplot_tick_svg.txt')
    ticks = []
    for k in range(5):
        value = upper * k / 4
        y = y_of(value)
        ticks.append(tick_template.format(x0=axis_x - 4, x1=axis_x, y=y, text_x=axis_x - 6, text_y=y + 3, label=f"{value:.3g}"))

    box_template = load_template('boxplot_box_svg.txt')
    slot = (plot_right - axis_x) / max(len(rows), 1)
    box_width = slot * 0.5
    boxes = []
    for k, row in enumerate(rows.itertuples(index=False)):
        center = axis_x + slot * (k + 0.5)
        boxes.append(box_template.format(
            method=row.method,
            center=round(center, 2),
            left=round(center - box_width / 2, 2),
            right=round(center + box_width / 2, 2),
            cap_left=round(center - box_width / 4, 2),
            cap_right=round(center + box_width / 4, 2),
            box_width=round(box_width, 2),
            y_min=y_of(row.min),
            y_q1=y_of(row.q1),
            y_median=y_of(row.median),
            y_q3=y_of(row.q3),
            y_max=y_of(row.max),
            box_height=round(y_of(row.q1) - y_of(row.q3), 2),
            color=METHOD_COLORS.get(row.method, '#ffffff'),
            label_y=plot_bottom + 18,
        ))

    return load_template('boxplot_svg.txt').format(
        width=width,
        height=height,
        title=feature,
        title_x=width // 2,
        axis_x=axis_x,
        plot_top=plot_top,
        plot_bottom=plot_bottom,
        plot_right=plot_right,
        label_y=(plot_top + plot_bottom) // 2,
        y_label=y_label,
        ticks="\n".join(ticks),
        boxes="\n".join(boxes),
    )


def write_boxplots(boxplot: pd.DataFrame, out_dir: Path, prefix: str = 'boxplot') -> Dict[str, str]:
    """One SVG per feature; returns {feature: path}"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for feature in RadiomicsConfig.FEATURES:
        rows = boxplot[boxplot['feature'] == feature]
        if rows.empty:
            continue
        path = out_dir / f"{prefix}_{feature}.svg"
        path.write_text(render_boxplot_svg(feature, rows))
        paths[feature] = str(path)
    return paths


# ============ TEXT REPORT ============

def _read_csv(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise MissingArtifactError(path, "run the evaluate stage first")
    return pd.read_csv(path)


def render_report(reports_dir, title: str = 'CT normalization benchmark') -> dict:
    """
    Render report.txt and per-feature SVG box plots from the evaluate stage's
    CSV / JSON outputs in `reports_dir`.

    Returns:
        Result dict with success, report path and SVG paths

    Raises:
        MissingArtifactError: If an evaluate output is missing
    """
    reports_dir = Path(reports_dir)
    metrics = _read_csv(reports_dir / METRICS_CSV)
    boxplot = _read_csv(reports_dir / BOXPLOT_CSV)
    stats = _read_csv(reports_dir / STATS_CSV)
    summary_path = reports_dir / SUMMARY_JSON
    if not summary_path.exists():
        raise MissingArtifactError(summary_path, "run the evaluate stage first")
    summary = json.loads(summary_path.read_text())

    svg_paths = {}
    for scenario in sorted(boxplot['scenario'].unique()):
        rows = boxplot[boxplot['scenario'] == scenario]
        written = write_boxplots(rows, reports_dir, f"boxplot_{scenario}")
        svg_paths.update({f"{scenario}:{feature}": path for feature, path in written.items()})

    medians = boxplot.pivot_table(index=['scenario', 'feature'], columns='method', values='median').reset_index()
    improvement = pd.DataFrame(
        [{'scenario': s, **v} for s, v in summary.get('perceptual_improvement', {}).items()]
    )
    trends = pd.DataFrame(
        [{'scenario': s, **v} for s, v in summary.get('trends', {}).items()]
    )
    text = load_template('summary_report.txt').format(
        title=title,
        manifest=summary.get('manifest', '-'),
        n_cases=summary.get('n_test_cases', '-'),
        metric_table=frame_to_text(metric_pivot(metrics)),
        improvement_table=frame_to_text(improvement) if not improvement.empty else '-',
        radiomics_table=frame_to_text(medians),
        stats_table=frame_to_text(stats),
        trend_table=frame_to_text(trends) if not trends.empty else '-',
    )
    report_path = reports_dir / REPORT_TXT
    report_path.write_text(text + "\n")
    logger.info(f"Report written to {report_path} with {len(svg_paths)} box plot(s)")
    return {'success': True, 'report_path': str(report_path), 'svg_paths': svg_paths}
