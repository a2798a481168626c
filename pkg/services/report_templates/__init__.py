"""
Report Template Module
Loads SVG and text report templates from files for the report service
"""

from pathlib import Path

TEMPLATES_DIR = Path(__file__).parent


def load_template(filename: str) -> str:
    """
    Load a report template from a text file

    Args:
        filename: Name of the template file (e.g., 'boxplot_svg.txt')

    Returns:
        Template content as string, ready for str.format

    Raises:
        FileNotFoundError: If template file doesn't exist
    """
    template_path = TEMPLATES_DIR / filename

    if not template_path.exists():
        raise FileNotFoundError(f"Template file not found: {template_path}")

    with open(template_path, 'r', encoding='utf-8') as f:
        return f.read()
