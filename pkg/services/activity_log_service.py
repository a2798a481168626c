"""
Activity Log Service - Tracks pipeline stages of a benchmark run
Stores activity logs as JSON lines under the run's output directory
"""

import json
import logging
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from services.config import ActivityLogConfig, PathConfig

logger = logging.getLogger(__name__)

# Activity types
ActivityType = Literal[
    "phantom_generated",
    "scan_simulated",
    "training_finished",
    "training_failed",
    "volume_normalized",
    "evaluation_finished",
    "report_rendered",
    "stage_refused",
    "system_event"
]

# Activity categories
ActivityCategory = Literal[
    "phantom",
    "acquisition",
    "training",
    "inference",
    "evaluation",
    "reporting",
    "system"
]


class ActivityLogService:
    """
    Activity logging service for tracking the stages of a benchmark run.
    Appends one JSON object per line to <output_dir>/activity_log.jsonl.
    """

    def __init__(self, output_dir: Optional[str] = None):
        self.path = Path(output_dir or PathConfig.OUTPUT_DIR) / ActivityLogConfig.FILE_NAME

    def log_activity(
        self,
        action_type: str,
        description: str,
        category: str = "system",
        metadata: Optional[Dict[str, Any]] = None,
        related_entity_type: Optional[str] = None,
        related_entity_id: Optional[str] = None,
        status: str = "success"
    ) -> Dict[str, Any]:
        """
        Append an activity to the log file.

        Args:
            action_type: Type of action (phantom_generated, scan_simulated, etc.)
            description: Human-readable description of the activity
            category: Category of activity (phantom, training, etc.)
            metadata: Additional JSON-serializable data about the activity
            related_entity_type: Type of related entity (case, scenario, checkpoint)
            related_entity_id: ID of related entity
            status: Status of the activity (success, failed, refused)

        Returns:
            Result dict with success status and timestamp
        """
        log_entry = {
            "action_type": action_type,
            "description": description,
            "category": category,
            "metadata": metadata or {},
            "related_entity_type": related_entity_type,
            "related_entity_id": related_entity_id,
            "status": status,
            "created_at": datetime.now().isoformat()
        }
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(log_entry, default=str) + "\n")
            logger.debug(f"Activity logged: {action_type} - {description}")
            return {"success": True, "timestamp": log_entry["created_at"]}
        except OSError as e:
            logger.error(f"Failed to log activity: {e}")
            return {"success": False, "error": str(e)}

    def log_stage(
        self,
        stage: str,
        category: str,
        result: Dict[str, Any],
        entity_id: Optional[str] = None
    ) -> Dict[str, Any]:
        """Log the result dict of a pipeline stage"""
        action_types = {
            "phantom": "phantom_generated",
            "scan": "scan_simulated",
            "train": "training_finished" if result.get("success") else "training_failed",
            "normalize": "volume_normalized",
            "evaluate": "evaluation_finished",
            "report": "report_rendered",
        }
        metadata = {k: v for k, v in result.items() if isinstance(v, (str, int, float, bool, type(None)))}
        return self.log_activity(
            action_type=action_types.get(stage, "system_event"),
            description=f"Stage {stage} {'completed' if result.get('success') else 'failed'}",
            category=category,
            metadata=metadata,
            related_entity_type="stage",
            related_entity_id=entity_id or stage,
            status="success" if result.get("success") else "failed"
        )

    def log_refused(self, stage: str, path: str) -> Dict[str, Any]:
        """Log a stage that refused to overwrite existing output"""
        return self.log_activity(
            action_type="stage_refused",
            description=f"Stage {stage} refused to overwrite {path}",
            category="system",
            metadata={"path": path},
            status="refused"
        )

    def _read_all(self) -> List[Dict[str, Any]]:
        if not self.path.exists():
            return []
        entries = []
        with open(self.path, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(json.loads(line))
                except json.JSONDecodeError:
                    logger.warning(f"Skipping malformed activity line in {self.path}")
        return entries

    def get_recent_activities(
        self,
        limit: int = 50,
        category: Optional[str] = None,
        action_type: Optional[str] = None
    ) -> List[Dict[str, Any]]:
        """
        Get recent activity logs, newest first.

        Args:
            limit: Maximum number of logs to return
            category: Optional filter by category
            action_type: Optional filter by action type

        Returns:
            List of activity log entries
        """
        entries = self._read_all()
        if category:
            entries = [e for e in entries if e.get("category") == category]
        if action_type:
            entries = [e for e in entries if e.get("action_type") == action_type]
        entries.sort(key=lambda e: e.get("created_at", ""), reverse=True)
        return entries[:limit]

    def get_activity_summary(self, days: int = 7) -> Dict[str, Any]:
        """
        Get a summary of activities over the past N days.

        Args:
            days: Number of days to summarize

        Returns:
            Summary dict with counts by category, type and status
        """
        cutoff = datetime.now() - timedelta(days=days)
        recent = []
        for activity in self.get_recent_activities(limit=ActivityLogConfig.DEFAULT_QUERY_LIMIT):
            try:
                if datetime.fromisoformat(activity.get("created_at", "")) >= cutoff:
                    recent.append(activity)
            except ValueError:
                continue

        by_category: Dict[str, int] = {}
        by_type: Dict[str, int] = {}
        by_status: Dict[str, int] = {}
        for activity in recent:
            cat = activity.get("category", "unknown")
            by_category[cat] = by_category.get(cat, 0) + 1
            action = activity.get("action_type", "unknown")
            by_type[action] = by_type.get(action, 0) + 1
            status = activity.get("status", "unknown")
            by_status[status] = by_status.get(status, 0) + 1

        return {
            "total_activities": len(recent),
            "days": days,
            "by_category": by_category,
            "by_type": by_type,
            "by_status": by_status
        }


# Singleton instance per output directory
_activity_log_services: Dict[str, ActivityLogService] = {}


def get_activity_log_service(output_dir: Optional[str] = None) -> ActivityLogService:
    """Get the activity log service instance for an output directory"""
    key = str(Path(output_dir or PathConfig.OUTPUT_DIR).resolve())
    if key not in _activity_log_services:
        _activity_log_services[key] = ActivityLogService(output_dir)
    return _activity_log_services[key]
