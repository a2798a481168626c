import json

import pytest

from services.activity_log_service import ActivityLogService, get_activity_log_service


@pytest.fixture
def service(tmp_path):
    return ActivityLogService(str(tmp_path))


class TestActivityLog:
    def test_log_activity_appends_json_lines(self, service):
        result = service.log_activity("system_event", "started", metadata={"threads": 2})
        assert result["success"]
        lines = service.path.read_text().splitlines()
        assert len(lines) == 1
        entry = json.loads(lines[0])
        assert entry["action_type"] == "system_event"
        assert entry["metadata"] == {"threads": 2}
        assert entry["created_at"] == result["timestamp"]

    def test_stage_results(self, service):
        service.log_stage("phantom", "phantom", {"success": True, "cases": 3, "nested": {"dropped": 1}})
        service.log_stage("train", "training", {"success": False, "error": "diverged"}, "B/gan")
        service.log_refused("scan", "/tmp/run/cases/c0/B/volume.ctv")

        phantom = service.get_recent_activities(action_type="phantom_generated")
        assert len(phantom) == 1
        assert phantom[0]["metadata"] == {"success": True, "cases": 3}

        failed = service.get_recent_activities(category="training")
        assert failed[0]["action_type"] == "training_failed"
        assert failed[0]["status"] == "failed"
        assert failed[0]["related_entity_id"] == "B/gan"

        refused = service.get_recent_activities(action_type="stage_refused")
        assert refused[0]["status"] == "refused"
        assert len(service.get_recent_activities(limit=2)) == 2

    def test_summary(self, service):
        service.log_stage("scan", "acquisition", {"success": True})
        service.log_stage("scan", "acquisition", {"success": True})
        service.log_refused("scan", "x")
        summary = service.get_activity_summary(days=1)
        assert summary["total_activities"] == 3
        assert summary["by_category"] == {"acquisition": 2, "system": 1}
        assert summary["by_type"] == {"scan_simulated": 2, "stage_refused": 1}
        assert summary["by_status"] == {"success": 2, "refused": 1}

    def test_malformed_lines_are_skipped(self, service):
        service.log_activity("system_event", "first")
        with open(service.path, "a", encoding="utf-8") as f:
            f.write("{not json\n\n")
        service.log_activity("system_event", "second")
        assert len(service.get_recent_activities()) == 2

    def test_missing_log_is_empty(self, service):
        assert service.get_recent_activities() == []
        assert service.get_activity_summary()["total_activities"] == 0

    def test_one_service_per_directory(self, tmp_path):
        first = get_activity_log_service(str(tmp_path))
        assert get_activity_log_service(str(tmp_path / ".")) is first
        assert get_activity_log_service(str(tmp_path / "other")) is not first
