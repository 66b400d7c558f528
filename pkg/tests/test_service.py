"""HTTP service behavior: artifact review, async resume, evaluations."""

import threading
import time
from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from anvil.config import AnvilConfig
from anvil.gateway import Gateway, ScriptedBackend
from anvil.model import Analogy, Mapping, ValidationReport, VideoMeta
from anvil.pipeline import Orchestrator
from anvil.runstore import RunStore
from anvil.serialization import model_payload, parse_json, serialize
from anvil.service import create_app
from anvil.toolchain import FakeToolchain
from support import (
    ANALOGY,
    CONCEPT,
    fidelity_judge_json,
    happy_responses,
    judge_response_json,
    observed_json,
    payload,
    script_json,
)

RID = "run-a"


def service_env(
    tmp_path,
    *,
    pause_after=None,
    judge=(),
    vlm=(),
    config=None,
    orchestrator_factory=None,
):
    """A seeded store behind a test client, with scripted evaluator responses."""
    store = RunStore(tmp_path / "store")
    seeder = Orchestrator(
        store,
        Gateway(ScriptedBackend(by_role=happy_responses())),
        FakeToolchain(),
    )
    seeder.start(CONCEPT, run_id=RID, pause_after=pause_after)
    eval_gateway = Gateway(
        ScriptedBackend(by_role={"judge": list(judge), "vlm": list(vlm)})
    )
    app = create_app(
        config or AnvilConfig(),
        store=store,
        orchestrator_factory=orchestrator_factory or (lambda rid: seeder),
        gateway_factory=lambda rid: eval_gateway,
    )
    return SimpleNamespace(client=TestClient(app), store=store, app=app, orch=seeder)


def wait_for_state(client, rid, state, deadline_s=5.0):
    end = time.monotonic() + deadline_s
    while time.monotonic() < end:
        body = client.get(f"/runs/{rid}").json()
        if body["status"]["state"] == state:
            return body
        time.sleep(0.02)
    raise AssertionError(f"run {rid} never reached state {state!r}")


def edited_analogy(narrative: str) -> Analogy:
    return Analogy(
        source_domain="a stack of cafeteria trays",
        narrative=narrative,
        mappings=ANALOGY.mappings,
    )


BROKEN_ANALOGY = Analogy(
    source_domain="a stack of cafeteria trays",
    narrative="Only one property is mapped now.",
    mappings=(ANALOGY.mappings[0],),
)


class TestListing:
    def test_index_names_the_service(self, tmp_path):
        env = service_env(tmp_path)
        body = env.client.get("/").json()
        assert body["service"] == "anvil"

    def test_runs_listing_and_detail_agree(self, tmp_path):
        env = service_env(tmp_path)
        listing = env.client.get("/runs").json()["runs"]
        assert [r["run_id"] for r in listing] == [RID]
        detail = env.client.get(f"/runs/{RID}").json()
        assert detail == listing[0]
        assert detail["status"]["state"] == "rendered"
        assert detail["artifacts"] == {
            "analogy": True,
            "elements": True,
            "screenplay": True,
            "code": True,
            "render": True,
        }

    def test_unknown_run_404(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.get("/runs/missing")
        assert response.status_code == 404
        assert response.json()["error"] == "unknown_run"

    def test_repeated_reads_are_identical(self, tmp_path):
        env = service_env(tmp_path)
        first = env.client.get(f"/runs/{RID}")
        second = env.client.get(f"/runs/{RID}")
        assert first.content == second.content
        a1 = env.client.get(f"/runs/{RID}/artifacts/analogy")
        a2 = env.client.get(f"/runs/{RID}/artifacts/analogy")
        assert a1.content == a2.content


class TestGetArtifact:
    def test_returns_envelope(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.get(f"/runs/{RID}/artifacts/analogy")
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("application/json")
        body = parse_json(response.text)
        assert body["kind"] == "Analogy"
        assert body["data"] == model_payload(ANALOGY)

    def test_unknown_stage_404(self, tmp_path):
        env = service_env(tmp_path)
        assert env.client.get(f"/runs/{RID}/artifacts/storyboard").status_code == 404

    def test_absent_artifact_404(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        assert env.client.get(f"/runs/{RID}/artifacts/elements").status_code == 404


class TestPutArtifact:
    def test_accepts_envelope_and_normalizes(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        edited = edited_analogy("Trays pile; the last placed is the first lifted.")
        response = env.client.put(
            f"/runs/{RID}/artifacts/analogy", content=serialize(edited)
        )
        assert response.status_code == 200, response.text
        assert response.text == serialize(edited)
        stored = env.store.load_artifact(RID, "analogy")
        assert stored.narrative == edited.narrative
        status = env.store.load_run(RID).status
        assert status.state == "awaiting_review"
        assert status.stage == "analogy"

    def test_accepts_bare_payload(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        edited = edited_analogy("Bare payload body.")
        response = env.client.put(
            f"/runs/{RID}/artifacts/analogy", content=payload(edited)
        )
        assert response.status_code == 200, response.text

    def test_edit_archives_downstream(self, tmp_path):
        env = service_env(tmp_path)
        edited = edited_analogy("Edited after rendering.")
        response = env.client.put(
            f"/runs/{RID}/artifacts/analogy", content=serialize(edited)
        )
        assert response.status_code == 200
        slot = env.store.run_dir(RID) / "archive" / "001"
        archived = {p.name for p in slot.iterdir()}
        assert {"elements.json", "screenplay.json", "video.mp4"} <= archived
        events = [e["event"] for e in env.store.events(RID)]
        assert "artifacts_archived" in events

    def test_malformed_body_is_validation_report(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.put(f"/runs/{RID}/artifacts/analogy", content="{oops")
        assert response.status_code == 400
        body = parse_json(response.text)
        assert body["kind"] == "ValidationReport"
        assert body["data"]["passed"] is False
        assert body["data"]["kind"] == "analogy_artifact"
        assert body["data"]["issues"]

    def test_schema_violation_is_validation_report(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.put(
            f"/runs/{RID}/artifacts/analogy",
            content='{"source_domain": "trays", "narrative": "x", "mappings": []}',
        )
        assert response.status_code == 400
        body = parse_json(response.text)
        assert body["data"]["passed"] is False

    def test_uncovered_property_rejected_with_coverage_report(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.put(
            f"/runs/{RID}/artifacts/analogy", content=serialize(BROKEN_ANALOGY)
        )
        assert response.status_code == 400
        body = parse_json(response.text)
        assert body["data"]["kind"] == "analogy_coverage"
        assert body["data"]["uncovered_properties"] == [
            "pop removes the most recent item"
        ]
        # nothing was persisted or archived
        stored = env.store.load_artifact(RID, "analogy")
        assert stored.narrative == ANALOGY.narrative
        assert not (env.store.run_dir(RID) / "archive").exists()

    def test_screenplay_with_phantom_element_rejected(self, tmp_path):
        env = service_env(tmp_path)
        body = {
            "scenes": [
                {
                    "index": 1,
                    "elements_present": ["phantom"],
                    "actions": [{"subject": "phantom", "verb": "appear", "order": 1}],
                    "display_text": [],
                }
            ]
        }
        response = env.client.put(
            f"/runs/{RID}/artifacts/screenplay", json=body
        )
        assert response.status_code == 400
        report = parse_json(response.text)["data"]
        assert report["kind"] == "screenplay_elements"
        assert "phantom" in report["undefined_elements"]

    def test_element_with_unknown_asset_rejected(self, tmp_path):
        assets = tmp_path / "assets"
        assets.mkdir()
        (assets / "tray.svg").write_text("<svg/>", encoding="utf-8")
        env = service_env(
            tmp_path, config=AnvilConfig(assets_dir=str(assets))
        )
        body = {
            "elements": [
                {
                    "name": "tray",
                    "role": "one stored item",
                    "actions": ["appear"],
                    "render_source": {"kind": "asset", "filename": "doll.svg"},
                    "render_template": "svg",
                }
            ]
        }
        response = env.client.put(f"/runs/{RID}/artifacts/elements", json=body)
        assert response.status_code == 400
        report = parse_json(response.text)["data"]
        assert "doll.svg" in " ".join(report["issues"])

    def test_stage_order_conflict_409(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        meta = VideoMeta(
            path="video.mp4", duration_s=4.0, width=640, height=480, frame_count=96
        )
        response = env.client.put(
            f"/runs/{RID}/artifacts/render", content=serialize(meta)
        )
        assert response.status_code == 409
        assert response.json()["error"] == "stage_order"

    def test_unknown_run_and_stage_404(self, tmp_path):
        env = service_env(tmp_path)
        assert (
            env.client.put("/runs/missing/artifacts/analogy", content="{}").status_code
            == 404
        )
        assert (
            env.client.put(
                f"/runs/{RID}/artifacts/storyboard", content="{}"
            ).status_code
            == 404
        )

    def test_busy_run_409(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        lock = env.store.writer_lock(RID)
        lock.acquire(timeout=1)
        try:
            response = env.client.put(
                f"/runs/{RID}/artifacts/analogy",
                content=serialize(edited_analogy("While locked.")),
            )
        finally:
            lock.release()
        assert response.status_code == 409
        assert response.json()["error"] == "run_busy"


class GateBackend:
    """Holds completions at a gate so tests can observe an in-flight resume."""

    def __init__(self, inner):
        self.inner = inner
        self.gate = threading.Event()

    def complete(self, request):
        if not self.gate.wait(timeout=10):
            raise TimeoutError("test gate never released")
        return self.inner.complete(request)


class TestResume:
    def test_resume_completes_async(self, tmp_path):
        env = service_env(tmp_path, pause_after="screenplay")
        response = env.client.post(f"/runs/{RID}/resume?from=screenplay")
        assert response.status_code == 202, response.text
        body = response.json()
        assert body["resumed_from"] == "screenplay"
        assert body["status_url"] == f"/runs/{RID}"
        final = wait_for_state(env.client, RID, "rendered")
        assert final["artifacts"]["render"] is True
        video = env.client.get(f"/runs/{RID}/video")
        assert video.status_code == 200
        assert video.content.startswith(b"ANVIL-FAKE-VIDEO")

    def test_default_stage_from_status(self, tmp_path):
        env = service_env(tmp_path, pause_after="screenplay")
        response = env.client.post(f"/runs/{RID}/resume")
        assert response.status_code == 202
        assert response.json()["resumed_from"] == "screenplay"
        wait_for_state(env.client, RID, "rendered")

    def test_invalid_chain_rejected_sync(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        env.store.persist_stage(RID, "analogy", BROKEN_ANALOGY)
        response = env.client.post(f"/runs/{RID}/resume?from=analogy")
        assert response.status_code == 400
        body = parse_json(response.text)
        assert body["kind"] == "ValidationReport"
        assert body["data"]["uncovered_properties"] == [
            "pop removes the most recent item"
        ]
        # run untouched, nothing archived
        assert env.store.load_run(RID).status.state == "awaiting_review"
        assert not (env.store.run_dir(RID) / "archive").exists()

    def test_unknown_run_404(self, tmp_path):
        env = service_env(tmp_path)
        assert env.client.post("/runs/missing/resume").status_code == 404

    def test_unknown_stage_404(self, tmp_path):
        env = service_env(tmp_path)
        assert env.client.post(f"/runs/{RID}/resume?from=storyboard").status_code == 404

    def test_resume_from_render_409(self, tmp_path):
        env = service_env(tmp_path)
        assert env.client.post(f"/runs/{RID}/resume?from=render").status_code == 409

    def test_resume_without_artifact_409(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        assert env.client.post(f"/runs/{RID}/resume?from=code").status_code == 409

    def test_concurrent_resume_and_edit_409(self, tmp_path):
        backend = GateBackend(ScriptedBackend(by_role={"code": [script_json("late")]}))

        def factory_env():
            env = service_env(tmp_path, pause_after="screenplay")
            orch = Orchestrator(
                env.store, Gateway(backend), FakeToolchain()
            )
            app = create_app(
                AnvilConfig(),
                store=env.store,
                orchestrator_factory=lambda rid: orch,
            )
            return SimpleNamespace(client=TestClient(app), store=env.store, app=app)

        env = factory_env()
        first = env.client.post(f"/runs/{RID}/resume?from=screenplay")
        assert first.status_code == 202
        try:
            second = env.client.post(f"/runs/{RID}/resume?from=screenplay")
            assert second.status_code == 409
            assert second.json()["error"] == "run_busy"
            edit = env.client.put(
                f"/runs/{RID}/artifacts/analogy",
                content=serialize(edited_analogy("During resume.")),
            )
            assert edit.status_code == 409
        finally:
            backend.gate.set()
        wait_for_state(env.client, RID, "rendered")
        with env.app.state.active_lock:
            assert env.app.state.active == {}


class TestDiagnostics:
    def test_trace_envelope(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.get(f"/runs/{RID}/diagnostics")
        assert response.status_code == 200
        body = parse_json(response.text)
        assert body["kind"] == "RepairTrace"
        assert body["data"]["outcome"]["kind"] == "clean_without_repair"

    def test_before_code_stage_404(self, tmp_path):
        env = service_env(tmp_path, pause_after="analogy")
        assert env.client.get(f"/runs/{RID}/diagnostics").status_code == 404


class TestVideo:
    def test_streams_rendered_video(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.get(f"/runs/{RID}/video")
        assert response.status_code == 200
        assert response.headers["content-type"] == "video/mp4"
        assert response.content == env.store.video_path(RID).read_bytes()

    def test_unrendered_404(self, tmp_path):
        env = service_env(tmp_path, pause_after="screenplay")
        assert env.client.get(f"/runs/{RID}/video").status_code == 404


class TestEvaluations:
    def test_empty_listing(self, tmp_path):
        env = service_env(tmp_path)
        assert env.client.get(f"/runs/{RID}/evaluations").json() == {"evaluations": []}

    def test_post_analogy_evaluation(self, tmp_path):
        env = service_env(tmp_path, judge=[judge_response_json()] * 2)
        response = env.client.post(
            f"/runs/{RID}/evaluations", json={"kind": "analogy", "runs": 2}
        )
        assert response.status_code == 201, response.text
        body = parse_json(response.text)
        assert body["kind"] == "JudgeReport"
        assert body["data"]["judge_runs"] == 2
        assert body["data"]["tcc_final"] == 4
        listing = env.client.get(f"/runs/{RID}/evaluations").json()["evaluations"]
        assert [e["kind"] for e in listing] == ["analogy"]
        assert listing[0]["report"]["judge_runs"] == 2

    def test_post_fidelity_evaluation(self, tmp_path):
        env = service_env(
            tmp_path,
            judge=[fidelity_judge_json()] * 2,
            vlm=[observed_json()],
        )
        response = env.client.post(
            f"/runs/{RID}/evaluations", json={"kind": "fidelity", "runs": 2}
        )
        assert response.status_code == 201, response.text
        body = parse_json(response.text)
        assert body["kind"] == "FidelityReport"
        assert body["data"]["scene_final"] == 4

    def test_fidelity_before_render_409(self, tmp_path):
        env = service_env(tmp_path, pause_after="screenplay")
        response = env.client.post(
            f"/runs/{RID}/evaluations", json={"kind": "fidelity", "runs": 1}
        )
        assert response.status_code == 409

    def test_bad_kind_rejected(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.post(
            f"/runs/{RID}/evaluations", json={"kind": "vibes", "runs": 1}
        )
        assert response.status_code == 400
        body = parse_json(response.text)
        assert body["kind"] == "ValidationReport"
        assert body["data"]["kind"] == "evaluation_request"

    def test_bad_runs_rejected(self, tmp_path):
        env = service_env(tmp_path)
        for runs in (0, -1, "three", True):
            response = env.client.post(
                f"/runs/{RID}/evaluations", json={"kind": "analogy", "runs": runs}
            )
            assert response.status_code == 400, runs

    def test_malformed_body_rejected(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.post(
            f"/runs/{RID}/evaluations", content="not json"
        )
        assert response.status_code == 400

    def test_unknown_run_404(self, tmp_path):
        env = service_env(tmp_path)
        response = env.client.post(
            "/runs/missing/evaluations", json={"kind": "analogy"}
        )
        assert response.status_code == 404


class TestSharedValidationGate:
    def test_put_and_resume_use_the_same_hook(self, tmp_path, monkeypatch):
        env = service_env(tmp_path, pause_after="analogy")
        calls = []

        def always_reject(stage, value, **kwargs):
            calls.append(stage)
            return ValidationReport(
                passed=False, kind=f"{stage}_artifact", issues=("vetoed",)
            )

        monkeypatch.setattr("anvil.pipeline.validate_stage_artifact", always_reject)
        put = env.client.put(
            f"/runs/{RID}/artifacts/analogy",
            content=serialize(edited_analogy("Fine on its face.")),
        )
        assert put.status_code == 400
        assert parse_json(put.text)["data"]["issues"] == ["vetoed"]
        resume = env.client.post(f"/runs/{RID}/resume?from=analogy")
        assert resume.status_code == 400
        assert calls == ["analogy", "analogy"]


class TestConsoleMount:
    def test_serves_built_console_when_given(self, tmp_path):
        bundle = tmp_path / "dist"
        bundle.mkdir()
        bundle.joinpath("index.html").write_text("<!doctype html><title>console</title>")
        bundle.joinpath("main.js").write_text("export {};")
        store = RunStore(tmp_path / "store")
        app = create_app(AnvilConfig(), store=store, console_dir=str(bundle))
        client = TestClient(app)
        page = client.get("/console/")
        assert page.status_code == 200
        assert "console" in page.text
        script = client.get("/console/main.js")
        assert script.status_code == 200
        assert script.text == "export {};"
        # the API keeps working alongside the static mount
        assert client.get("/runs").json() == {"runs": []}

    def test_absent_without_a_bundle(self, tmp_path):
        env = service_env(tmp_path)
        assert env.client.get("/console/").status_code == 404
