"""Shared fixtures for orchestrator, command and service tests.

Everything here is deterministic: scripted provider responses, the fake
toolchain, and a helper that records those exchanges as transcripts so
command-level tests can run in pure replay mode.
"""

from anvil.code_layer import ScriptResponse
from anvil.fidelity import score_fidelity
from anvil.gateway import Gateway, RecordingBackend, ScriptedBackend
from anvil.judge import score as judge_score
from anvil.model import (
    Analogy,
    ConceptDefinition,
    Mapping,
    Scene,
    SceneAction,
    Screenplay,
)
from anvil.pipeline import Orchestrator
from anvil.prompting import load_code_template, utility_block
from anvil.runstore import RunStore
from anvil.screenplay_layer import ElementList
from anvil.serialization import canonical_json, model_payload
from anvil.toolchain import FakeToolchain

CONCEPT = ConceptDefinition(
    concept_name="Stack",
    definition="A last-in-first-out collection of items.",
    properties=(
        "push adds to the top",
        "pop removes the most recent item",
    ),
    topic_area="data_structures",
)

ANALOGY = Analogy(
    source_domain="a stack of cafeteria trays",
    narrative="Trays pile up; the last tray placed is the first one lifted.",
    mappings=(
        Mapping(
            target_property="push adds to the top",
            source_counterpart="placing a tray on the pile",
            rationale="both add at the accessible end",
        ),
        Mapping(
            target_property="pop removes the most recent item",
            source_counterpart="lifting the topmost tray",
            rationale="both remove whatever arrived last",
        ),
    ),
)

ELEMENTS = ElementList(
    elements=(
        {
            "name": "tray",
            "role": "one stored item",
            "actions": ("appear", "move_to"),
            "render_source": {"kind": "procedural"},
            "render_template": "rounded rectangle",
        },
        {
            "name": "pile",
            "role": "the collection itself",
            "actions": ("appear",),
            "render_source": {"kind": "procedural"},
            "render_template": "tall outline",
        },
    )
)

SCREENPLAY = Screenplay(
    scenes=(
        Scene(
            index=1,
            elements_present=("pile",),
            actions=(SceneAction(subject="pile", verb="appear", order=1),),
            display_text=("A stack of trays",),
        ),
        Scene(
            index=2,
            elements_present=("pile", "tray"),
            actions=(
                SceneAction(subject="tray", verb="appear", order=1),
                SceneAction(subject="tray", verb="move_to", order=2),
            ),
        ),
    )
)

UTILITY = utility_block(load_code_template("lesson_v1"))


def payload(model) -> str:
    return canonical_json(model_payload(model))


def script_json(marker: str) -> str:
    return payload(ScriptResponse(source_text=f"{UTILITY}\n# {marker}\nrun()\n"))


def happy_responses() -> dict:
    return {
        "textual": [payload(ANALOGY)],
        "screenplay": [payload(ELEMENTS), payload(SCREENPLAY)],
        "code": [script_json("first")],
    }


def judge_response_json() -> str:
    return canonical_json(
        {
            "judgments": [
                {
                    "property": "push adds to the top",
                    "tcc_label": 4,
                    "ms_label": 4,
                    "evidence": "placing a tray on the pile",
                },
                {
                    "property": "pop removes the most recent item",
                    "tcc_label": 3,
                    "ms_label": 3,
                    "evidence": "lifting the topmost tray",
                },
            ]
        }
    )


def observed_json() -> str:
    return canonical_json(
        {
            "scenes": [
                {
                    "start_s": 0.0,
                    "end_s": 6.0,
                    "entities": ["pile"],
                    "actions": ["a tall outline appears"],
                    "on_screen_text": ["A stack of trays"],
                },
                {
                    "start_s": 6.0,
                    "end_s": 12.0,
                    "entities": ["pile", "tray"],
                    "actions": ["a tray appears", "the tray slides onto the pile"],
                    "on_screen_text": [],
                },
            ]
        }
    )


def fidelity_judge_json() -> str:
    return canonical_json(
        {
            "labels": [
                {
                    "target_scene_index": 1,
                    "aligned_observed": [0],
                    "scene_label": 4,
                    "element_label": 4,
                    "action_label": 3,
                    "evidence": ["a tall outline appears"],
                },
                {
                    "target_scene_index": 2,
                    "aligned_observed": [1],
                    "scene_label": 4,
                    "element_label": 3,
                    "action_label": 3,
                    "evidence": ["the tray slides onto the pile"],
                },
            ]
        }
    )


def record_transcripts(transcript_dir, scratch_dir) -> None:
    """Drive one scripted pipeline run plus both evaluators through a
    recording gateway, leaving replayable transcripts in ``transcript_dir``."""
    by_role = happy_responses()
    by_role["judge"] = [judge_response_json()] * 3 + [fidelity_judge_json()] * 3
    by_role["vlm"] = [observed_json()]
    gateway = Gateway(RecordingBackend(ScriptedBackend(by_role=by_role), transcript_dir))
    store = RunStore(scratch_dir)
    orch = Orchestrator(store, gateway, FakeToolchain())
    run = orch.start(CONCEPT, run_id="seed")
    assert run.status.state == "rendered", "transcript seeding run must render"
    judge_score(gateway, CONCEPT, ANALOGY, runs=3)
    score_fidelity(
        gateway,
        target=run.screenplay,
        video_path=store.video_path("seed"),
        runs=3,
        duration_s=run.video.duration_s,
    )
