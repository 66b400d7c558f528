"""Fidelity proxy: observation, per-scene labeling, multi-run aggregation."""

from __future__ import annotations

import inspect
import json
from fractions import Fraction

import pytest

from anvil.errors import (
    EmptyCollection,
    EvaluationError,
    PreconditionError,
    SchemaValidationError,
    UnreadableMediaError,
)
from anvil.fidelity import (
    FidelityRun,
    ObservedScene,
    ObservedScreenplay,
    SceneFidelityLabel,
    aggregate_fidelity,
    batch_summary,
    judge_fidelity_once,
    observe_screenplay,
    run_raws,
    score_fidelity,
)
from anvil.gateway import Gateway, ScriptedBackend
from anvil.model import Scene, SceneAction, Screenplay
from anvil.serialization import build_model

TARGET = Screenplay(
    scenes=tuple(
        Scene(
            index=i,
            elements_present=("waiter", "kitchen"),
            actions=(SceneAction(subject="waiter", verb="move_to", order=1),),
            display_text=(f"Scene {i}",),
        )
        for i in (1, 2, 3)
    )
)

OBSERVED = {
    "scenes": [
        {
            "start_s": 0.0,
            "end_s": 4.0,
            "entities": ["waiter", "kitchen"],
            "actions": ["waiter appears"],
            "on_screen_text": ["Scene 1"],
        },
        {
            "start_s": 4.0,
            "end_s": 9.0,
            "entities": ["waiter", "order"],
            "actions": ["waiter moves to kitchen"],
            "on_screen_text": [],
        },
    ]
}


def label_dict(index: int, scene: int, element: int, action: int, aligned=None) -> dict:
    aligned = [0] if aligned is None else aligned
    record = {
        "target_scene_index": index,
        "aligned_observed": aligned,
        "scene_label": scene,
        "element_label": element,
        "action_label": action,
        "evidence": ["waiter appears"] if aligned else [],
    }
    return record


def labels_response(*labels: dict) -> str:
    return json.dumps({"labels": list(labels)})


def fidelity_gateway(vlm=(), judge=()) -> tuple[Gateway, ScriptedBackend]:
    backend = ScriptedBackend(by_role={"vlm": list(vlm), "judge": list(judge)})
    return Gateway(backend), backend


@pytest.fixture
def video(tmp_path):
    path = tmp_path / "video.mp4"
    path.write_bytes(b"ANVIL-FAKE-VIDEO\nabc\n")
    return path


class TestObservedModels:
    def test_scene_time_order(self):
        with pytest.raises(ValueError, match="end_s"):
            ObservedScene(start_s=5.0, end_s=2.0)

    def test_negative_start_rejected(self):
        with pytest.raises(ValueError):
            ObservedScene(start_s=-1.0, end_s=2.0)

    def test_scenes_ordered_by_start(self):
        with pytest.raises(ValueError, match="ordered"):
            ObservedScreenplay(
                scenes=(
                    ObservedScene(start_s=5.0, end_s=6.0),
                    ObservedScene(start_s=0.0, end_s=4.0),
                )
            )

    def test_unordered_fixture_rejected_with_field_path(self):
        bad = {
            "scenes": [
                {"start_s": 5.0, "end_s": 6.0},
                {"start_s": 0.0, "end_s": 4.0},
            ]
        }
        with pytest.raises(SchemaValidationError) as exc_info:
            build_model(ObservedScreenplay, bad)
        assert any("scenes" in p for p in exc_info.value.field_paths)

    def test_unaligned_scene_floors_label(self):
        with pytest.raises(ValueError, match="scene_label 1"):
            SceneFidelityLabel(
                target_scene_index=1,
                aligned_observed=(),
                scene_label=2,
                element_label=1,
                action_label=1,
            )

    def test_unaligned_scene_label_1_accepted(self):
        label = SceneFidelityLabel(
            target_scene_index=1,
            aligned_observed=(),
            scene_label=1,
            element_label=1,
            action_label=1,
        )
        assert label.aligned_observed == ()

    def test_negative_observed_index_rejected(self):
        with pytest.raises(ValueError, match="zero-based"):
            SceneFidelityLabel(
                target_scene_index=1,
                aligned_observed=(-1,),
                scene_label=3,
                element_label=3,
                action_label=3,
            )


class TestRunRaws:
    def test_spec_example(self):
        # Hand oracle: scene [4,3,4] element [3,3,3] action [2,3,2]
        # -> (11/3, 3, 7/3)
        labels = [
            SceneFidelityLabel(
                target_scene_index=i + 1,
                aligned_observed=(0,),
                scene_label=s,
                element_label=e,
                action_label=a,
            )
            for i, (s, e, a) in enumerate([(4, 3, 2), (3, 3, 3), (4, 3, 2)])
        ]
        scene, element, action = run_raws(labels)
        assert scene == Fraction(11, 3)
        assert element == Fraction(3)
        assert action == Fraction(7, 3)

    def test_single_scene_identity(self):
        labels = [
            SceneFidelityLabel(
                target_scene_index=1,
                aligned_observed=(0,),
                scene_label=2,
                element_label=4,
                action_label=3,
            )
        ]
        assert run_raws(labels) == (Fraction(2), Fraction(4), Fraction(3))

    def test_empty_rejected(self):
        with pytest.raises(PreconditionError):
            run_raws([])


class TestObserveScreenplay:
    def test_reads_video_and_parses(self, video):
        gateway, backend = fidelity_gateway(vlm=[json.dumps(OBSERVED)])
        observed = observe_screenplay(gateway, video, duration_s=12.0)
        assert len(observed.scenes) == 2
        assert observed.scenes[0].entities == ("waiter", "kitchen")
        request = backend.requests[0]
        assert "12 seconds" in request.prompt
        assert request.attachments[0].media_type == "video/mp4"
        assert request.attachments[0].filename == "video.mp4"

    def test_unknown_duration(self, video):
        gateway, backend = fidelity_gateway(vlm=[json.dumps(OBSERVED)])
        observe_screenplay(gateway, video)
        assert "unknown seconds" in backend.requests[0].prompt

    def test_zero_length_video_rejected_before_any_call(self, tmp_path):
        empty = tmp_path / "empty.mp4"
        empty.write_bytes(b"")
        gateway, backend = fidelity_gateway(vlm=[json.dumps(OBSERVED)])
        with pytest.raises(UnreadableMediaError, match="empty"):
            observe_screenplay(gateway, empty)
        assert backend.requests == []

    def test_missing_video_rejected(self, tmp_path):
        gateway, _ = fidelity_gateway()
        with pytest.raises(UnreadableMediaError, match="cannot read"):
            observe_screenplay(gateway, tmp_path / "absent.mp4")


class TestJudgeFidelityOnce:
    OBSERVED_MODEL = build_model(ObservedScreenplay, OBSERVED)

    def test_labels_every_scene(self):
        gateway, backend = fidelity_gateway(
            judge=[
                labels_response(
                    label_dict(1, 4, 3, 2),
                    label_dict(2, 3, 3, 3, aligned=[0, 1]),
                    label_dict(3, 1, 1, 1, aligned=[]),
                )
            ]
        )
        run = judge_fidelity_once(gateway, TARGET, self.OBSERVED_MODEL)
        assert run.scene_raw == pytest.approx(8 / 3)
        assert run.element_raw == pytest.approx(7 / 3)
        assert run.action_raw == 2.0
        prompt = backend.requests[0].prompt
        assert "waiter moves to kitchen" in prompt
        assert "Scene 2" in prompt

    def test_labels_sorted_by_scene_index(self):
        gateway, _ = fidelity_gateway(
            judge=[
                labels_response(
                    label_dict(3, 3, 3, 3),
                    label_dict(1, 4, 3, 2),
                    label_dict(2, 3, 3, 3),
                )
            ]
        )
        run = judge_fidelity_once(gateway, TARGET, self.OBSERVED_MODEL)
        assert [l.target_scene_index for l in run.labels] == [1, 2, 3]

    def test_missing_scene_rejected(self):
        gateway, _ = fidelity_gateway(
            judge=[labels_response(label_dict(1, 4, 3, 2), label_dict(2, 3, 3, 3))]
        )
        with pytest.raises(EvaluationError, match="exactly once"):
            judge_fidelity_once(gateway, TARGET, self.OBSERVED_MODEL)

    def test_duplicate_scene_rejected(self):
        gateway, _ = fidelity_gateway(
            judge=[
                labels_response(
                    label_dict(1, 4, 3, 2),
                    label_dict(2, 3, 3, 3),
                    label_dict(2, 2, 2, 2),
                )
            ]
        )
        with pytest.raises(EvaluationError, match="exactly once"):
            judge_fidelity_once(gateway, TARGET, self.OBSERVED_MODEL)

    def test_alignment_beyond_observed_rejected(self):
        gateway, _ = fidelity_gateway(
            judge=[
                labels_response(
                    label_dict(1, 4, 3, 2, aligned=[5]),
                    label_dict(2, 3, 3, 3),
                    label_dict(3, 3, 3, 3),
                )
            ]
        )
        with pytest.raises(EvaluationError, match="only 2 observed"):
            judge_fidelity_once(gateway, TARGET, self.OBSERVED_MODEL)


class TestAggregateFidelity:
    def make_run(self, rows: list[tuple[int, int, int]]) -> FidelityRun:
        labels = tuple(
            SceneFidelityLabel(
                target_scene_index=i + 1,
                aligned_observed=(0,),
                scene_label=s,
                element_label=e,
                action_label=a,
            )
            for i, (s, e, a) in enumerate(rows)
        )
        scene, element, action = run_raws(labels)
        return FidelityRun(
            labels=labels,
            scene_raw=float(scene),
            element_raw=float(element),
            action_raw=float(action),
        )

    def test_multi_run_oracle(self):
        # Hand oracle: action raws [7/3, 8/3, 7/3] -> mean 22/9 -> final 2.
        runs = [
            self.make_run([(4, 3, 2), (3, 3, 3), (4, 3, 2)]),
            self.make_run([(4, 3, 3), (3, 3, 3), (4, 3, 2)]),
            self.make_run([(4, 3, 2), (3, 3, 3), (4, 3, 2)]),
        ]
        report = aggregate_fidelity(runs)
        assert report.action_mean == pytest.approx(float(Fraction(22, 9)), abs=1e-12)
        assert report.action_final == 2
        assert report.meets_baseline.action is False
        assert report.scene_mean == pytest.approx(float(Fraction(11, 3)), abs=1e-12)
        assert report.scene_final == 4
        assert report.meets_baseline.scene is True
        assert report.element_final == 3
        assert report.meets_baseline.element is True

    def test_identical_runs_mean_equals_raw(self):
        runs = [self.make_run([(3, 2, 4)])] * 3
        report = aggregate_fidelity(runs)
        assert (report.scene_mean, report.element_mean, report.action_mean) == (3.0, 2.0, 4.0)

    def test_half_rounds_up(self):
        # scene raws [3, 4] -> mean 3.5 -> final 4
        runs = [self.make_run([(3, 3, 3)]), self.make_run([(4, 3, 3)])]
        report = aggregate_fidelity(runs)
        assert report.scene_mean == 3.5
        assert report.scene_final == 4

    def test_empty_rejected(self):
        with pytest.raises(PreconditionError):
            aggregate_fidelity([])


class TestBatchSummary:
    def report_at(self, scene: int, element: int, action: int):
        label = SceneFidelityLabel(
            target_scene_index=1,
            aligned_observed=(0,),
            scene_label=scene,
            element_label=element,
            action_label=action,
        )
        run = FidelityRun(
            labels=(label,),
            scene_raw=float(scene),
            element_raw=float(element),
            action_raw=float(action),
        )
        return aggregate_fidelity([run])

    def test_hand_oracle(self):
        # Scene means 4, 4, 2, 2: mean 3, population variance 1, sd 1.
        # Two of four finals clear the baseline.
        reports = [self.report_at(v, 3, 3) for v in (4, 4, 2, 2)]
        table = batch_summary(reports)
        assert table["reports"] == 4
        assert table["scene"]["mean"] == 3.0
        assert table["scene"]["sd"] == 1.0
        assert table["scene"]["meets_baseline_pct"] == 50.0
        assert table["element"]["mean"] == 3.0
        assert table["element"]["sd"] == 0.0
        assert table["element"]["meets_baseline_pct"] == 100.0

    def test_corpus_shaped_batch(self):
        # 47/50, 44/50 and 26/50 meeting the bar: 94%, 88% and 52% exactly.
        reports = [self.report_at(4, 4, 4) for _ in range(26)]
        reports += [self.report_at(4, 4, 2) for _ in range(18)]
        reports += [self.report_at(4, 2, 2) for _ in range(3)]
        reports += [self.report_at(2, 2, 2) for _ in range(3)]
        table = batch_summary(reports)
        assert table["scene"]["meets_baseline_pct"] == 94.0
        assert table["element"]["meets_baseline_pct"] == 88.0
        assert table["action"]["meets_baseline_pct"] == 52.0

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyCollection):
            batch_summary([])


class TestScoreFidelity:
    def test_observe_once_judge_thrice(self, video):
        judge_runs = [
            labels_response(
                label_dict(1, 4, 3, 2),
                label_dict(2, 3, 3, 3),
                label_dict(3, 4, 3, 2),
            )
        ] * 3
        gateway, backend = fidelity_gateway(vlm=[json.dumps(OBSERVED)], judge=judge_runs)
        report = score_fidelity(gateway, TARGET, video, runs=3)
        assert report.judge_runs == 3
        assert gateway.call_counts["vlm"] == 1
        assert gateway.call_counts["judge"] == 3
        assert report.scene_mean == pytest.approx(float(Fraction(11, 3)))
        assert len(backend.requests) == 4

    def test_partial_failure_attaches_runs(self, video):
        gateway, _ = fidelity_gateway(
            vlm=[json.dumps(OBSERVED)],
            judge=[
                labels_response(
                    label_dict(1, 4, 3, 2),
                    label_dict(2, 3, 3, 3),
                    label_dict(3, 4, 3, 2),
                )
            ],
        )
        with pytest.raises(EvaluationError, match="run 2 of 3") as exc_info:
            score_fidelity(gateway, TARGET, video, runs=3)
        assert len(exc_info.value.partial_runs) == 1

    def test_zero_runs_rejected(self, video):
        gateway, _ = fidelity_gateway()
        with pytest.raises(PreconditionError):
            score_fidelity(gateway, TARGET, video, runs=0)

    def test_interface_never_sees_analogy_or_concept(self):
        parameters = set(inspect.signature(score_fidelity).parameters)
        assert "analogy" not in parameters
        assert "concept" not in parameters
        assert parameters == {"gateway", "target", "video_path", "runs", "duration_s"}
