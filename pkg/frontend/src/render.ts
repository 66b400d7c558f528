/** HTML renderers: pure functions from state to markup strings.
 *
 * Server-sent text (issue lines, property names, evidence) is shown
 * verbatim apart from HTML escaping; nothing is reworded or filtered.
 */

import type { EditorState, RunView } from "./state.js";
import { canRegenerate } from "./state.js";
import type {
  Envelope,
  EvaluationEntry,
  RunStatus,
  RunSummary,
  ValidationReport,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function statusBadge(status: RunStatus): string {
  const label =
    status.state === "awaiting_review" && status.stage
      ? `awaiting review: ${status.stage}`
      : status.stage && status.state === "failed"
        ? `failed: ${status.stage}`
        : status.state;
  return `<span class="badge badge-${escapeHtml(status.state)}">${escapeHtml(label)}</span>`;
}

export function renderRunList(runs: RunSummary[]): string {
  if (runs.length === 0) {
    return `<p class="empty">No runs yet. Generate one from the command line to review it here.</p>`;
  }
  const rows = runs
    .map(
      (run) =>
        `<li><a href="#/runs/${escapeHtml(run.run_id)}">${escapeHtml(run.concept_name)}</a> ` +
        `<code>${escapeHtml(run.run_id)}</code> ${statusBadge(run.status)}</li>`,
    )
    .join("\n");
  return `<ul class="run-list">\n${rows}\n</ul>`;
}

function listBlock(title: string, lines: string[]): string {
  if (lines.length === 0) return "";
  const items = lines.map((line) => `<li>${escapeHtml(line)}</li>`).join("");
  return `<div class="report-block"><h4>${escapeHtml(title)}</h4><ul>${items}</ul></div>`;
}

/** The service's verdict, line for line. */
export function renderValidationReport(envelope: Envelope<ValidationReport>): string {
  const report = envelope.data;
  const verdict = report.passed ? "passed" : "rejected";
  const parts = [
    `<div class="validation-report validation-${verdict}" data-kind="${escapeHtml(report.kind)}">`,
    `<h3>${escapeHtml(report.kind)}: ${verdict}</h3>`,
    listBlock("Issues", report.issues),
    listBlock("Uncovered properties", report.uncovered_properties),
    listBlock("Undefined elements", report.undefined_elements),
    listBlock("Warnings", report.warnings),
    "</div>",
  ];
  return parts.filter(Boolean).join("\n");
}

export function renderEditor(state: EditorState): string {
  const regenerate = canRegenerate(state)
    ? `<button class="regenerate" data-stage="${state.stage}">Regenerate from here</button>`
    : `<button class="regenerate" data-stage="${state.stage}" disabled>Regenerate from here</button>`;
  const verdict = state.rejection
    ? renderValidationReport(state.rejection)
    : state.conflict
      ? `<p class="conflict">${escapeHtml(state.conflict.error)}: ${escapeHtml(state.conflict.message)}</p>`
      : state.saved
        ? `<p class="saved">Saved.</p>`
        : "";
  return [
    `<section class="editor" data-stage="${state.stage}">`,
    `<textarea class="draft">${escapeHtml(state.draft)}</textarea>`,
    `<button class="save" data-stage="${state.stage}">Save</button>`,
    regenerate,
    verdict,
    "</section>",
  ]
    .filter(Boolean)
    .join("\n");
}

function scoreRow(name: string, final: unknown, meets: unknown): string {
  const cls = meets ? "meets" : "below";
  return `<tr class="${cls}"><td>${escapeHtml(name)}</td><td>${escapeHtml(String(final))}</td><td>${meets ? "meets baseline" : "below baseline"}</td></tr>`;
}

export function renderEvaluations(entries: EvaluationEntry[]): string {
  if (entries.length === 0) {
    return `<p class="empty">Not yet evaluated.</p>`;
  }
  return entries
    .map((entry) => {
      const report = entry.report as Record<string, any>;
      const flags = (report.data?.meets_baseline ?? {}) as Record<string, boolean>;
      const data = (report.data ?? {}) as Record<string, unknown>;
      const rows =
        entry.kind === "analogy"
          ? [scoreRow("TCC", data.tcc_final, flags.tcc), scoreRow("MS", data.ms_final, flags.ms)]
          : [
              scoreRow("Scene", data.scene_final, flags.scene),
              scoreRow("Element", data.element_final, flags.element),
              scoreRow("Action", data.action_final, flags.action),
            ];
      return [
        `<section class="evaluation" data-kind="${escapeHtml(entry.kind)}">`,
        `<h3>${escapeHtml(entry.kind)} evaluation</h3>`,
        `<table>${rows.join("")}</table>`,
        `<details><summary>Full report</summary><pre>${escapeHtml(
          JSON.stringify(entry.report, null, 2),
        )}</pre></details>`,
        "</section>",
      ].join("\n");
    })
    .join("\n");
}

export function renderRunDetail(view: RunView, base: string): string {
  const { summary } = view;
  const sections = Object.entries(view.artifacts).map(([stage, envelope]) => {
    return [
      `<section class="artifact" data-stage="${escapeHtml(stage)}">`,
      `<h2>${escapeHtml(stage)} <small>${escapeHtml(envelope.kind)}</small></h2>`,
      `<pre class="artifact-json">${escapeHtml(JSON.stringify(envelope.data, null, 2))}</pre>`,
      `<button class="edit" data-stage="${escapeHtml(stage)}">Edit</button>`,
      "</section>",
    ].join("\n");
  });
  const video = summary.artifacts.render
    ? `<video controls src="${escapeHtml(base)}/runs/${escapeHtml(summary.run_id)}/video"></video>`
    : "";
  const diagnostics = view.diagnostics
    ? `<details class="diagnostics"><summary>Repair trace</summary><pre>${escapeHtml(
        JSON.stringify(view.diagnostics.data, null, 2),
      )}</pre></details>`
    : "";
  return [
    `<article class="run-detail" data-run="${escapeHtml(summary.run_id)}">`,
    `<h1>${escapeHtml(summary.concept_name)} ${statusBadge(summary.status)}</h1>`,
    video,
    sections.join("\n"),
    diagnostics,
    `<section class="evaluations">${renderEvaluations(view.evaluations)}</section>`,
    "</article>",
  ]
    .filter(Boolean)
    .join("\n");
}
