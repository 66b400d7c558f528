/** Browser entry point: hash routing, event wiring, status polling.
 *
 * All state lives in the URL hash plus one EditorState while an editor
 * is open; everything else is refetched, so a reload always lands on
 * exactly what the service reports.
 */

import { ApiClient } from "./client.js";
import {
  applySaveResult,
  canRegenerate,
  editDraft,
  loadRunView,
  openEditor,
  parseDraft,
  type EditorState,
} from "./state.js";
import { renderEditor, renderRunDetail, renderRunList } from "./render.js";
import type { StageName } from "./types.js";

const BASE = "";
const client = new ApiClient(BASE, (url, init) => fetch(url, init));
const root = document.getElementById("app") as HTMLElement;

let editor: EditorState | null = null;
let pollTimer: number | undefined;

function currentRunId(): string | null {
  const match = location.hash.match(/^#\/runs\/([^/]+)/);
  return match ? decodeURIComponent(match[1]!) : null;
}

async function renderPage(): Promise<void> {
  const runId = currentRunId();
  try {
    if (!runId) {
      const runs = await client.listRuns();
      root.innerHTML = renderRunList(runs);
      return;
    }
    const view = await loadRunView(client, runId);
    root.innerHTML = renderRunDetail(view, BASE);
    if (editor) {
      const host = root.querySelector(`.artifact[data-stage="${editor.stage}"]`);
      if (host) {
        const mount = document.createElement("div");
        mount.innerHTML = renderEditor(editor);
        host.appendChild(mount);
      }
    }
    const state = view.summary.status.state;
    if (state === "running" || state === "created") {
      pollTimer = window.setTimeout(renderPage, 1500);
    }
  } catch (exc) {
    root.innerHTML = `<p class="banner-error">Service unreachable: ${String(exc)}</p>`;
  }
}

function navigate(): void {
  if (pollTimer !== undefined) window.clearTimeout(pollTimer);
  editor = null;
  void renderPage();
}

async function handleClick(event: Event): Promise<void> {
  const target = event.target as HTMLElement;
  const runId = currentRunId();
  if (!runId) return;
  const stage = target.dataset.stage as StageName | undefined;

  if (target.matches("button.edit") && stage) {
    const artifact = await client.getArtifact(runId, stage);
    if (artifact) {
      editor = openEditor(stage, artifact);
      await renderPage();
    }
  } else if (target.matches("button.save") && editor) {
    const textarea = root.querySelector<HTMLTextAreaElement>(".editor textarea.draft");
    if (textarea) editor = editDraft(editor, textarea.value);
    const parsed = parseDraft(editor);
    if (parsed.error) {
      window.alert(`Not valid JSON: ${parsed.error}`);
      return;
    }
    const result = await client.saveArtifact(runId, editor.stage, parsed.value);
    editor = applySaveResult(editor, result);
    await renderPage();
  } else if (target.matches("button.regenerate") && editor && canRegenerate(editor)) {
    const result = await client.resume(runId, editor.stage);
    if (!result.ok && result.error) {
      window.alert(`${result.error.error}: ${result.error.message}`);
      return;
    }
    editor = null;
    await renderPage();
  }
}

window.addEventListener("hashchange", navigate);
root.addEventListener("click", (event) => void handleClick(event));
navigate();
