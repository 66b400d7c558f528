/** Pure state for the review console.
 *
 * Two rules shape everything here.  First, the console never judges an
 * edit itself: acceptance or rejection is whatever the service answered,
 * carried around as data.  Second, any view must be reconstructable from
 * the HTTP API alone, so the whole run view is a function of GET results
 * and nothing else survives a reload.
 */

import type { ApiClient, SaveResult } from "./client.js";
import type {
  Envelope,
  ErrorBody,
  EvaluationEntry,
  RunSummary,
  StageName,
  ValidationReport,
} from "./types.js";
import { STAGES } from "./types.js";

export interface RunView {
  summary: RunSummary;
  artifacts: Partial<Record<StageName, Envelope>>;
  evaluations: EvaluationEntry[];
  diagnostics: Envelope | null;
}

/** Rebuild everything the detail page shows from fresh GETs. */
export async function loadRunView(client: ApiClient, runId: string): Promise<RunView> {
  const summary = await client.getRun(runId);
  const artifacts: Partial<Record<StageName, Envelope>> = {};
  for (const stage of STAGES) {
    if (!summary.artifacts[stage]) continue;
    const envelope = await client.getArtifact(runId, stage);
    if (envelope) artifacts[stage] = envelope;
  }
  return {
    summary,
    artifacts,
    evaluations: await client.listEvaluations(runId),
    diagnostics: summary.artifacts.code ? await client.getDiagnostics(runId) : null,
  };
}

export interface EditorState {
  stage: StageName;
  /** JSON text in the editor buffer. */
  draft: string;
  /** The service's 400 verdict for the last save attempt, verbatim. */
  rejection: Envelope<ValidationReport> | null;
  /** A non-validation refusal (409 conflict, 404) from the last attempt. */
  conflict: ErrorBody | null;
  /** True only while the buffer matches a successfully saved artifact. */
  saved: boolean;
}

export function openEditor(stage: StageName, artifact: Envelope): EditorState {
  return {
    stage,
    draft: JSON.stringify(artifact.data, null, 2),
    rejection: null,
    conflict: null,
    saved: false,
  };
}

export function editDraft(state: EditorState, text: string): EditorState {
  // touching the buffer invalidates the saved mark but keeps the last
  // verdict on screen; it still describes the attempt the user is fixing
  return { ...state, draft: text, saved: false };
}

export function applySaveResult(state: EditorState, result: SaveResult): EditorState {
  if (result.ok) {
    return { ...state, rejection: null, conflict: null, saved: true };
  }
  return {
    ...state,
    rejection: result.report,
    conflict: result.error,
    saved: false,
  };
}

/** Regeneration is offered only for a buffer the service has accepted. */
export function canRegenerate(state: EditorState): boolean {
  return state.saved;
}

/** Parse the buffer for submission; a syntax error is reported locally
 * (the only client-side check: unparseable text cannot be sent at all). */
export function parseDraft(state: EditorState): { value?: unknown; error?: string } {
  try {
    return { value: JSON.parse(state.draft) };
  } catch (exc) {
    return { error: exc instanceof Error ? exc.message : String(exc) };
  }
}
