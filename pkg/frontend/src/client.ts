/** Thin typed wrapper over the review service HTTP API.
 *
 * The fetch function is injected so tests can stand in a scripted service.
 * Responses are passed through as parsed JSON; no interpretation happens
 * here beyond sorting success from rejection by status code.
 */

import type {
  Envelope,
  ErrorBody,
  EvaluationEntry,
  ResumeAccepted,
  RunSummary,
  StageName,
  ValidationReport,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type SaveResult =
  | { ok: true; artifact: Envelope }
  | { ok: false; status: number; report: Envelope<ValidationReport> | null; error: ErrorBody | null };

export type ResumeResult =
  | { ok: true; accepted: ResumeAccepted }
  | { ok: false; status: number; report: Envelope<ValidationReport> | null; error: ErrorBody | null };

async function rejectionParts(response: Response): Promise<{
  report: Envelope<ValidationReport> | null;
  error: ErrorBody | null;
}> {
  const body = await response.json();
  if (body && typeof body === "object" && "kind" in body && body.kind === "ValidationReport") {
    return { report: body as Envelope<ValidationReport>, error: null };
  }
  return { report: null, error: body as ErrorBody };
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.base + path);
    if (!response.ok) {
      const body = (await response.json()) as ErrorBody;
      throw new Error(`${body.error}: ${body.message}`);
    }
    return (await response.json()) as T;
  }

  async listRuns(): Promise<RunSummary[]> {
    const body = await this.getJson<{ runs: RunSummary[] }>("/runs");
    return body.runs;
  }

  async getRun(runId: string): Promise<RunSummary> {
    return this.getJson<RunSummary>(`/runs/${runId}`);
  }

  async getArtifact(runId: string, stage: StageName): Promise<Envelope | null> {
    const response = await this.fetchFn(`${this.base}/runs/${runId}/artifacts/${stage}`);
    if (response.status === 404) return null;
    if (!response.ok) {
      const body = (await response.json()) as ErrorBody;
      throw new Error(`${body.error}: ${body.message}`);
    }
    return (await response.json()) as Envelope;
  }

  async saveArtifact(runId: string, stage: StageName, artifact: unknown): Promise<SaveResult> {
    const response = await this.fetchFn(`${this.base}/runs/${runId}/artifacts/${stage}`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(artifact),
    });
    if (response.ok) {
      return { ok: true, artifact: (await response.json()) as Envelope };
    }
    const parts = await rejectionParts(response);
    return { ok: false, status: response.status, ...parts };
  }

  async resume(runId: string, fromStage?: StageName): Promise<ResumeResult> {
    const query = fromStage ? `?from=${fromStage}` : "";
    const response = await this.fetchFn(`${this.base}/runs/${runId}/resume${query}`, {
      method: "POST",
    });
    if (response.ok) {
      return { ok: true, accepted: (await response.json()) as ResumeAccepted };
    }
    const parts = await rejectionParts(response);
    return { ok: false, status: response.status, ...parts };
  }

  async listEvaluations(runId: string): Promise<EvaluationEntry[]> {
    const body = await this.getJson<{ evaluations: EvaluationEntry[] }>(
      `/runs/${runId}/evaluations`,
    );
    return body.evaluations;
  }

  async getDiagnostics(runId: string): Promise<Envelope | null> {
    const response = await this.fetchFn(`${this.base}/runs/${runId}/diagnostics`);
    if (response.status === 404) return null;
    return (await response.json()) as Envelope;
  }
}
