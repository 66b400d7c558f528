/** JSON shapes the review service speaks. The console never invents its
 * own variants of these; whatever the server sends is what gets shown. */

export type StageName = "analogy" | "elements" | "screenplay" | "code" | "render";

export const STAGES: readonly StageName[] = [
  "analogy",
  "elements",
  "screenplay",
  "code",
  "render",
];

export interface RunStatus {
  state: string;
  stage: string | null;
  reason: string | null;
}

export interface RunSummary {
  run_id: string;
  concept_name: string;
  status: RunStatus;
  timestamps: Record<string, string>;
  artifacts: Record<StageName, boolean>;
}

/** Every artifact travels as a versioned envelope. */
export interface Envelope<T = unknown> {
  schema_version: number;
  kind: string;
  data: T;
}

export interface Mapping {
  target_property: string;
  source_counterpart: string;
  rationale: string;
}

export interface Analogy {
  source_domain: string;
  narrative: string;
  mappings: Mapping[];
}

export interface CoverageEntry {
  property: string;
  covered: boolean;
  mapping: Mapping | null;
}

export interface ValidationReport {
  passed: boolean;
  kind: string;
  issues: string[];
  coverage: CoverageEntry[];
  uncovered_properties: string[];
  undefined_elements: string[];
  warnings: string[];
}

export interface ErrorBody {
  error: string;
  message: string;
}

export interface ResumeAccepted {
  run_id: string;
  resumed_from: string;
  status_url: string;
}

export interface EvaluationEntry {
  file: string;
  kind: string;
  report: Record<string, unknown>;
}
