/** Typed client for the /v1 run-management API. */

export type OpKind = "keep" | "rename" | "reassign" | "merge" | "split";

export interface SplitPartJson {
  id: string;
  name: string;
  members: string[];
  definition?: string;
}

export interface StructOpJson {
  kind: OpKind;
  level: string;
  subjects: string[];
  new_name?: string;
  new_id?: string;
  new_definition?: string;
  result_id?: string;
  source_parent?: string;
  target_parent?: string;
  partition?: SplitPartJson[];
}

export interface OperationLogJson {
  operations: StructOpJson[];
  counts: Record<OpKind, number>;
}

export interface StageEntry {
  state: string;
  selection: string | null;
  input_digest: string | null;
  failures: Record<string, string>;
}

export interface RunSummary {
  run_id: string;
  status: string;
  awaiting: { interview: string; stage: string } | null;
  failure: string | null;
  dataset: string;
  research_question: string;
  policy: string;
  interviews: Record<string, { state: string; stages: Record<string, StageEntry> }>;
}

export interface ResultFile {
  structure: Record<string, unknown>;
  modification_summary: string | null;
  attempts: number;
  repairs: string[];
  raw_reply: string;
  operations?: OperationLogJson;
  failed?: boolean;
  error?: string;
}

export interface StageView {
  interview: string;
  stage: string;
  state: string;
  selection: string | null;
  failures: Record<string, string>;
  initial: ResultFile | null;
  refinements: Record<string, ResultFile | null>;
}

export interface EventsPage {
  events: Array<Record<string, unknown> & { seq: number; kind: string }>;
  next: number;
  status: string;
}

export interface ApiError {
  status: number;
  kind: string;
  message: string;
}

export class ConflictError extends Error {
  constructor(public detail: ApiError) {
    super(detail.message);
  }
}

export class RequestFailed extends Error {
  constructor(public detail: ApiError) {
    super(`${detail.kind}: ${detail.message}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, init);
    if (response.ok) {
      return (await response.json()) as T;
    }
    let detail: ApiError;
    try {
      detail = (await response.json()) as ApiError;
    } catch {
      detail = { status: response.status, kind: "internal", message: response.statusText };
    }
    if (response.status === 409) {
      throw new ConflictError(detail);
    }
    throw new RequestFailed(detail);
  }

  getRun(runId: string): Promise<RunSummary> {
    return this.request(`/v1/runs/${runId}`);
  }

  getStage(runId: string, interview: string, stage: string): Promise<StageView> {
    return this.request(`/v1/runs/${runId}/interviews/${interview}/stages/${stage}`);
  }

  submitSelection(
    runId: string,
    interview: string,
    stage: string,
    perspective: string,
  ): Promise<RunSummary> {
    return this.request(
      `/v1/runs/${runId}/interviews/${interview}/stages/${stage}/selection`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ perspective }),
      },
    );
  }

  events(runId: string, since: number, timeout: number): Promise<EventsPage> {
    return this.request(`/v1/runs/${runId}/events?since=${since}&timeout=${timeout}`);
  }

  report(runId: string): Promise<Record<string, any>> {
    return this.request(`/v1/runs/${runId}/report`);
  }
}
