// Typed client for the campaign service. The console never computes
// surrogate quantities itself; everything it shows comes from these
// endpoints.

export interface DimDef {
  name: string;
  lower: number;
  upper: number;
  unit?: string | null;
}

export interface TaskDef {
  name: string;
  dims: DimDef[];
  output_range: { y_min: number; y_max: number };
}

export interface CreateRequest {
  task: TaskDef & { objective?: string | null };
  config: {
    budget: number;
    tau?: number;
    batch_size?: number;
    n_init_real?: number;
    n_warmup_llm?: number;
    seed?: number;
  };
  oracle: { llm_endpoint?: string; auto_real_oracle?: string };
}

export interface PendingPoint {
  x: number[];
}

export interface CreateResponse {
  campaign_id: string;
  status: string;
  pending: PendingPoint[];
}

export interface CandidateOut {
  x: number[];
  y_llm: number | null;
  p_delta: number | null;
  gate: "llm_accepted" | "needs_experiment" | "dropped";
  budget_denied: boolean;
  y_real: number | null;
}

export interface SuggestResponse {
  iteration: number;
  candidates: CandidateOut[];
  rho: number;
  budget_remaining: number;
  pending: PendingPoint[];
  status: string;
}

export interface TellResponse {
  accepted: number;
  best_so_far: number | null;
  budget_remaining: number;
  pending: PendingPoint[];
  status: string;
}

export interface ObservationDict {
  x: number[];
  y: number;
  fidelity: "real" | "llm";
  iteration: number;
  origin: string;
}

export interface GateRecordOut {
  iteration: number;
  x: number[];
  p_delta: number | null;
  tau: number;
  decision: string;
  override: boolean;
}

export interface HistoryResponse {
  id: string;
  status: string;
  task: { name: string; dims: DimDef[]; output_range: { y_min: number; y_max: number } };
  tau: number;
  budget: { real_used: number; real_total: number; llm_used: number };
  observations: { real: ObservationDict[]; llm: ObservationDict[] };
  gate_records: GateRecordOut[];
  convergence: number[];
  rho_series: { iteration: number; rho: number }[];
  best_so_far: number | null;
  best_x: number[] | null;
  pending: PendingPoint[];
  finish_reason: string | null;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail: Record<string, unknown>;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private token?: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private headers(): Record<string, string> {
    const h: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const data = await resp.json();
    if (!resp.ok) {
      throw new ServiceError(resp.status, data as ApiErrorBody);
    }
    return data as T;
  }

  createCampaign(req: CreateRequest): Promise<CreateResponse> {
    return this.request("POST", "/campaigns", req);
  }

  getStatus(id: string): Promise<{ campaign_id: string; status: string }> {
    return this.request("GET", `/campaigns/${id}`);
  }

  suggest(id: string): Promise<SuggestResponse> {
    return this.request("POST", `/campaigns/${id}/suggest`);
  }

  tell(id: string, observations: { x: number[]; y: number }[]): Promise<TellResponse> {
    return this.request("POST", `/campaigns/${id}/observations`, { observations });
  }

  history(id: string): Promise<HistoryResponse> {
    return this.request("GET", `/campaigns/${id}/history`);
  }
}
