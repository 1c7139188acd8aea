/**
 * The one place that talks to the server. Every request body is run
 * through its schema first; error responses become ApiError with the
 * machine-readable code from the response detail.
 */
import {
  AdaptJobStatus,
  AdaptJobStatusSchema,
  EditRequest,
  EditRequestSchema,
  EditResponse,
  EditResponseSchema,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function throwApiError(resp: Response): Promise<never> {
  let code = "unknown_error";
  let message = `request failed with status ${resp.status}`;
  try {
    const body = (await resp.json()) as { detail?: { code?: string; message?: string } };
    if (body.detail?.code) code = body.detail.code;
    if (body.detail?.message) message = body.detail.message;
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(resp.status, code, message);
}

export interface AdaptPairFiles {
  input: Blob;
  target: Blob;
}

export class StudioClient {
  constructor(private baseUrl: string = "") {}

  async edit(req: EditRequest): Promise<EditResponse> {
    const body = EditRequestSchema.parse(req);
    const resp = await fetch(`${this.baseUrl}/edit`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) await throwApiError(resp);
    return EditResponseSchema.parse(await resp.json());
  }

  /** Fetches one novel view of a cached session as a PNG blob. */
  async render(sessionId: string, yaw: number, pitch: number): Promise<Blob> {
    const q = new URLSearchParams({
      session: sessionId,
      yaw: String(yaw),
      pitch: String(pitch),
    });
    const resp = await fetch(`${this.baseUrl}/render?${q}`);
    if (!resp.ok) await throwApiError(resp);
    return resp.blob();
  }

  async startAdaptation(pairs: AdaptPairFiles[], promptText: string): Promise<AdaptJobStatus> {
    const form = new FormData();
    pairs.forEach((p, i) => {
      form.append("inputs", p.input, `input_${i}.png`);
      form.append("targets", p.target, `target_${i}.png`);
    });
    form.append("prompt_text", promptText);
    const resp = await fetch(`${this.baseUrl}/adapt`, { method: "POST", body: form });
    if (!resp.ok) await throwApiError(resp);
    return AdaptJobStatusSchema.parse(await resp.json());
  }

  async adaptationStatus(jobId: string): Promise<AdaptJobStatus> {
    const resp = await fetch(`${this.baseUrl}/adapt/${jobId}`);
    if (!resp.ok) await throwApiError(resp);
    return AdaptJobStatusSchema.parse(await resp.json());
  }

  async health(): Promise<{ model_loaded: boolean; params_version: number }> {
    const resp = await fetch(`${this.baseUrl}/healthz`);
    if (!resp.ok) await throwApiError(resp);
    return resp.json();
  }
}
