/** Typed HTTP client for the conversation engine's /v1 endpoints. */

export interface TurnTrace {
  detected_intents: string[];
  selected_module: string;
  fsm_path: string[];
  nlu_summary: Record<string, unknown>;
  gate: string;
  template_keys: string[];
}

export interface TurnResponse {
  text: string;
  ssml: string;
  reprompt_ssml: string;
  end_session: boolean;
  trace: TurnTrace;
}

export interface TurnRequest {
  user_id: string;
  utterance: string;
  asr_confidence: number;
}

/** The engine could not be reached at all (network refused / timed out). */
export class EngineUnreachable extends Error {
  constructor(message = "engine unreachable") {
    super(message);
    this.name = "EngineUnreachable";
  }
}

/** The engine answered with a non-success status. */
export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

async function errorMessage(
  response: { status: number; json(): Promise<unknown> },
): Promise<string> {
  try {
    const body = (await response.json()) as { error?: string };
    if (body && typeof body.error === "string") return body.error;
  } catch {
    // fall through to the generic message
  }
  return `engine returned status ${response.status}`;
}

export class EngineClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    const impl = fetchImpl ?? (globalThis.fetch as unknown as FetchLike);
    if (!impl) throw new Error("no fetch implementation available");
    this.fetchImpl = impl;
  }

  private async request(path: string, init?: Parameters<FetchLike>[1]) {
    let response: Awaited<ReturnType<FetchLike>>;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new EngineUnreachable(
        err instanceof Error ? err.message : "engine unreachable",
      );
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return response;
  }

  async sendTurn(
    conversationId: string,
    body: TurnRequest,
  ): Promise<TurnResponse> {
    const response = await this.request(
      `/v1/conversations/${encodeURIComponent(conversationId)}/turns`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    return (await response.json()) as TurnResponse;
  }

  async submitRating(conversationId: string, rating: number): Promise<void> {
    await this.request(
      `/v1/conversations/${encodeURIComponent(conversationId)}/rating`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ rating }),
      },
    );
  }

  async trace(conversationId: string): Promise<TurnTrace> {
    const response = await this.request(
      `/v1/conversations/${encodeURIComponent(conversationId)}/trace`,
    );
    return (await response.json()) as TurnTrace;
  }

  async healthy(): Promise<boolean> {
    try {
      await this.request("/v1/health");
      return true;
    } catch {
      return false;
    }
  }
}
