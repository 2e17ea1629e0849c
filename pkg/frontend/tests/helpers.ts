/** Shared test fixtures: a scriptable fetch and response fabricators. */

import { FetchLike, TurnResponse, TurnTrace } from "../src/api.js";

export function makeTrace(overrides: Partial<TurnTrace> = {}): TurnTrace {
  return {
    detected_intents: ["TopicRequest:movie"],
    selected_module: "movie",
    fsm_path: ["movie.enter", "movie.ask"],
    nlu_summary: {},
    gate: "",
    template_keys: ["movie.ask_favorite"],
    ...overrides,
  };
}

export function makeTurnResponse(
  text: string,
  overrides: Partial<TurnResponse> = {},
): TurnResponse {
  return {
    text,
    ssml: `<speak>${text}</speak>`,
    reprompt_ssml: "<speak>Are you still there?</speak>",
    end_session: false,
    trace: makeTrace(),
    ...overrides,
  };
}

export interface ScriptedCall {
  url: string;
  init?: Parameters<FetchLike>[1];
}

/** A fetch whose next responses are queued ahead of time. */
export class ScriptedFetch {
  readonly calls: ScriptedCall[] = [];
  private queue: Array<() => Promise<{ status: number; body: unknown }>> = [];

  push(status: number, body: unknown): void {
    this.queue.push(() => Promise.resolve({ status, body }));
  }

  pushError(message = "connection refused"): void {
    this.queue.push(() => Promise.reject(new TypeError(message)));
  }

  /** Queue a response resolved manually by the caller (in-flight tests). */
  pushDeferred(): (status: number, body: unknown) => void {
    let release!: (value: { status: number; body: unknown }) => void;
    const gate = new Promise<{ status: number; body: unknown }>((resolve) => {
      release = resolve;
    });
    this.queue.push(() => gate);
    return (status, body) => release({ status, body });
  }

  get fetch(): FetchLike {
    return async (url, init) => {
      this.calls.push({ url, init });
      const next = this.queue.shift();
      if (!next) throw new Error(`unscripted fetch call: ${url}`);
      const { status, body } = await next();
      return {
        ok: status >= 200 && status < 300,
        status,
        json: () => Promise.resolve(body),
      };
    };
  }
}
