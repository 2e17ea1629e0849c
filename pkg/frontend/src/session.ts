/** Client-side conversation state: transcript, in-flight guard, rating. */

import {
  EngineClient,
  EngineUnreachable,
  TurnResponse,
  TurnTrace,
} from "./api.js";

export interface TranscriptEntry {
  speaker: "user" | "bot";
  text: string;
  trace?: TurnTrace;
}

/**
 * One user's conversation with the engine.
 *
 * Invariants:
 * - at most one in-flight turn (`sendTurn` rejects while `pending`);
 * - every bot entry's text is exactly a `TurnResponse.text` received from
 *   the API — the client never fabricates bot text;
 * - a failed send leaves the transcript unchanged;
 * - the rating can be submitted once, after at least one completed turn;
 *   submitting it closes the session.
 */
export class ChatSession {
  readonly conversationId: string;
  readonly userId: string;
  readonly transcript: TranscriptEntry[] = [];
  pending = false;
  closed = false;
  ratingSubmitted = false;

  private readonly client: EngineClient;

  constructor(client: EngineClient, conversationId: string, userId: string) {
    if (!conversationId) throw new Error("conversationId must be non-empty");
    if (!userId) throw new Error("userId must be non-empty");
    this.client = client;
    this.conversationId = conversationId;
    this.userId = userId;
  }

  get canSend(): boolean {
    return !this.pending && !this.closed;
  }

  get canRate(): boolean {
    return (
      !this.pending &&
      !this.ratingSubmitted &&
      this.transcript.some((entry) => entry.speaker === "bot")
    );
  }

  get lastTrace(): TurnTrace | undefined {
    for (let i = this.transcript.length - 1; i >= 0; i--) {
      const entry = this.transcript[i];
      if (entry && entry.speaker === "bot") return entry.trace;
    }
    return undefined;
  }

  async sendTurn(text: string, confidence: number): Promise<TurnResponse> {
    if (this.pending) throw new Error("a turn is already in flight");
    if (this.closed) throw new Error("session is closed");
    const utterance = text.trim();
    if (!utterance) throw new Error("utterance must be non-empty");
    if (!(confidence >= 0 && confidence <= 1)) {
      throw new Error("confidence must be in 0..1");
    }
    this.pending = true;
    let response: TurnResponse;
    try {
      response = await this.client.sendTurn(this.conversationId, {
        user_id: this.userId,
        utterance,
        asr_confidence: confidence,
      });
    } finally {
      this.pending = false;
    }
    // Append only after a successful round trip, so a failed send leaves
    // the transcript untouched.
    this.transcript.push({ speaker: "user", text: utterance });
    this.transcript.push({
      speaker: "bot",
      text: response.text,
      trace: response.trace,
    });
    if (response.end_session) this.closed = true;
    return response;
  }

  async submitRating(stars: number): Promise<void> {
    if (!Number.isInteger(stars) || stars < 1 || stars > 5) {
      throw new Error("rating must be an integer in 1..5");
    }
    if (this.ratingSubmitted) throw new Error("rating already submitted");
    if (!this.transcript.some((entry) => entry.speaker === "bot")) {
      throw new Error("rate after at least one completed turn");
    }
    await this.client.submitRating(this.conversationId, stars);
    this.ratingSubmitted = true;
    this.closed = true;
  }
}

export { EngineUnreachable };
