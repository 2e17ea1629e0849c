import { describe, expect, it } from "vitest";

import { ApiError, EngineClient, EngineUnreachable } from "../src/api.js";
import { ChatSession } from "../src/session.js";
import { ScriptedFetch, makeTurnResponse } from "./helpers.js";

function makeSession(fetcher: ScriptedFetch): ChatSession {
  const client = new EngineClient("http://engine.test", fetcher.fetch);
  return new ChatSession(client, "conv-1", "user-1");
}

describe("ChatSession.sendTurn", () => {
  it("appends both sides and keeps the bot text verbatim", async () => {
    const fetcher = new ScriptedFetch();
    fetcher.push(200, makeTurnResponse("Ooh, I love movies!"));
    const session = makeSession(fetcher);

    const response = await session.sendTurn("let's talk about movies", 1.0);

    expect(session.transcript).toHaveLength(2);
    expect(session.transcript[0]).toMatchObject({
      speaker: "user",
      text: "let's talk about movies",
    });
    expect(session.transcript[1]?.speaker).toBe("bot");
    // The bot bubble is exactly the API text — never fabricated.
    expect(session.transcript[1]?.text).toBe(response.text);
    expect(session.lastTrace?.selected_module).toBe("movie");
    const posted = JSON.parse(String(fetcher.calls[0]?.init?.body));
    expect(posted).toEqual({
      user_id: "user-1",
      utterance: "let's talk about movies",
      asr_confidence: 1.0,
    });
  });

  it("allows at most one in-flight turn", async () => {
    const fetcher = new ScriptedFetch();
    const release = fetcher.pushDeferred();
    const session = makeSession(fetcher);

    const first = session.sendTurn("hello there", 1.0);
    expect(session.pending).toBe(true);
    expect(session.canSend).toBe(false);
    await expect(session.sendTurn("second", 1.0)).rejects.toThrow(
      /already in flight/,
    );

    release(200, makeTurnResponse("Hi!"));
    await first;
    expect(session.pending).toBe(false);
    expect(session.transcript).toHaveLength(2);
    expect(fetcher.calls).toHaveLength(1);
  });

  it("leaves the transcript unchanged when the engine is unreachable", async () => {
    const fetcher = new ScriptedFetch();
    fetcher.pushError();
    fetcher.push(200, makeTurnResponse("Hi!"));
    const session = makeSession(fetcher);

    await expect(session.sendTurn("hello there", 1.0)).rejects.toBeInstanceOf(
      EngineUnreachable,
    );
    expect(session.transcript).toHaveLength(0);
    expect(session.pending).toBe(false);

    // The session recovers: the retry goes through normally.
    await session.sendTurn("hello there", 1.0);
    expect(session.transcript).toHaveLength(2);
  });

  it("surfaces engine-side rejections with the server message", async () => {
    const fetcher = new ScriptedFetch();
    fetcher.push(400, { error: "utterance must be a non-empty string" });
    const session = makeSession(fetcher);

    await expect(session.sendTurn("x", 1.0)).rejects.toThrowError(ApiError);
    expect(session.transcript).toHaveLength(0);
  });

  it("validates confidence bounds client-side", async () => {
    const fetcher = new ScriptedFetch();
    const session = makeSession(fetcher);
    await expect(session.sendTurn("hi", -0.1)).rejects.toThrow(/0\.\.1/);
    await expect(session.sendTurn("hi", 1.5)).rejects.toThrow(/0\.\.1/);
    expect(fetcher.calls).toHaveLength(0);
  });

  it("closes the session when the engine ends it", async () => {
    const fetcher = new ScriptedFetch();
    fetcher.push(200, makeTurnResponse("Bye!", { end_session: true }));
    const session = makeSession(fetcher);

    await session.sendTurn("goodbye", 1.0);
    expect(session.closed).toBe(true);
    expect(session.canSend).toBe(false);
    await expect(session.sendTurn("hello again", 1.0)).rejects.toThrow(
      /closed/,
    );
  });
});

describe("ChatSession.submitRating", () => {
  it("requires at least one completed turn", async () => {
    const fetcher = new ScriptedFetch();
    const session = makeSession(fetcher);
    await expect(session.submitRating(4)).rejects.toThrow(/at least one/);
    expect(fetcher.calls).toHaveLength(0);
  });

  it("rejects out-of-range and fractional stars without a request", async () => {
    const fetcher = new ScriptedFetch();
    fetcher.push(200, makeTurnResponse("Hi!"));
    const session = makeSession(fetcher);
    await session.sendTurn("hello there", 1.0);

    for (const bad of [0, 6, 3.5, NaN]) {
      await expect(session.submitRating(bad)).rejects.toThrow(/1\.\.5/);
    }
    expect(fetcher.calls).toHaveLength(1); // only the turn itself
  });

  it("submits once, closes the session, and rejects a second attempt", async () => {
    const fetcher = new ScriptedFetch();
    fetcher.push(200, makeTurnResponse("Hi!"));
    fetcher.push(200, { conversation_id: "conv-1", rating: 4 });
    const session = makeSession(fetcher);
    await session.sendTurn("hello there", 1.0);

    await session.submitRating(4);
    expect(session.ratingSubmitted).toBe(true);
    expect(session.closed).toBe(true);

    await expect(session.submitRating(5)).rejects.toThrow(/already/);
    const ratingCalls = fetcher.calls.filter((c) =>
      c.url.endsWith("/rating"),
    );
    expect(ratingCalls).toHaveLength(1);
    expect(JSON.parse(String(ratingCalls[0]?.init?.body))).toEqual({
      rating: 4,
    });
  });
});
