/**
 * Round trip against a real engine process: send a topic request, check the
 * rendered response and trace, rate the conversation, and verify the
 * server-side log ends with the rating line.
 */
import { spawn, ChildProcess } from "node:child_process";
import { mkdtemp, readFile, readdir, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { EngineClient } from "../src/api.js";
import { ChatSession } from "../src/session.js";

const REPO_ROOT = join(fileURLToPath(new URL(".", import.meta.url)), "..", "..");
const PORT = 18_000 + (process.pid % 2_000);
const BASE_URL = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let dataDir: string;
let serverOutput = "";

async function waitForHealth(client: EngineClient, timeoutMs: number) {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await client.healthy()) return;
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  throw new Error(
    `engine did not become healthy on ${BASE_URL}; output:\n${serverOutput}`,
  );
}

beforeAll(async () => {
  dataDir = await mkdtemp(join(tmpdir(), "chat-roundtrip-"));
  server = spawn(
    "python3",
    [
      "-m", "convokernel.cli",
      "serve", "--port", String(PORT), "--host", "127.0.0.1",
      "--data-dir", dataDir,
    ],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stdout?.on("data", (chunk) => (serverOutput += chunk));
  server.stderr?.on("data", (chunk) => (serverOutput += chunk));
  await waitForHealth(new EngineClient(BASE_URL), 30_000);
});

afterAll(async () => {
  if (server && server.exitCode === null) {
    server.kill("SIGTERM");
    await new Promise((resolve) => server.once("exit", resolve));
  }
  if (dataDir) await rm(dataDir, { recursive: true, force: true });
});

describe("chat round trip", () => {
  it("drives a conversation, shows the trace, and logs the rating last", async () => {
    const client = new EngineClient(BASE_URL);
    const session = new ChatSession(client, "web-roundtrip", "web-user");

    // A direct topic request routes straight into the movie module.
    const first = await session.sendTurn("let's talk about movies", 1.0);
    expect(first.text.length).toBeGreaterThan(0);
    expect(session.transcript[1]?.text).toBe(first.text);
    expect(first.trace.detected_intents).toContain("TopicRequest:movie");
    expect(first.trace.selected_module).toBe("movie");
    expect(first.trace.fsm_path.length).toBeGreaterThan(0);

    // The trace endpoint reports the same routing as the turn response.
    const polled = await client.trace("web-roundtrip");
    expect(polled).toEqual(first.trace);

    // Keep talking, then drop the recognition confidence under the gate.
    await session.sendTurn("yeah i really like action movies", 1.0);
    const low = await session.sendTurn("mumble mumble", 0.1);
    expect(low.trace.gate).toBe("low_asr");

    // Rate the conversation; a second attempt is rejected client-side.
    await session.submitRating(4);
    expect(session.ratingSubmitted).toBe(true);
    await expect(session.submitRating(5)).rejects.toThrow(/already/);

    // Server log: one line per turn in transcript order, rating line last.
    const logDir = join(dataDir, "logs");
    const files = (await readdir(logDir)).filter((f) => f.endsWith(".jsonl"));
    expect(files).toHaveLength(1);
    const lines = (await readFile(join(logDir, files[0]!), "utf-8"))
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const turnLines = lines.filter((line) => line.type === "turn");
    const botBubbles = session.transcript.filter((e) => e.speaker === "bot");
    expect(turnLines).toHaveLength(botBubbles.length);
    expect(turnLines.map((line) => line.turn_index)).toEqual(
      turnLines.map((_, index) => index),
    );
    expect(lines[lines.length - 1]).toMatchObject({
      type: "rating",
      conversation_id: "web-roundtrip",
      rating: 4,
    });
  });

  it("reports unknown conversations as engine errors, not crashes", async () => {
    const client = new EngineClient(BASE_URL);
    await expect(client.trace("never-spoke")).rejects.toThrow(
      /unknown conversation/,
    );
  });
});
