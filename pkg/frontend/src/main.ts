/** Page bootstrap: one browser tab = one independent conversation. */

import { EngineClient } from "./api.js";
import { ChatSession } from "./session.js";
import { createChatView } from "./ui.js";

function engineBaseUrl(): string {
  const override = new URLSearchParams(window.location.search).get("engine");
  return override ?? window.location.origin;
}

function stableUserId(): string {
  const key = "convokernel-chat-user";
  let userId = window.localStorage.getItem(key);
  if (!userId) {
    userId = `web-${crypto.randomUUID()}`;
    window.localStorage.setItem(key, userId);
  }
  return userId;
}

export function boot(root: HTMLElement): void {
  const client = new EngineClient(engineBaseUrl());
  const session = new ChatSession(
    client,
    `web-${crypto.randomUUID()}`,
    stableUserId(),
  );
  createChatView(root, session);
}

const mount = document.getElementById("chat");
if (mount) boot(mount);
