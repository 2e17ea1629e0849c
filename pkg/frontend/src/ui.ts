/** Plain-DOM chat view: bubbles, confidence slider, trace panel, rating. */

import { EngineUnreachable, TurnTrace } from "./api.js";
import { ChatSession } from "./session.js";

export interface ChatViewHandles {
  root: HTMLElement;
  messagesEl: HTMLElement;
  utteranceEl: HTMLInputElement;
  confidenceEl: HTMLInputElement;
  confidenceValueEl: HTMLElement;
  sendButton: HTMLButtonElement;
  tracePanel: HTMLDetailsElement;
  traceSummaryEl: HTMLElement;
  traceJsonEl: HTMLElement;
  ratingButtons: HTMLButtonElement[];
  ratingStatusEl: HTMLElement;
  sendUtterance(text?: string): Promise<void>;
  submitRating(stars: number): Promise<void>;
  refresh(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function traceRows(trace: TurnTrace): Array<[string, string]> {
  return [
    ["intents", trace.detected_intents.join(", ") || "—"],
    ["module", trace.selected_module],
    ["path", trace.fsm_path.join(" → ") || "—"],
    ["templates", trace.template_keys.join(", ") || "—"],
    ["gate", trace.gate || "—"],
  ];
}

export function createChatView(
  root: HTMLElement,
  session: ChatSession,
): ChatViewHandles {
  const doc = root.ownerDocument;

  const messagesEl = el(doc, "div", "messages");

  const tracePanel = doc.createElement("details");
  tracePanel.className = "trace-panel";
  const traceToggle = el(doc, "summary", undefined, "Turn trace");
  const traceSummaryEl = el(doc, "dl", "trace-fields");
  const traceJsonEl = el(doc, "pre", "trace-json");
  tracePanel.append(traceToggle, traceSummaryEl, traceJsonEl);

  const composer = el(doc, "form", "composer");
  const utteranceEl = doc.createElement("input");
  utteranceEl.type = "text";
  utteranceEl.className = "utterance";
  utteranceEl.placeholder = "Say something…";
  const confidenceEl = doc.createElement("input");
  confidenceEl.type = "range";
  confidenceEl.className = "confidence";
  confidenceEl.min = "0";
  confidenceEl.max = "1";
  confidenceEl.step = "0.05";
  confidenceEl.value = "1";
  const confidenceValueEl = el(doc, "output", "confidence-value", "1.00");
  const sendButton = doc.createElement("button");
  sendButton.type = "submit";
  sendButton.className = "send";
  sendButton.textContent = "Send";
  composer.append(utteranceEl, confidenceEl, confidenceValueEl, sendButton);

  const ratingEl = el(doc, "div", "rating");
  const ratingButtons: HTMLButtonElement[] = [];
  for (let stars = 1; stars <= 5; stars++) {
    const button = doc.createElement("button");
    button.type = "button";
    button.className = "star";
    button.dataset.stars = String(stars);
    button.textContent = "★".repeat(stars);
    ratingButtons.push(button);
    ratingEl.append(button);
  }
  const ratingStatusEl = el(doc, "span", "rating-status", "Rate this chat");
  ratingEl.append(ratingStatusEl);

  root.append(messagesEl, tracePanel, composer, ratingEl);

  function renderTranscript(): void {
    messagesEl.replaceChildren();
    for (const entry of session.transcript) {
      // Bot bubbles render the transcript text verbatim — the transcript
      // only ever holds text received from the engine.
      messagesEl.append(el(doc, "div", `bubble ${entry.speaker}`, entry.text));
    }
  }

  function renderTrace(): void {
    const trace = session.lastTrace;
    traceSummaryEl.replaceChildren();
    if (!trace) {
      traceJsonEl.textContent = "";
      return;
    }
    for (const [label, value] of traceRows(trace)) {
      traceSummaryEl.append(el(doc, "dt", undefined, label));
      traceSummaryEl.append(el(doc, "dd", undefined, value));
    }
    traceJsonEl.textContent = JSON.stringify(trace, null, 2);
  }

  function updateControls(): void {
    sendButton.disabled = !session.canSend;
    utteranceEl.disabled = !session.canSend;
    for (const button of ratingButtons) button.disabled = !session.canRate;
    if (session.ratingSubmitted) {
      ratingStatusEl.textContent = "Thanks! Rating recorded.";
    } else if (session.closed) {
      ratingStatusEl.textContent = "Conversation ended";
    }
  }

  function refresh(): void {
    renderTranscript();
    renderTrace();
    updateControls();
  }

  function showErrorBubble(message: string): void {
    messagesEl.append(el(doc, "div", "bubble error error-bubble", message));
  }

  async function sendUtterance(text?: string): Promise<void> {
    const utterance = (text ?? utteranceEl.value).trim();
    if (!utterance || !session.canSend) return;
    const confidence = Number(confidenceEl.value);
    updateControls();
    sendButton.disabled = true;
    utteranceEl.disabled = true;
    try {
      await session.sendTurn(utterance, confidence);
      utteranceEl.value = "";
      refresh();
    } catch (err) {
      // A failed send leaves the transcript untouched; surface it inline.
      refresh();
      if (err instanceof EngineUnreachable) {
        showErrorBubble("Engine unreachable — is the server running?");
      } else {
        showErrorBubble(err instanceof Error ? err.message : String(err));
      }
    }
  }

  async function submitRating(stars: number): Promise<void> {
    if (!session.canRate) return;
    try {
      await session.submitRating(stars);
    } catch (err) {
      showErrorBubble(err instanceof Error ? err.message : String(err));
    }
    refresh();
  }

  composer.addEventListener("submit", (event) => {
    event.preventDefault();
    void sendUtterance();
  });
  confidenceEl.addEventListener("input", () => {
    confidenceValueEl.textContent = Number(confidenceEl.value).toFixed(2);
  });
  for (const button of ratingButtons) {
    button.addEventListener("click", () => {
      void submitRating(Number(button.dataset.stars));
    });
  }

  refresh();
  return {
    root,
    messagesEl,
    utteranceEl,
    confidenceEl,
    confidenceValueEl,
    sendButton,
    tracePanel,
    traceSummaryEl,
    traceJsonEl,
    ratingButtons,
    ratingStatusEl,
    sendUtterance,
    submitRating,
    refresh,
  };
}
