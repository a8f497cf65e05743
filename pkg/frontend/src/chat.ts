// Transcript and composer rendering.

import type { AttachmentRef } from "./api.js";
import type { RenderedTurn } from "./state.js";

// Fixture receipts shipped with the desk build; the picker attaches
// their ids rather than uploading bytes.
export const FIXTURE_ATTACHMENTS: string[] = [
  "duitnow-receipt-01",
  "chat-screenshot-01",
  "blurry-photo-01",
];

export function renderMessages(turns: RenderedTurn[]): HTMLElement {
  const list = document.createElement("div");
  list.className = "transcript";
  for (const turn of turns) {
    const bubble = document.createElement("div");
    bubble.className = `turn turn-${turn.role}`;
    bubble.textContent = turn.text;
    list.append(bubble);
  }
  return list;
}

export interface ComposerHandlers {
  onSend: (text: string, attachments: AttachmentRef[]) => void;
}

export function renderComposer(
  handlers: ComposerHandlers,
  options: { disabled?: boolean } = {},
): HTMLElement {
  const form = document.createElement("form");
  form.className = "composer";

  const input = document.createElement("input");
  input.type = "text";
  input.className = "composer-input";
  input.placeholder = "Message the assistant";
  input.disabled = Boolean(options.disabled);

  const picker = document.createElement("select");
  picker.className = "attachment-picker";
  picker.disabled = Boolean(options.disabled);
  const none = document.createElement("option");
  none.value = "";
  none.textContent = "No attachment";
  picker.append(none);
  for (const attachmentId of FIXTURE_ATTACHMENTS) {
    const option = document.createElement("option");
    option.value = attachmentId;
    option.textContent = attachmentId;
    picker.append(option);
  }

  const send = document.createElement("button");
  send.type = "submit";
  send.className = "send-button";
  send.textContent = "Send";
  send.disabled = Boolean(options.disabled);

  form.append(input, picker, send);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value.trim();
    if (text.length === 0 || form.classList.contains("composer-disabled")) {
      return;
    }
    const attachments: AttachmentRef[] =
      picker.value === "" ? [] : [{ attachmentId: picker.value }];
    input.value = "";
    picker.value = "";
    handlers.onSend(text, attachments);
  });

  if (options.disabled) {
    form.classList.add("composer-disabled");
  }
  return form;
}
