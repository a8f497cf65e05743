// Pending-transfer card. Values are shown exactly as the gateway sent
// them; this module performs no amount parsing or arithmetic.

import type { TransferPreview } from "./api.js";

export interface PreviewHandlers {
  onApprove: (secondFactor: string | null) => void;
  onDecline: () => void;
  onEdit: (fields: Record<string, string>) => void;
}

const FIELD_ROWS: Array<[keyof TransferPreview, string]> = [
  ["recipientName", "Recipient"],
  ["bankName", "Bank"],
  ["accountNumber", "Account number"],
  ["amount", "Amount"],
  ["reference", "Reference"],
];

const EDITABLE_FIELDS: Array<[string, string]> = [
  ["recipient_name", "recipientName"],
  ["bank_name", "bankName"],
  ["account_number", "accountNumber"],
  ["amount", "amount"],
  ["reference", "reference"],
];

export function isTransferPreview(value: unknown): value is TransferPreview {
  if (typeof value !== "object" || value === null) {
    return false;
  }
  const record = value as Record<string, unknown>;
  for (const key of [
    "txId",
    "recipientName",
    "bankName",
    "accountNumber",
    "amount",
    "reference",
  ]) {
    if (typeof record[key] !== "string") {
      return false;
    }
  }
  return typeof record["requires2FA"] === "boolean";
}

function row(label: string, value: string): HTMLElement {
  const line = document.createElement("div");
  line.className = "preview-row";
  const name = document.createElement("span");
  name.className = "preview-label";
  name.textContent = label;
  const cell = document.createElement("span");
  cell.className = "preview-value";
  cell.textContent = value;
  line.append(name, cell);
  return line;
}

export function renderPreview(
  payload: unknown,
  handlers: PreviewHandlers,
  options: { issuedCode?: string | null; disabled?: boolean } = {},
): HTMLElement {
  const card = document.createElement("section");
  card.className = "preview-card";

  if (!isTransferPreview(payload)) {
    const banner = document.createElement("div");
    banner.className = "preview-error";
    banner.setAttribute("role", "alert");
    banner.textContent = "Could not display this transfer preview.";
    card.append(banner);
    return card;
  }

  const preview = payload;
  card.dataset["txId"] = preview.txId;

  const heading = document.createElement("h2");
  heading.textContent = "Review transfer";
  card.append(heading);

  for (const [key, label] of FIELD_ROWS) {
    const raw = preview[key];
    const value = key === "amount" ? `RM${raw}` : String(raw);
    card.append(row(label, value));
  }

  let codeInput: HTMLInputElement | null = null;
  if (preview.requires2FA) {
    const codeWrap = document.createElement("div");
    codeWrap.className = "twofa-entry";
    const codeLabel = document.createElement("label");
    codeLabel.textContent = "Verification code";
    codeInput = document.createElement("input");
    codeInput.type = "text";
    codeInput.className = "twofa-input";
    codeInput.autocomplete = "one-time-code";
    codeLabel.append(codeInput);
    codeWrap.append(codeLabel);
    if (options.issuedCode) {
      const hint = document.createElement("span");
      hint.className = "twofa-issued";
      hint.textContent = `Code sent: ${options.issuedCode}`;
      codeWrap.append(hint);
    }
    card.append(codeWrap);
  }

  const buttons = document.createElement("div");
  buttons.className = "preview-actions";

  const approve = document.createElement("button");
  approve.type = "button";
  approve.className = "approve-button";
  approve.textContent = "Approve";
  const decline = document.createElement("button");
  decline.type = "button";
  decline.className = "decline-button";
  decline.textContent = "Decline";
  const edit = document.createElement("button");
  edit.type = "button";
  edit.className = "edit-button";
  edit.textContent = "Edit";
  buttons.append(approve, decline, edit);
  card.append(buttons);

  const syncApprove = () => {
    const entered = codeInput ? codeInput.value.trim() : "";
    approve.disabled =
      Boolean(options.disabled) || (preview.requires2FA && entered.length === 0);
  };
  syncApprove();
  decline.disabled = Boolean(options.disabled);
  edit.disabled = Boolean(options.disabled);
  if (codeInput) {
    codeInput.addEventListener("input", syncApprove);
  }

  approve.addEventListener("click", () => {
    const entered = codeInput ? codeInput.value.trim() : "";
    handlers.onApprove(entered.length > 0 ? entered : null);
  });
  decline.addEventListener("click", () => {
    handlers.onDecline();
  });

  // The editor is prefilled with the received strings and submits only
  // the fields whose text actually changed.
  edit.addEventListener("click", () => {
    const existing = card.querySelector<HTMLFormElement>(".edit-form");
    if (existing) {
      existing.remove();
      return;
    }
    const form = document.createElement("form");
    form.className = "edit-form";
    const inputs = new Map<string, [HTMLInputElement, string]>();
    for (const [wireName, viewKey] of EDITABLE_FIELDS) {
      const original = String(preview[viewKey as keyof TransferPreview]);
      const fieldLabel = document.createElement("label");
      fieldLabel.textContent = wireName.replace("_", " ");
      const input = document.createElement("input");
      input.type = "text";
      input.name = wireName;
      input.value = original;
      fieldLabel.append(input);
      form.append(fieldLabel);
      inputs.set(wireName, [input, original]);
    }
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "edit-submit";
    submit.textContent = "Save changes";
    form.append(submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const changed: Record<string, string> = {};
      for (const [wireName, [input, original]] of inputs) {
        if (input.value !== original) {
          changed[wireName] = input.value;
        }
      }
      if (Object.keys(changed).length > 0) {
        handlers.onEdit(changed);
      } else {
        form.remove();
      }
    });
    card.append(form);
  });

  return card;
}
