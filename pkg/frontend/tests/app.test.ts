import { beforeEach, describe, expect, it } from "vitest";

import {
  GatewayError,
  type AttachmentRef,
  type DecisionOptions,
  type DecisionResponse,
  type GatewayApi,
  type MessageResponse,
  type TransferPreview,
} from "../src/api.js";
import { App } from "../src/app.js";

function preview(overrides: Partial<TransferPreview> = {}): TransferPreview {
  return {
    txId: "tx-1",
    recipientName: "John",
    bankName: "Bank ABC",
    accountNumber: "5512345678",
    amount: "1000.00",
    reference: "Funds Transfer",
    kind: "P2P",
    requires2FA: true,
    ...overrides,
  };
}

function messageResponse(
  overrides: Partial<MessageResponse> = {},
): MessageResponse {
  return {
    sessionId: "sess-1",
    reply: "Please review the transfer.",
    stages: ["guardrails", "intent", "agent"],
    pendingTransaction: preview(),
    twofaCode: "123456",
    ...overrides,
  };
}

function decisionResponse(
  overrides: Partial<DecisionResponse> = {},
): DecisionResponse {
  return {
    sessionId: "sess-1",
    txId: "tx-1",
    decision: "approve",
    state: "Executed",
    failReason: null,
    pendingTransaction: null,
    message: "Transfer of RM1000.00 to John is done. Anything else?",
    ...overrides,
  };
}

// Scripted gateway double; every outbound call is recorded so tests can
// audit exactly which user gestures caused network traffic.
class FakeGateway implements GatewayApi {
  sessionsOpened = 0;
  closedSessions: string[] = [];
  messageCalls: Array<{ message: string; attachments: AttachmentRef[] }> = [];
  decisionCalls: Array<{
    txId: string;
    decision: string;
    options: DecisionOptions;
  }> = [];
  private messageResults: Array<() => Promise<MessageResponse>> = [];
  private decisionResults: Array<() => Promise<DecisionResponse>> = [];

  queueMessage(result: MessageResponse | (() => Promise<MessageResponse>)): void {
    this.messageResults.push(
      typeof result === "function" ? result : () => Promise.resolve(result),
    );
  }

  queueDecision(
    result: DecisionResponse | GatewayError | (() => Promise<DecisionResponse>),
  ): void {
    if (result instanceof GatewayError) {
      this.decisionResults.push(() => Promise.reject(result));
    } else if (typeof result === "function") {
      this.decisionResults.push(result);
    } else {
      this.decisionResults.push(() => Promise.resolve(result));
    }
  }

  async openSession(): Promise<{ sessionId: string }> {
    this.sessionsOpened += 1;
    return { sessionId: `sess-${this.sessionsOpened}` };
  }

  postMessage(
    _sessionId: string,
    message: string,
    attachments: AttachmentRef[] = [],
  ): Promise<MessageResponse> {
    this.messageCalls.push({ message, attachments });
    const next = this.messageResults.shift();
    return next ? next() : Promise.reject(new Error("unscripted postMessage"));
  }

  postDecision(
    _sessionId: string,
    txId: string,
    decision: string,
    options: DecisionOptions = {},
  ): Promise<DecisionResponse> {
    this.decisionCalls.push({ txId, decision, options });
    const next = this.decisionResults.shift();
    return next ? next() : Promise.reject(new Error("unscripted postDecision"));
  }

  async closeSession(sessionId: string): Promise<void> {
    this.closedSessions.push(sessionId);
  }
}

const flush = (): Promise<void> => new Promise((resolve) => setTimeout(resolve, 0));

async function mount(gateway: FakeGateway): Promise<{ app: App; root: HTMLElement }> {
  const root = document.createElement("div");
  document.body.append(root);
  const app = new App(root, gateway);
  await app.start();
  return { app, root };
}

function sendText(root: HTMLElement, text: string): void {
  const input = root.querySelector<HTMLInputElement>(".composer-input")!;
  input.value = text;
  root
    .querySelector<HTMLFormElement>(".composer")!
    .dispatchEvent(new Event("submit", { cancelable: true }));
}

async function mountWithPreview(
  gateway: FakeGateway,
): Promise<{ app: App; root: HTMLElement }> {
  gateway.queueMessage(messageResponse());
  const mounted = await mount(gateway);
  sendText(
    mounted.root,
    "Transfer RM1000 to John's account at Bank ABC account  number 5512345678",
  );
  await flush();
  return mounted;
}

function enterCode(root: HTMLElement, code: string): void {
  const codeInput = root.querySelector<HTMLInputElement>(".twofa-input")!;
  codeInput.value = code;
  codeInput.dispatchEvent(new Event("input"));
}

describe("app controller", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  it("boots into an idle session without touching transaction routes", async () => {
    const gateway = new FakeGateway();
    const { app, root } = await mount(gateway);
    expect(app.view.sessionId).toBe("sess-1");
    expect(root.querySelector<HTMLInputElement>(".composer-input")?.disabled).toBe(
      false,
    );
    expect(gateway.messageCalls).toHaveLength(0);
    expect(gateway.decisionCalls).toHaveLength(0);
  });

  it("sends the typed message along with the picked fixture attachment", async () => {
    const gateway = new FakeGateway();
    gateway.queueMessage(messageResponse({ pendingTransaction: null }));
    const { root } = await mount(gateway);

    const picker = root.querySelector<HTMLSelectElement>(".attachment-picker")!;
    picker.value = "duitnow-receipt-01";
    sendText(root, "here is the receipt");
    await flush();

    expect(gateway.messageCalls).toEqual([
      {
        message: "here is the receipt",
        attachments: [{ attachmentId: "duitnow-receipt-01" }],
      },
    ]);
  });

  it("never emits a decision from rendering, typing or focus traffic", async () => {
    const gateway = new FakeGateway();
    const { app, root } = await mountWithPreview(gateway);
    expect(root.querySelector(".preview-card")).not.toBeNull();

    // Non-click activity: repeated renders, code entry, composer typing,
    // keyboard and focus events on the action buttons.
    app.render();
    app.render();
    enterCode(root, "424242");
    const composer = root.querySelector<HTMLInputElement>(".composer-input")!;
    composer.value = "typing but not sending";
    composer.dispatchEvent(new Event("input"));
    for (const selector of [".approve-button", ".decline-button", ".edit-button"]) {
      const button = root.querySelector<HTMLButtonElement>(selector)!;
      button.dispatchEvent(new Event("focus"));
      button.dispatchEvent(
        new KeyboardEvent("keydown", { key: "Enter", bubbles: true }),
      );
    }
    await flush();

    expect(gateway.decisionCalls).toHaveLength(0);

    gateway.queueDecision(decisionResponse());
    enterCode(root, "424242");
    root.querySelector<HTMLButtonElement>(".approve-button")!.click();
    await flush();
    expect(gateway.decisionCalls).toHaveLength(1);
  });

  it("posts one approval per click, carrying the entered code", async () => {
    const gateway = new FakeGateway();
    const { root } = await mountWithPreview(gateway);

    gateway.queueDecision(decisionResponse());
    enterCode(root, "424242");
    root.querySelector<HTMLButtonElement>(".approve-button")!.click();
    await flush();

    expect(gateway.decisionCalls).toEqual([
      { txId: "tx-1", decision: "approve", options: { secondFactor: "424242" } },
    ]);
    expect(root.querySelector(".preview-card")).toBeNull();
    const turns = root.querySelectorAll(".turn-assistant");
    expect(turns[turns.length - 1]?.textContent).toContain("is done");
  });

  it("shows a rejected code inline and keeps the preview for a retry", async () => {
    const gateway = new FakeGateway();
    const { root } = await mountWithPreview(gateway);

    gateway.queueDecision(
      new GatewayError(403, "TwoFaRequired", "second factor missing or wrong"),
    );
    enterCode(root, "000000");
    root.querySelector<HTMLButtonElement>(".approve-button")!.click();
    await flush();

    const banner = root.querySelector(".notice-banner");
    expect(banner?.textContent).toContain("second factor");
    const card = root.querySelector<HTMLElement>(".preview-card");
    expect(card?.dataset["txId"]).toBe("tx-1");
    expect(gateway.decisionCalls).toHaveLength(1);

    gateway.queueDecision(decisionResponse());
    enterCode(root, "123456");
    root.querySelector<HTMLButtonElement>(".approve-button")!.click();
    await flush();

    expect(root.querySelector(".preview-card")).toBeNull();
    expect(root.querySelector(".notice-banner")).toBeNull();
    expect(gateway.decisionCalls).toHaveLength(2);
  });

  it("clears the card on decline and reports the cancellation", async () => {
    const gateway = new FakeGateway();
    const { root } = await mountWithPreview(gateway);

    gateway.queueDecision(
      decisionResponse({
        decision: "decline",
        state: "Declined",
        message: "Transfer cancelled. Nothing was sent.",
      }),
    );
    root.querySelector<HTMLButtonElement>(".decline-button")!.click();
    await flush();

    expect(gateway.decisionCalls[0]?.decision).toBe("decline");
    expect(root.querySelector(".preview-card")).toBeNull();
    const turns = root.querySelectorAll(".turn-assistant");
    expect(turns[turns.length - 1]?.textContent).toContain("cancelled");
  });

  it("posts only the changed fields on edit and installs the fresh preview", async () => {
    const gateway = new FakeGateway();
    const { root } = await mountWithPreview(gateway);

    gateway.queueDecision(
      decisionResponse({
        decision: "edit",
        state: "AwaitingDecision",
        pendingTransaction: preview({ amount: "500.00" }),
        twofaCode: "777777",
        message: "Updated. Please review the transfer and confirm.",
      }),
    );
    root.querySelector<HTMLButtonElement>(".edit-button")!.click();
    const form = root.querySelector<HTMLFormElement>(".edit-form")!;
    const amount = form.querySelector<HTMLInputElement>('input[name="amount"]')!;
    amount.value = "500.00";
    form.dispatchEvent(new Event("submit", { cancelable: true }));
    await flush();

    expect(gateway.decisionCalls).toEqual([
      { txId: "tx-1", decision: "edit", options: { fields: { amount: "500.00" } } },
    ]);
    const cells = Array.from(
      root.querySelectorAll(".preview-value"),
      (cell) => cell.textContent,
    );
    expect(cells[3]).toBe("RM500.00");
    expect(root.querySelector(".twofa-issued")?.textContent).toContain("777777");
  });

  it("disables the composer while a message turn is in flight", async () => {
    const gateway = new FakeGateway();
    let release!: (value: MessageResponse) => void;
    gateway.queueMessage(
      () => new Promise<MessageResponse>((resolve) => (release = resolve)),
    );
    const { root } = await mount(gateway);

    sendText(root, "hello");
    await flush();
    expect(root.querySelector<HTMLInputElement>(".composer-input")?.disabled).toBe(
      true,
    );
    expect(root.querySelector<HTMLButtonElement>(".send-button")?.disabled).toBe(
      true,
    );

    release(messageResponse({ pendingTransaction: null }));
    await flush();
    expect(root.querySelector<HTMLInputElement>(".composer-input")?.disabled).toBe(
      false,
    );
  });

  it("disables every control while a decision is in flight", async () => {
    const gateway = new FakeGateway();
    const { root } = await mountWithPreview(gateway);

    let release!: (value: DecisionResponse) => void;
    gateway.queueDecision(
      () => new Promise<DecisionResponse>((resolve) => (release = resolve)),
    );
    enterCode(root, "123456");
    root.querySelector<HTMLButtonElement>(".approve-button")!.click();
    await flush();

    for (const selector of [
      ".approve-button",
      ".decline-button",
      ".edit-button",
      ".send-button",
    ]) {
      expect(root.querySelector<HTMLButtonElement>(selector)?.disabled).toBe(true);
    }
    // A second click during flight must not produce a second call.
    root.querySelector<HTMLButtonElement>(".decline-button")!.click();
    await flush();
    expect(gateway.decisionCalls).toHaveLength(1);

    release(decisionResponse());
    await flush();
    expect(root.querySelector(".preview-card")).toBeNull();
    expect(root.querySelector<HTMLButtonElement>(".send-button")?.disabled).toBe(
      false,
    );
  });

  it("renders an error banner without buttons for malformed previews", async () => {
    const gateway = new FakeGateway();
    gateway.queueMessage(
      messageResponse({
        pendingTransaction: { txId: "tx-9" } as unknown as TransferPreview,
        twofaCode: undefined,
      }),
    );
    const { root } = await mount(gateway);
    sendText(root, "pay someone");
    await flush();

    const card = root.querySelector(".preview-card")!;
    expect(card.querySelector(".preview-error")).not.toBeNull();
    expect(card.querySelectorAll("button")).toHaveLength(0);
    expect(gateway.decisionCalls).toHaveLength(0);
  });

  it("ends the session and boots a fresh one on request", async () => {
    const gateway = new FakeGateway();
    const { app, root } = await mountWithPreview(gateway);

    root.querySelector<HTMLButtonElement>(".end-session-button")!.click();
    await flush();

    expect(gateway.closedSessions).toEqual(["sess-1"]);
    expect(app.view.sessionId).toBe("sess-2");
    expect(app.view.messages).toEqual([]);
    expect(root.querySelector(".preview-card")).toBeNull();
  });
});
