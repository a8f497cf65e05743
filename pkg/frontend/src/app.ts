// Top-level controller. Decision requests are emitted exclusively from
// the preview card's button handlers; rendering and typing never call
// the gateway on their own.

import type { AttachmentRef, DecisionOptions, GatewayApi } from "./api.js";
import { GatewayError } from "./api.js";
import { renderComposer, renderMessages } from "./chat.js";
import { renderPreview, type PreviewHandlers } from "./preview.js";
import {
  applyDecision,
  applyFailure,
  applyMessage,
  initialState,
  withUserTurn,
  type ViewState,
} from "./state.js";

export class App {
  private state: ViewState = initialState();

  constructor(
    private readonly root: HTMLElement,
    private readonly api: GatewayApi,
  ) {}

  get view(): ViewState {
    return this.state;
  }

  async start(): Promise<void> {
    const opened = await this.api.openSession();
    this.state = { ...initialState(), sessionId: opened.sessionId };
    this.render();
  }

  // Closes the server session and opens a fresh one.
  async reset(): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId !== null) {
      await this.api.closeSession(sessionId).catch(() => undefined);
    }
    await this.start();
  }

  private async send(text: string, attachments: AttachmentRef[]): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId === null || this.state.inFlight) {
      return;
    }
    this.state = withUserTurn({ ...this.state, inFlight: true }, text);
    this.render();
    try {
      const response = await this.api.postMessage(sessionId, text, attachments);
      this.state = applyMessage({ ...this.state, inFlight: false }, response);
    } catch (error) {
      this.state = applyFailure(
        { ...this.state, inFlight: false },
        describeFailure(error),
      );
    }
    this.render();
  }

  private async decide(decision: string, options: DecisionOptions): Promise<void> {
    const sessionId = this.state.sessionId;
    const preview = this.state.activePreview;
    if (sessionId === null || preview === null || this.state.inFlight) {
      return;
    }
    this.state = { ...this.state, inFlight: true, notice: null };
    this.render();
    try {
      const response = await this.api.postDecision(
        sessionId,
        preview.txId,
        decision,
        options,
      );
      this.state = applyDecision({ ...this.state, inFlight: false }, response);
    } catch (error) {
      // A rejected code or stale edit keeps the preview on screen so the
      // user can retry without losing the draft.
      this.state = applyFailure(
        { ...this.state, inFlight: false },
        describeFailure(error),
      );
    }
    this.render();
  }

  render(): void {
    const shell = document.createElement("main");
    shell.className = "app-shell";

    const header = document.createElement("header");
    header.className = "app-header";
    const title = document.createElement("h1");
    title.textContent = "BankChat";
    const endButton = document.createElement("button");
    endButton.type = "button";
    endButton.className = "end-session-button";
    endButton.textContent = "End session";
    endButton.disabled = this.state.inFlight;
    endButton.addEventListener("click", () => {
      void this.reset();
    });
    header.append(title, endButton);
    shell.append(header);

    shell.append(renderMessages(this.state.messages));

    if (this.state.notice !== null) {
      const banner = document.createElement("div");
      banner.className = "notice-banner";
      banner.setAttribute("role", "alert");
      banner.textContent = this.state.notice;
      shell.append(banner);
    }

    if (this.state.activePreview !== null) {
      const handlers: PreviewHandlers = {
        onApprove: (secondFactor) => {
          void this.decide(
            "approve",
            secondFactor === null ? {} : { secondFactor },
          );
        },
        onDecline: () => {
          void this.decide("decline", {});
        },
        onEdit: (fields) => {
          void this.decide("edit", { fields });
        },
      };
      shell.append(
        renderPreview(this.state.activePreview, handlers, {
          issuedCode: this.state.issuedCode,
          disabled: this.state.inFlight,
        }),
      );
    }

    shell.append(
      renderComposer(
        {
          onSend: (text, attachments) => {
            void this.send(text, attachments);
          },
        },
        { disabled: this.state.inFlight || this.state.sessionId === null },
      ),
    );

    this.root.replaceChildren(shell);
  }
}

function describeFailure(error: unknown): string {
  if (error instanceof GatewayError) {
    return error.message;
  }
  return "Request failed. Check the connection and try again.";
}
