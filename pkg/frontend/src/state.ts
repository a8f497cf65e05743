// View state and its pure transitions. The UI is a renderer of gateway
// payloads: nothing here validates drafts or computes amounts.

import type {
  DecisionResponse,
  MessageResponse,
  TransferPreview,
} from "./api.js";

export interface RenderedTurn {
  role: "user" | "assistant";
  text: string;
}

export interface ViewState {
  sessionId: string | null;
  messages: RenderedTurn[];
  activePreview: TransferPreview | null;
  // Desk builds surface the one-time code in responses in place of an
  // SMS channel; it is displayed next to the code entry field.
  issuedCode: string | null;
  awaiting2FA: boolean;
  inFlight: boolean;
  notice: string | null;
}

export function initialState(): ViewState {
  return {
    sessionId: null,
    messages: [],
    activePreview: null,
    issuedCode: null,
    awaiting2FA: false,
    inFlight: false,
    notice: null,
  };
}

export function withUserTurn(state: ViewState, text: string): ViewState {
  return {
    ...state,
    messages: [...state.messages, { role: "user", text }],
    notice: null,
  };
}

// A message response replaces any previous preview: at most one is active.
export function applyMessage(
  state: ViewState,
  response: MessageResponse,
): ViewState {
  const preview = response.pendingTransaction;
  return {
    ...state,
    messages: [...state.messages, { role: "assistant", text: response.reply }],
    activePreview: preview,
    issuedCode: response.twofaCode ?? null,
    awaiting2FA: preview !== null && preview.requires2FA,
    notice: null,
  };
}

export function applyDecision(
  state: ViewState,
  response: DecisionResponse,
): ViewState {
  if (response.state === "AwaitingDecision" && response.pendingTransaction) {
    // Edit path: the gateway re-previews, possibly with a fresh code.
    return {
      ...state,
      activePreview: response.pendingTransaction,
      issuedCode: response.twofaCode ?? null,
      awaiting2FA: response.pendingTransaction.requires2FA,
      messages: [
        ...state.messages,
        { role: "assistant", text: response.message },
      ],
      notice: null,
    };
  }
  return {
    ...state,
    activePreview: null,
    issuedCode: null,
    awaiting2FA: false,
    messages: [...state.messages, { role: "assistant", text: response.message }],
    notice: null,
  };
}

// Failures (wrong code, busy turn, network) keep the preview on screen.
export function applyFailure(state: ViewState, notice: string): ViewState {
  return { ...state, notice };
}

export function canApprove(state: ViewState, enteredCode: string): boolean {
  if (state.activePreview === null) {
    return false;
  }
  return !state.awaiting2FA || enteredCode.trim().length > 0;
}
