// Typed client for the session gateway HTTP+JSON API. Amount fields are
// strings rendered by the server and are passed through untouched; this
// client never parses or recomputes money.

export interface TransferPreview {
  txId: string;
  recipientName: string;
  bankName: string;
  accountNumber: string;
  amount: string;
  reference: string;
  kind: string;
  requires2FA: boolean;
}

export interface AttachmentRef {
  attachmentId: string;
  sizeBytes?: number;
}

export interface MessageResponse {
  sessionId: string;
  reply: string;
  stages: string[];
  pendingTransaction: TransferPreview | null;
  twofaCode?: string;
}

export interface DecisionResponse {
  sessionId: string;
  txId: string;
  decision: string;
  state: string;
  failReason: string | null;
  pendingTransaction: TransferPreview | null;
  message: string;
  twofaCode?: string;
}

export interface DecisionOptions {
  secondFactor?: string;
  fields?: Record<string, string>;
}

export class GatewayError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
    this.name = "GatewayError";
  }
}

// Structural surface so tests can substitute a scripted client.
export interface GatewayApi {
  openSession(): Promise<{ sessionId: string }>;
  postMessage(
    sessionId: string,
    message: string,
    attachments?: AttachmentRef[],
  ): Promise<MessageResponse>;
  postDecision(
    sessionId: string,
    txId: string,
    decision: string,
    options?: DecisionOptions,
  ): Promise<DecisionResponse>;
  closeSession(sessionId: string): Promise<void>;
}

export class GatewayClient implements GatewayApi {
  private readonly fetchImpl: typeof fetch;

  constructor(
    private readonly baseUrl = "",
    fetchImpl: typeof fetch = fetch,
  ) {
    this.fetchImpl = fetchImpl.bind(globalThis);
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload: unknown = await response.json().catch(() => ({}));
    if (!response.ok) {
      const raw = payload as { error?: string; detail?: string };
      throw new GatewayError(
        response.status,
        raw.error ?? "UnknownError",
        raw.detail ?? `request failed with status ${response.status}`,
      );
    }
    return payload as T;
  }

  openSession(): Promise<{ sessionId: string }> {
    return this.request("POST", "/sessions");
  }

  postMessage(
    sessionId: string,
    message: string,
    attachments: AttachmentRef[] = [],
  ): Promise<MessageResponse> {
    return this.request("POST", `/sessions/${sessionId}/messages`, {
      message,
      attachments,
    });
  }

  postDecision(
    sessionId: string,
    txId: string,
    decision: string,
    options: DecisionOptions = {},
  ): Promise<DecisionResponse> {
    return this.request(
      "POST",
      `/sessions/${sessionId}/transactions/${txId}/decision`,
      {
        decision,
        secondFactor: options.secondFactor ?? null,
        fields: options.fields ?? null,
      },
    );
  }

  async closeSession(sessionId: string): Promise<void> {
    await this.request("DELETE", `/sessions/${sessionId}`);
  }
}
