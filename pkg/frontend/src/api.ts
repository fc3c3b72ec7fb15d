// Typed client for the payment server. Bodies here are the documented wire
// contract; the test suite pins them field by field.

export interface ChallengeResponse {
  challenge: string; // base64url 16 bytes
  rp_id: string;
  ttl_ms: number;
}

export interface AccountInfo {
  username: string;
  balance: number;
  created_at: number;
}

export interface TxnSummary {
  txn_id: string;
  payer: string;
  payee: string;
  amount: number;
  channel: "QR" | "NFC" | "LINK" | "DIRECT" | "REQUEST";
  state: "Pending" | "Acknowledged" | "Settled" | "Rejected" | "Disputed" | "Resolved";
  created_at: number;
  history: [string, number, string][];
  receipt?: { txn_id: string; payee: string; acknowledged_at: number };
}

export interface PaymentTokenInfo {
  token_id: string;
  kind: string;
  amount: number | null;
  presentable: string;
  expires_at: number;
}

export interface WebauthnRegistrationPayload {
  client_data_json: string;
  attestation_object: string;
}

export interface WebauthnAssertionPayload {
  credential_id: string;
  authenticator_data: string;
  client_data_json: string;
  signature: string;
}

export class ApiFailure extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class Api {
  constructor(
    private base = "",
    private fetcher: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    const response = await this.fetcher(this.base + path, {
      method,
      credentials: "same-origin",
      headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const parsed = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiFailure(response.status, parsed.code ?? "internal", parsed.error ?? "error");
    }
    return parsed;
  }

  registerBegin(username: string, email: string): Promise<ChallengeResponse> {
    return this.request("POST", "/register/begin", { username, email });
  }

  registerFinish(username: string, webauthn: WebauthnRegistrationPayload): Promise<unknown> {
    return this.request("POST", "/register/finish", { username, format: "webauthn", webauthn });
  }

  authBegin(username: string): Promise<ChallengeResponse> {
    return this.request("POST", "/auth/begin", { username });
  }

  authFinish(username: string, webauthn: WebauthnAssertionPayload): Promise<{ token: string }> {
    return this.request("POST", "/auth/finish", { username, format: "webauthn", webauthn });
  }

  authExchange(token: string): Promise<{ username: string; expires_at: number }> {
    return this.request("POST", "/auth/exchange", { token });
  }

  logout(): Promise<unknown> {
    return this.request("POST", "/auth/logout");
  }

  linkIssue(email: string): Promise<{ status: string }> {
    return this.request("POST", "/auth/link/issue", { email });
  }

  account(): Promise<AccountInfo> {
    return this.request("GET", "/account");
  }

  history(page = 0, size = 50): Promise<{ transactions: TxnSummary[] }> {
    return this.request("GET", `/account/history?page=${page}&size=${size}`);
  }

  payDirect(payee: string, amount: number): Promise<TxnSummary> {
    return this.request("POST", "/pay/direct", { payee, amount });
  }

  tokenCreate(kind: string, amount?: number): Promise<PaymentTokenInfo> {
    const body: Record<string, unknown> = { kind };
    if (amount !== undefined) body.amount = amount;
    return this.request("POST", "/pay/token/create", body);
  }

  tokenRedeem(payload: string, amount?: number): Promise<TxnSummary> {
    const body: Record<string, unknown> = { payload };
    if (amount !== undefined) body.amount = amount;
    return this.request("POST", "/pay/token/redeem", body);
  }

  payRequest(payer: string, amount: number): Promise<TxnSummary> {
    return this.request("POST", "/pay/request", { payer, amount });
  }

  acknowledge(txnId: string, accept: boolean): Promise<TxnSummary> {
    return this.request("POST", "/pay/acknowledge", { txn_id: txnId, accept });
  }

  disputeOpen(txnId: string, reason: string): Promise<TxnSummary> {
    return this.request("POST", "/dispute/open", { txn_id: txnId, reason });
  }

  disputeResolve(txnId: string, outcome: "Uphold" | "Reverse"): Promise<TxnSummary> {
    return this.request("POST", "/dispute/resolve", { txn_id: txnId, outcome });
  }
}
