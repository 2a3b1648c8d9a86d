import { sha256Hex } from "./digest";
import type {
  AlgorithmSummary,
  AssertionDocument,
  AuditEvent,
  ConsentGrant,
  PendingRequest,
} from "./types";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** Thin typed client over the node's HTTP API.
 *
 * Holds the bearer credential in memory only — nothing is written to
 * localStorage or cookies, so closing the tab forgets the session.
 */
export class ConsoleApi {
  constructor(
    private readonly baseUrl: string,
    private readonly credential: string,
    private readonly fetchImpl: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.credential}`,
    };
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const data = text ? JSON.parse(text) : null;
    if (!response.ok) {
      // business errors carry {"error": ...}; perimeter denials {"detail": ...}
      const message =
        (data && (data.error ?? data.detail)) || `${response.status} ${path}`;
      throw new ApiError(response.status, String(message));
    }
    return data as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  listPending(): Promise<PendingRequest[]> {
    return this.request("GET", "/consent/pending");
  }

  /** Approve a pending request, echoing the digest of the description we
   * rendered — computed here, not copied from the request. */
  async approve(req: PendingRequest, validUntil: number): Promise<ConsentGrant> {
    const digest = await sha256Hex(req.lay_description);
    return this.request("POST", "/consent/grant", {
      algo_id: req.algo_id,
      version: req.version,
      purpose: req.purpose,
      audience: req.audience,
      valid_until: validUntil,
      description_digest: digest,
    });
  }

  deny(handle: string): Promise<unknown> {
    return this.request("POST", `/consent/${handle}/deny`);
  }

  listGrants(): Promise<ConsentGrant[]> {
    return this.request("GET", "/consent/grants");
  }

  withdraw(grantId: string): Promise<ConsentGrant> {
    return this.request("POST", `/consent/${grantId}/withdraw`);
  }

  listAlgorithms(): Promise<AlgorithmSummary[]> {
    return this.request("GET", "/algorithms");
  }

  issueAssertion(params: {
    algo_id: string;
    version: number;
    purpose: string;
    audience: string;
    validity: number;
  }): Promise<AssertionDocument> {
    return this.request("POST", "/assertions/issue", params);
  }

  auditMine(): Promise<AuditEvent[]> {
    return this.request("GET", "/audit/mine");
  }
}
