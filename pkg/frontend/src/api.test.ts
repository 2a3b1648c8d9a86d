import { createHash } from "node:crypto";
import { describe, expect, it } from "vitest";
import { ApiError, ConsoleApi } from "./api";
import type { PendingRequest } from "./types";

interface Recorded {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: unknown;
}

function stubFetch(
  responses: Array<{ status?: number; json?: unknown }>,
): { calls: Recorded[]; fetch: typeof fetch } {
  const calls: Recorded[] = [];
  const fetchImpl = (async (url: unknown, init?: RequestInit) => {
    calls.push({
      url: String(url),
      method: init?.method ?? "GET",
      headers: (init?.headers ?? {}) as Record<string, string>,
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    });
    const next = responses.shift() ?? { status: 200, json: null };
    const status = next.status ?? 200;
    return new Response(next.json === undefined ? "" : JSON.stringify(next.json), {
      status,
    });
  }) as typeof fetch;
  return { calls, fetch: fetchImpl };
}

const PENDING: PendingRequest = {
  handle: "creq-1",
  subject: "pat",
  algo_id: "income-5y-summary",
  version: 1,
  purpose: "car-loan-application",
  audience: "bank-q7",
  scope: "single-subject:pat",
  created_at: 1_700_000_000,
  expires_at: 1_700_086_400,
  state: "pending",
  title: "Income summary",
  lay_description: "Shares yearly income totals for your loan application.",
  description_digest: "tampered-by-the-wire",
};

describe("ConsoleApi", () => {
  it("sends the bearer credential on every request", async () => {
    const { calls, fetch } = stubFetch([{ json: { status: "ok" } }]);
    const api = new ConsoleApi("http://node", "secret-cred", fetch);
    await api.health();
    expect(calls[0].url).toBe("http://node/healthz");
    expect(calls[0].headers.Authorization).toBe("Bearer secret-cred");
  });

  it("approves by recomputing the description digest, ignoring the one on the wire", async () => {
    const { calls, fetch } = stubFetch([{ json: { grant_id: "g1" } }]);
    const api = new ConsoleApi("", "c", fetch);
    await api.approve(PENDING, 1_700_086_400);
    const expected = createHash("sha256")
      .update(PENDING.lay_description, "utf8")
      .digest("hex");
    expect(calls[0]).toMatchObject({
      url: "/consent/grant",
      method: "POST",
      body: {
        algo_id: "income-5y-summary",
        version: 1,
        purpose: "car-loan-application",
        audience: "bank-q7",
        valid_until: 1_700_086_400,
        description_digest: expected,
      },
    });
    expect(calls[0].body).not.toMatchObject({
      description_digest: "tampered-by-the-wire",
    });
  });

  it("maps the remaining endpoints to their routes", async () => {
    const { calls, fetch } = stubFetch([
      { json: [] },
      { json: {} },
      { json: [] },
      { json: {} },
      { json: [] },
      { json: {} },
      { json: [] },
    ]);
    const api = new ConsoleApi("", "c", fetch);
    await api.listPending();
    await api.deny("creq-9");
    await api.listGrants();
    await api.withdraw("grant-3");
    await api.listAlgorithms();
    await api.issueAssertion({
      algo_id: "a", version: 1, purpose: "p", audience: "b", validity: 3600,
    });
    await api.auditMine();
    expect(calls.map((c) => [c.method, c.url])).toEqual([
      ["GET", "/consent/pending"],
      ["POST", "/consent/creq-9/deny"],
      ["GET", "/consent/grants"],
      ["POST", "/consent/grant-3/withdraw"],
      ["GET", "/algorithms"],
      ["POST", "/assertions/issue"],
      ["GET", "/audit/mine"],
    ]);
  });

  it("surfaces business errors from the error key", async () => {
    const { fetch } = stubFetch([
      { status: 409, json: { error: "consent-required", handle: "creq-2" } },
    ]);
    const api = new ConsoleApi("", "c", fetch);
    const err = await api.listGrants().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.message).toBe("consent-required");
  });

  it("surfaces perimeter denials from the detail key", async () => {
    const { fetch } = stubFetch([
      { status: 403, json: { detail: "role 'querier' may not call pending_consent" } },
    ]);
    const api = new ConsoleApi("", "c", fetch);
    const err = await api.listPending().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(403);
    expect(err.message).toContain("may not call");
  });
});
