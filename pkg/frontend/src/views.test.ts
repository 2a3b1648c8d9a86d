import { describe, expect, it } from "vitest";
import {
  renderAssertion,
  renderAudit,
  renderGrants,
  renderIssueForm,
  renderPending,
} from "./views";
import type {
  AlgorithmSummary,
  AssertionDocument,
  AuditEvent,
  ConsentGrant,
  PendingRequest,
} from "./types";

const NOW = 1_700_000_000;

function pending(overrides: Partial<PendingRequest> = {}): PendingRequest {
  return {
    handle: "creq-1",
    subject: "pat",
    algo_id: "income-5y-summary",
    version: 1,
    purpose: "car-loan-application",
    audience: "bank-q7",
    scope: "single-subject:pat",
    created_at: NOW,
    expires_at: NOW + 86400,
    state: "pending",
    title: "Income summary",
    lay_description: "Shares yearly income totals for your loan application.",
    description_digest: "d".repeat(64),
    ...overrides,
  };
}

function grant(overrides: Partial<ConsentGrant> = {}): ConsentGrant {
  return {
    grant_id: "grant-1",
    subject: "pat",
    algo_id: "income-5y-summary",
    version: 1,
    purpose: "car-loan-application",
    audience: "bank-q7",
    granted_at: NOW,
    valid_until: NOW + 3600,
    state: "active",
    withdrawal_at: null,
    ...overrides,
  };
}

describe("renderPending", () => {
  it("shows the lay description verbatim with approve and deny actions", () => {
    const html = renderPending([pending()], NOW);
    expect(html).toContain("Shares yearly income totals");
    expect(html).toContain('data-action="approve"');
    expect(html).toContain('data-action="deny"');
    expect(html).toContain('data-handle="creq-1"');
  });

  it("escapes hostile request content", () => {
    const html = renderPending(
      [pending({ title: "<script>alert(1)</script>", lay_description: `"><img>` })],
      NOW,
    );
    expect(html).not.toContain("<script>");
    expect(html).not.toContain("<img>");
    expect(html).toContain("&lt;script&gt;");
  });

  it("has a clear empty state", () => {
    expect(renderPending([], NOW)).toContain("No one is waiting");
  });
});

describe("renderGrants", () => {
  it("offers withdrawal only while a grant is active", () => {
    const active = renderGrants([grant()], NOW);
    expect(active).toContain('data-action="withdraw"');
    expect(active).toContain("active, 1 h left");

    const withdrawn = renderGrants(
      [grant({ state: "withdrawn", withdrawal_at: NOW + 10 })],
      NOW + 20,
    );
    expect(withdrawn).not.toContain('data-action="withdraw"');
    expect(withdrawn).toContain("withdrawn");

    const expired = renderGrants([grant()], NOW + 7200);
    expect(expired).not.toContain('data-action="withdraw"');
    expect(expired).toContain("expired");
  });
});

describe("renderIssueForm", () => {
  const algos: AlgorithmSummary[] = [
    {
      algo_id: "income-5y-summary",
      version: 1,
      title: "Income summary",
      output_mode: "subject",
      purpose_tags: ["car-loan-application"],
      lay_description: "x",
    },
    {
      algo_id: "fare-rate",
      version: 1,
      title: "Fare rate",
      output_mode: "aggregate",
      purpose_tags: ["research"],
      lay_description: "y",
    },
  ];

  it("offers only subject-mode algorithms for issuance", () => {
    const html = renderIssueForm(algos);
    expect(html).toContain("income-5y-summary");
    expect(html).not.toContain("fare-rate");
  });

  it("explains when nothing is issuable", () => {
    expect(renderIssueForm([algos[1]])).toContain("No subject-mode algorithms");
  });
});

describe("renderAssertion", () => {
  it("shows the pseudonym and a download action, never the member id", () => {
    const doc: AssertionDocument = {
      payload: {
        assertion_id: "asr-9f",
        issuer: "coop",
        subject: "pair-0123abcd",
        purpose: "car-loan-application",
        issued_at: "2023-11-14T22:13:20Z",
        expires_at: "2023-11-15T22:13:20Z",
      },
      signature: { key_id: "k1", algorithm: "ed25519", value: "sig" },
    };
    const html = renderAssertion(doc);
    expect(html).toContain("pair-0123abcd");
    expect(html).toContain('data-action="download"');
    expect(html).toContain('data-filename="assertion-asr-9f.json"');
  });
});

describe("renderAudit", () => {
  it("lists events in a table with their chain position", () => {
    const events: AuditEvent[] = [
      {
        seq: 4,
        event_type: "consent",
        actor: "pat",
        at: "2023-11-14T22:13:20Z",
        refs: { op: "grant", grant_id: "grant-1" },
        prev_hash: "p",
        this_hash: "t",
      },
    ];
    const html = renderAudit(events);
    expect(html).toContain("<td>4</td>");
    expect(html).toContain("consent");
    expect(html).toContain("grant-1");
    expect(renderAudit([])).toContain("Nothing in your audit trail");
  });
});
