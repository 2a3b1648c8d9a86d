/** Shapes returned by the node's HTTP endpoints the console consumes. */

export interface PendingRequest {
  handle: string;
  subject: string;
  algo_id: string;
  version: number;
  purpose: string;
  audience: string;
  scope: string;
  created_at: number;
  expires_at: number;
  state: string;
  title: string;
  lay_description: string;
  description_digest: string;
}

export interface ConsentGrant {
  grant_id: string;
  subject: string;
  algo_id: string;
  version: number;
  purpose: string;
  audience: string;
  granted_at: number;
  valid_until: number;
  state: string;
  withdrawal_at: number | null;
}

export interface AuditEvent {
  seq: number;
  event_type: string;
  actor: string;
  at: string;
  refs: Record<string, unknown>;
  prev_hash: string;
  this_hash: string;
}

export interface AssertionDocument {
  payload: {
    assertion_id: string;
    issuer: string;
    subject: string;
    purpose: string;
    issued_at: string;
    expires_at: string;
    [key: string]: unknown;
  };
  signature: { key_id: string; algorithm: string; value: string };
}

export interface AlgorithmSummary {
  algo_id: string;
  version: number;
  title: string;
  output_mode: string;
  purpose_tags: string[];
  lay_description: string;
}
