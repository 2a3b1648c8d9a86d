import { assertionFilename, escapeHtml, fmtRemaining, fmtTime } from "./format";
import type {
  AlgorithmSummary,
  AssertionDocument,
  AuditEvent,
  ConsentGrant,
  PendingRequest,
} from "./types";

/** Pure renderers: data in, HTML string out. Interaction is wired up by
 * main.ts through data-action attributes, so these stay testable without
 * a browser. All untrusted text goes through escapeHtml. */

export function renderPending(requests: PendingRequest[], now: number): string {
  if (requests.length === 0) {
    return `<p class="empty">No one is waiting on your consent.</p>`;
  }
  return requests
    .map(
      (req) => `
  <article class="card pending" data-handle="${escapeHtml(req.handle)}">
    <h3>${escapeHtml(req.title)}</h3>
    <p class="lay">${escapeHtml(req.lay_description)}</p>
    <dl>
      <dt>Algorithm</dt><dd>${escapeHtml(req.algo_id)} v${req.version}</dd>
      <dt>Purpose</dt><dd>${escapeHtml(req.purpose)}</dd>
      <dt>Audience</dt><dd>${escapeHtml(req.audience)}</dd>
      <dt>Asked</dt><dd>${fmtTime(req.created_at)} (${fmtRemaining(req.expires_at, now)})</dd>
    </dl>
    <button data-action="approve" data-handle="${escapeHtml(req.handle)}">Approve for 24 h</button>
    <button data-action="deny" data-handle="${escapeHtml(req.handle)}" class="secondary">Deny</button>
  </article>`,
    )
    .join("\n");
}

export function renderGrants(grants: ConsentGrant[], now: number): string {
  if (grants.length === 0) {
    return `<p class="empty">You have not granted any consent.</p>`;
  }
  return grants
    .map((g) => {
      const expired = now >= g.valid_until;
      const status =
        g.state === "withdrawn"
          ? `withdrawn ${g.withdrawal_at == null ? "" : fmtTime(g.withdrawal_at)}`
          : expired
            ? "expired"
            : `active, ${fmtRemaining(g.valid_until, now)}`;
      const withdrawable = g.state !== "withdrawn" && !expired;
      return `
  <article class="card grant ${g.state === "withdrawn" ? "withdrawn" : ""}">
    <h3>${escapeHtml(g.algo_id)} v${g.version}</h3>
    <dl>
      <dt>Purpose</dt><dd>${escapeHtml(g.purpose)}</dd>
      <dt>Audience</dt><dd>${escapeHtml(g.audience)}</dd>
      <dt>Granted</dt><dd>${fmtTime(g.granted_at)}</dd>
      <dt>Status</dt><dd>${escapeHtml(status.trim())}</dd>
    </dl>
    ${
      withdrawable
        ? `<button data-action="withdraw" data-grant="${escapeHtml(g.grant_id)}">Withdraw</button>`
        : ""
    }
  </article>`;
    })
    .join("\n");
}

export function renderIssueForm(algorithms: AlgorithmSummary[]): string {
  const subjectAlgos = algorithms.filter((a) => a.output_mode === "subject");
  if (subjectAlgos.length === 0) {
    return `<p class="empty">No subject-mode algorithms are registered yet.</p>`;
  }
  const options = subjectAlgos
    .map(
      (a) =>
        `<option value="${escapeHtml(a.algo_id)}|${a.version}|${escapeHtml(a.purpose_tags[0] ?? "")}">` +
        `${escapeHtml(a.title)} (${escapeHtml(a.purpose_tags.join(", "))})</option>`,
    )
    .join("");
  return `
  <form id="issue-form" class="card">
    <label>Algorithm <select name="algo">${options}</select></label>
    <label>Audience <input name="audience" placeholder="e.g. bank-q7" required /></label>
    <label>Valid for (hours) <input name="hours" type="number" value="24" min="1" max="24" /></label>
    <button type="submit">Issue signed assertion</button>
  </form>
  <div id="issue-result"></div>`;
}

export function renderAssertion(doc: AssertionDocument): string {
  return `
  <article class="card assertion">
    <h3>Assertion ${escapeHtml(doc.payload.assertion_id)}</h3>
    <dl>
      <dt>Issuer</dt><dd>${escapeHtml(doc.payload.issuer)}</dd>
      <dt>Pseudonym</dt><dd><code>${escapeHtml(doc.payload.subject)}</code></dd>
      <dt>Purpose</dt><dd>${escapeHtml(doc.payload.purpose)}</dd>
      <dt>Expires</dt><dd>${escapeHtml(doc.payload.expires_at)}</dd>
      <dt>Key</dt><dd><code>${escapeHtml(doc.signature.key_id)}</code></dd>
    </dl>
    <button data-action="download" data-filename="${escapeHtml(assertionFilename(doc))}">
      Download portable document
    </button>
  </article>`;
}

export function renderAudit(events: AuditEvent[]): string {
  if (events.length === 0) {
    return `<p class="empty">Nothing in your audit trail yet.</p>`;
  }
  const rows = events
    .map(
      (ev) => `
    <tr>
      <td>${ev.seq}</td>
      <td>${escapeHtml(ev.at)}</td>
      <td>${escapeHtml(ev.event_type)}</td>
      <td>${escapeHtml(ev.actor)}</td>
      <td><code>${escapeHtml(JSON.stringify(ev.refs))}</code></td>
    </tr>`,
    )
    .join("\n");
  return `
  <table class="audit">
    <thead><tr><th>#</th><th>When</th><th>Event</th><th>Actor</th><th>Details</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

export function renderError(message: string): string {
  return `<p class="error">${escapeHtml(message)}</p>`;
}
