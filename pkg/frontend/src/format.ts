import type { AssertionDocument } from "./types";

/** Epoch seconds -> RFC 3339 UTC, matching the node's timestamp style. */
export function fmtTime(epochSeconds: number): string {
  return new Date(epochSeconds * 1000).toISOString().replace(/\.\d{3}Z$/, "Z");
}

/** Seconds from now until `epochSeconds`, as a human-friendly string. */
export function fmtRemaining(epochSeconds: number, nowSeconds: number): string {
  const delta = Math.floor(epochSeconds - nowSeconds);
  if (delta <= 0) return "expired";
  if (delta < 3600) return `${Math.floor(delta / 60)} min left`;
  if (delta < 86400) return `${Math.floor(delta / 3600)} h left`;
  return `${Math.floor(delta / 86400)} d left`;
}

/** Stable download name for an assertion document. */
export function assertionFilename(doc: AssertionDocument): string {
  const id = doc.payload.assertion_id.replace(/[^A-Za-z0-9_-]/g, "");
  return `assertion-${id}.json`;
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}
