import { describe, expect, it } from "vitest";
import { assertionFilename, escapeHtml, fmtRemaining, fmtTime } from "./format";
import type { AssertionDocument } from "./types";

describe("fmtTime", () => {
  it("renders epoch seconds as RFC 3339 UTC without milliseconds", () => {
    expect(fmtTime(1_700_000_000)).toBe("2023-11-14T22:13:20Z");
    expect(fmtTime(0)).toBe("1970-01-01T00:00:00Z");
  });
});

describe("fmtRemaining", () => {
  const now = 1_700_000_000;
  it("reports expiry in the most natural unit", () => {
    expect(fmtRemaining(now + 120, now)).toBe("2 min left");
    expect(fmtRemaining(now + 7200, now)).toBe("2 h left");
    expect(fmtRemaining(now + 3 * 86400, now)).toBe("3 d left");
  });
  it("says expired at and past the boundary", () => {
    expect(fmtRemaining(now, now)).toBe("expired");
    expect(fmtRemaining(now - 1, now)).toBe("expired");
  });
});

describe("assertionFilename", () => {
  it("builds a safe download name from the assertion id", () => {
    const doc = {
      payload: { assertion_id: "asr-12ab/../evil" },
      signature: {},
    } as unknown as AssertionDocument;
    expect(assertionFilename(doc)).toBe("assertion-asr-12abevil.json");
  });
});

describe("escapeHtml", () => {
  it("neutralizes markup and attribute delimiters", () => {
    expect(escapeHtml(`<img src=x onerror="alert('1')">&`)).toBe(
      "&lt;img src=x onerror=&quot;alert(&#39;1&#39;)&quot;&gt;&amp;",
    );
  });
});
