import { createHash } from "node:crypto";
import { describe, expect, it } from "vitest";
import { sha256Hex } from "./digest";

describe("sha256Hex", () => {
  it("matches the SHA-256 test vector for 'abc'", async () => {
    expect(await sha256Hex("abc")).toBe(
      "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
    );
  });

  it("agrees with an independent implementation on lay descriptions", async () => {
    const description =
      "Computes subject results from your records for car-loan-application.";
    const expected = createHash("sha256").update(description, "utf8").digest("hex");
    expect(await sha256Hex(description)).toBe(expected);
  });

  it("handles non-ASCII text as UTF-8", async () => {
    const text = "Solo agregados — jamás tus datos crudos. ✓";
    const expected = createHash("sha256").update(text, "utf8").digest("hex");
    expect(await sha256Hex(text)).toBe(expected);
  });

  it("distinguishes near-identical descriptions", async () => {
    const a = await sha256Hex("Shares your mean fare with researchers.");
    const b = await sha256Hex("Shares your mean fare with researchers1");
    expect(a).not.toBe(b);
  });
});
