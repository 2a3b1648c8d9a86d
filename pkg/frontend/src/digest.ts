/** SHA-256 hex digest of a UTF-8 string via WebCrypto.
 *
 * The node refuses a consent grant unless the caller echoes the digest of
 * the lay description it actually showed the member, so the console must
 * compute this from its own rendered text, never trust a digest it was
 * handed.
 */
export async function sha256Hex(text: string): Promise<string> {
  const data = new TextEncoder().encode(text);
  const hash = await crypto.subtle.digest("SHA-256", data);
  return Array.from(new Uint8Array(hash))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}
