import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ConsoleApi } from "./api";
import { sha256Hex } from "./digest";
import { renderPending } from "./views";
import type { PendingRequest } from "./types";

/** The full member consent loop against a real node process:
 *
 *   querier's subject-mode execution is blocked -> the member console shows
 *   the pending request with its lay description -> approving echoes the
 *   digest of the rendered text and unblocks the querier -> withdrawing
 *   blocks the next execution again.
 */

const PORT = 8431;
const BASE = `http://127.0.0.1:${PORT}`;
const LAY = "Shares the sum of your income records for your loan application.";

let server: ChildProcess;
let steward: string;
let memberApi: ConsoleApi;
let querierCred: string;
let execToken: string;

async function call(
  cred: string,
  method: string,
  path: string,
  body?: unknown,
): Promise<{ status: number; data: any }> {
  const response = await fetch(BASE + path, {
    method,
    headers: {
      Authorization: `Bearer ${cred}`,
      ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
    },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const text = await response.text();
  return { status: response.status, data: text ? JSON.parse(text) : null };
}

async function tryExecute(): Promise<{ status: number; data: any }> {
  return call(querierCred, "POST", "/execute", {
    algo_id: "income-sum",
    version: 1,
    scope: "single-subject:pat",
    purpose: "loan",
    token: execToken,
  });
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "coopnode-console-"));
  const configPath = join(dir, "node.conf");
  writeFileSync(
    configPath,
    [
      "name=loop-coop",
      `persistence_dir=${join(dir, "data")}`,
      `listen_address=127.0.0.1:${PORT}`,
      "k_threshold=5",
      "",
    ].join("\n"),
  );
  server = spawn("python3", ["-m", "coopnode.cli", "serve", "--config", configPath], {
    stdio: ["ignore", "pipe", "pipe"],
    // without this, python block-buffers the credential line into the pipe
    env: { ...process.env, PYTHONUNBUFFERED: "1" },
  });
  steward = await new Promise<string>((resolve, reject) => {
    let buffer = "";
    const timer = setTimeout(() => reject(new Error("no steward credential")), 20_000);
    server.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = /bootstrap steward credential: (\S+)/.exec(buffer);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
  });
  for (let i = 0; i < 100; i++) {
    try {
      const ok = await fetch(`${BASE}/healthz`);
      if (ok.ok) break;
    } catch {
      await new Promise((r) => setTimeout(r, 200));
    }
  }

  // steward wires the fixture: one member with data, one querier, one
  // vetted subject-mode algorithm
  const pat = await call(steward, "POST", "/enroll", {
    role: "member",
    legal_name: "Pat",
    principal_id: "pat",
    year_of_birth: 1988,
  });
  const q = await call(steward, "POST", "/enroll", {
    role: "querier",
    legal_name: "Bank",
    principal_id: "bank",
  });
  querierCred = q.data.credential;
  memberApi = new ConsoleApi(BASE, pat.data.credential);

  const store = await call(pat.data.credential, "POST", "/stores", {
    schema: [{ name: "income", kind: "number" }],
  });
  await call(pat.data.credential, "POST", `/stores/${store.data.store_id}/records`, {
    records: [{ income: 51000.25 }, { income: 49750.5 }],
  });
  const registered = await call(steward, "POST", "/algorithms", {
    algo_id: "income-sum",
    version: 1,
    title: "Income sum",
    lay_description: LAY,
    output_mode: "subject",
    requires: [{ name: "income", kind: "number" }],
    purpose_tags: ["loan"],
    source: "subject sum(income)",
    visibility: "public",
  });
  expect(registered.data.registered).toBe(true);

  // querier binds a session for the single-subject scope
  const session = await call(querierCred, "POST", "/authz/session", {
    algo_id: "income-sum",
    version: 1,
    scope: "single-subject:pat",
    purpose: "loan",
  });
  let advance: { status: number; data: any } = { status: 0, data: null };
  for (let stage = 0; stage < 3; stage++) {
    advance = await call(
      querierCred,
      "POST",
      `/authz/session/${session.data.session.session_id}/advance`,
    );
  }
  expect(advance.data.state).toBe("bound");
  execToken = advance.data.token;
}, 60_000);

afterAll(() => {
  server?.kill();
});

describe("console consent loop", () => {
  it("walks block -> render -> approve -> execute -> withdraw -> block", async () => {
    // 1. without consent the execution is refused and parks a request
    const blocked = await tryExecute();
    expect(blocked.status).toBe(409);
    expect(blocked.data.error).toBe("consent-required");

    // 2. the console shows the pending request with the lay description
    const pending = await memberApi.listPending();
    expect(pending).toHaveLength(1);
    const req: PendingRequest = pending[0];
    expect(req.lay_description).toBe(LAY);
    const html = renderPending([req], Date.now() / 1000);
    expect(html).toContain(LAY);

    // 3. the digest the console echoes on approval is the hash of the text
    //    it rendered, and it matches what the node demands
    expect(await sha256Hex(LAY)).toBe(req.description_digest);

    // 4. approve; the same execution now succeeds
    const grant = await memberApi.approve(req, Date.now() / 1000 + 3600);
    expect(grant.state).toBe("active");
    const allowed = await tryExecute();
    expect(allowed.status).toBe(200);
    expect(allowed.data.cells[0].values.sum).toBeCloseTo(100750.75, 10);

    // 5. withdraw from the grants view; the next execution is blocked again
    const grants = await memberApi.listGrants();
    const withdrawn = await memberApi.withdraw(grants[0].grant_id);
    expect(withdrawn.state).toBe("withdrawn");
    const reblocked = await tryExecute();
    expect(reblocked.status).toBe(409);
    expect(reblocked.data.error).toBe("consent-required");
  }, 30_000);
});
