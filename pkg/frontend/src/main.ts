import { ApiError, ConsoleApi } from "./api";
import type { AssertionDocument } from "./types";
import {
  renderAssertion,
  renderAudit,
  renderError,
  renderGrants,
  renderIssueForm,
  renderPending,
} from "./views";
import "./styles.css";

const POLL_MS = 2000;

const app = document.getElementById("app")!;
let api: ConsoleApi | null = null;
let pollTimer: number | undefined;
let activeTab = "pending";
const issued: Map<string, AssertionDocument> = new Map();

function nowSeconds(): number {
  return Date.now() / 1000;
}

function renderLogin(error = ""): void {
  app.innerHTML = `
  <form id="login" class="card">
    <h2>Member sign-in</h2>
    <label>Node URL <input name="url" value="${location.pathname.startsWith("/console") ? "" : "http://127.0.0.1:8400"}" placeholder="same origin" /></label>
    <label>Credential <input name="credential" type="password" required /></label>
    <button type="submit">Sign in</button>
    ${error ? renderError(error) : ""}
    <p class="hint">Your credential stays in this tab's memory only.</p>
  </form>`;
  document.getElementById("login")!.addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const form = ev.target as HTMLFormElement;
    const url = (form.elements.namedItem("url") as HTMLInputElement).value.trim();
    const cred = (form.elements.namedItem("credential") as HTMLInputElement).value;
    const candidate = new ConsoleApi(url.replace(/\/$/, ""), cred);
    try {
      await candidate.health();
      await candidate.listPending(); // proves the credential is a member's
      api = candidate;
      renderShell();
      startPolling();
    } catch (err) {
      renderLogin(err instanceof ApiError ? err.message : "node unreachable");
    }
  });
}

function renderShell(): void {
  app.innerHTML = `
  <nav>
    <button data-tab="pending">Consent requests <span id="pending-count"></span></button>
    <button data-tab="grants">My grants</button>
    <button data-tab="assertions">Assertions</button>
    <button data-tab="audit">Audit trail</button>
    <button id="logout" class="secondary">Sign out</button>
  </nav>
  <main id="view"></main>`;
  app.querySelector("nav")!.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.id === "logout") {
      stopPolling();
      api = null;
      renderLogin();
      return;
    }
    const tab = target.dataset.tab;
    if (tab) {
      activeTab = tab;
      void refresh();
    }
  });
  document.getElementById("view")!.addEventListener("click", onViewClick);
  void refresh();
}

async function refresh(): Promise<void> {
  if (!api) return;
  const view = document.getElementById("view");
  if (!view) return;
  try {
    if (activeTab === "pending") {
      const pending = await api.listPending();
      setPendingBadge(pending.length);
      view.innerHTML = renderPending(pending, nowSeconds());
    } else if (activeTab === "grants") {
      view.innerHTML = renderGrants(await api.listGrants(), nowSeconds());
    } else if (activeTab === "assertions") {
      if (!document.getElementById("issue-form")) {
        view.innerHTML = renderIssueForm(await api.listAlgorithms());
        wireIssueForm();
      }
    } else if (activeTab === "audit") {
      view.innerHTML = renderAudit(await api.auditMine());
    }
  } catch (err) {
    view.innerHTML = renderError(err instanceof ApiError ? err.message : String(err));
  }
}

function setPendingBadge(count: number): void {
  const badge = document.getElementById("pending-count");
  if (badge) badge.textContent = count > 0 ? `(${count})` : "";
}

function startPolling(): void {
  stopPolling();
  pollTimer = window.setInterval(async () => {
    if (!api) return;
    try {
      const pending = await api.listPending();
      setPendingBadge(pending.length);
      if (activeTab === "pending") {
        const view = document.getElementById("view");
        if (view) view.innerHTML = renderPending(pending, nowSeconds());
      }
    } catch {
      // transient poll failures are silent; the next tick retries
    }
  }, POLL_MS);
}

function stopPolling(): void {
  if (pollTimer !== undefined) window.clearInterval(pollTimer);
  pollTimer = undefined;
}

async function onViewClick(ev: Event): Promise<void> {
  const target = ev.target as HTMLElement;
  const action = target.dataset.action;
  if (!action || !api) return;
  try {
    if (action === "approve") {
      const handle = target.dataset.handle!;
      const req = (await api.listPending()).find((r) => r.handle === handle);
      if (req) await api.approve(req, nowSeconds() + 24 * 3600);
    } else if (action === "deny") {
      await api.deny(target.dataset.handle!);
    } else if (action === "withdraw") {
      await api.withdraw(target.dataset.grant!);
    } else if (action === "download") {
      const doc = issued.get(target.dataset.filename!);
      if (doc) downloadJson(doc, target.dataset.filename!);
      return; // no refresh needed
    }
    await refresh();
  } catch (err) {
    const view = document.getElementById("view")!;
    view.insertAdjacentHTML(
      "afterbegin",
      renderError(err instanceof ApiError ? err.message : String(err)),
    );
  }
}

function wireIssueForm(): void {
  const form = document.getElementById("issue-form") as HTMLFormElement | null;
  if (!form) return;
  form.addEventListener("submit", async (ev) => {
    ev.preventDefault();
    if (!api) return;
    const algo = (form.elements.namedItem("algo") as HTMLSelectElement).value;
    const [algoId, version, purpose] = algo.split("|");
    const audience = (form.elements.namedItem("audience") as HTMLInputElement).value;
    const hours = Number((form.elements.namedItem("hours") as HTMLInputElement).value);
    const result = document.getElementById("issue-result")!;
    try {
      const doc = await api.issueAssertion({
        algo_id: algoId,
        version: Number(version),
        purpose,
        audience,
        validity: hours * 3600,
      });
      const html = renderAssertion(doc);
      const filename = /data-filename="([^"]+)"/.exec(html)?.[1];
      if (filename) issued.set(filename, doc);
      result.innerHTML = html;
    } catch (err) {
      result.innerHTML = renderError(err instanceof ApiError ? err.message : String(err));
    }
  });
}

function downloadJson(doc: AssertionDocument, filename: string): void {
  const blob = new Blob([JSON.stringify(doc, null, 2)], { type: "application/json" });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}

renderLogin();
