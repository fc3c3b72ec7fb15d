// Single-page app: hash-routed views over the payment API. All server
// interaction is request/response; the session lives in an HttpOnly cookie
// the browser carries, and no challenge or token payload outlives its view.

import { Api, ApiFailure, TxnSummary } from "./api";
import { messageFor } from "./errors";
import { renderQr, scanFromCamera, scanningSupported } from "./qr";
import {
  buildCreateOptions,
  buildGetOptions,
  packAssertion,
  packRegistration,
  webauthnSupported,
} from "./webauthn";

const api = new Api("");

let currentUser: string | null = null;
let stopScanner: (() => void) | null = null;

const app = () => document.getElementById("app")!;

// -- helpers -----------------------------------------------------------------

function esc(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

function flash(kind: "ok" | "err", text: string) {
  const box = document.getElementById("flash")!;
  box.innerHTML = `<div class="flash ${kind}">${esc(text)}</div>`;
  setTimeout(() => (box.innerHTML = ""), 6000);
}

function showError(error: unknown) {
  if (error instanceof ApiFailure) {
    if (error.code === "session_invalid" || error.code === "unauthenticated") {
      currentUser = null;
      location.hash = "#/login";
      flash("err", "Session expired. Sign in again.");
      return;
    }
    flash("err", messageFor(error.code, error.message));
  } else if (error instanceof DOMException && error.name === "NotAllowedError") {
    flash("err", "The security-key ceremony was cancelled.");
  } else {
    flash("err", String(error));
  }
}

function money(units: number): string {
  return (units / 100).toFixed(2);
}

function nav(): string {
  const links = currentUser
    ? [
        ["#/dashboard", "Dashboard"],
        ["#/send", "Send"],
        ["#/receive", "Receive"],
        ["#/scan", "Scan / Redeem"],
        ["#/requests", "Requests"],
      ]
    : [
        ["#/login", "Sign in"],
        ["#/register", "Register"],
      ];
  const items = links
    .map(([href, label]) => `<a href="${href}" class="${location.hash === href ? "active" : ""}">${label}</a>`)
    .join("");
  const session = currentUser
    ? `<span class="who">${esc(currentUser)}</span><button id="logout" class="linkish">Sign out</button>`
    : "";
  return `<nav><span class="brand">PP2PP</span>${items}<span class="spacer"></span>${session}</nav>`;
}

function shell(content: string) {
  if (stopScanner) {
    stopScanner();
    stopScanner = null;
  }
  app().innerHTML = `${nav()}<div id="flash"></div><main>${content}</main>`;
  document.getElementById("logout")?.addEventListener("click", async () => {
    try {
      await api.logout();
    } finally {
      currentUser = null;
      location.hash = "#/login";
    }
  });
}

// -- auth views -------------------------------------------------------------------

function unsupportedNotice(): string {
  return webauthnSupported()
    ? ""
    : `<p class="warn">This browser has no WebAuthn support, so registration and
       sign-in need a platform authenticator or security key.</p>`;
}

function viewRegister() {
  shell(`
    <h1>Create your account</h1>
    ${unsupportedNotice()}
    <form id="f">
      <label>Username <input name="username" required pattern="[A-Za-z0-9_.-]{1,64}"></label>
      <label>Email <input name="email" type="email" required></label>
      <button>Register with security key</button>
    </form>
    <p class="hint">Enrolment creates a key pair inside your authenticator;
    only the public half ever leaves the device.</p>`);
  document.getElementById("f")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const data = new FormData(event.target as HTMLFormElement);
    const username = String(data.get("username"));
    const email = String(data.get("email"));
    try {
      const begin = await api.registerBegin(username, email);
      const credential = (await navigator.credentials.create(
        buildCreateOptions(username, begin.challenge, begin.rp_id),
      )) as PublicKeyCredential | null;
      if (!credential) throw new Error("ceremony returned no credential");
      await api.registerFinish(username, packRegistration(credential as any));
      flash("ok", "Registered. Now sign in.");
      location.hash = "#/login";
    } catch (error) {
      showError(error);
    }
  });
}

function viewLogin() {
  shell(`
    <h1>Sign in</h1>
    ${unsupportedNotice()}
    <form id="f">
      <label>Username <input name="username" required></label>
      <button>Sign in with security key</button>
    </form>
    <details>
      <summary>Lost your key? Email me a one-time link</summary>
      <form id="linkf">
        <label>Email <input name="email" type="email" required></label>
        <button>Send link</button>
      </form>
      <p class="hint">The link works once, only from this network, for 10 minutes.</p>
    </details>`);
  document.getElementById("f")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const username = String(new FormData(event.target as HTMLFormElement).get("username"));
    try {
      const begin = await api.authBegin(username);
      const credential = (await navigator.credentials.get(
        buildGetOptions(begin.challenge, begin.rp_id),
      )) as PublicKeyCredential | null;
      if (!credential) throw new Error("ceremony returned no assertion");
      const finish = await api.authFinish(username, packAssertion(credential as any));
      const exchanged = await api.authExchange(finish.token);
      currentUser = exchanged.username;
      location.hash = "#/dashboard";
    } catch (error) {
      showError(error);
    }
  });
  document.getElementById("linkf")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const email = String(new FormData(event.target as HTMLFormElement).get("email"));
    try {
      await api.linkIssue(email);
      flash("ok", "If that address is registered, a sign-in link is on its way.");
    } catch (error) {
      showError(error);
    }
  });
}

// -- dashboard -----------------------------------------------------------------------

function stateBadge(txn: TxnSummary): string {
  return `<span class="state s-${txn.state.toLowerCase()}">${txn.state}</span>`;
}

async function viewDashboard() {
  try {
    const [account, history] = await Promise.all([api.account(), api.history()]);
    currentUser = account.username;
    const rows = history.transactions
      .map((txn) => {
        const outgoing = txn.payer === account.username;
        const counterparty = outgoing ? txn.payee : txn.payer;
        const sign = outgoing ? "−" : "+";
        const disputable = txn.state === "Settled";
        return `<tr>
          <td>${stateBadge(txn)}</td>
          <td>${esc(txn.channel)}</td>
          <td>${esc(counterparty)}</td>
          <td class="num ${outgoing ? "out" : "in"}">${sign}${money(txn.amount)}</td>
          <td>${new Date(txn.created_at).toLocaleString()}</td>
          <td>${disputable ? `<button class="linkish dispute" data-txn="${txn.txn_id}">dispute</button>` : ""}</td>
        </tr>`;
      })
      .join("");
    shell(`
      <h1>Balance: <span class="balance">${money(account.balance)}</span></h1>
      <h2>History</h2>
      <table>
        <thead><tr><th>State</th><th>Channel</th><th>Counterparty</th><th class="num">Amount</th><th>When</th><th></th></tr></thead>
        <tbody>${rows || `<tr><td colspan="6" class="empty">No transactions yet</td></tr>`}</tbody>
      </table>`);
    document.querySelectorAll<HTMLButtonElement>("button.dispute").forEach((button) =>
      button.addEventListener("click", async () => {
        const reason = prompt("Why are you disputing this transaction?");
        if (!reason) return;
        try {
          await api.disputeOpen(button.dataset.txn!, reason);
          flash("ok", "Dispute opened. The bank will resolve it.");
          void viewDashboard();
        } catch (error) {
          showError(error);
        }
      }),
    );
  } catch (error) {
    showError(error);
  }
}

// -- payments ---------------------------------------------------------------------------

function viewSend() {
  shell(`
    <h1>Send money</h1>
    <form id="f">
      <label>To (username) <input name="payee" required></label>
      <label>Amount <input name="amount" type="number" min="0.01" step="0.01" required></label>
      <button>Send now</button>
    </form>
    <p class="hint">Direct transfers settle immediately.</p>`);
  document.getElementById("f")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const data = new FormData(event.target as HTMLFormElement);
    try {
      const txn = await api.payDirect(
        String(data.get("payee")),
        Math.round(Number(data.get("amount")) * 100),
      );
      flash("ok", `Sent ${money(txn.amount)} to ${txn.payee}.`);
      location.hash = "#/dashboard";
    } catch (error) {
      showError(error);
    }
  });
}

function viewReceive() {
  shell(`
    <h1>Receive money</h1>
    <form id="f">
      <label>Channel
        <select name="kind">
          <option value="qr">QR code</option>
          <option value="nfc">NFC tap (emulated)</option>
          <option value="link">Share link</option>
        </select>
      </label>
      <label>Amount (leave empty to let the payer choose)
        <input name="amount" type="number" min="0.01" step="0.01">
      </label>
      <button>Create payment code</button>
    </form>
    <div id="result"></div>`);
  document.getElementById("f")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const data = new FormData(event.target as HTMLFormElement);
    const kind = String(data.get("kind"));
    const raw = String(data.get("amount") ?? "");
    try {
      const token = await api.tokenCreate(
        kind,
        raw ? Math.round(Number(raw) * 100) : undefined,
      );
      const result = document.getElementById("result")!;
      result.innerHTML = `
        <h2>${token.amount === null ? "Open amount" : money(token.amount)}: valid 15 minutes, one use</h2>
        <canvas id="qr"></canvas>
        <textarea id="payload" readonly rows="4">${esc(token.presentable)}</textarea>
        <button id="copy" class="linkish">Copy payload</button>`;
      await renderQr(document.getElementById("qr") as HTMLCanvasElement, token.presentable);
      document.getElementById("copy")!.addEventListener("click", () => {
        void navigator.clipboard.writeText(token.presentable);
        flash("ok", "Copied.");
      });
    } catch (error) {
      showError(error);
    }
  });
}

function viewScan() {
  const camera = scanningSupported()
    ? `<button id="cam" class="secondary">Scan with camera</button>
       <video id="video" muted playsinline hidden></video>`
    : `<p class="hint">No camera scanner in this browser; paste the payload instead.</p>`;
  shell(`
    <h1>Redeem a payment code</h1>
    ${camera}
    <form id="f">
      <label>Payload <textarea name="payload" rows="4" required></textarea></label>
      <label>Amount (only for open-amount codes)
        <input name="amount" type="number" min="0.01" step="0.01">
      </label>
      <button>Pay</button>
    </form>
    <div id="result"></div>`);
  const payloadBox = document.querySelector<HTMLTextAreaElement>("textarea[name=payload]")!;
  document.getElementById("cam")?.addEventListener("click", async () => {
    const video = document.getElementById("video") as HTMLVideoElement;
    video.hidden = false;
    try {
      stopScanner = await scanFromCamera(video, (payload) => {
        payloadBox.value = payload;
        video.hidden = true;
        flash("ok", "Code scanned. Review and pay.");
      });
    } catch (error) {
      video.hidden = true;
      showError(error);
    }
  });
  document.getElementById("f")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const data = new FormData(event.target as HTMLFormElement);
    const raw = String(data.get("amount") ?? "");
    try {
      const txn = await api.tokenRedeem(
        String(data.get("payload")).trim(),
        raw ? Math.round(Number(raw) * 100) : undefined,
      );
      document.getElementById("result")!.innerHTML = `
        <p class="ok">Paid ${money(txn.amount)} to ${esc(txn.payee)}: ${txn.state}.
        Receipt ${esc(txn.receipt?.txn_id ?? txn.txn_id)}.</p>`;
    } catch (error) {
      showError(error);
    }
  });
}

async function viewRequests() {
  try {
    const [account, history] = await Promise.all([api.account(), api.history()]);
    const inbox = history.transactions.filter(
      (txn) => txn.state === "Pending" && txn.payer === account.username,
    );
    const rows = inbox
      .map(
        (txn) => `<tr>
          <td>${esc(txn.payee)}</td>
          <td class="num">${money(txn.amount)}</td>
          <td>${new Date(txn.created_at).toLocaleString()}</td>
          <td>
            <button class="ack" data-txn="${txn.txn_id}" data-accept="yes">Accept</button>
            <button class="ack secondary" data-txn="${txn.txn_id}" data-accept="no">Reject</button>
          </td>
        </tr>`,
      )
      .join("");
    shell(`
      <h1>Payment requests</h1>
      <h2>Waiting for you</h2>
      <table>
        <thead><tr><th>From</th><th class="num">Amount</th><th>When</th><th></th></tr></thead>
        <tbody>${rows || `<tr><td colspan="4" class="empty">Nothing to approve</td></tr>`}</tbody>
      </table>
      <h2>Ask someone to pay you</h2>
      <form id="f">
        <label>Payer (username) <input name="payer" required></label>
        <label>Amount <input name="amount" type="number" min="0.01" step="0.01" required></label>
        <button>Request</button>
      </form>`);
    document.querySelectorAll<HTMLButtonElement>("button.ack").forEach((button) =>
      button.addEventListener("click", async () => {
        try {
          const txn = await api.acknowledge(button.dataset.txn!, button.dataset.accept === "yes");
          flash("ok", txn.state === "Settled" ? "Paid." : "Request rejected.");
          void viewRequests();
        } catch (error) {
          showError(error);
        }
      }),
    );
    document.getElementById("f")!.addEventListener("submit", async (event) => {
      event.preventDefault();
      const data = new FormData(event.target as HTMLFormElement);
      try {
        await api.payRequest(
          String(data.get("payer")),
          Math.round(Number(data.get("amount")) * 100),
        );
        flash("ok", "Request sent. They'll see it in their inbox.");
        void viewRequests();
      } catch (error) {
        showError(error);
      }
    });
  } catch (error) {
    showError(error);
  }
}

// -- router -----------------------------------------------------------------------------

const routes: Record<string, () => void | Promise<void>> = {
  "#/register": viewRegister,
  "#/login": viewLogin,
  "#/dashboard": viewDashboard,
  "#/send": viewSend,
  "#/receive": viewReceive,
  "#/scan": viewScan,
  "#/requests": viewRequests,
};

function route() {
  const view = routes[location.hash];
  if (view) {
    void view();
    return;
  }
  location.hash = currentUser ? "#/dashboard" : "#/login";
}

async function boot() {
  try {
    const account = await api.account();
    currentUser = account.username;
  } catch {
    currentUser = null;
  }
  window.addEventListener("hashchange", route);
  route();
}

void boot();
