// Contract tests: the UI may send only the documented endpoint bodies.
// A fake fetch captures every request; bodies are compared key-for-key.

import { beforeEach, describe, expect, it } from "vitest";
import { Api, ApiFailure } from "../src/api";

interface Captured {
  url: string;
  method: string;
  body: unknown;
  credentials?: string;
}

let captured: Captured[];

function fakeFetch(status = 200, payload: unknown = {}): typeof fetch {
  return (async (url: any, init?: any) => {
    captured.push({
      url: String(url),
      method: init?.method ?? "GET",
      body: init?.body ? JSON.parse(init.body) : undefined,
      credentials: init?.credentials,
    });
    return {
      ok: status >= 200 && status < 300,
      status,
      json: async () => payload,
    } as Response;
  }) as typeof fetch;
}

beforeEach(() => {
  captured = [];
});

describe("endpoint contract", () => {
  it("register ceremony bodies", async () => {
    const api = new Api("", fakeFetch());
    await api.registerBegin("alice", "a@x.org");
    await api.registerFinish("alice", {
      client_data_json: "cdj",
      attestation_object: "ao",
    });
    expect(captured[0]).toMatchObject({
      url: "/register/begin",
      method: "POST",
      body: { username: "alice", email: "a@x.org" },
    });
    expect(captured[1]).toMatchObject({
      url: "/register/finish",
      method: "POST",
      body: {
        username: "alice",
        format: "webauthn",
        webauthn: { client_data_json: "cdj", attestation_object: "ao" },
      },
    });
    expect(Object.keys(captured[1].body as object).sort()).toEqual([
      "format",
      "username",
      "webauthn",
    ]);
  });

  it("login ceremony bodies", async () => {
    const api = new Api("", fakeFetch());
    await api.authBegin("alice");
    await api.authFinish("alice", {
      credential_id: "cid",
      authenticator_data: "ad",
      client_data_json: "cdj",
      signature: "sig",
    });
    await api.authExchange("tok");
    expect(captured[0]).toMatchObject({ url: "/auth/begin", body: { username: "alice" } });
    expect(captured[1].body).toEqual({
      username: "alice",
      format: "webauthn",
      webauthn: {
        credential_id: "cid",
        authenticator_data: "ad",
        client_data_json: "cdj",
        signature: "sig",
      },
    });
    expect(captured[2]).toMatchObject({ url: "/auth/exchange", body: { token: "tok" } });
  });

  it("payment bodies", async () => {
    const api = new Api("", fakeFetch());
    await api.payDirect("bob", 2500);
    await api.tokenCreate("qr", 500);
    await api.tokenCreate("link");
    await api.tokenRedeem("payload-x");
    await api.tokenRedeem("payload-y", 123);
    await api.payRequest("bob", 300);
    await api.acknowledge("txn-1", true);
    await api.disputeOpen("txn-1", "wrong item");
    await api.disputeResolve("txn-1", "Reverse");
    expect(captured.map((c) => [c.url, c.body])).toEqual([
      ["/pay/direct", { payee: "bob", amount: 2500 }],
      ["/pay/token/create", { kind: "qr", amount: 500 }],
      ["/pay/token/create", { kind: "link" }],
      ["/pay/token/redeem", { payload: "payload-x" }],
      ["/pay/token/redeem", { payload: "payload-y", amount: 123 }],
      ["/pay/request", { payer: "bob", amount: 300 }],
      ["/pay/acknowledge", { txn_id: "txn-1", accept: true }],
      ["/dispute/open", { txn_id: "txn-1", reason: "wrong item" }],
      ["/dispute/resolve", { txn_id: "txn-1", outcome: "Reverse" }],
    ]);
  });

  it("reads use GET with no body and same-origin cookies", async () => {
    const api = new Api("", fakeFetch());
    await api.account();
    await api.history(2, 10);
    expect(captured[0]).toMatchObject({ url: "/account", method: "GET", body: undefined });
    expect(captured[0].credentials).toBe("same-origin");
    expect(captured[1].url).toBe("/account/history?page=2&size=10");
  });

  it("server rejections become typed failures", async () => {
    const api = new Api(
      "",
      fakeFetch(401, { error: "SessionInvalid", code: "session_invalid" }),
    );
    const failure = await api.account().catch((e) => e);
    expect(failure).toBeInstanceOf(ApiFailure);
    expect(failure.status).toBe(401);
    expect(failure.code).toBe("session_invalid");
  });
});
