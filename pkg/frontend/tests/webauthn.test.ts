import { describe, expect, it } from "vitest";
import { fromB64u, toB64u } from "../src/b64";
import {
  buildCreateOptions,
  buildGetOptions,
  packAssertion,
  packRegistration,
} from "../src/webauthn";

const CHALLENGE = toB64u(new Uint8Array(16).map((_, i) => i));

describe("ceremony option mapping", () => {
  it("create options carry the server challenge and RP", () => {
    const options = buildCreateOptions("alice", CHALLENGE, "pp2pp.local").publicKey!;
    expect(new Uint8Array(options.challenge as Uint8Array)).toEqual(fromB64u(CHALLENGE));
    expect(options.rp).toEqual({ id: "pp2pp.local", name: "PP2PP" });
    expect(options.user.name).toBe("alice");
    expect(new TextDecoder().decode(options.user.id as Uint8Array)).toBe("alice");
    expect(options.pubKeyCredParams).toEqual([
      { type: "public-key", alg: -7 },
      { type: "public-key", alg: -257 },
    ]);
    expect(options.attestation).toBe("none");
    expect(options.authenticatorSelection?.userVerification).toBe("required");
  });

  it("get options require user verification for the right RP", () => {
    const options = buildGetOptions(CHALLENGE, "pp2pp.local").publicKey!;
    expect(options.rpId).toBe("pp2pp.local");
    expect(options.userVerification).toBe("required");
    expect(new Uint8Array(options.challenge as Uint8Array)).toEqual(fromB64u(CHALLENGE));
  });
});

describe("response packing", () => {
  it("packs a registration credential into the wire fields", () => {
    const clientData = new Uint8Array([1, 2, 3]).buffer;
    const attestation = new Uint8Array([9, 8, 7, 6]).buffer;
    const packed = packRegistration({
      response: { clientDataJSON: clientData, attestationObject: attestation },
    });
    expect(packed).toEqual({
      client_data_json: toB64u(clientData),
      attestation_object: toB64u(attestation),
    });
  });

  it("packs an assertion credential into the wire fields", () => {
    const packed = packAssertion({
      rawId: new Uint8Array([1]).buffer,
      response: {
        clientDataJSON: new Uint8Array([2]).buffer,
        authenticatorData: new Uint8Array([3]).buffer,
        signature: new Uint8Array([4]).buffer,
      },
    });
    expect(Object.keys(packed).sort()).toEqual([
      "authenticator_data",
      "client_data_json",
      "credential_id",
      "signature",
    ]);
    expect(fromB64u(packed.signature)).toEqual(new Uint8Array([4]));
  });
});
