// Maps the server's ceremony wire format onto the browser WebAuthn API and
// back. Nothing from a ceremony is ever written to storage: challenges and
// responses live only in these function frames.

import { fromB64u, toB64u, utf8Bytes } from "./b64";
import type { WebauthnAssertionPayload, WebauthnRegistrationPayload } from "./api";

export function buildCreateOptions(
  username: string,
  challengeB64: string,
  rpId: string,
): CredentialCreationOptions {
  return {
    publicKey: {
      challenge: fromB64u(challengeB64),
      rp: { id: rpId, name: "PP2PP" },
      user: {
        id: utf8Bytes(username),
        name: username,
        displayName: username,
      },
      pubKeyCredParams: [
        { type: "public-key", alg: -7 }, // ES256
        { type: "public-key", alg: -257 }, // RS256
      ],
      authenticatorSelection: { userVerification: "required" },
      attestation: "none",
      timeout: 120000,
    },
  };
}

export function buildGetOptions(challengeB64: string, rpId: string): CredentialRequestOptions {
  return {
    publicKey: {
      challenge: fromB64u(challengeB64),
      rpId,
      userVerification: "required",
      timeout: 120000,
    },
  };
}

interface AttestationLike {
  response: { clientDataJSON: ArrayBuffer; attestationObject: ArrayBuffer };
}

interface AssertionLike {
  rawId: ArrayBuffer;
  response: {
    clientDataJSON: ArrayBuffer;
    authenticatorData: ArrayBuffer;
    signature: ArrayBuffer;
  };
}

export function packRegistration(credential: AttestationLike): WebauthnRegistrationPayload {
  return {
    client_data_json: toB64u(credential.response.clientDataJSON),
    attestation_object: toB64u(credential.response.attestationObject),
  };
}

export function packAssertion(credential: AssertionLike): WebauthnAssertionPayload {
  return {
    credential_id: toB64u(credential.rawId),
    authenticator_data: toB64u(credential.response.authenticatorData),
    client_data_json: toB64u(credential.response.clientDataJSON),
    signature: toB64u(credential.response.signature),
  };
}

export function webauthnSupported(): boolean {
  return typeof navigator !== "undefined" && !!navigator.credentials?.create;
}
