// base64url (no padding) <-> bytes, the wire form of every binary field.
// Returns are pinned to Uint8Array<ArrayBuffer> so they satisfy BufferSource
// in the WebAuthn API without casts.

export function toB64u(data: ArrayBuffer | Uint8Array): string {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return btoa(binary).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
}

export function fromB64u(encoded: string): Uint8Array<ArrayBuffer> {
  const padded = encoded.replace(/-/g, "+").replace(/_/g, "/").padEnd(
    encoded.length + ((4 - (encoded.length % 4)) % 4),
    "=",
  );
  const binary = atob(padded);
  const out = new Uint8Array(new ArrayBuffer(binary.length));
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

export function utf8Bytes(text: string): Uint8Array<ArrayBuffer> {
  const raw = new TextEncoder().encode(text);
  const out = new Uint8Array(new ArrayBuffer(raw.length));
  out.set(raw);
  return out;
}
