import { describe, expect, it } from "vitest";
import { fromB64u, toB64u, utf8Bytes } from "../src/b64";

describe("base64url", () => {
  it("round-trips arbitrary bytes", () => {
    for (const length of [0, 1, 2, 3, 15, 16, 17, 256]) {
      const bytes = new Uint8Array(length).map((_, i) => (i * 37 + 11) % 256);
      expect(fromB64u(toB64u(bytes))).toEqual(bytes);
    }
  });

  it("emits no padding and only url-safe characters", () => {
    const encoded = toB64u(new Uint8Array([251, 255, 191, 62, 63, 0]));
    expect(encoded).not.toMatch(/[=+/]/);
    expect(encoded).toMatch(/^[A-Za-z0-9_-]+$/);
  });

  it("accepts ArrayBuffer input", () => {
    const buffer = new Uint8Array([1, 2, 3]).buffer;
    expect(toB64u(buffer)).toBe(toB64u(new Uint8Array([1, 2, 3])));
  });

  it("decodes the server's unpadded form", () => {
    // 16 bytes encode to 22 chars unpadded
    const challenge = "AAECAwQFBgcICQoLDA0ODw";
    const bytes = fromB64u(challenge);
    expect(bytes).toHaveLength(16);
    expect([...bytes]).toEqual([...Array(16).keys()]);
  });

  it("utf8Bytes matches TextEncoder", () => {
    expect([...utf8Bytes("alice")]).toEqual([97, 108, 105, 99, 101]);
  });
});
