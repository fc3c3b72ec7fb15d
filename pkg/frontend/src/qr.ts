// QR rendering for payment tokens and scanning via BarcodeDetector when the
// browser has one; paste is always available as the fallback channel.

import QRCode from "qrcode";

export function renderQr(canvas: HTMLCanvasElement, payload: string): Promise<void> {
  return QRCode.toCanvas(canvas, payload, { margin: 2, width: 280 });
}

declare global {
  interface Window {
    BarcodeDetector?: new (options?: { formats: string[] }) => {
      detect(source: CanvasImageSource): Promise<{ rawValue: string }[]>;
    };
  }
}

export function scanningSupported(): boolean {
  return typeof window !== "undefined" && !!window.BarcodeDetector;
}

/** Watch the camera until a QR code is read or stop() is called. */
export async function scanFromCamera(
  video: HTMLVideoElement,
  onResult: (payload: string) => void,
): Promise<() => void> {
  if (!window.BarcodeDetector) throw new Error("no barcode detector");
  const detector = new window.BarcodeDetector({ formats: ["qr_code"] });
  const stream = await navigator.mediaDevices.getUserMedia({ video: { facingMode: "environment" } });
  video.srcObject = stream;
  await video.play();
  let active = true;
  const stop = () => {
    active = false;
    stream.getTracks().forEach((t) => t.stop());
    video.srcObject = null;
  };
  const tick = async () => {
    if (!active) return;
    try {
      const codes = await detector.detect(video);
      if (codes.length > 0) {
        onResult(codes[0].rawValue);
        stop();
        return;
      }
    } catch {
      // detection hiccups are fine; keep polling
    }
    setTimeout(tick, 250);
  };
  void tick();
  return stop;
}
