/**
 * JSON-lines oracle protocol: the server's first line is a handshake
 * announcing the protocol version and score bounds; every request carries a
 * base64 little-endian float32 tensor and is answered with either a finite
 * score or an error string, echoing the request id.
 */

export const PROTO_VERSION = "iqa-oracle/1";

export interface Bounds {
  beta1: number;
  beta2: number;
}

export interface ScoreRequest {
  id: number;
  h: number;
  w: number;
  c: number;
  data_b64: string;
}

/** A scoring callable: shape plus the flat row-major float32 tensor. */
export type Scorer = (
  h: number,
  w: number,
  c: number,
  data: Float32Array,
) => number;

export function handshakeLine(bounds: Bounds): string {
  return JSON.stringify({
    proto: PROTO_VERSION,
    beta1: bounds.beta1,
    beta2: bounds.beta2,
  });
}

export function decodeTensor(
  h: number,
  w: number,
  c: number,
  dataB64: string,
): Float32Array {
  if (!/^[A-Za-z0-9+/]*={0,2}$/.test(dataB64)) {
    throw new Error("invalid base64 payload");
  }
  const raw = Buffer.from(dataB64, "base64");
  const expected = 4 * h * w * c;
  if (raw.length !== expected) {
    throw new Error(`payload is ${raw.length} bytes, expected ${expected}`);
  }
  // copy to guarantee 4-byte alignment regardless of the Buffer pool offset
  const aligned = new Uint8Array(raw);
  return new Float32Array(aligned.buffer, 0, h * w * c);
}

export function handleRequestLine(line: string, scorer: Scorer): string {
  let requestId = 0;
  try {
    const msg = JSON.parse(line) as Partial<ScoreRequest>;
    if (typeof msg.id === "number" && Number.isInteger(msg.id) && msg.id >= 0) {
      requestId = msg.id;
    }
    const { h, w, c } = msg;
    for (const v of [h, w, c]) {
      if (typeof v !== "number" || !Number.isInteger(v) || v <= 0) {
        throw new Error(`invalid shape (${h}, ${w}, ${c})`);
      }
    }
    if (typeof msg.data_b64 !== "string") {
      throw new Error("missing data_b64");
    }
    const data = decodeTensor(h!, w!, c!, msg.data_b64);
    const score = scorer(h!, w!, c!, data);
    if (typeof score !== "number" || !Number.isFinite(score)) {
      throw new Error(`scorer produced non-finite score ${score}`);
    }
    return JSON.stringify({ id: requestId, score });
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    return JSON.stringify({ id: requestId, error: message });
  }
}
