/**
 * Wire protocol shared with the orchestrator (see docs/sandbox_protocol.md
 * in the repository root for the byte-exact description).
 *
 * One frame per line: `<decimal byte length> <json payload>\n`. The length
 * covers the UTF-8 payload bytes only. One request frame in, one response
 * frame out, strictly alternating.
 */

export type SandboxMode = "RUN_SNIPPET" | "RUN_TESTS";

export interface SandboxRequest {
  mode: SandboxMode;
  code: string;
  tests?: string[];
  entry_point?: string;
  timeout_s: number;
  memory_mb: number;
}

export interface TestOutcome {
  pass: boolean;
  message: string;
}

export interface SandboxResponse {
  status: "OK" | "ERROR" | "TIMEOUT";
  output: string;
  per_test?: TestOutcome[];
}

export class ProtocolError extends Error {}

export function encodeFrame(payload: unknown): Buffer {
  const body = Buffer.from(JSON.stringify(payload), "utf-8");
  return Buffer.concat([Buffer.from(`${body.length} `, "ascii"), body, Buffer.from("\n")]);
}

export function decodeFrame(line: Buffer | string): unknown {
  const raw = Buffer.isBuffer(line) ? line : Buffer.from(line, "utf-8");
  const trimmed = raw[raw.length - 1] === 0x0a ? raw.subarray(0, raw.length - 1) : raw;
  const space = trimmed.indexOf(0x20);
  if (space < 1) {
    throw new ProtocolError(`malformed frame header: ${trimmed.subarray(0, 40).toString()}`);
  }
  const declared = Number(trimmed.subarray(0, space).toString("ascii"));
  const body = trimmed.subarray(space + 1);
  if (!Number.isInteger(declared)) {
    throw new ProtocolError(`malformed frame length: ${trimmed.subarray(0, space).toString()}`);
  }
  if (declared !== body.length) {
    throw new ProtocolError(`frame length mismatch: header says ${declared}, payload is ${body.length} bytes`);
  }
  try {
    return JSON.parse(body.toString("utf-8"));
  } catch (err) {
    throw new ProtocolError(`frame payload is not valid JSON: ${err}`);
  }
}

export function validateRequest(value: unknown): SandboxRequest {
  if (typeof value !== "object" || value === null) {
    throw new ProtocolError("request must be a JSON object");
  }
  const req = value as Record<string, unknown>;
  if (req.mode !== "RUN_SNIPPET" && req.mode !== "RUN_TESTS") {
    throw new ProtocolError(`unknown mode: ${String(req.mode)}`);
  }
  if (typeof req.code !== "string") {
    throw new ProtocolError("code must be a string");
  }
  const timeout = Number(req.timeout_s);
  if (!(timeout > 0)) {
    throw new ProtocolError("timeout_s must be a positive number");
  }
  const memory = Number(req.memory_mb ?? 512);
  if (!(memory > 0) || !Number.isInteger(memory)) {
    throw new ProtocolError("memory_mb must be a positive integer");
  }
  let tests: string[] | undefined;
  if (req.mode === "RUN_TESTS") {
    if (!Array.isArray(req.tests) || req.tests.length === 0 || !req.tests.every((t) => typeof t === "string")) {
      throw new ProtocolError("RUN_TESTS requires a nonempty list of test strings");
    }
    tests = req.tests as string[];
  }
  return {
    mode: req.mode,
    code: req.code,
    tests,
    entry_point: typeof req.entry_point === "string" ? req.entry_point : undefined,
    timeout_s: timeout,
    memory_mb: memory,
  };
}
