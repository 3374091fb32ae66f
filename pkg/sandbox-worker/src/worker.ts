/**
 * Worker entry point: one request frame per stdin line, one response frame
 * per stdout line, handled strictly in order. A malformed frame produces an
 * ERROR response rather than killing the worker; code-under-test failures
 * are reported in-band and never take the process down.
 */

import { createInterface } from "readline";
import { decodeFrame, encodeFrame, ProtocolError, validateRequest } from "./protocol";
import { handleRequest } from "./runner";

function respond(payload: unknown): void {
  process.stdout.write(encodeFrame(payload));
}

async function handleLine(line: string): Promise<void> {
  try {
    const request = validateRequest(decodeFrame(line));
    respond(await handleRequest(request));
  } catch (err) {
    const reason = err instanceof ProtocolError ? err.message : `internal error: ${err}`;
    respond({ status: "ERROR", output: reason });
  }
}

function main(): void {
  const lines = createInterface({ input: process.stdin, crlfDelay: Infinity });
  let pending: Promise<void> = Promise.resolve();
  lines.on("line", (line) => {
    if (!line.trim()) return;
    pending = pending.then(() => handleLine(line));
  });
  lines.on("close", () => {
    void pending.then(() => process.exit(0));
  });
}

main();
