/**
 * Runs untrusted Python in fresh, resource-limited subprocesses.
 *
 * Every request gets its own temp directory and its own python process (one
 * per test case in RUN_TESTS mode), so nothing leaks between requests. The
 * injected harness disables socket creation, applies the memory limit, and
 * appends the snippet's `output` variable to captured stdout. Processes get
 * SIGTERM at the time limit and SIGKILL one second later.
 */

import { spawn } from "child_process";
import { mkdtempSync, rmSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import type { SandboxRequest, SandboxResponse, TestOutcome } from "./protocol";

const PYTHON = process.env.MASGEN_SANDBOX_PYTHON ?? "python3";
const MAX_CAPTURE_BYTES = 1024 * 1024;
const ERROR_TAIL_BYTES = 4096;
const TEST_MESSAGE_BYTES = 1024;

function harnessPreamble(memoryMb: number): string {
  return [
    "import resource, socket, sys",
    "_MB = 1024 * 1024",
    "try:",
    `    resource.setrlimit(resource.RLIMIT_AS, (${memoryMb} * _MB, ${memoryMb} * _MB))`,
    "except (ValueError, OSError):",
    "    pass",
    "def _no_network(*args, **kwargs):",
    '    raise OSError("network access is disabled in the sandbox")',
    "class _BlockedSocket(socket.socket):",
    "    def __init__(self, *args, **kwargs):",
    '        raise OSError("network access is disabled in the sandbox")',
    "socket.socket = _BlockedSocket",
    "socket.create_connection = _no_network",
    "socket.getaddrinfo = _no_network",
    "socket.socketpair = _no_network",
    "",
  ].join("\n");
}

function snippetSource(req: SandboxRequest): string {
  return (
    harnessPreamble(req.memory_mb) +
    [
      '_globals = {"__name__": "__main__"}',
      `exec(compile(${JSON.stringify(req.code)}, "<snippet>", "exec"), _globals)`,
      'if "output" in _globals:',
      '    sys.stdout.write("\\noutput = " + str(_globals["output"]) + "\\n")',
      "else:",
      '    sys.stdout.write("\\n(no `output` variable was set)\\n")',
      "",
    ].join("\n")
  );
}

function testSource(req: SandboxRequest, test: string): string {
  const entryCheck = req.entry_point
    ? [
        `if ${JSON.stringify(req.entry_point)} not in _globals:`,
        `    raise NameError("entry point " + ${JSON.stringify(req.entry_point)} + " is not defined")`,
      ]
    : [];
  return (
    harnessPreamble(req.memory_mb) +
    [
      '_globals = {"__name__": "__main__"}',
      `exec(compile(${JSON.stringify(req.code)}, "<solution>", "exec"), _globals)`,
      ...entryCheck,
      `exec(compile(${JSON.stringify(test)}, "<test>", "exec"), _globals)`,
      "",
    ].join("\n")
  );
}

interface RawRun {
  stdout: string;
  stderr: string;
  exitCode: number;
  timedOut: boolean;
  spawnError?: string;
}

function runPython(source: string, timeoutS: number): Promise<RawRun> {
  const workdir = mkdtempSync(join(tmpdir(), "masgen-sbx-"));
  const script = join(workdir, "job.py");
  writeFileSync(script, source, "utf-8");

  return new Promise((resolve) => {
    const child = spawn(PYTHON, ["-I", script], {
      cwd: workdir,
      stdio: ["ignore", "pipe", "pipe"],
      env: {}, // no inherited environment for untrusted code
    });

    let stdout = "";
    let stderr = "";
    let timedOut = false;
    let settled = false;

    const termTimer = setTimeout(() => {
      timedOut = true;
      child.kill("SIGTERM");
    }, timeoutS * 1000);
    // one second of grace, then no mercy
    const killTimer = setTimeout(() => child.kill("SIGKILL"), (timeoutS + 1) * 1000);

    const capture = (chunk: Buffer, sink: "stdout" | "stderr") => {
      const text = chunk.toString("utf-8");
      if (sink === "stdout") stdout += text;
      else stderr += text;
      if (stdout.length + stderr.length > MAX_CAPTURE_BYTES) {
        stderr += "\n[output limit exceeded]";
        child.kill("SIGKILL");
      }
    };
    child.stdout.on("data", (chunk) => capture(chunk, "stdout"));
    child.stderr.on("data", (chunk) => capture(chunk, "stderr"));

    const finish = (result: RawRun) => {
      if (settled) return;
      settled = true;
      clearTimeout(termTimer);
      clearTimeout(killTimer);
      rmSync(workdir, { recursive: true, force: true });
      resolve(result);
    };

    child.on("error", (err) => finish({ stdout, stderr, exitCode: -1, timedOut, spawnError: String(err) }));
    child.on("close", (code) => finish({ stdout, stderr, exitCode: code ?? -1, timedOut }));
  });
}

export async function runSnippet(req: SandboxRequest): Promise<SandboxResponse> {
  const run = await runPython(snippetSource(req), req.timeout_s);
  if (run.spawnError) {
    return { status: "ERROR", output: `cannot start interpreter: ${run.spawnError}` };
  }
  if (run.timedOut) {
    return { status: "TIMEOUT", output: run.stdout.slice(0, ERROR_TAIL_BYTES) };
  }
  if (run.exitCode !== 0) {
    return { status: "ERROR", output: run.stderr.slice(-ERROR_TAIL_BYTES) };
  }
  return { status: "OK", output: run.stdout };
}

export async function runTests(req: SandboxRequest): Promise<SandboxResponse> {
  const perTest: TestOutcome[] = [];
  for (const test of req.tests ?? []) {
    const run = await runPython(testSource(req, test), req.timeout_s);
    if (run.spawnError) {
      return { status: "ERROR", output: `cannot start interpreter: ${run.spawnError}` };
    }
    if (run.timedOut) {
      perTest.push({ pass: false, message: "timed out" });
    } else if (run.exitCode !== 0) {
      perTest.push({ pass: false, message: run.stderr.slice(-TEST_MESSAGE_BYTES) });
    } else {
      perTest.push({ pass: true, message: "" });
    }
  }
  return { status: "OK", output: "", per_test: perTest };
}

export async function handleRequest(req: SandboxRequest): Promise<SandboxResponse> {
  return req.mode === "RUN_SNIPPET" ? runSnippet(req) : runTests(req);
}
