/**
 * End-to-end tests against the built worker binary (dist/worker.js), driving
 * it over the real wire protocol exactly as the orchestrator does.
 */

import { ChildProcess, spawn } from "child_process";
import { join } from "path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { decodeFrame, encodeFrame, SandboxResponse } from "../src/protocol";

const WORKER = join(__dirname, "..", "dist", "worker.js");

class WorkerClient {
  private child: ChildProcess;
  private buffer = "";
  private waiters: Array<(line: string) => void> = [];

  constructor() {
    this.child = spawn("node", [WORKER], { stdio: ["pipe", "pipe", "inherit"] });
    this.child.stdout!.on("data", (chunk: Buffer) => {
      this.buffer += chunk.toString("utf-8");
      let index;
      while ((index = this.buffer.indexOf("\n")) >= 0) {
        const line = this.buffer.slice(0, index + 1);
        this.buffer = this.buffer.slice(index + 1);
        this.waiters.shift()?.(line);
      }
    });
  }

  request(payload: unknown, timeoutMs = 30000): Promise<SandboxResponse> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("no response from worker")), timeoutMs);
      this.waiters.push((line) => {
        clearTimeout(timer);
        resolve(decodeFrame(line) as SandboxResponse);
      });
      this.child.stdin!.write(encodeFrame(payload));
    });
  }

  close() {
    this.child.kill();
  }
}

const CORRECT = "def add(a, b):\n    return a + b\n";
const OFF_BY_ONE = "def add(a, b):\n    if a == 0:\n        return b\n    return a + b + 1\n";
const ADD_TESTS = ["assert add(1, 2) == 3", "assert add(0, 5) == 5", "assert add(-1, 1) == 0"];

describe("worker", () => {
  let client: WorkerClient;

  beforeAll(() => {
    client = new WorkerClient();
  });

  afterAll(() => {
    client.close();
  });

  it("runs an arithmetic snippet and reports stdout plus output", async () => {
    const response = await client.request({
      mode: "RUN_SNIPPET",
      code: "q = 1.50e-9\nd = 6.20e-6\nprint('dipole moment p = q * d')\noutput = q * d\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(response.status).toBe("OK");
    expect(response.output).toContain("dipole moment p = q * d");
    expect(response.output).toContain("output = 9.3");
  });

  it("notes when no output variable was set", async () => {
    const response = await client.request({
      mode: "RUN_SNIPPET",
      code: "print('just prints')\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(response.status).toBe("OK");
    expect(response.output).toContain("no `output` variable");
  });

  it("kills an infinite loop within timeout + 1s", async () => {
    const started = Date.now();
    const response = await client.request({
      mode: "RUN_SNIPPET",
      code: "while True:\n    pass\n",
      timeout_s: 2,
      memory_mb: 256,
    });
    const elapsed = (Date.now() - started) / 1000;
    expect(response.status).toBe("TIMEOUT");
    expect(elapsed).toBeLessThan(3.0);
  }, 15000);

  it("passes all tests for a correct solution", async () => {
    const response = await client.request({
      mode: "RUN_TESTS",
      code: CORRECT,
      tests: ADD_TESTS,
      entry_point: "add",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(response.status).toBe("OK");
    expect(response.per_test).toHaveLength(3);
    expect(response.per_test!.every((t) => t.pass)).toBe(true);
  });

  it("reports 1/3 for the off-by-one solution", async () => {
    const response = await client.request({
      mode: "RUN_TESTS",
      code: OFF_BY_ONE,
      tests: ADD_TESTS,
      entry_point: "add",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(response.per_test!.map((t) => t.pass)).toEqual([false, true, false]);
    expect(response.per_test![0].message).toContain("AssertionError");
  });

  it("fails a network attempt without poisoning the next request", async () => {
    const network = await client.request({
      mode: "RUN_SNIPPET",
      code: "import urllib.request\noutput = urllib.request.urlopen('http://example.com').read()\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(network.status).toBe("ERROR");
    expect(network.output).toContain("network access is disabled");

    const followUp = await client.request({
      mode: "RUN_SNIPPET",
      code: "output = 2 + 2\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(followUp.status).toBe("OK");
    expect(followUp.output).toContain("output = 4");
  });

  it("reports syntax errors without crashing", async () => {
    const broken = await client.request({
      mode: "RUN_SNIPPET",
      code: "def oops(:\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(broken.status).toBe("ERROR");
    expect(broken.output).toContain("SyntaxError");

    const alive = await client.request({
      mode: "RUN_SNIPPET",
      code: "output = 'still here'\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(alive.status).toBe("OK");
  });

  it("is stateless across identical requests", async () => {
    const first = await client.request({
      mode: "RUN_SNIPPET",
      code: "try:\n    marker\n    output = 'leaked'\nexcept NameError:\n    marker = True\n    output = 'fresh'\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    const second = await client.request({
      mode: "RUN_SNIPPET",
      code: "try:\n    marker\n    output = 'leaked'\nexcept NameError:\n    marker = True\n    output = 'fresh'\n",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(first.output).toContain("fresh");
    expect(second.output).toContain("fresh");
  });

  it("repeats identical RUN_TESTS results", async () => {
    const run = () =>
      client.request({
        mode: "RUN_TESTS",
        code: OFF_BY_ONE,
        tests: ADD_TESTS,
        entry_point: "add",
        timeout_s: 10,
        memory_mb: 256,
      });
    const [a, b] = [await run(), await run()];
    expect(a.per_test!.map((t) => t.pass)).toEqual(b.per_test!.map((t) => t.pass));
  });

  it("flags a missing entry point", async () => {
    const response = await client.request({
      mode: "RUN_TESTS",
      code: "def subtract(a, b):\n    return a - b\n",
      tests: ["assert add(1, 2) == 3"],
      entry_point: "add",
      timeout_s: 10,
      memory_mb: 256,
    });
    expect(response.per_test![0].pass).toBe(false);
    expect(response.per_test![0].message).toContain("add");
  });

  it("answers malformed frames with an in-band error", async () => {
    const response = await client.request({ mode: "RUN_NOWHERE", code: "x", timeout_s: 1 });
    expect(response.status).toBe("ERROR");
    expect(response.output).toContain("unknown mode");
  });
});
