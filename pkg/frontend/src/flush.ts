// Serializes accumulated telemetry and posts it to the collector as
// newline-delimited JSON.  Failed batches are retried with exponential
// backoff, then handed to the spool so nothing is lost.

import type { AccumulatorRegistry } from "./accumulator.js";

export interface FlushOptions {
  collectorUrl: string;
  token?: string;
  allowlist: string[];
  fetchFn?: typeof fetch;
  sleepFn?: (ms: number) => Promise<void>;
  maxAttempts?: number;
  baseDelayMs?: number;
  spool?: (lines: string[]) => void | Promise<void>;
}

export interface FlushResult {
  status: "sent" | "spooled" | "skipped" | "empty";
  accepted: number;
  rejected: number;
  attempts: number;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export function toNdjson(lines: object[]): string {
  return lines.map((line) => JSON.stringify(line)).join("\n") + "\n";
}

export async function flushTelemetry(
  registry: AccumulatorRegistry,
  options: FlushOptions,
): Promise<FlushResult> {
  // Non-allowlisted sites are never collected and never contacted.
  if (!options.allowlist.includes(registry.context.site)) {
    return { status: "skipped", accepted: 0, rejected: 0, attempts: 0 };
  }
  if (registry.isEmpty()) {
    return { status: "empty", accepted: 0, rejected: 0, attempts: 0 };
  }

  const fetchFn = options.fetchFn ?? fetch;
  const sleepFn = options.sleepFn ?? defaultSleep;
  const maxAttempts = options.maxAttempts ?? 4;
  const baseDelayMs = options.baseDelayMs ?? 500;

  const urls = registry.scriptUrls();
  const body = toNdjson(registry.serialize());
  const headers: Record<string, string> = { "Content-Type": "application/x-ndjson" };
  if (options.token) {
    headers["Authorization"] = `Bearer ${options.token}`;
  }

  let attempts = 0;
  for (; attempts < maxAttempts; attempts++) {
    if (attempts > 0) {
      await sleepFn(baseDelayMs * 2 ** (attempts - 1));
    }
    try {
      const response = await fetchFn(`${options.collectorUrl}/v1/telemetry`, {
        method: "POST",
        headers,
        body,
      });
      if (response.ok) {
        const counts = (await response.json()) as { accepted: number; rejected: number };
        registry.drain(urls);
        return {
          status: "sent",
          accepted: counts.accepted,
          rejected: counts.rejected,
          attempts: attempts + 1,
        };
      }
    } catch {
      // Network failure: fall through to the next attempt.
    }
  }

  if (options.spool) {
    await options.spool(body.trimEnd().split("\n"));
    registry.drain(urls);
    return { status: "spooled", accepted: 0, rejected: 0, attempts };
  }
  return { status: "skipped", accepted: 0, rejected: 0, attempts };
}
