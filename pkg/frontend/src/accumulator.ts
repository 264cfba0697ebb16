// Per-script telemetry accumulators.  Only counts, lengths, and bounded
// distinct-hash sets are stored; raw argument or return values never are.

import type { ApiAggregateLine, PageContext, TelemetryLine } from "./types.js";
import { scriptId } from "./attribution.js";

// Beyond this many distinct string arguments per API the distinct count
// saturates, bounding memory.
export const DISTINCT_HASH_CAP = 4096;

function fnv1a32(value: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < value.length; i++) {
    hash ^= value.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

function isListLike(value: unknown): value is { length: number } {
  if (Array.isArray(value)) {
    return true;
  }
  return (
    typeof value === "object" &&
    value !== null &&
    typeof (value as { length?: unknown }).length === "number"
  );
}

export class ApiAccumulator {
  calls = 0;
  maxStrLen = 0;
  sumStrLen = 0;
  listRetLenSum = 0;
  private distinctHashes = new Set<number>();

  recordCall(args: unknown[], returnValue: unknown): void {
    this.calls += 1;
    for (const arg of args) {
      if (typeof arg === "string") {
        this.sumStrLen += arg.length;
        this.maxStrLen = Math.max(this.maxStrLen, arg.length);
        if (this.distinctHashes.size < DISTINCT_HASH_CAP) {
          this.distinctHashes.add(fnv1a32(arg));
        }
      }
    }
    if (isListLike(returnValue)) {
      this.listRetLenSum += returnValue.length;
    }
  }

  get distinctStrArgs(): number {
    // Hash-set distinctness is capped, and can never exceed the call count.
    return Math.min(this.distinctHashes.size, this.calls);
  }
}

export class ScriptAccumulator {
  readonly apis = new Map<string, ApiAccumulator>();

  constructor(readonly scriptUrl: string) {}

  api(name: string): ApiAccumulator {
    let acc = this.apis.get(name);
    if (!acc) {
      acc = new ApiAccumulator();
      this.apis.set(name, acc);
    }
    return acc;
  }
}

export class AccumulatorRegistry {
  private scripts = new Map<string, ScriptAccumulator>();

  constructor(readonly context: PageContext) {}

  record(scriptUrl: string, apiName: string, args: unknown[], returnValue: unknown): void {
    let script = this.scripts.get(scriptUrl);
    if (!script) {
      script = new ScriptAccumulator(scriptUrl);
      this.scripts.set(scriptUrl, script);
    }
    script.api(apiName).recordCall(args, returnValue);
  }

  isEmpty(): boolean {
    return this.scripts.size === 0;
  }

  scriptUrls(): string[] {
    return [...this.scripts.keys()];
  }

  serialize(): TelemetryLine[] {
    const lines: TelemetryLine[] = [];
    for (const [url, script] of [...this.scripts.entries()].sort()) {
      const apis: ApiAggregateLine[] = [];
      for (const [name, acc] of [...script.apis.entries()].sort()) {
        if (acc.calls < 1) {
          continue;
        }
        apis.push({
          name,
          calls: acc.calls,
          distinct_str_args: acc.distinctStrArgs,
          max_str_len: acc.maxStrLen,
          sum_str_len: acc.sumStrLen,
          list_ret_len_sum: acc.listRetLenSum,
        });
      }
      lines.push({
        script_id: scriptId(url),
        script_url: url,
        page_url: this.context.pageUrl,
        site: this.context.site,
        frame_depth: this.context.frameDepth,
        apis,
      });
    }
    return lines;
  }

  // Remove exactly the scripts that were serialized into an acknowledged
  // batch; calls that raced in since stay queued for the next flush.
  drain(urls: string[]): void {
    for (const url of urls) {
      this.scripts.delete(url);
    }
  }
}
