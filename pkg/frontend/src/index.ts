// Content-script entry point: decides whether the page is in scope, installs
// the hooks before any page script runs, and flushes telemetry periodically
// and at page unload.

import { AccumulatorRegistry } from "./accumulator.js";
import { makeAttributor } from "./attribution.js";
import { registrableDomain, siteAllowed } from "./domains.js";
import { flushTelemetry } from "./flush.js";
import { computeFrameDepth, installHooks, type InstallResult } from "./hooks.js";
import type { AllowlistDoc, ApiManifestDoc, PageContext } from "./types.js";

export interface BootstrapOptions {
  collectorUrl: string;
  token?: string;
  flushIntervalMs?: number;
  spool?: (lines: string[]) => void | Promise<void>;
}

export interface Instrumentation {
  registry: AccumulatorRegistry;
  install: InstallResult;
  flush: () => ReturnType<typeof flushTelemetry>;
}

// The instrumentation's own frames, skipped during attribution.
const SELF_PREFIX = new URL(".", import.meta.url).href;

export function bootstrapContentScript(
  windowLike: Record<string, unknown>,
  manifest: ApiManifestDoc,
  allowlist: AllowlistDoc,
  options: BootstrapOptions,
): Instrumentation | null {
  const location = windowLike["location"] as { href?: string } | undefined;
  const pageUrl = location?.href ?? "";
  if (!pageUrl) {
    return null;
  }
  const site = registrableDomain(pageUrl);
  if (!siteAllowed(site, allowlist.sites)) {
    // Out-of-scope site: no hooks, no accumulation, no network traffic.
    return null;
  }
  const context: PageContext = {
    pageUrl,
    site,
    frameDepth: computeFrameDepth(windowLike as { parent?: unknown }),
  };
  const registry = new AccumulatorRegistry(context);
  const attribute = makeAttributor([SELF_PREFIX]);
  const install = installHooks(windowLike, manifest, registry, attribute);

  const flush = () =>
    flushTelemetry(registry, {
      collectorUrl: options.collectorUrl,
      token: options.token,
      allowlist: allowlist.sites,
      spool: options.spool,
    });

  const addListener = (windowLike["addEventListener"] as
    | ((type: string, cb: () => void) => void)
    | undefined);
  if (typeof addListener === "function") {
    addListener.call(windowLike, "pagehide", () => {
      void flush();
    });
  }
  if (options.flushIntervalMs && typeof setInterval === "function") {
    const timer = setInterval(() => {
      void flush();
    }, options.flushIntervalMs);
    if (typeof (timer as { unref?: () => void }).unref === "function") {
      (timer as unknown as { unref: () => void }).unref();
    }
  }
  return { registry, install, flush };
}
