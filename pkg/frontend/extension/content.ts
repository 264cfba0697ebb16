// Extension content script: bundle this file (with its imports) into
// content.js.  It must run at document_start in every frame so the hooks are
// in place before any page script executes.

import { bootstrapContentScript } from "../src/index.js";
import type { AllowlistDoc, ApiManifestDoc } from "../src/types.js";

// The manifest and allowlist ship with the extension package; a bundler
// inlines them from shared/monitored_apis.json and shared/allowlist.json.
declare const MONITORED_APIS: ApiManifestDoc;
declare const ALLOWLIST: AllowlistDoc;
declare const COLLECTOR_URL: string;
declare const COLLECTOR_TOKEN: string;

bootstrapContentScript(
  globalThis as unknown as Record<string, unknown>,
  MONITORED_APIS,
  ALLOWLIST,
  {
    collectorUrl: COLLECTOR_URL,
    token: COLLECTOR_TOKEN,
    flushIntervalMs: 30_000,
  },
);
