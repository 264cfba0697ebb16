// Wraps the monitored APIs on a window-like object so every call increments
// the per-script accumulators before delegating to the original.  Hook
// failures are collected, never thrown: a page must keep working even when
// an API cannot be wrapped on the current engine.

import type { AccumulatorRegistry } from "./accumulator.js";
import type { Attributor } from "./attribution.js";
import type { ApiManifestDoc } from "./types.js";

const INTERFACE_GLOBALS: Record<string, string> = {
  canvasrenderingcontext2d: "CanvasRenderingContext2D",
  htmlcanvaselement: "HTMLCanvasElement",
  rtcpeerconnection: "RTCPeerConnection",
  rtcicecandidate: "RTCIceCandidate",
  audiocontext: "AudioContext",
  offlineaudiocontext: "OfflineAudioContext",
};

// window.navigator.* and window.screen.* are hooked on the instance objects.
const WINDOW_OBJECTS: Record<string, string> = {
  "window.navigator": "navigator",
  "window.screen": "screen",
};

export interface InstallResult {
  hooked: string[];
  skipped: string[];
}

export function monitoredApis(manifest: ApiManifestDoc): string[] {
  const names = new Set<string>(manifest.vocabulary);
  for (const apis of Object.values(manifest.signals)) {
    for (const api of apis) {
      names.add(api);
    }
  }
  return [...names].sort();
}

function findMemberName(target: object, lowered: string): string | null {
  let current: object | null = target;
  while (current && current !== Object.prototype) {
    for (const name of Object.getOwnPropertyNames(current)) {
      if (name.toLowerCase() === lowered) {
        return name;
      }
    }
    current = Object.getPrototypeOf(current);
  }
  return null;
}

function findDescriptor(
  target: object, name: string,
): { owner: object; descriptor: PropertyDescriptor } | null {
  let current: object | null = target;
  while (current && current !== Object.prototype) {
    const descriptor = Object.getOwnPropertyDescriptor(current, name);
    if (descriptor) {
      return { owner: current, descriptor };
    }
    current = Object.getPrototypeOf(current);
  }
  return null;
}

function hookMember(
  holder: object,
  member: string,
  canonical: string,
  registry: AccumulatorRegistry,
  attribute: Attributor,
): boolean {
  const realName = findMemberName(holder, member.toLowerCase());
  if (realName === null) {
    return false;
  }
  const found = findDescriptor(holder, realName);
  if (!found || !found.descriptor.configurable) {
    return false;
  }
  const { owner, descriptor } = found;

  const record = (args: unknown[], returnValue: unknown) => {
    try {
      registry.record(attribute(), canonical, args, returnValue);
    } catch {
      // Telemetry must never break the page.
    }
  };

  if (typeof descriptor.value === "function") {
    const original = descriptor.value;
    Object.defineProperty(owner, realName, {
      ...descriptor,
      value: function (this: unknown, ...args: unknown[]) {
        const result = original.apply(this, args);
        record(args, result);
        return result;
      },
    });
    return true;
  }
  if (descriptor.get || descriptor.set) {
    const originalGet = descriptor.get;
    const originalSet = descriptor.set;
    Object.defineProperty(owner, realName, {
      configurable: true,
      enumerable: descriptor.enumerable,
      get: originalGet
        ? function (this: unknown) {
            const value = originalGet.call(this);
            record([], value);
            return value;
          }
        : undefined,
      set: originalSet
        ? function (this: unknown, value: unknown) {
            originalSet.call(this, value);
            record([value], undefined);
          }
        : undefined,
    });
    return true;
  }
  return false;
}

export function installHooks(
  windowLike: Record<string, unknown>,
  manifest: ApiManifestDoc,
  registry: AccumulatorRegistry,
  attribute: Attributor,
): InstallResult {
  const hooked: string[] = [];
  const skipped: string[] = [];

  for (const canonical of monitoredApis(manifest)) {
    try {
      if (canonical.includes("[")) {
        // Bracketed property selectors (plugin entries) are aggregated under
        // their parent property hook.
        skipped.push(canonical);
        continue;
      }
      let holder: object | null = null;
      let member: string | null = null;
      for (const [prefix, objectName] of Object.entries(WINDOW_OBJECTS)) {
        if (canonical.startsWith(prefix + ".")) {
          const instance = windowLike[objectName];
          holder = instance ? Object.getPrototypeOf(instance) ?? instance : null;
          if (holder === Object.prototype) {
            holder = instance as object;
          }
          member = canonical.slice(prefix.length + 1);
        }
      }
      if (holder === null) {
        const dot = canonical.indexOf(".");
        const iface = canonical.slice(0, dot);
        member = canonical.slice(dot + 1);
        const globalName = INTERFACE_GLOBALS[iface];
        const ctor = globalName ? (windowLike[globalName] as { prototype?: object }) : undefined;
        holder = ctor?.prototype ?? null;
      }
      if (holder && member && hookMember(holder, member, canonical, registry, attribute)) {
        hooked.push(canonical);
      } else {
        skipped.push(canonical);
      }
    } catch {
      skipped.push(canonical);
    }
  }
  return { hooked, skipped };
}

export function computeFrameDepth(windowLike: { parent?: unknown }): number {
  let depth = 0;
  let current: { parent?: unknown } = windowLike;
  while (
    current.parent &&
    current.parent !== current &&
    typeof current.parent === "object"
  ) {
    depth += 1;
    current = current.parent as { parent?: unknown };
  }
  return depth;
}
