// Attributes an API call to the page script that made it, by inspecting the
// stack at call time and skipping the instrumentation's own frames.
// Falls back to "page-inline" when no script URL resolves.

export const INLINE_SCRIPT = "page-inline";

const FRAME_PATTERNS = [
  /\((.+?):\d+:\d+\)\s*$/, //   at fn (url:line:col)
  /at\s+(.+?):\d+:\d+\s*$/, //  at url:line:col
  /@(.+?):\d+:\d+\s*$/, //      fn@url:line:col
];

export function frameUrl(stackLine: string): string | null {
  for (const pattern of FRAME_PATTERNS) {
    const match = pattern.exec(stackLine);
    if (match) {
      return match[1];
    }
  }
  return null;
}

export type Attributor = () => string;

export function makeAttributor(skipPrefixes: string[]): Attributor {
  return () => {
    const stack = new Error().stack ?? "";
    for (const line of stack.split("\n").slice(1)) {
      const url = frameUrl(line);
      if (!url || url.startsWith("node:")) {
        continue;
      }
      if (skipPrefixes.some((prefix) => url.startsWith(prefix))) {
        continue;
      }
      return url;
    }
    return INLINE_SCRIPT;
  };
}

// 64-bit FNV-1a of the attributed script URL; stands in for a content hash
// when the script body is not retrievable from the page context.
export function scriptId(scriptUrl: string): string {
  let hash = 0xcbf29ce484222325n;
  const prime = 0x100000001b3n;
  const mask = 0xffffffffffffffffn;
  for (let i = 0; i < scriptUrl.length; i++) {
    hash ^= BigInt(scriptUrl.charCodeAt(i) & 0xff);
    hash = (hash * prime) & mask;
  }
  return hash.toString(16).padStart(16, "0");
}
