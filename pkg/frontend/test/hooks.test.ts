import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import { test } from "node:test";

import { AccumulatorRegistry } from "../src/accumulator.js";
import { computeFrameDepth, installHooks } from "../src/hooks.js";
import type { ApiManifestDoc, PageContext } from "../src/types.js";
import { makeFakeWindow } from "./fake-page.js";

const manifest: ApiManifestDoc = JSON.parse(
  readFileSync(new URL("../../../shared/monitored_apis.json", import.meta.url), "utf-8"),
);

const context: PageContext = {
  pageUrl: "https://fp-test.example/",
  site: "fp-test.example",
  frameDepth: 0,
};

function setup(scriptUrl = "https://cdn.example/fp.js") {
  const win = makeFakeWindow("https://fp-test.example/");
  const registry = new AccumulatorRegistry(context);
  const install = installHooks(
    win as never, manifest, registry, () => scriptUrl,
  );
  return { win, registry, install };
}

function aggregate(registry: AccumulatorRegistry, api: string) {
  const line = registry.serialize()[0];
  return line?.apis.find((a) => a.name === api);
}

test("fillText twice records calls and string lengths", () => {
  const { win, registry } = setup();
  const canvas = win.createCanvas();
  const ctx = canvas.getContext("2d") as { fillText(t: string, x: number, y: number): void };
  ctx.fillText("hi", 0, 0);
  ctx.fillText("hi", 0, 0);
  const agg = aggregate(registry, "canvasrenderingcontext2d.filltext");
  assert.ok(agg);
  assert.equal(agg.calls, 2);
  assert.equal(agg.sum_str_len, 4);
  assert.equal(agg.max_str_len, 2);
  assert.equal(agg.distinct_str_args, 1);
});

test("style setter and toDataURL are counted", () => {
  const { win, registry } = setup();
  const canvas = win.createCanvas();
  const ctx = canvas.getContext("2d") as { fillStyle: string };
  ctx.fillStyle = "#123456";
  (canvas as { toDataURL(): string }).toDataURL();
  assert.equal(aggregate(registry, "canvasrenderingcontext2d.fillstyle")?.calls, 1);
  assert.equal(aggregate(registry, "htmlcanvaselement.todataurl")?.calls, 1);
});

test("unmonitored calls leave the registry untouched", () => {
  const { win, registry } = setup();
  const canvas = win.createCanvas();
  // getImageData is monitored, but plain object methods elsewhere are not.
  (win as unknown as { unrelated?: () => void }).unrelated = () => {};
  (win as unknown as { unrelated: () => void }).unrelated();
  assert.ok(registry.isEmpty());
  void canvas;
});

test("webrtc accessors and methods are recorded", () => {
  const { win, registry } = setup();
  const pc = new (win.RTCPeerConnection as new () => {
    createDataChannel(label: string): unknown;
    onicecandidate: unknown;
    localDescription: unknown;
  })();
  pc.createDataChannel("probe");
  pc.onicecandidate = () => {};
  void pc.localDescription;
  assert.equal(aggregate(registry, "rtcpeerconnection.createdatachannel")?.calls, 1);
  assert.equal(aggregate(registry, "rtcpeerconnection.onicecandidate")?.calls, 1);
  assert.equal(aggregate(registry, "rtcpeerconnection.localdescription")?.calls, 1);
});

test("plugin list access records returned list length", () => {
  const { win, registry } = setup();
  const nav = win.navigator as { plugins: unknown[] };
  void nav.plugins;
  const agg = aggregate(registry, "window.navigator.plugins");
  assert.ok(agg);
  assert.equal(agg.calls, 1);
  assert.equal(agg.list_ret_len_sum, 1);
});

test("distinct string counting saturates at the cap", () => {
  const { win, registry } = setup();
  const ctx = win.createCanvas().getContext("2d") as {
    font: string;
  };
  for (let i = 0; i < 5000; i++) {
    ctx.font = `font-${i}`;
  }
  const agg = aggregate(registry, "canvasrenderingcontext2d.font");
  assert.ok(agg);
  assert.equal(agg.calls, 5000);
  assert.equal(agg.distinct_str_args, 4096);
});

test("separate scripts get separate accumulators", () => {
  const win = makeFakeWindow("https://fp-test.example/");
  const registry = new AccumulatorRegistry(context);
  let current = "https://a.example/1.js";
  installHooks(win as never, manifest, registry, () => current);
  const ctx = win.createCanvas().getContext("2d") as {
    fillText(t: string, x: number, y: number): void;
  };
  ctx.fillText("one", 0, 0);
  current = "https://b.example/2.js";
  ctx.fillText("two", 0, 0);
  const lines = registry.serialize();
  assert.equal(lines.length, 2);
  assert.notEqual(lines[0].script_id, lines[1].script_id);
});

test("hook installation reports coverage and never throws", () => {
  const { install } = setup();
  assert.ok(install.hooked.includes("canvasrenderingcontext2d.filltext"));
  assert.ok(install.hooked.includes("audiocontext.destination"));
  // Bracketed plugin selectors are aggregated by the parent hook.
  assert.ok(install.skipped.includes("window.navigator.plugins[pdf viewer]"));
});

test("frame depth follows the parent chain", () => {
  const top = makeFakeWindow("https://fp-test.example/");
  const frame = makeFakeWindow("https://fp-test.example/frame.html", top);
  const inner = makeFakeWindow("https://fp-test.example/inner.html", frame);
  assert.equal(computeFrameDepth(top), 0);
  assert.equal(computeFrameDepth(frame), 1);
  assert.equal(computeFrameDepth(inner), 2);
});

test("wrapped APIs still return their original values", () => {
  const { win } = setup();
  const canvas = win.createCanvas();
  const ctx = canvas.getContext("2d") as { measureText(t: string): { width: number } };
  assert.equal(ctx.measureText("abcd").width, 24);
  assert.equal((canvas as { toDataURL(): string }).toDataURL(), "data:image/png;base64,ZmFrZQ==");
});
