import assert from "node:assert/strict";
import { test } from "node:test";

import { AccumulatorRegistry, ApiAccumulator, DISTINCT_HASH_CAP } from "../src/accumulator.js";
import { frameUrl, scriptId } from "../src/attribution.js";
import { registrableDomain } from "../src/domains.js";

test("string arguments update lengths and distinct counts", () => {
  const acc = new ApiAccumulator();
  acc.recordCall(["alpha", 7], undefined);
  acc.recordCall(["beta"], undefined);
  acc.recordCall(["alpha"], undefined);
  assert.equal(acc.calls, 3);
  assert.equal(acc.sumStrLen, 14);
  assert.equal(acc.maxStrLen, 5);
  assert.equal(acc.distinctStrArgs, 2);
});

test("list-like returns add their lengths", () => {
  const acc = new ApiAccumulator();
  acc.recordCall([], [1, 2, 3]);
  acc.recordCall([], { length: 4 });
  acc.recordCall([], "not-a-list");
  acc.recordCall([], null);
  assert.equal(acc.listRetLenSum, 7);
});

test("distinct counting is bounded", () => {
  const acc = new ApiAccumulator();
  for (let i = 0; i < DISTINCT_HASH_CAP + 500; i++) {
    acc.recordCall([`value-${i}`], undefined);
  }
  assert.equal(acc.distinctStrArgs, DISTINCT_HASH_CAP);
});

test("distinct count never exceeds call count", () => {
  const acc = new ApiAccumulator();
  acc.recordCall(["a", "b", "c"], undefined);
  assert.equal(acc.calls, 1);
  assert.equal(acc.distinctStrArgs, 1);
});

test("no raw strings are retained anywhere in the accumulator", () => {
  const acc = new ApiAccumulator();
  acc.recordCall(["SENTINEL-VALUE-123"], undefined);
  const dumped = JSON.stringify(acc, (_key, value) =>
    value instanceof Set ? [...value] : value,
  );
  assert.ok(!dumped.includes("SENTINEL"));
});

test("serialized lines match the wire schema field for field", () => {
  const registry = new AccumulatorRegistry({
    pageUrl: "https://fp-test.example/products/1",
    site: "fp-test.example",
    frameDepth: 1,
  });
  registry.record("https://cdn.example/fp.js", "audiocontext.sinkid", [], undefined);
  const [line] = registry.serialize();
  assert.deepEqual(Object.keys(line).sort(), [
    "apis", "frame_depth", "page_url", "script_id", "script_url", "site",
  ]);
  assert.deepEqual(Object.keys(line.apis[0]).sort(), [
    "calls", "distinct_str_args", "list_ret_len_sum", "max_str_len", "name", "sum_str_len",
  ]);
  assert.equal(line.frame_depth, 1);
  assert.match(line.script_id, /^[0-9a-f]{16}$/);
});

test("script ids are stable and distinct", () => {
  assert.equal(scriptId("https://a.example/x.js"), scriptId("https://a.example/x.js"));
  assert.notEqual(scriptId("https://a.example/x.js"), scriptId("https://a.example/y.js"));
});

test("stack frame URLs parse across formats", () => {
  assert.equal(
    frameUrl("    at run (file:///srv/app/page.js:10:5)"),
    "file:///srv/app/page.js",
  );
  assert.equal(frameUrl("    at file:///srv/app/page.js:1:1"), "file:///srv/app/page.js");
  assert.equal(frameUrl("run@https://cdn.example/fp.js:3:14"), "https://cdn.example/fp.js");
  assert.equal(frameUrl("not a frame"), null);
});

test("registrable domains align with the collector's rules", () => {
  assert.equal(registrableDomain("https://sub.shop.example.co.uk/x"), "example.co.uk");
  assert.equal(registrableDomain("https://www.example.com/"), "example.com");
  assert.equal(registrableDomain("fp-test.example"), "fp-test.example");
  assert.equal(registrableDomain("http://127.0.0.1:9000/"), "127.0.0.1");
});
