// Plays the role of a third-party fingerprinting script loaded by the test
// page: draws text to a canvas, applies a style, and extracts the image.
// Lives in its own module so stack attribution resolves to this file.

import type { FakeWindow } from "../fake-page.js";

export function runCanvasFingerprint(win: FakeWindow, sentinel: string): string {
  const canvas = win.createCanvas();
  const ctx = canvas.getContext("2d") as {
    fillStyle: string;
    fillText(text: string, x: number, y: number): void;
  };
  ctx.fillStyle = "#f60";
  ctx.fillText(sentinel, 2, 15);
  ctx.fillText(sentinel, 4, 45);
  return (canvas as { toDataURL(): string }).toDataURL();
}

export function runBenignActivity(win: FakeWindow): number {
  const nav = win.navigator as { userAgent: string; language: string };
  return nav.userAgent.length + nav.language.length;
}
