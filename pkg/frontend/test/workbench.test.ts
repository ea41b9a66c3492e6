// Scripted browser test (jsdom): drives the real DOM app against
// captured service responses. The displayed severity must equal the
// service's severity response, and - except the explicitly marked
// derived delta - every number shown must come from a captured
// response value.

// @vitest-environment jsdom

import { beforeEach, describe, expect, it, vi } from "vitest";
import { ApiClient, type ImageInfo } from "../src/api.js";
import { fmt, fmtScore } from "../src/format.js";
import { createApp } from "../src/main.js";
import golden from "./fixtures/golden.json";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function installReplayFetch(): void {
  vi.stubGlobal("fetch", async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    if (path === "/api/images") return jsonResponse(golden.images);
    if (path === `/api/images/${golden.image_id}/annotations`) {
      return jsonResponse(golden.annotations);
    }
    if (path === "/api/measure") {
      const body = JSON.parse(String(init?.body)) as { p1: number[]; p2: number[] };
      const idx = golden.clicks.findIndex(
        ([p1, p2]) =>
          p1![0] === body.p1[0] && p1![1] === body.p1[1] &&
          p2![0] === body.p2[0] && p2![1] === body.p2[1],
      );
      if (idx < 0) return jsonResponse({ detail: "unscripted measure request" }, 400);
      return jsonResponse(golden.measures[idx]);
    }
    if (path === "/api/severity") return jsonResponse(golden.severity);
    if (path === "/api/pci") return jsonResponse(golden.pci);
    if (path === "/api/infer") return jsonResponse(golden.infer);
    return jsonResponse({ detail: `unscripted path ${path}` }, 404);
  });
}

function collectNumericValues(value: unknown, out: Set<string>): void {
  if (typeof value === "number") {
    out.add(fmt(value));
    out.add(fmtScore(value));
  } else if (Array.isArray(value)) {
    value.forEach((v) => collectNumericValues(v, out));
  } else if (value && typeof value === "object") {
    Object.values(value).forEach((v) => collectNumericValues(v, out));
  }
}

async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("review workbench", () => {
  beforeEach(() => {
    installReplayFetch();
    document.body.innerHTML = `<div id="app"></div>`;
  });

  async function boot() {
    const app = createApp(document.getElementById("app")!, new ApiClient());
    await flush();
    const info = golden.images.find((i) => i.image_id === golden.image_id) as ImageInfo;
    await app.selectImage(info);
    return app;
  }

  it("three click-pairs show exactly the service's severity", async () => {
    const app = await boot();
    for (const [p1, p2] of golden.clicks) {
      await app.clickAt(p1![0]!, p1![1]!);
      await app.clickAt(p2![0]!, p2![1]!);
    }
    await flush();
    const line = document.getElementById("severity-line")!;
    expect(line.dataset.severity).toBe(golden.severity.severity);
    expect(line.textContent).toContain(`severity ${golden.severity.severity}`);
    expect(line.textContent).toContain(fmt(golden.severity.mean_mm));
  });

  it("one pair only shows the width and asks for more samples", async () => {
    const app = await boot();
    const [p1, p2] = golden.clicks[0]!;
    await app.clickAt(p1![0]!, p1![1]!);
    await app.clickAt(p2![0]!, p2![1]!);
    const pairs = document.getElementById("pair-list")!;
    expect(pairs.children).toHaveLength(1);
    expect(pairs.textContent).toContain(fmt(golden.measures[0]!.px_width));
    expect(document.getElementById("severity-line")!.textContent).toBe("need 3 samples");
  });

  it("reset clears the measurement panel", async () => {
    const app = await boot();
    const [p1, p2] = golden.clicks[0]!;
    await app.clickAt(p1![0]!, p1![1]!);
    await app.clickAt(p2![0]!, p2![1]!);
    app.resetMeasurement();
    expect(document.getElementById("pair-list")!.children).toHaveLength(0);
    expect(document.getElementById("severity-line")!.textContent).toBe("");
  });

  it("compare view shows label and prediction from the service", async () => {
    const app = await boot();
    await app.loadComparison();
    expect(document.getElementById("pci-label")!.textContent).toBe(fmt(golden.pci.pci));
    expect(document.getElementById("pci-predicted")!.textContent).toBe(
      fmt(golden.infer.pci),
    );
    const pill = document.getElementById("error-pill")!;
    expect(pill.dataset.derived).toBe("true");
    const delta = Math.abs(golden.pci.pci - golden.infer.pci);
    expect(pill.classList.contains("pill-red")).toBe(delta > 15);
  });

  it("overlay toggles track their checkboxes", async () => {
    const app = await boot();
    const box = document.getElementById("toggle-mask") as HTMLInputElement;
    expect(app.session.toggles.mask).toBe(true);
    box.checked = false;
    box.dispatchEvent(new Event("change"));
    expect(app.session.toggles.mask).toBe(false); // redraw skips mask painting
  });

  it("renders no number that is not in a captured service response", async () => {
    const app = await boot();
    for (const [p1, p2] of golden.clicks) {
      await app.clickAt(p1![0]!, p1![1]!);
      await app.clickAt(p2![0]!, p2![1]!);
    }
    await app.loadComparison();
    await flush();

    const allowed = new Set<string>();
    collectNumericValues(golden, allowed);

    const walker = document.createTreeWalker(document.body, NodeFilter.SHOW_TEXT);
    const offenders: string[] = [];
    for (let node = walker.nextNode(); node; node = walker.nextNode()) {
      const parent = (node as Text).parentElement;
      if (!parent || parent.closest("[data-derived]")) continue;
      for (const token of (node.textContent ?? "").matchAll(/\d+\.\d+/g)) {
        if (!allowed.has(token[0])) offenders.push(`${token[0]} in "${node.textContent}"`);
      }
    }
    expect(offenders).toEqual([]);
  });
});
