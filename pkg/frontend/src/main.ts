// DOM wiring for the review workbench. All numbers of record shown in
// the panels are formatted straight from service responses; the only
// client-derived figure (the label-vs-prediction delta) is marked with
// data-derived="true" so the source-of-truth audit can skip it.

import { ApiClient, type ImageInfo } from "./api.js";
import { fmt, fmtScore } from "./format.js";
import {
  drawBoxes,
  drawClicks,
  drawImage,
  drawMask,
  drawPolygons,
} from "./overlay.js";
import { UiSession } from "./state.js";

const ZOOM = 4; // integer device->image mapping; mm math stays server-side
const ERROR_PILL_LIMIT = 15; // presentational highlight threshold

export interface AppHandles {
  session: UiSession;
  selectImage: (info: ImageInfo) => Promise<void>;
  clickAt: (imageX: number, imageY: number) => Promise<void>;
  loadComparison: () => Promise<void>;
  resetMeasurement: () => void;
  redraw: () => Promise<void>;
}

export function createApp(root: HTMLElement, api: ApiClient): AppHandles {
  root.innerHTML = `
    <aside class="sidebar"><h2>images</h2><ul id="image-list"></ul></aside>
    <main>
      <div class="canvas-wrap"><canvas id="view"></canvas></div>
      <div class="controls">
        <label><input type="checkbox" id="toggle-polygons" checked> polygons</label>
        <label><input type="checkbox" id="toggle-mask" checked> mask</label>
        <label><input type="checkbox" id="toggle-boxes" checked> boxes</label>
        <select id="distress-type">
          <option value="longitudinal">longitudinal</option>
          <option value="transverse">transverse</option>
        </select>
        <button id="reset">reset</button>
      </div>
      <section class="panel" id="measure-panel"><h3>width measurement</h3>
        <ul id="pair-list"></ul><p id="severity-line"></p><p id="measure-error" class="error"></p>
      </section>
      <section class="panel" id="compare-panel"><h3>label vs prediction</h3>
        <button id="load-compare">load prediction</button>
        <p id="compare-line"></p><p id="compare-error" class="error"></p>
      </section>
    </main>`;

  const session = new UiSession(api);
  const canvas = root.querySelector<HTMLCanvasElement>("#view")!;
  const imageEl = new Image();
  let currentInfo: ImageInfo | null = null;

  const el = <T extends HTMLElement>(sel: string) => root.querySelector<T>(sel)!;

  async function redraw(): Promise<void> {
    if (!currentInfo || !session.selectedImage) return;
    canvas.width = currentInfo.width_px * ZOOM;
    canvas.height = currentInfo.height_px * ZOOM;
    drawImage(canvas, imageEl, ZOOM);
    if (session.toggles.polygons) {
      try {
        const doc = await api.annotations(session.selectedImage);
        drawPolygons(canvas, doc, ZOOM);
      } catch {
        // annotation overlay is optional; leave the image visible
      }
    }
    const inference = session.compare?.inference ?? null;
    if (inference && session.toggles.mask) {
      drawMask(canvas, inference, currentInfo.width_px, currentInfo.height_px, ZOOM);
    }
    if (inference && session.toggles.boxes) {
      drawBoxes(canvas, inference, ZOOM);
    }
    if (session.measure) {
      drawClicks(canvas, session.measure.pairs, session.measure.pendingPoint, ZOOM);
    }
  }

  function renderMeasurePanel(): void {
    const measure = session.measure;
    const list = el<HTMLUListElement>("#pair-list");
    const line = el<HTMLParagraphElement>("#severity-line");
    const err = el<HTMLParagraphElement>("#measure-error");
    list.innerHTML = "";
    line.textContent = "";
    err.textContent = measure?.lastError ?? "";
    if (!measure || measure.panelState === "empty") return; // stays empty until a pair completes
    for (const pair of measure.pairs) {
      const item = document.createElement("li");
      item.textContent = `${fmt(pair.measured.px_width)} px = ${fmt(pair.measured.mm_width)} mm`;
      list.appendChild(item);
    }
    if (measure.panelState === "complete" && measure.severityResult) {
      line.textContent = `mean ${fmt(measure.severityResult.mean_mm)} mm - severity ${measure.severityResult.severity}`;
      line.dataset.severity = measure.severityResult.severity;
    } else {
      line.textContent = "need 3 samples";
    }
  }

  function renderComparePanel(): void {
    const compare = session.compare;
    const line = el<HTMLParagraphElement>("#compare-line");
    const err = el<HTMLParagraphElement>("#compare-error");
    line.innerHTML = "";
    err.textContent = "";
    if (!compare) return;
    if (compare.noModel) {
      err.textContent = "no model loaded";
      return;
    }
    if (compare.lastError) {
      err.textContent = compare.lastError;
      return;
    }
    if (!compare.report || !compare.inference) return;
    const label = compare.report.pci;
    const predicted = compare.inference.pci;
    const delta = Math.abs(label - predicted);
    line.innerHTML =
      `actual <span id="pci-label">${fmt(label)}</span> ` +
      `predicted <span id="pci-predicted">${fmt(predicted)}</span> ` +
      `<span id="error-pill" data-derived="true" class="pill${delta > ERROR_PILL_LIMIT ? " pill-red" : ""}">` +
      `Δ ${fmt(delta)}</span>`;
  }

  async function selectImage(info: ImageInfo): Promise<void> {
    currentInfo = info;
    session.select(info.image_id, info.pci_label);
    imageEl.src = api.imageUrl(info.image_id);
    renderMeasurePanel();
    renderComparePanel();
    await redraw();
  }

  async function clickAt(imageX: number, imageY: number): Promise<void> {
    if (!session.measure) return;
    await session.measure.addClick([imageX, imageY]);
    renderMeasurePanel();
    await redraw();
  }

  async function loadComparison(): Promise<void> {
    if (!session.compare) return;
    await session.compare.load();
    renderComparePanel();
    await redraw();
  }

  function resetMeasurement(): void {
    session.measure?.reset();
    renderMeasurePanel();
    void redraw();
  }

  canvas.addEventListener("click", (ev) => {
    void clickAt(ev.offsetX / ZOOM, ev.offsetY / ZOOM);
  });
  imageEl.addEventListener("load", () => void redraw());
  el<HTMLButtonElement>("#reset").addEventListener("click", resetMeasurement);
  el<HTMLButtonElement>("#load-compare").addEventListener("click", () => void loadComparison());
  el<HTMLSelectElement>("#distress-type").addEventListener("change", (ev) => {
    if (session.measure) {
      session.measure.distressType = (ev.target as HTMLSelectElement).value;
    }
  });
  for (const key of ["polygons", "mask", "boxes"] as const) {
    el<HTMLInputElement>(`#toggle-${key}`).addEventListener("change", (ev) => {
      session.toggles[key] = (ev.target as HTMLInputElement).checked;
      void redraw();
    });
  }

  void (async () => {
    try {
      const images = await api.listImages();
      const list = el<HTMLUListElement>("#image-list");
      for (const info of images) {
        const item = document.createElement("li");
        item.textContent =
          info.pci_label === null ? info.image_id : `${info.image_id} (${fmt(info.pci_label)})`;
        item.addEventListener("click", () => void selectImage(info));
        list.appendChild(item);
      }
    } catch (err) {
      el<HTMLParagraphElement>("#measure-error").textContent =
        err instanceof Error ? err.message : String(err);
    }
  })();

  return { session, selectImage, clickAt, loadComparison, resetMeasurement, redraw };
}

declare global {
  interface Window {
    pavekitApp?: AppHandles;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.pavekitApp = createApp(document.getElementById("app")!, new ApiClient());
}
