// Session state for the measurement workflow and the compare view.
// Pure logic with an injected API client; the DOM layer renders
// snapshots of these objects and never does numeric work of record.

import type {
  ApiClient,
  InferResponse,
  MeasureResponse,
  PciReport,
  Point,
  SeverityResponse,
} from "./api.js";
import { ApiError } from "./api.js";

export interface CompletedPair {
  p1: Point;
  p2: Point;
  measured: MeasureResponse;
}

export type MeasurePanelState = "empty" | "need-more" | "complete";

const MAX_PAIRS = 3;

export class MeasureSession {
  readonly pairs: CompletedPair[] = [];
  pendingPoint: Point | null = null;
  severityResult: SeverityResponse | null = null;
  distressType = "longitudinal";
  lastError: string | null = null;
  private seq = 0;

  constructor(
    private api: Pick<ApiClient, "measure" | "severity">,
    public readonly imageId: string,
  ) {}

  get panelState(): MeasurePanelState {
    if (this.pairs.length === 0) return "empty";
    return this.severityResult ? "complete" : "need-more";
  }

  get samplesPx(): number[] {
    return this.pairs.map((pair) => pair.measured.px_width);
  }

  get remaining(): number {
    return MAX_PAIRS - this.pairs.length;
  }

  /** First click arms a pair; the second completes it and measures. */
  async addClick(point: Point): Promise<void> {
    if (this.pairs.length >= MAX_PAIRS) return; // buffer is capped
    if (this.pendingPoint === null) {
      this.pendingPoint = point;
      return;
    }
    const p1 = this.pendingPoint;
    this.pendingPoint = null;
    const seq = ++this.seq;
    try {
      const measured = await this.api.measure(this.imageId, p1, point);
      if (seq !== this.seq) return; // a reset happened mid-flight
      this.pairs.push({ p1, p2: point, measured });
      this.lastError = null;
      if (this.pairs.length === MAX_PAIRS) {
        const severity = await this.api.severity(
          this.imageId,
          this.samplesPx,
          this.distressType,
        );
        if (seq !== this.seq) return;
        this.severityResult = severity;
      }
    } catch (err) {
      this.lastError = describeError(err);
    }
  }

  reset(): void {
    this.pairs.length = 0;
    this.pendingPoint = null;
    this.severityResult = null;
    this.lastError = null;
    this.seq++; // discard any in-flight responses
  }
}

export interface OverlayToggles {
  polygons: boolean;
  mask: boolean;
  boxes: boolean;
}

export class CompareSession {
  report: PciReport | null = null;
  inference: InferResponse | null = null;
  noModel = false;
  lastError: string | null = null;
  private seq = 0;

  constructor(
    private api: Pick<ApiClient, "pci" | "infer">,
    public readonly imageId: string,
    public readonly pciLabel: number | null,
  ) {}

  async load(): Promise<void> {
    const seq = ++this.seq;
    this.noModel = false;
    this.lastError = null;
    try {
      const report = await this.api.pci(this.imageId);
      if (seq !== this.seq) return;
      this.report = report;
      const inference = await this.api.infer(this.imageId);
      if (seq !== this.seq) return;
      this.inference = inference;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.noModel = true;
      } else {
        this.lastError = describeError(err);
      }
    }
  }
}

export class UiSession {
  selectedImage: string | null = null;
  toggles: OverlayToggles = { polygons: true, mask: true, boxes: true };
  measure: MeasureSession | null = null;
  compare: CompareSession | null = null;

  constructor(private api: ApiClient) {}

  select(imageId: string, pciLabel: number | null): void {
    this.selectedImage = imageId;
    this.measure = new MeasureSession(this.api, imageId);
    this.compare = new CompareSession(this.api, imageId, pciLabel);
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `service error ${err.status}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}
