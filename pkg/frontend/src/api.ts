// Typed client for the local condition-analysis service. The UI never
// computes widths, severities, or condition scores itself; everything
// numeric it shows comes from these calls.

export type Point = [number, number];

export interface ImageInfo {
  image_id: string;
  width_px: number;
  height_px: number;
  pci_label: number | null;
}

export interface AnnotationPolygon {
  type: string;
  severity: string | null;
  vertices: [number, number][];
}

export interface AnnotationDoc {
  image_id: string;
  width_px: number;
  height_px: number;
  footprint_mm: [number, number];
  annotations: AnnotationPolygon[];
  pci_label: number | null;
}

export interface MeasureResponse {
  px_width: number;
  mm_width: number;
}

export interface SeverityResponse {
  mean_mm: number;
  severity: string;
}

export interface PciIteration {
  q: number;
  tdv: number;
  cdv: number;
  deducts: number[];
}

export interface PciReport {
  densities: number[];
  deducts: number[];
  iterations: PciIteration[];
  max_cdv: number;
  pci: number;
  rating: string;
}

export interface DetBox {
  box: [number, number, number, number];
  class_idx: number;
  score: number;
  label: string;
}

export interface InferResponse {
  boxes_linear: DetBox[];
  boxes_pattern: DetBox[];
  mask_rle: number[];
  pci: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function readJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      detail = ((await res.json()) as { detail?: string }).detail ?? detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}/file`;
  }

  async listImages(): Promise<ImageInfo[]> {
    return readJson(await fetch(`${this.base}/api/images`));
  }

  async annotations(imageId: string): Promise<AnnotationDoc> {
    return readJson(
      await fetch(`${this.base}/api/images/${encodeURIComponent(imageId)}/annotations`),
    );
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    return readJson(
      await fetch(`${this.base}${path}`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
  }

  async measure(imageId: string, p1: Point, p2: Point): Promise<MeasureResponse> {
    return this.post("/api/measure", { image_id: imageId, p1, p2 });
  }

  async severity(
    imageId: string,
    samplesPx: number[],
    distressType: string,
  ): Promise<SeverityResponse> {
    return this.post("/api/severity", {
      image_id: imageId,
      samples_px: samplesPx,
      distress_type: distressType,
    });
  }

  async pci(imageId: string): Promise<PciReport> {
    return this.post("/api/pci", { image_id: imageId });
  }

  async infer(imageId: string): Promise<InferResponse> {
    return this.post("/api/infer", { image_id: imageId });
  }
}
