/** Typed client for the segmentation service HTTP API. */

import type { Rle } from "./rle.js";

export interface Health {
  status: string;
  modelLoaded: boolean;
  apiVersion: string;
}

export interface DemoSample {
  id: string;
  width: number;
  height: number;
  imageBase64: string;
  suggestedExpressions: string[];
}

export interface SegmentRequest {
  imageBase64: string;
  expression: string;
  threshold?: number;
  includeHeatmaps?: boolean;
}

export interface SegmentResponse {
  apiVersion: string;
  maskRle: Rle;
  width: number;
  height: number;
  threshold: number;
  latencyMs: number;
  modelId: string;
  configHash: string;
  heatmaps?: string[];
}

/** A non-2xx response; status distinguishes client/server causes. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") {
      return body.detail;
    }
  } catch {
    /* non-JSON error body */
  }
  return `request failed with status ${res.status}`;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson(path: string): Promise<unknown> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) {
      throw new ServiceError(res.status, await errorDetail(res));
    }
    return res.json();
  }

  async health(): Promise<Health> {
    const body = (await this.getJson("/health")) as Record<string, unknown>;
    return {
      status: String(body.status),
      modelLoaded: Boolean(body.model_loaded),
      apiVersion: String(body.api_version),
    };
  }

  async samples(): Promise<DemoSample[]> {
    const body = (await this.getJson("/samples")) as {
      samples: Record<string, unknown>[];
    };
    return body.samples.map((s) => ({
      id: String(s.id),
      width: Number(s.width),
      height: Number(s.height),
      imageBase64: String(s.image_base64),
      suggestedExpressions: (s.suggested_expressions as string[]) ?? [],
    }));
  }

  async segment(req: SegmentRequest): Promise<SegmentResponse> {
    const payload: Record<string, unknown> = {
      image_base64: req.imageBase64,
      expression: req.expression,
    };
    if (req.threshold !== undefined) {
      payload.threshold = req.threshold;
    }
    if (req.includeHeatmaps) {
      payload.include_heatmaps = true;
    }
    const res = await this.fetchFn(this.baseUrl + "/segment", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) {
      throw new ServiceError(res.status, await errorDetail(res));
    }
    const body = (await res.json()) as Record<string, unknown>;
    return {
      apiVersion: String(body.api_version),
      maskRle: body.mask_rle as Rle,
      width: Number(body.width),
      height: Number(body.height),
      threshold: Number(body.threshold),
      latencyMs: Number(body.latency_ms),
      modelId: String(body.model_id),
      configHash: String(body.config_hash),
      heatmaps: body.heatmaps as string[] | undefined,
    };
  }
}
