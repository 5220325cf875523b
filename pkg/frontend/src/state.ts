/** Session state: one image, an append-only attempt history, and a single
 * in-flight segmentation request.
 *
 * Submits while a request is pending follow the selected policy: "queue"
 * remembers the latest expression and sends it when the current request
 * settles, "cancel" drops the pending result and sends the new expression
 * immediately.  Service failures surface as a banner and never touch the
 * history or the loaded image.
 */

import type { ApiClient, SegmentResponse } from "./api.js";
import { ServiceError } from "./api.js";
import type { Rle } from "./rle.js";
import { decodeRle, maskArea } from "./rle.js";

export interface LoadedImage {
  id: string;
  width: number;
  height: number;
  imageBase64: string;
}

export interface Attempt {
  imageId: string;
  expression: string;
  maskRle: Rle;
  maskArea: number;
  width: number;
  height: number;
  threshold: number;
  latencyMs: number;
  timestamp: number;
}

export interface Banner {
  status: number | null;
  message: string;
}

export type PendingPolicy = "queue" | "cancel";

export class CompareError extends Error {}

type SegmentApi = Pick<ApiClient, "segment">;

export class Session {
  image: LoadedImage | null = null;
  readonly history: Attempt[] = [];
  overlay = { opacity: 0.45, showGt: false };
  pendingPolicy: PendingPolicy = "queue";
  banner: Banner | null = null;
  threshold: number | undefined = undefined;
  /** Called after every observable state change; the UI hangs a render here. */
  onChange: (() => void) | null = null;

  private inFlight = false;
  private generation = 0;
  private queued: string | null = null;

  constructor(
    private readonly api: SegmentApi,
    private readonly now: () => number = () => Date.now(),
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  private notify(): void {
    this.onChange?.();
  }

  loadImage(image: LoadedImage): void {
    this.image = image;
    this.banner = null;
    this.notify();
  }

  /** True once two attempts on the current image exist. */
  canCompare(): boolean {
    if (!this.image) {
      return false;
    }
    const id = this.image.id;
    return this.history.filter((a) => a.imageId === id).length >= 2;
  }

  compareAttempts(indices: number[]): Attempt[] {
    if (indices.length < 2) {
      throw new CompareError("select at least two attempts to compare");
    }
    const picked = indices.map((i) => {
      const a = this.history[i];
      if (!a) {
        throw new CompareError(`no attempt with index ${i}`);
      }
      return a;
    });
    const ids = new Set(picked.map((a) => a.imageId));
    if (ids.size > 1) {
      throw new CompareError("attempts belong to different images");
    }
    return picked;
  }

  /** Resolves when this submission settles; a queued or cancelled submission
   * resolves null immediately and its replacement runs on its own. */
  async submitExpression(expression: string): Promise<Attempt | null> {
    const text = expression.trim();
    if (!text) {
      this.banner = { status: null, message: "type an expression first" };
      this.notify();
      return null;
    }
    if (!this.image) {
      this.banner = { status: null, message: "load an image first" };
      this.notify();
      return null;
    }
    if (this.inFlight) {
      if (this.pendingPolicy === "queue") {
        this.queued = text;
        return null;
      }
      // cancel: invalidate the pending result and fall through to send
      this.generation++;
    }
    return this.send(text);
  }

  private async send(expression: string): Promise<Attempt | null> {
    const image = this.image!;
    const gen = ++this.generation;
    this.inFlight = true;
    this.notify();
    let response: SegmentResponse;
    try {
      response = await this.api.segment({
        imageBase64: image.imageBase64,
        expression,
        threshold: this.threshold,
      });
    } catch (err) {
      if (gen === this.generation) {
        this.inFlight = false;
        this.banner =
          err instanceof ServiceError
            ? { status: err.status, message: err.message }
            : { status: null, message: `service unreachable: ${String(err)}` };
        this.notify();
        void this.drainQueue();
      }
      return null;
    }
    if (gen !== this.generation) {
      return null; // cancelled while awaiting
    }
    this.inFlight = false;

    let mask: Uint8Array;
    try {
      mask = decodeRle(response.maskRle);
      if (
        response.height !== image.height ||
        response.width !== image.width ||
        mask.length !== image.width * image.height
      ) {
        throw new Error(
          `mask is ${response.height}x${response.width}, ` +
            `image is ${image.height}x${image.width}`,
        );
      }
    } catch (err) {
      this.banner = { status: null, message: `bad mask: ${String(err)}` };
      this.notify();
      void this.drainQueue();
      return null;
    }

    const attempt: Attempt = {
      imageId: image.id,
      expression,
      maskRle: response.maskRle,
      maskArea: maskArea(mask),
      width: response.width,
      height: response.height,
      threshold: response.threshold,
      latencyMs: response.latencyMs,
      timestamp: this.now(),
    };
    this.history.push(attempt);
    this.banner = null;
    this.notify();
    void this.drainQueue();
    return attempt;
  }

  private async drainQueue(): Promise<void> {
    if (this.queued === null || this.inFlight) {
      return;
    }
    const next = this.queued;
    this.queued = null;
    await this.send(next);
  }
}
