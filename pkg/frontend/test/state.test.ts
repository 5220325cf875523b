import { describe, expect, it } from "vitest";

import { ServiceError } from "../src/api.js";
import type { SegmentRequest, SegmentResponse } from "../src/api.js";
import { encodeRle } from "../src/rle.js";
import { CompareError, Session } from "../src/state.js";
import type { LoadedImage } from "../src/state.js";

const IMG_A: LoadedImage = {
  id: "demo-0",
  width: 4,
  height: 3,
  imageBase64: "aaaa",
};
const IMG_B: LoadedImage = {
  id: "demo-1",
  width: 4,
  height: 3,
  imageBase64: "bbbb",
};

function okResponse(
  expression: string,
  height = 3,
  width = 4,
): SegmentResponse {
  const mask = Uint8Array.from({ length: height * width }, (_, i) =>
    i < expression.length ? 1 : 0,
  );
  return {
    apiVersion: "1",
    maskRle: encodeRle(mask, height, width),
    width,
    height,
    threshold: 0.5,
    latencyMs: 7.5,
    modelId: "m",
    configHash: "c",
  };
}

/** Scripted stand-in for ApiClient.segment. */
class StubApi {
  calls: SegmentRequest[] = [];
  private waiters: {
    req: SegmentRequest;
    resolve: (r: SegmentResponse) => void;
    reject: (e: unknown) => void;
  }[] = [];

  constructor(private readonly auto: boolean = true) {}

  segment(req: SegmentRequest): Promise<SegmentResponse> {
    this.calls.push(req);
    if (this.auto) {
      return Promise.resolve(okResponse(req.expression));
    }
    return new Promise((resolve, reject) => {
      this.waiters.push({ req, resolve, reject });
    });
  }

  /** Settle the oldest pending request. */
  release(fail?: unknown): void {
    const next = this.waiters.shift();
    if (!next) {
      throw new Error("no pending request");
    }
    if (fail !== undefined) {
      next.reject(fail);
    } else {
      next.resolve(okResponse(next.req.expression));
    }
  }

  get pendingCount(): number {
    return this.waiters.length;
  }
}

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("submitting expressions", () => {
  it("appends a successful attempt to the history", async () => {
    const api = new StubApi();
    const session = new Session(api, () => 1000);
    session.loadImage(IMG_A);
    const attempt = await session.submitExpression("the left one");
    expect(attempt).not.toBeNull();
    expect(session.history).toHaveLength(1);
    expect(session.history[0]).toMatchObject({
      imageId: "demo-0",
      expression: "the left one",
      maskArea: "the left one".length,
      latencyMs: 7.5,
      timestamp: 1000,
    });
    expect(session.banner).toBeNull();
    expect(api.calls[0]?.imageBase64).toBe("aaaa");
  });

  it("rejects an empty expression locally, sending nothing", async () => {
    const api = new StubApi();
    const session = new Session(api);
    session.loadImage(IMG_A);
    const attempt = await session.submitExpression("   ");
    expect(attempt).toBeNull();
    expect(api.calls).toHaveLength(0);
    expect(session.history).toHaveLength(0);
    expect(session.banner?.message).toMatch(/expression/);
  });

  it("requires an image before submitting", async () => {
    const api = new StubApi();
    const session = new Session(api);
    await session.submitExpression("anything");
    expect(api.calls).toHaveLength(0);
    expect(session.banner?.message).toMatch(/image/);
  });

  it("turns a service error into a banner and keeps the history", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    const p0 = session.submitExpression("good");
    api.release();
    await p0;
    expect(session.history).toHaveLength(1);

    const p = session.submitExpression("bad");
    api.release(new ServiceError(400, "expression too long"));
    await p;
    expect(session.history).toHaveLength(1); // unchanged
    expect(session.banner).toMatchObject({
      status: 400,
      message: "expression too long",
    });
    expect(session.busy).toBe(false);

    // the session still works afterwards
    const again = session.submitExpression("good again");
    api.release();
    await again;
    expect(session.history).toHaveLength(2);
    expect(session.banner).toBeNull();
  });

  it("reports network failures without a status code", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    const p = session.submitExpression("x");
    api.release(new TypeError("fetch failed"));
    await p;
    expect(session.banner?.status).toBeNull();
    expect(session.banner?.message).toMatch(/unreachable/);
  });

  it("rejects a mask whose shape does not match the image", async () => {
    const api = {
      calls: [] as SegmentRequest[],
      segment(req: SegmentRequest) {
        this.calls.push(req);
        return Promise.resolve(okResponse(req.expression, 8, 8));
      },
    };
    const session = new Session(api);
    session.loadImage(IMG_A);
    await session.submitExpression("wrong shape");
    expect(session.history).toHaveLength(0);
    expect(session.banner?.message).toMatch(/8x8/);
  });

  it("clears the banner on the next success", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    const p1 = session.submitExpression("a");
    api.release(new ServiceError(503, "model is still loading"));
    await p1;
    expect(session.banner?.status).toBe(503);
    const p2 = session.submitExpression("b");
    api.release();
    await p2;
    expect(session.banner).toBeNull();
  });
});

describe("in-flight policy", () => {
  it("queue: remembers only the latest expression and sends it after", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    session.pendingPolicy = "queue";

    const first = session.submitExpression("first");
    expect(session.busy).toBe(true);
    await session.submitExpression("second");
    await session.submitExpression("third");
    expect(api.calls.map((c) => c.expression)).toEqual(["first"]);

    api.release(); // settles "first", which then sends the queued "third"
    await first;
    await flush();
    expect(api.calls.map((c) => c.expression)).toEqual(["first", "third"]);
    api.release();
    await flush();
    expect(session.history.map((a) => a.expression)).toEqual([
      "first",
      "third",
    ]);
    expect(session.busy).toBe(false);
  });

  it("queue: still sends the queued expression when the first fails", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    const first = session.submitExpression("first");
    await session.submitExpression("second");
    api.release(new ServiceError(500, "boom"));
    await first;
    await flush();
    expect(api.calls.map((c) => c.expression)).toEqual(["first", "second"]);
    api.release();
    await flush();
    expect(session.history.map((a) => a.expression)).toEqual(["second"]);
  });

  it("cancel: drops the pending result and sends immediately", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    session.pendingPolicy = "cancel";

    const first = session.submitExpression("slow");
    const second = session.submitExpression("replacement");
    expect(api.calls.map((c) => c.expression)).toEqual([
      "slow",
      "replacement",
    ]);

    api.release(); // the cancelled "slow" resolves but must be ignored
    await first;
    expect(session.history).toHaveLength(0);

    api.release();
    await second;
    expect(session.history.map((a) => a.expression)).toEqual(["replacement"]);
  });

  it("cancel: a cancelled failure does not raise a banner", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    session.pendingPolicy = "cancel";
    const first = session.submitExpression("doomed");
    const second = session.submitExpression("fine");
    api.release(new ServiceError(500, "stale failure"));
    await first;
    expect(session.banner).toBeNull();
    api.release();
    await second;
    expect(session.history.map((a) => a.expression)).toEqual(["fine"]);
  });
});

describe("comparing attempts", () => {
  async function seeded(): Promise<Session> {
    const session = new Session(new StubApi());
    session.loadImage(IMG_A);
    await session.submitExpression("one");
    await session.submitExpression("two longer");
    return session;
  }

  it("needs at least two selections", async () => {
    const session = await seeded();
    expect(() => session.compareAttempts([0])).toThrow(CompareError);
    expect(() => session.compareAttempts([])).toThrow(/at least two/);
    const picked = session.compareAttempts([0, 1]);
    expect(picked.map((a) => a.expression)).toEqual(["one", "two longer"]);
  });

  it("exposes readiness for the control's disabled state", async () => {
    const session = new Session(new StubApi());
    session.loadImage(IMG_A);
    expect(session.canCompare()).toBe(false);
    await session.submitExpression("one");
    expect(session.canCompare()).toBe(false);
    await session.submitExpression("two");
    expect(session.canCompare()).toBe(true);
    session.loadImage(IMG_B); // attempts belong to the other image
    expect(session.canCompare()).toBe(false);
  });

  it("blocks comparisons across different images", async () => {
    const session = await seeded();
    session.loadImage(IMG_B);
    await session.submitExpression("other image");
    expect(() => session.compareAttempts([0, 2])).toThrow(/different images/);
  });

  it("rejects indices outside the history", async () => {
    const session = await seeded();
    expect(() => session.compareAttempts([0, 9])).toThrow(CompareError);
  });
});

describe("history is append-only", () => {
  it("survives image switches and failures", async () => {
    const api = new StubApi(false);
    const session = new Session(api);
    session.loadImage(IMG_A);
    const p1 = session.submitExpression("a");
    api.release();
    await p1;
    session.loadImage(IMG_B);
    const p2 = session.submitExpression("b");
    api.release(new ServiceError(400, "nope"));
    await p2;
    const p3 = session.submitExpression("c");
    api.release();
    await p3;
    expect(session.history.map((a) => [a.imageId, a.expression])).toEqual([
      ["demo-0", "a"],
      ["demo-1", "c"],
    ]);
  });
});
