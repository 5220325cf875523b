// @vitest-environment jsdom
/** Drives the assembled page against a scripted service: load a demo image,
 * submit expressions, and check that history, status line, and error banner
 * reflect the session.  Canvas pixels are not asserted (headless DOM has no
 * 2d context); the textual surfaces carry the same state.
 */
import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { encodeRle } from "../src/rle.js";
import { initUi } from "../src/ui.js";
import type { UiHandles } from "../src/ui.js";

const WIDTH = 4;
const HEIGHT = 3;

function jsonResponse(status: number, body: unknown): Promise<Response> {
  return Promise.resolve({
    ok: status >= 200 && status < 300,
    status,
    json: () => Promise.resolve(body),
  } as unknown as Response);
}

interface Scripted {
  fetch: (input: string, init?: RequestInit) => Promise<Response>;
  requests: { url: string; expression?: string }[];
}

function scriptedService(): Scripted {
  const requests: Scripted["requests"] = [];
  const mask = Uint8Array.from({ length: WIDTH * HEIGHT }, (_, i) =>
    i % 5 === 0 ? 1 : 0,
  ); // 3 foreground pixels
  return {
    requests,
    fetch(url, init) {
      if (url.endsWith("/samples")) {
        requests.push({ url });
        return jsonResponse(200, {
          api_version: "1",
          samples: [
            {
              id: "demo-0",
              width: WIDTH,
              height: HEIGHT,
              image_base64: "c3R1Yg==",
              suggested_expressions: ["the bright one"],
            },
          ],
        });
      }
      if (url.endsWith("/segment")) {
        const body = JSON.parse(String(init?.body)) as {
          expression: string;
        };
        requests.push({ url, expression: body.expression });
        if (body.expression === "BOOM") {
          return jsonResponse(400, { detail: "expression too long" });
        }
        if (body.expression === "DOWN") {
          return jsonResponse(503, { detail: "no model is loaded" });
        }
        return jsonResponse(200, {
          api_version: "1",
          mask_rle: encodeRle(mask, HEIGHT, WIDTH),
          width: WIDTH,
          height: HEIGHT,
          threshold: 0.5,
          latency_ms: 4.2,
          model_id: "stub",
          config_hash: "cafe",
        });
      }
      return jsonResponse(404, { detail: `no route ${url}` });
    },
  };
}

let service: Scripted;
let ui: UiHandles;
let root: HTMLElement;

beforeEach(async () => {
  // headless DOM has no 2d canvas; return null instead of logging noise so
  // the page's no-context guards are what this suite exercises
  HTMLCanvasElement.prototype.getContext = (() =>
    null) as typeof HTMLCanvasElement.prototype.getContext;
  document.body.innerHTML = "";
  root = document.createElement("div");
  document.body.append(root);
  service = scriptedService();
  ui = initUi(root, new ApiClient("http://stub", service.fetch));
  await ui.settled(); // demo samples fetched
});

function q<T extends Element>(selector: string): T {
  const node = root.querySelector(selector);
  if (!node) {
    throw new Error(`missing element ${selector}`);
  }
  return node as T;
}

async function submit(expression: string): Promise<void> {
  q<HTMLInputElement>("input.expression").value = expression;
  q<HTMLButtonElement>("button.submit").click();
  await ui.settled();
}

describe("happy path", () => {
  it("loads a demo sample and suggests an expression", () => {
    const btn = q<HTMLButtonElement>("button.sample");
    expect(btn.textContent).toBe("demo-0");
    btn.click();
    expect(ui.session.image?.id).toBe("demo-0");
    expect(q<HTMLInputElement>("input.expression").value).toBe(
      "the bright one",
    );
    expect(q<HTMLElement>("p.status").textContent).toMatch(/4x3/);
  });

  it("submit -> history entry + mask status line", async () => {
    q<HTMLButtonElement>("button.sample").click();
    await submit("the bright one");

    expect(service.requests.at(-1)).toMatchObject({
      expression: "the bright one",
    });
    expect(ui.session.history).toHaveLength(1);
    const items = root.querySelectorAll(".history .attempt");
    expect(items).toHaveLength(1);
    expect(items[0]?.textContent).toContain('"the bright one"');
    expect(items[0]?.textContent).toContain("3 px");
    expect(q<HTMLElement>("p.status").textContent).toBe(
      "mask covers 3 px (4.2 ms)",
    );
    expect(q<HTMLElement>("div.banner").hidden).toBe(true);
  });

  it("stacks repeated attempts and enables comparison at two", async () => {
    q<HTMLButtonElement>("button.sample").click();
    const compare = q<HTMLButtonElement>("button.compare");
    expect(compare.disabled).toBe(true);
    await submit("first try");
    expect(compare.disabled).toBe(true);
    await submit("second try");
    expect(compare.disabled).toBe(false);
    expect(root.querySelectorAll(".history .attempt")).toHaveLength(2);

    for (const box of root.querySelectorAll(".history input")) {
      (box as HTMLInputElement).checked = true;
    }
    compare.click();
    const panes = root.querySelectorAll(".compare-pane");
    expect(panes).toHaveLength(2);
    expect(panes[0]?.textContent).toContain('"first try"');
    expect(panes[1]?.textContent).toContain('"second try"');
  });
});

describe("failure handling", () => {
  it("shows a client error as a non-fatal banner", async () => {
    q<HTMLButtonElement>("button.sample").click();
    await submit("fine");
    expect(ui.session.history).toHaveLength(1);

    await submit("BOOM");
    const banner = q<HTMLElement>("div.banner");
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toBe(
      "service error 400: expression too long",
    );
    expect(ui.session.history).toHaveLength(1); // history untouched
    expect(root.querySelectorAll(".history .attempt")).toHaveLength(1);

    // still fully usable afterwards
    await submit("fine again");
    expect(ui.session.history).toHaveLength(2);
    expect(q<HTMLElement>("div.banner").hidden).toBe(true);
  });

  it("reports a 503 with its detail", async () => {
    q<HTMLButtonElement>("button.sample").click();
    await submit("DOWN");
    expect(q<HTMLElement>("div.banner").textContent).toBe(
      "service error 503: no model is loaded",
    );
  });

  it("flags an empty expression without calling the service", async () => {
    q<HTMLButtonElement>("button.sample").click();
    const before = service.requests.length;
    await submit("   ");
    expect(service.requests.length).toBe(before);
    const banner = q<HTMLElement>("div.banner");
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toMatch(/expression/);
  });
});
