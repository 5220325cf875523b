/** DOM wiring for the demo page.
 *
 * `initUi` builds the whole interface inside a root element and returns the
 * session plus a handle used by tests to await the current request.  All
 * rendering goes through `refresh()` so state and DOM cannot drift apart.
 * Canvas 2d contexts can be unavailable (headless test DOMs); every draw
 * guards on that and the textual status line carries the same information.
 */

import type { ApiClient, DemoSample } from "./api.js";
import { decodeRle } from "./rle.js";
import { GT_COLOR, PRED_COLOR, paintOverlay } from "./overlay.js";
import type { LoadedImage, PendingPolicy } from "./state.js";
import { CompareError, Session } from "./state.js";

export interface UiHandles {
  session: Session;
  root: HTMLElement;
  /** Resolves when the submit chain triggered by the last click settles. */
  settled: () => Promise<void>;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function initUi(root: HTMLElement, client: ApiClient): UiHandles {
  const doc = root.ownerDocument;
  const session = new Session(client);
  let pending: Promise<unknown> = Promise.resolve();

  // --- static skeleton -------------------------------------------------
  const samplesRow = el(doc, "div", "samples");
  const uploadInput = el(doc, "input") as HTMLInputElement;
  uploadInput.type = "file";
  uploadInput.accept = "image/png,image/jpeg";

  const canvas = el(doc, "canvas") as HTMLCanvasElement;
  const statusLine = el(doc, "p", "status", "no image loaded");
  const banner = el(doc, "div", "banner");
  banner.setAttribute("role", "alert");
  banner.hidden = true;

  const exprInput = el(doc, "input", "expression") as HTMLInputElement;
  exprInput.type = "text";
  exprInput.placeholder = "describe the region, e.g. the leftmost bright lesion";
  const submitBtn = el(doc, "button", "submit", "Segment");

  const thresholdInput = el(doc, "input", "threshold") as HTMLInputElement;
  thresholdInput.type = "number";
  thresholdInput.min = "0";
  thresholdInput.max = "1";
  thresholdInput.step = "0.05";

  const opacityInput = el(doc, "input", "opacity") as HTMLInputElement;
  opacityInput.type = "range";
  opacityInput.min = "0";
  opacityInput.max = "1";
  opacityInput.step = "0.05";
  opacityInput.value = String(session.overlay.opacity);

  const policySelect = el(doc, "select", "policy") as HTMLSelectElement;
  for (const p of ["queue", "cancel"] as const) {
    const opt = el(doc, "option", undefined, p) as HTMLOptionElement;
    opt.value = p;
    policySelect.append(opt);
  }

  const historyList = el(doc, "ol", "history");
  const compareBtn = el(doc, "button", "compare", "Compare selected");
  compareBtn.disabled = true;
  const comparePanel = el(doc, "div", "compare-panel");

  const controls = el(doc, "div", "controls");
  controls.append(exprInput, submitBtn, thresholdInput);
  const viewRow = el(doc, "div", "view");
  viewRow.append(canvas);
  root.append(
    samplesRow,
    uploadInput,
    controls,
    banner,
    viewRow,
    statusLine,
    opacityInput,
    policySelect,
    historyList,
    compareBtn,
    comparePanel,
  );

  // --- rendering -------------------------------------------------------
  function drawImage(): void {
    const image = session.image;
    if (!image) {
      return;
    }
    canvas.width = image.width;
    canvas.height = image.height;
    const ctx = canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    const img = new doc.defaultView!.Image();
    img.onload = () => {
      ctx.drawImage(img, 0, 0);
      drawOverlay(ctx);
    };
    img.src = `data:image/png;base64,${image.imageBase64}`;
  }

  function drawOverlay(ctx: CanvasRenderingContext2D): void {
    const image = session.image;
    const latest = [...session.history]
      .reverse()
      .find((a) => a.imageId === image?.id);
    if (!image || !latest) {
      return;
    }
    const frame = ctx.getImageData(0, 0, image.width, image.height);
    paintOverlay(
      frame.data,
      decodeRle(latest.maskRle),
      PRED_COLOR,
      session.overlay.opacity,
    );
    ctx.putImageData(frame, 0, 0);
  }

  function refresh(): void {
    if (session.banner) {
      banner.hidden = false;
      banner.textContent = session.banner.status
        ? `service error ${session.banner.status}: ${session.banner.message}`
        : session.banner.message;
    } else {
      banner.hidden = true;
      banner.textContent = "";
    }

    const image = session.image;
    const latest = [...session.history]
      .reverse()
      .find((a) => a.imageId === image?.id);
    if (!image) {
      statusLine.textContent = "no image loaded";
    } else if (session.busy) {
      statusLine.textContent = "segmenting...";
    } else if (latest) {
      statusLine.textContent =
        `mask covers ${latest.maskArea} px ` +
        `(${latest.latencyMs.toFixed(1)} ms)`;
    } else {
      statusLine.textContent = `loaded ${image.width}x${image.height} image`;
    }

    historyList.textContent = "";
    session.history.forEach((a, i) => {
      const item = el(doc, "li", "attempt");
      const check = el(doc, "input") as HTMLInputElement;
      check.type = "checkbox";
      check.dataset["index"] = String(i);
      item.append(
        check,
        el(
          doc,
          "span",
          undefined,
          ` "${a.expression}" -> ${a.maskArea} px @ ${a.threshold}`,
        ),
      );
      historyList.append(item);
    });
    compareBtn.disabled = !session.canCompare();
    drawImage();
  }

  // --- actions ---------------------------------------------------------
  session.onChange = refresh;

  function loadImage(image: LoadedImage): void {
    session.loadImage(image);
  }

  function submit(): void {
    const run = session.submitExpression(exprInput.value).catch(() => null);
    pending = pending.then(() => run);
  }

  submitBtn.addEventListener("click", submit);
  exprInput.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") {
      submit();
    }
  });

  thresholdInput.addEventListener("change", () => {
    const v = Number(thresholdInput.value);
    session.threshold = Number.isFinite(v) && thresholdInput.value !== "" ? v : undefined;
  });

  opacityInput.addEventListener("input", () => {
    session.overlay.opacity = Number(opacityInput.value);
    refresh();
  });

  policySelect.addEventListener("change", () => {
    session.pendingPolicy = policySelect.value as PendingPolicy;
  });

  uploadInput.addEventListener("change", () => {
    const file = uploadInput.files?.[0];
    if (!file) {
      return;
    }
    const reader = new doc.defaultView!.FileReader();
    reader.onload = () => {
      const url = String(reader.result);
      const base64 = url.slice(url.indexOf(",") + 1);
      const probe = new doc.defaultView!.Image();
      probe.onload = () =>
        loadImage({
          id: `upload:${file.name}`,
          width: probe.naturalWidth,
          height: probe.naturalHeight,
          imageBase64: base64,
        });
      probe.src = url;
    };
    reader.readAsDataURL(file);
  });

  compareBtn.addEventListener("click", () => {
    const picked = [...historyList.querySelectorAll("input:checked")].map((c) =>
      Number((c as HTMLInputElement).dataset["index"]),
    );
    comparePanel.textContent = "";
    let attempts: ReturnType<typeof session.compareAttempts>;
    try {
      attempts = session.compareAttempts(picked);
    } catch (err) {
      if (err instanceof CompareError) {
        comparePanel.append(el(doc, "p", "compare-error", err.message));
        return;
      }
      throw err;
    }
    for (const a of attempts) {
      const pane = el(doc, "div", "compare-pane");
      pane.append(
        el(doc, "p", undefined, `"${a.expression}": ${a.maskArea} px`),
      );
      const small = el(doc, "canvas") as HTMLCanvasElement;
      small.width = a.width;
      small.height = a.height;
      const ctx = small.getContext("2d");
      if (ctx) {
        const frame = ctx.createImageData(a.width, a.height);
        frame.data.fill(30);
        for (let i = 3; i < frame.data.length; i += 4) {
          frame.data[i] = 255;
        }
        paintOverlay(frame.data, decodeRle(a.maskRle), PRED_COLOR, 1.0);
        ctx.putImageData(frame, 0, 0);
      }
      pane.append(small);
      comparePanel.append(pane);
    }
  });

  // --- demo samples ----------------------------------------------------
  function addSampleButton(sample: DemoSample): void {
    const btn = el(doc, "button", "sample", sample.id);
    btn.title = sample.suggestedExpressions.join(" / ");
    btn.addEventListener("click", () => {
      loadImage({
        id: sample.id,
        width: sample.width,
        height: sample.height,
        imageBase64: sample.imageBase64,
      });
      if (sample.suggestedExpressions.length && !exprInput.value) {
        exprInput.value = sample.suggestedExpressions[0]!;
      }
    });
    samplesRow.append(btn);
  }

  const samplesReady = client
    .samples()
    .then((samples) => samples.forEach(addSampleButton))
    .catch(() => {
      samplesRow.append(
        el(doc, "p", "samples-error", "demo samples unavailable"),
      );
    });
  pending = pending.then(() => samplesReady);

  refresh();
  return {
    session,
    root,
    settled: async () => {
      // submit chains can enqueue more work while awaited; loop until stable
      let last;
      do {
        last = pending;
        await last;
      } while (pending !== last);
    },
  };
}
