import { describe, expect, it } from "vitest";

import { buildRows, sortByFaithfulness } from "../src/compare.js";
import { CanvasDoc, PALETTE } from "../src/doc.js";
import { exportRequest, maskToRgb, useAsReference, validateDoc } from "../src/export.js";
import { base64ToBytes, bytesToBase64, decodePng, encodePng } from "../src/png.js";
import { JobView, MetaInfo } from "../src/types.js";

const META: MetaInfo = {
  vocabulary: ["photo", "flat", "sky", "ground", "sun", "moon", "river", "waterfall",
    "hut", "castle", "tree", "grass", "mountain", "rock", "lake", "field"],
  domains: ["photo", "flat"],
  defaults: { t0: 0.8, gamma: 0.001 },
  methods: ["gradop", "gradop+", "ilvr", "loopback", "sdedit"],
  checkpoints: { autoencoder: "x", denoiser: "y" },
  image_size: 64,
  total_steps: 50,
};

function paintedDoc(): CanvasDoc {
  const doc = new CanvasDoc();
  doc.fill(0);
  doc.brush(32, 40, 10, 4);
  doc.tokens = ["photo", "sky", "ground"];
  return doc;
}

describe("png codec", () => {
  it("round-trips pixels exactly", () => {
    const rgb = new Uint8Array(64 * 64 * 3);
    for (let i = 0; i < rgb.length; i++) rgb[i] = (i * 31) % 256;
    const png = encodePng(rgb, 64);
    const back = decodePng(png);
    expect(back.size).toBe(64);
    expect(Array.from(back.rgb)).toEqual(Array.from(rgb));
  });

  it("base64 helpers invert each other", () => {
    const bytes = Uint8Array.from([0, 1, 2, 250, 251, 255]);
    expect(Array.from(base64ToBytes(bytesToBase64(bytes)))).toEqual(Array.from(bytes));
  });

  it("rejects wrong buffer sizes", () => {
    expect(() => encodePng(new Uint8Array(10), 64)).toThrow();
  });
});

describe("canvas document", () => {
  it("starts blank with export disabled", () => {
    const doc = new CanvasDoc();
    doc.tokens = ["photo"];
    const issues = validateDoc(doc, META);
    expect(issues.some((i) => i.field === "painting")).toBe(true);
  });

  it("brush paints the selected swatch", () => {
    const doc = new CanvasDoc();
    doc.brush(10, 10, 2, 3);
    const i = (10 * 64 + 10) * 3;
    expect([doc.pixels[i], doc.pixels[i + 1], doc.pixels[i + 2]]).toEqual(PALETTE[3]);
    expect(doc.strokes).toBe(1);
  });

  it("region brushes build binary masks", () => {
    const doc = paintedDoc();
    doc.addRegion("r0", "river", 1.5);
    doc.brushRegion("r0", 20, 40, 5);
    const region = doc.regions[0];
    expect(region.mask[40 * 64 + 20]).toBe(1);
    expect(new Set(region.mask).size).toBeLessThanOrEqual(2);
  });
});

describe("request export", () => {
  it("builds a valid body with one region", () => {
    const doc = paintedDoc();
    doc.addRegion("r0", "river", 0.7);
    doc.brushRegion("r0", 20, 40, 6);
    doc.method = "sdedit";
    doc.seed = 42;
    doc.config = { t0: 0.4 };
    const body = exportRequest(doc, META);
    expect(body.regions).toHaveLength(1);
    expect(body.regions[0].label).toBe("river");
    expect(body.regions[0].weight).toBe(0.7);
    expect(body.tokens[0]).toBe("photo");
    expect(body.seed).toBe(42);
    const painting = decodePng(base64ToBytes(body.painting));
    expect(painting.size).toBe(64);
  });

  it("blank canvas cannot export", () => {
    const doc = new CanvasDoc();
    doc.tokens = ["photo", "sky"];
    expect(() => exportRequest(doc, META)).toThrow(/stroke/);
  });

  it("flags empty region masks inline", () => {
    const doc = paintedDoc();
    doc.addRegion("r0", "river");
    const issues = validateDoc(doc, META);
    expect(issues.some((i) => i.field === "region:r0" && /empty/.test(i.message))).toBe(true);
  });

  it("rejects bad windows and unknown tokens like the server would", () => {
    const doc = paintedDoc();
    doc.config = { t_start: 0.2, t_end: 0.7 };
    expect(validateDoc(doc, META).some((i) => i.field === "config")).toBe(true);
    doc.config = {};
    doc.tokens = ["photo", "dragon"];
    expect(validateDoc(doc, META).some((i) => /dragon/.test(i.message))).toBe(true);
  });

  it("round-trips an exported painting pixel-identically", () => {
    const doc = paintedDoc();
    const body = exportRequest(doc, META);
    const decoded = decodePng(base64ToBytes(body.painting));
    const doc2 = new CanvasDoc();
    doc2.importPixels(decoded.rgb);
    expect(Array.from(doc2.pixels)).toEqual(Array.from(doc.pixels));
  });

  it("use-as-reference swaps the paint layer to the result", () => {
    const doc = paintedDoc();
    const fakeResult = new Uint8Array(64 * 64 * 3).fill(7);
    useAsReference(doc, fakeResult);
    expect(doc.pixels[0]).toBe(7);
    expect(validateDoc(doc, META)).toHaveLength(0); // still exportable
  });

  it("mask png is black and white", () => {
    const mask = new Uint8Array(64 * 64);
    mask[100] = 1;
    const rgb = maskToRgb(mask, 64);
    expect(rgb[300]).toBe(255);
    expect(rgb[0]).toBe(0);
  });
});

describe("compare panel", () => {
  function doneJob(id: string, f: number, method = "sdedit"): JobView {
    return {
      id, state: "done", progress: { step: 50, total: 50 },
      result: { image: "AAA", faithfulness: f, losses: [], duration_s: 1, method, seed: 1 },
    };
  }

  it("keeps only completed jobs and sorts by F", () => {
    const jobs = [
      { id: "a", view: doneJob("a", 30.5), paintingPng: "p", params: {} },
      { id: "b", view: { id: "b", state: "running", progress: { step: 3, total: 50 } } as JobView, paintingPng: "p", params: {} },
      { id: "c", view: doneJob("c", 12.1, "gradop+"), paintingPng: "p", params: {} },
    ];
    const rows = buildRows(jobs);
    expect(rows).toHaveLength(2);
    const sorted = sortByFaithfulness(rows);
    expect(sorted.map((r) => r.jobId)).toEqual(["c", "a"]);
    expect(sortByFaithfulness(rows, false).map((r) => r.jobId)).toEqual(["a", "c"]);
    expect(sorted[0].method).toBe("gradop+");
  });
});
