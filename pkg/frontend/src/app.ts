// The stroke-painting studio: paint layer, region layer, prompt picker,
// parameter panel, job monitor and compare grid, wired to the service API.
//
// All document state lives in CanvasDoc (doc.ts); this file only renders it
// and translates pointer/input events into document operations.

import { Client } from "./api.js";
import { buildRows, CompareRow, sortByFaithfulness } from "./compare.js";
import { CanvasDoc, PALETTE } from "./doc.js";
import { exportRequest, useAsReference, validateDoc } from "./export.js";
import { base64ToBytes, decodePng } from "./png.js";
import { JobView, MetaInfo } from "./types.js";

const SCALE = 6; // 64 px document, 384 px canvas
const REGION_TINTS = ["#e74c3c", "#8e44ad", "#16a085", "#d35400", "#2c3e50"];

interface TrackedJob {
  id: string;
  view: JobView;
  paintingPng: string;
  params: Record<string, number | string>;
}

class Studio {
  doc = new CanvasDoc();
  meta!: MetaInfo;
  client = new Client("");
  swatch = 0;
  brushRadius = 4;
  mode: "paint" | "region" = "paint";
  activeRegion: string | null = null;
  regionCounter = 0;
  jobs: TrackedJob[] = [];
  sortAscending = true;

  canvas!: HTMLCanvasElement;
  regionCanvas!: HTMLCanvasElement;
  statusEl!: HTMLElement;
  resultEl!: HTMLElement;
  compareEl!: HTMLElement;
  tokenBox!: HTMLElement;
  regionBox!: HTMLElement;
  paramBox!: HTMLElement;
  exportBtn!: HTMLButtonElement;

  async start(): Promise<void> {
    this.meta = await this.client.meta();
    this.buildLayout();
    this.renderCanvas();
    this.renderTokens();
    this.renderParams();
    this.refreshExportState();
  }

  buildLayout(): void {
    document.body.innerHTML = `
      <h1>stroke synthesis studio</h1>
      <div id="columns">
        <div id="left">
          <div id="canvas-stack"></div>
          <div id="palette"></div>
          <div id="tools"></div>
          <div id="regions"><h3>regions</h3><div id="region-list"></div>
            <button id="add-region">add region</button></div>
        </div>
        <div id="mid">
          <div id="tokens"><h3>prompt</h3></div>
          <div id="params"><h3>parameters</h3></div>
          <button id="synth" disabled>synthesize</button>
          <div id="status"></div>
          <div id="result"></div>
        </div>
        <div id="right"><h3>compare</h3>
          <button id="sort-f">sort by F</button>
          <div id="compare"></div>
        </div>
      </div>`;
    const stack = document.getElementById("canvas-stack")!;
    this.canvas = document.createElement("canvas");
    this.canvas.width = this.canvas.height = this.doc.size * SCALE;
    this.regionCanvas = document.createElement("canvas");
    this.regionCanvas.width = this.regionCanvas.height = this.doc.size * SCALE;
    this.regionCanvas.style.position = "absolute";
    this.regionCanvas.style.pointerEvents = "none";
    this.regionCanvas.style.opacity = "0.45";
    stack.style.position = "relative";
    stack.append(this.canvas, this.regionCanvas);

    this.statusEl = document.getElementById("status")!;
    this.resultEl = document.getElementById("result")!;
    this.compareEl = document.getElementById("compare")!;
    this.tokenBox = document.getElementById("tokens")!;
    this.regionBox = document.getElementById("region-list")!;
    this.paramBox = document.getElementById("params")!;
    this.exportBtn = document.getElementById("synth") as HTMLButtonElement;

    const palette = document.getElementById("palette")!;
    PALETTE.forEach(([r, g, b], i) => {
      const sw = document.createElement("button");
      sw.className = "swatch";
      sw.style.background = `rgb(${r},${g},${b})`;
      sw.title = `swatch ${i}`;
      sw.onclick = () => {
        this.swatch = i;
        this.mode = "paint";
      };
      palette.append(sw);
    });

    const tools = document.getElementById("tools")!;
    for (const radius of [2, 4, 8, 16]) {
      const btn = document.createElement("button");
      btn.textContent = `brush ${radius}`;
      btn.onclick = () => (this.brushRadius = radius);
      tools.append(btn);
    }
    const fill = document.createElement("button");
    fill.textContent = "fill";
    fill.onclick = () => {
      this.doc.fill(this.swatch);
      this.renderCanvas();
      this.refreshExportState();
    };
    tools.append(fill);

    document.getElementById("add-region")!.onclick = () => this.addRegion();
    document.getElementById("sort-f")!.onclick = () => {
      this.sortAscending = !this.sortAscending;
      this.renderCompare();
    };
    this.exportBtn.onclick = () => void this.launch();

    let painting = false;
    this.canvas.onpointerdown = (e) => {
      painting = true;
      this.stroke(e);
    };
    this.canvas.onpointermove = (e) => {
      if (painting) this.stroke(e);
    };
    window.addEventListener("pointerup", () => (painting = false));
  }

  stroke(e: PointerEvent): void {
    const rect = this.canvas.getBoundingClientRect();
    const x = Math.floor(((e.clientX - rect.left) / rect.width) * this.doc.size);
    const y = Math.floor(((e.clientY - rect.top) / rect.height) * this.doc.size);
    if (this.mode === "region" && this.activeRegion) {
      this.doc.brushRegion(this.activeRegion, x, y, this.brushRadius);
      this.renderRegions();
    } else {
      this.doc.brush(x, y, this.brushRadius, this.swatch);
      this.renderCanvas();
    }
    this.refreshExportState();
  }

  renderCanvas(): void {
    const ctx = this.canvas.getContext("2d")!;
    const img = ctx.createImageData(this.doc.size, this.doc.size);
    for (let i = 0; i < this.doc.size * this.doc.size; i++) {
      img.data[i * 4] = this.doc.pixels[i * 3];
      img.data[i * 4 + 1] = this.doc.pixels[i * 3 + 1];
      img.data[i * 4 + 2] = this.doc.pixels[i * 3 + 2];
      img.data[i * 4 + 3] = 255;
    }
    const off = document.createElement("canvas");
    off.width = off.height = this.doc.size;
    off.getContext("2d")!.putImageData(img, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.drawImage(off, 0, 0, this.canvas.width, this.canvas.height);
  }

  renderRegions(): void {
    const ctx = this.regionCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.regionCanvas.width, this.regionCanvas.height);
    this.doc.regions.forEach((region, ri) => {
      ctx.fillStyle = REGION_TINTS[ri % REGION_TINTS.length];
      for (let i = 0; i < region.mask.length; i++) {
        if (region.mask[i]) {
          const x = i % this.doc.size;
          const y = Math.floor(i / this.doc.size);
          ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
        }
      }
    });
    this.regionBox.innerHTML = "";
    for (const region of this.doc.regions) {
      const row = document.createElement("div");
      row.className = "region-row";
      const label = document.createElement("select");
      for (const t of this.meta.vocabulary.filter((v) => !this.meta.domains.includes(v))) {
        const opt = document.createElement("option");
        opt.value = opt.textContent = t;
        if (t === region.label) opt.selected = true;
        label.append(opt);
      }
      label.onchange = () => {
        region.label = label.value;
        this.refreshExportState();
      };
      const weight = document.createElement("input");
      weight.type = "range";
      weight.min = "0";
      weight.max = "3";
      weight.step = "0.1";
      weight.value = String(region.weight);
      weight.oninput = () => (region.weight = Number(weight.value));
      const draw = document.createElement("button");
      draw.textContent = `draw ${region.name}`;
      draw.onclick = () => {
        this.mode = "region";
        this.activeRegion = region.name;
      };
      const del = document.createElement("button");
      del.textContent = "x";
      del.onclick = () => {
        this.doc.removeRegion(region.name);
        this.renderRegions();
        this.refreshExportState();
      };
      row.append(draw, label, weight, del);
      this.regionBox.append(row);
    }
  }

  addRegion(): void {
    const name = `r${this.regionCounter++}`;
    this.doc.addRegion(name, "river");
    this.mode = "region";
    this.activeRegion = name;
    this.renderRegions();
    this.refreshExportState();
  }

  renderTokens(): void {
    const wrap = document.createElement("div");
    const domain = document.createElement("select");
    for (const d of this.meta.domains) {
      const opt = document.createElement("option");
      opt.value = opt.textContent = d;
      domain.append(opt);
    }
    const rebuild = () => {
      this.doc.tokens = [
        domain.value,
        ...this.meta.vocabulary.filter(
          (t) => !this.meta.domains.includes(t) &&
            (wrap.querySelector(`input[data-token="${t}"]`) as HTMLInputElement)?.checked,
        ),
      ];
      this.refreshExportState();
    };
    domain.onchange = rebuild;
    wrap.append(domain);
    for (const t of this.meta.vocabulary.filter((v) => !this.meta.domains.includes(v))) {
      const lbl = document.createElement("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.dataset.token = t;
      box.onchange = rebuild;
      lbl.append(box, t);
      wrap.append(lbl);
    }
    this.tokenBox.append(wrap);
    rebuild();
  }

  renderParams(): void {
    const method = document.createElement("select");
    for (const m of this.meta.methods) {
      const opt = document.createElement("option");
      opt.value = opt.textContent = m;
      if (m === this.doc.method) opt.selected = true;
      method.append(opt);
    }
    method.onchange = () => (this.doc.method = method.value);
    this.paramBox.append("method ", method);

    const seed = document.createElement("input");
    seed.type = "number";
    seed.value = "0";
    seed.onchange = () => (this.doc.seed = Number(seed.value));
    this.paramBox.append(" seed ", seed);

    for (const key of ["t0", "gamma", "lr", "m", "t_start", "t_end", "alpha_cfg",
                       "n_iter", "k", "n_ilvr"]) {
      const input = document.createElement("input");
      input.type = "number";
      input.step = "any";
      input.placeholder = String(this.meta.defaults[key] ?? "");
      input.dataset.param = key;
      input.onchange = () => {
        if (input.value === "") {
          delete this.doc.config[key];
        } else {
          this.doc.config[key] = Number(input.value);
        }
        this.refreshExportState();
      };
      const lbl = document.createElement("label");
      lbl.append(` ${key} `, input);
      this.paramBox.append(lbl);
    }
    const attn = document.createElement("input");
    attn.type = "checkbox";
    attn.onchange = () => (this.doc.recordAttention = attn.checked);
    const lbl = document.createElement("label");
    lbl.append(attn, " record attention");
    this.paramBox.append(lbl);
  }

  refreshExportState(): void {
    const issues = validateDoc(this.doc, this.meta);
    this.exportBtn.disabled = issues.length > 0;
    this.statusEl.textContent = issues.map((i) => `${i.field}: ${i.message}`).join(" | ");
  }

  async launch(): Promise<void> {
    const body = exportRequest(this.doc, this.meta);
    const params = { method: this.doc.method, seed: this.doc.seed, ...this.doc.config };
    let jobId: string;
    try {
      jobId = await this.client.synthesize(body);
    } catch (err) {
      this.statusEl.textContent = String(err);
      return;
    }
    const tracked: TrackedJob = {
      id: jobId,
      view: { id: jobId, state: "queued", progress: { step: 0, total: this.meta.total_steps } },
      paintingPng: body.painting,
      params,
    };
    this.jobs.push(tracked);
    const view = await this.client.waitForJob(jobId, (v) => {
      tracked.view = v;
      this.statusEl.textContent = `job ${jobId.slice(0, 8)}: ${v.state} ${v.progress.step}/${v.progress.total}`;
    });
    tracked.view = view;
    if (view.state === "failed") {
      this.statusEl.textContent = `failed: ${view.error}`;
      return;
    }
    this.renderResult(tracked);
    this.renderCompare();
  }

  renderResult(job: TrackedJob): void {
    const res = job.view.result!;
    this.resultEl.innerHTML = "";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${res.image}`;
    img.width = img.height = 192;
    img.style.imageRendering = "pixelated";
    const painting = document.createElement("img");
    painting.src = `data:image/png;base64,${job.paintingPng}`;
    painting.width = painting.height = 192;
    painting.style.imageRendering = "pixelated";
    const f = document.createElement("div");
    f.textContent = `F = ${res.faithfulness.toFixed(2)}  (${res.duration_s.toFixed(1)}s, seed ${res.seed})`;
    const spark = this.sparkline(res.losses);
    const reuse = document.createElement("button");
    reuse.textContent = "use as reference";
    reuse.onclick = () => {
      const decoded = decodePng(base64ToBytes(res.image));
      useAsReference(this.doc, decoded.rgb);
      this.renderCanvas();
      this.refreshExportState();
    };
    this.resultEl.append(painting, img, f, spark, reuse);
    if (res.attention) {
      const row = document.createElement("div");
      for (const [token, png] of Object.entries(res.attention)) {
        const heat = document.createElement("img");
        heat.src = `data:image/png;base64,${png}`;
        heat.title = token;
        heat.width = heat.height = 64;
        const cell = document.createElement("figure");
        const cap = document.createElement("figcaption");
        cap.textContent = token;
        cell.append(heat, cap);
        row.append(cell);
      }
      this.resultEl.append(row);
    }
  }

  sparkline(losses: number[]): HTMLCanvasElement {
    const c = document.createElement("canvas");
    c.width = 160;
    c.height = 36;
    if (losses.length > 1) {
      const ctx = c.getContext("2d")!;
      const lo = Math.min(...losses);
      const hi = Math.max(...losses);
      ctx.beginPath();
      losses.forEach((v, i) => {
        const x = (i / (losses.length - 1)) * (c.width - 2) + 1;
        const y = c.height - 2 - ((v - lo) / (hi - lo || 1)) * (c.height - 4);
        i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
    return c;
  }

  renderCompare(): void {
    const rows: CompareRow[] = sortByFaithfulness(
      buildRows(this.jobs.map((j) => ({ id: j.id, view: j.view, paintingPng: j.paintingPng, params: j.params }))),
      this.sortAscending,
    );
    this.compareEl.innerHTML = "";
    for (const row of rows) {
      const cell = document.createElement("div");
      cell.className = "compare-cell";
      const painting = document.createElement("img");
      painting.src = `data:image/png;base64,${row.paintingPng}`;
      painting.width = painting.height = 96;
      const out = document.createElement("img");
      out.src = `data:image/png;base64,${row.outputPng}`;
      out.width = out.height = 96;
      const badge = document.createElement("div");
      badge.className = "method-badge";
      badge.textContent = row.method;
      const f = document.createElement("div");
      f.textContent = `F=${row.faithfulness.toFixed(2)} seed=${row.seed}`;
      cell.append(painting, out, badge, f);
      this.compareEl.append(cell);
    }
  }
}

new Studio().start().catch((err) => {
  document.body.textContent = `failed to reach the synthesis service: ${err}`;
});
