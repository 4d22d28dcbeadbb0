// The drawing document: paint layer, region layer, prompt, parameters.
// Pure data + operations so the whole editing flow is testable headless;
// the DOM layer in app.ts only renders and forwards events.

import { IMAGE_SIZE, RegionDef } from "./types.js";

// 20 swatches mirroring the palette budget of the metric painting function
export const PALETTE: [number, number, number][] = [
  [115, 166, 230], [166, 204, 242], [60, 90, 160], [92, 128, 66],
  [58, 92, 40], [107, 153, 77], [204, 178, 92], [230, 217, 166],
  [133, 87, 51], [166, 120, 77], [120, 120, 128], [77, 77, 82],
  [250, 217, 77], [235, 235, 219], [64, 140, 217], [158, 204, 242],
  [204, 82, 61], [242, 242, 247], [31, 31, 36], [128, 166, 97],
];

export class CanvasDoc {
  readonly size = IMAGE_SIZE;
  /** channel-last RGB bytes; starts as a white canvas */
  pixels: Uint8Array;
  strokes = 0;
  regions: RegionDef[] = [];
  tokens: string[] = [];
  method = "gradop+";
  seed = 0;
  config: Record<string, number> = {};
  recordAttention = false;

  constructor() {
    this.pixels = new Uint8Array(this.size * this.size * 3).fill(255);
  }

  brush(cx: number, cy: number, radius: number, swatch: number): void {
    const [r, g, b] = PALETTE[swatch % PALETTE.length];
    let touched = false;
    for (let y = Math.max(0, cy - radius); y <= Math.min(this.size - 1, cy + radius); y++) {
      for (let x = Math.max(0, cx - radius); x <= Math.min(this.size - 1, cx + radius); x++) {
        if ((x - cx) ** 2 + (y - cy) ** 2 <= radius * radius) {
          const i = (y * this.size + x) * 3;
          this.pixels[i] = r;
          this.pixels[i + 1] = g;
          this.pixels[i + 2] = b;
          touched = true;
        }
      }
    }
    if (touched) this.strokes++;
  }

  fill(swatch: number): void {
    const [r, g, b] = PALETTE[swatch % PALETTE.length];
    for (let i = 0; i < this.pixels.length; i += 3) {
      this.pixels[i] = r;
      this.pixels[i + 1] = g;
      this.pixels[i + 2] = b;
    }
    this.strokes++;
  }

  /** Load an exported painting back into the paint layer (pixel-identical). */
  importPixels(rgb: Uint8Array): void {
    if (rgb.length !== this.pixels.length) {
      throw new Error(`pixel buffer must be ${this.pixels.length} bytes`);
    }
    this.pixels = Uint8Array.from(rgb);
    this.strokes++;
  }

  addRegion(name: string, label: string, weight = 1.0): RegionDef {
    const region: RegionDef = {
      name, label, weight,
      mask: new Uint8Array(this.size * this.size),
    };
    this.regions.push(region);
    return region;
  }

  brushRegion(name: string, cx: number, cy: number, radius: number): void {
    const region = this.regions.find((r) => r.name === name);
    if (!region) throw new Error(`no region '${name}'`);
    for (let y = Math.max(0, cy - radius); y <= Math.min(this.size - 1, cy + radius); y++) {
      for (let x = Math.max(0, cx - radius); x <= Math.min(this.size - 1, cx + radius); x++) {
        if ((x - cx) ** 2 + (y - cy) ** 2 <= radius * radius) {
          region.mask[y * this.size + x] = 1;
        }
      }
    }
  }

  removeRegion(name: string): void {
    this.regions = this.regions.filter((r) => r.name !== name);
  }
}
