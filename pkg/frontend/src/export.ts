// Turn a CanvasDoc into a /synthesize body, with the same checks the server
// applies so a UI-constructed document never earns a 400.

import { CanvasDoc } from "./doc.js";
import { bytesToBase64, encodePng } from "./png.js";
import { MetaInfo, SynthesizeRequest, ValidationIssue } from "./types.js";

export function maskToRgb(mask: Uint8Array, size: number): Uint8Array {
  const rgb = new Uint8Array(size * size * 3);
  for (let i = 0; i < mask.length; i++) {
    const v = mask[i] ? 255 : 0;
    rgb[i * 3] = v;
    rgb[i * 3 + 1] = v;
    rgb[i * 3 + 2] = v;
  }
  return rgb;
}

export function validateDoc(doc: CanvasDoc, meta: MetaInfo): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (doc.strokes === 0) {
    issues.push({ field: "painting", message: "draw at least one stroke" });
  }
  if (doc.tokens.length === 0) {
    issues.push({ field: "tokens", message: "pick a domain token" });
  } else {
    if (!meta.domains.includes(doc.tokens[0])) {
      issues.push({ field: "tokens", message: `first token must be one of ${meta.domains}` });
    }
    for (const t of doc.tokens) {
      if (!meta.vocabulary.includes(t)) {
        issues.push({ field: "tokens", message: `unknown token '${t}'` });
      }
    }
  }
  const totalTokens = new Set([
    ...doc.tokens,
    ...doc.regions.map((r) => r.label),
  ]).size;
  if (totalTokens > 8) {
    issues.push({ field: "tokens", message: `${totalTokens} tokens exceed the limit of 8` });
  }
  if (!meta.methods.includes(doc.method)) {
    issues.push({ field: "method", message: `unknown method '${doc.method}'` });
  }
  for (const r of doc.regions) {
    if (!r.mask.some((v) => v > 0)) {
      issues.push({ field: `region:${r.name}`, message: "region mask is empty" });
    }
    if (!meta.vocabulary.includes(r.label) || meta.domains.includes(r.label)) {
      issues.push({ field: `region:${r.name}`, message: `label '${r.label}' is not a semantic token` });
    }
    if (r.weight < 0) {
      issues.push({ field: `region:${r.name}`, message: "weight must be >= 0" });
    }
  }
  const ts = doc.config["t_start"];
  const te = doc.config["t_end"];
  if (ts !== undefined && te !== undefined && te > ts) {
    issues.push({ field: "config", message: "t_end must not exceed t_start" });
  }
  return issues;
}

export function exportRequest(doc: CanvasDoc, meta: MetaInfo): SynthesizeRequest {
  const issues = validateDoc(doc, meta);
  if (issues.length > 0) {
    throw new Error(`invalid document: ${issues.map((i) => `${i.field}: ${i.message}`).join("; ")}`);
  }
  return {
    painting: bytesToBase64(encodePng(doc.pixels, doc.size)),
    tokens: [...doc.tokens],
    method: doc.method,
    seed: doc.seed,
    config: { ...doc.config },
    regions: doc.regions.map((r) => ({
      mask: bytesToBase64(encodePng(maskToRgb(r.mask, doc.size), doc.size)),
      label: r.label,
      weight: r.weight,
    })),
    record_attention: doc.recordAttention,
  };
}

/** The loopback gesture: previous output becomes the new reference painting. */
export function useAsReference(doc: CanvasDoc, resultRgb: Uint8Array): void {
  doc.importPixels(resultRgb);
}
