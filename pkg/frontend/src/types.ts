// Shared wire and document types for the painting studio.

export const IMAGE_SIZE = 64;

export interface MetaInfo {
  vocabulary: string[];
  domains: string[];
  defaults: Record<string, number | string>;
  methods: string[];
  checkpoints: Record<string, string>;
  image_size: number;
  total_steps: number;
}

export interface RegionSpecWire {
  mask: string; // base64 PNG, 64x64
  label: string;
  weight: number;
}

export interface SynthesizeRequest {
  painting: string; // base64 PNG, 64x64
  tokens: string[]; // domain token first
  method: string;
  seed: number;
  config: Record<string, number | string>;
  regions: RegionSpecWire[];
  record_attention: boolean;
}

export interface JobProgress {
  step: number;
  total: number;
}

export interface JobResult {
  image: string;
  faithfulness: number;
  losses: number[];
  duration_s: number;
  method: string;
  seed: number;
  attention?: Record<string, string>;
}

export interface JobView {
  id: string;
  state: "queued" | "running" | "done" | "failed";
  progress: JobProgress;
  result?: JobResult;
  error?: string;
}

export interface RegionDef {
  name: string;
  label: string;
  weight: number;
  mask: Uint8Array; // 64*64, 0/1
}

export interface ValidationIssue {
  field: string;
  message: string;
}
