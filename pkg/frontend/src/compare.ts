// Compare-panel model: completed jobs side by side, sortable by faithfulness.

import { JobView } from "./types.js";

export interface CompareRow {
  jobId: string;
  method: string;
  seed: number;
  faithfulness: number;
  paintingPng: string;
  outputPng: string;
  params: Record<string, number | string>;
}

export function buildRows(
  jobs: { id: string; view: JobView; paintingPng: string; params: Record<string, number | string> }[],
): CompareRow[] {
  return jobs
    .filter((j) => j.view.state === "done" && j.view.result)
    .map((j) => ({
      jobId: j.id,
      method: j.view.result!.method,
      seed: j.view.result!.seed,
      faithfulness: j.view.result!.faithfulness,
      paintingPng: j.paintingPng,
      outputPng: j.view.result!.image,
      params: j.params,
    }));
}

export function sortByFaithfulness(rows: CompareRow[], ascending = true): CompareRow[] {
  const out = [...rows];
  out.sort((a, b) => (ascending ? a.faithfulness - b.faithfulness : b.faithfulness - a.faithfulness));
  return out;
}
