/**
 * Launch an adaptation job and poll it to a terminal state, reporting
 * every observed status so the panel can animate queued -> running ->
 * done. Poll-based on purpose; 1 Hz is plenty for minutes-long jobs.
 */
import { AdaptPairFiles, StudioClient } from "./client";
import { AdaptJobStatus } from "./types";

export const MAX_PAIRS = 20;

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function runAdaptation(
  client: StudioClient,
  pairs: AdaptPairFiles[],
  promptText: string,
  onUpdate: (job: AdaptJobStatus) => void,
  intervalMs = 1000,
): Promise<AdaptJobStatus> {
  if (pairs.length < 1 || pairs.length > MAX_PAIRS) {
    throw new Error(`adaptation needs between 1 and ${MAX_PAIRS} pairs, got ${pairs.length}`);
  }
  let job = await client.startAdaptation(pairs, promptText);
  onUpdate(job);
  while (job.status === "queued" || job.status === "running") {
    await sleep(intervalMs);
    job = await client.adaptationStatus(job.job_id);
    onUpdate(job);
  }
  return job;
}
