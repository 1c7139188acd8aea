/**
 * Wire types for the editing service, mirrored as zod schemas so the UI
 * can refuse to send anything the server would reject.
 */
import { z } from "zod";

export const YAW_RANGE: readonly [number, number] = [-90, 90];
export const PITCH_RANGE: readonly [number, number] = [-45, 45];

export const PromptPayloadSchema = z
  .object({
    type: z.enum(["text", "image"]),
    text: z.string().min(1).optional(),
    image: z.string().min(1).optional(),
  })
  .refine((p) => (p.type === "text" ? p.text !== undefined : p.image !== undefined), {
    message: "prompt payload is missing its text or image field",
  });

export const EditRequestSchema = z.object({
  image: z.string().min(1),
  prompt: PromptPayloadSchema,
  yaw: z.number().min(YAW_RANGE[0]).max(YAW_RANGE[1]),
  pitch: z.number().min(PITCH_RANGE[0]).max(PITCH_RANGE[1]),
  seed: z.number().int().nullable().optional(),
});

export const NovelViewSchema = z.object({
  yaw: z.number(),
  pitch: z.number(),
  image: z.string(),
});

export const EditResponseSchema = z.object({
  edited: z.string(),
  novel_views: z.array(NovelViewSchema),
  depth: z.string(),
  latency_ms: z.number(),
  session_id: z.string(),
  params_version: z.number().int(),
});

export const AdaptJobStatusSchema = z.object({
  job_id: z.string(),
  status: z.enum(["queued", "running", "done", "failed"]),
  progress: z.object({ step: z.number(), total: z.number() }),
  heldout_curve: z.array(z.tuple([z.number(), z.number()])),
  error: z.string().nullable(),
  params_version: z.number().int().nullable(),
});

export type PromptPayload = z.infer<typeof PromptPayloadSchema>;
export type EditRequest = z.infer<typeof EditRequestSchema>;
export type NovelView = z.infer<typeof NovelViewSchema>;
export type EditResponse = z.infer<typeof EditResponseSchema>;
export type AdaptJobStatus = z.infer<typeof AdaptJobStatusSchema>;

export const clampYaw = (v: number) => Math.min(Math.max(v, YAW_RANGE[0]), YAW_RANGE[1]);
export const clampPitch = (v: number) => Math.min(Math.max(v, PITCH_RANGE[0]), PITCH_RANGE[1]);
