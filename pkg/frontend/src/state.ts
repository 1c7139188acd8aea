/**
 * Studio presenter: all UI state and the transitions behind the three
 * buttons (submit, orbit, adapt). DOM-free so the whole workflow can be
 * exercised headless against a mocked server; ui.ts only paints this.
 */
import { runAdaptation } from "./adapt";
import { AdaptPairFiles, ApiError, StudioClient } from "./client";
import { OrbitController } from "./orbit";
import { AdaptJobStatus, NovelView, PromptPayload, clampPitch, clampYaw } from "./types";

export interface OrbitView {
  image: Blob;
  yaw: number;
  pitch: number;
}

export interface StudioState {
  image: string | null; // uploaded portrait as base64 PNG
  promptKind: "text" | "image";
  promptText: string;
  promptImage: string | null; // exemplar as base64 PNG
  yaw: number;
  pitch: number;
  sessionId: string | null;
  paramsVersion: number | null;
  edited: string | null; // base64 PNG straight from /edit
  previews: NovelView[];
  orbitView: OrbitView | null;
  banner: string | null;
  styles: string[];
  job: AdaptJobStatus | null;
  adaptBusy: boolean;
  submitting: boolean;
}

export function initialState(): StudioState {
  return {
    image: null,
    promptKind: "text",
    promptText: "",
    promptImage: null,
    yaw: 0,
    pitch: 0,
    sessionId: null,
    paramsVersion: null,
    edited: null,
    previews: [],
    orbitView: null,
    banner: null,
    styles: [],
    job: null,
    adaptBusy: false,
    submitting: false,
  };
}

export function canSubmit(s: StudioState): boolean {
  if (s.image === null || s.submitting) return false;
  return s.promptKind === "text" ? s.promptText.trim().length > 0 : s.promptImage !== null;
}

export function poseLabel(yaw: number, pitch: number): string {
  return `yaw ${yaw.toFixed(0)}°, pitch ${pitch.toFixed(0)}°`;
}

export interface StudioOptions {
  debounceMs?: number;
  pollMs?: number;
  onChange?: (state: StudioState) => void;
}

export class Studio {
  state = initialState();
  readonly orbit: OrbitController;
  private pollMs: number;
  private onChange: (state: StudioState) => void;

  constructor(
    private client: StudioClient,
    opts: StudioOptions = {},
  ) {
    this.pollMs = opts.pollMs ?? 1000;
    this.onChange = opts.onChange ?? (() => {});
    this.orbit = new OrbitController(
      (yaw, pitch) => this.client.render(this.state.sessionId!, yaw, pitch),
      (image, yaw, pitch) => {
        this.state.orbitView = { image, yaw, pitch };
        this.emit();
      },
      opts.debounceMs ?? 120,
      (err) => this.showError(err),
    );
  }

  private emit(): void {
    this.onChange(this.state);
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.state.banner = `${err.code}: ${err.message}`;
    } else {
      this.state.banner = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }

  clearBanner(): void {
    this.state.banner = null;
    this.emit();
  }

  setImage(b64png: string | null): void {
    this.state.image = b64png;
    this.emit();
  }

  setPrompt(kind: "text" | "image", value: string): void {
    this.state.promptKind = kind;
    if (kind === "text") this.state.promptText = value;
    else this.state.promptImage = value;
    this.emit();
  }

  private buildPrompt(): PromptPayload {
    return this.state.promptKind === "text"
      ? { type: "text", text: this.state.promptText }
      : { type: "image", image: this.state.promptImage ?? "" };
  }

  async submit(): Promise<void> {
    if (!canSubmit(this.state)) return;
    this.state.submitting = true;
    this.state.banner = null;
    this.emit();
    try {
      const resp = await this.client.edit({
        image: this.state.image!,
        prompt: this.buildPrompt(),
        yaw: this.state.yaw,
        pitch: this.state.pitch,
      });
      this.state.sessionId = resp.session_id;
      this.state.paramsVersion = resp.params_version;
      this.state.edited = resp.edited;
      this.state.previews = resp.novel_views;
      this.state.orbitView = null;
    } catch (err) {
      this.showError(err);
    } finally {
      this.state.submitting = false;
      this.emit();
    }
  }

  /** Slider/drag handler; clamped to the ranges the server accepts. */
  moveCamera(yaw: number, pitch: number): void {
    this.state.yaw = clampYaw(yaw);
    this.state.pitch = clampPitch(pitch);
    this.emit();
    if (this.state.sessionId !== null) {
      this.orbit.request(this.state.yaw, this.state.pitch);
    }
  }

  canLaunchAdaptation(): boolean {
    return !this.state.adaptBusy;
  }

  async adapt(pairs: AdaptPairFiles[], styleName: string): Promise<void> {
    if (!this.canLaunchAdaptation()) return;
    this.state.adaptBusy = true;
    this.state.banner = null;
    this.emit();
    try {
      const job = await runAdaptation(
        this.client,
        pairs,
        styleName,
        (j) => {
          this.state.job = j;
          this.emit();
        },
        this.pollMs,
      );
      if (job.status === "done") {
        this.state.styles = [...this.state.styles, styleName];
        if (job.params_version !== null) this.state.paramsVersion = job.params_version;
      } else {
        this.state.banner = `adaptation job ${job.job_id} failed: ${job.error ?? "unknown"}`;
      }
    } catch (err) {
      this.showError(err);
    } finally {
      this.state.adaptBusy = false;
      this.emit();
    }
  }
}
