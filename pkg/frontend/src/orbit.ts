/**
 * Camera orbiting against the server renderer. Slider moves are noisy, so
 * requests are debounced, at most one render is in flight, and whatever
 * pose arrived last while waiting is the one that gets rendered next
 * (intermediate poses are dropped, never queued).
 */

export type RenderFn = (yaw: number, pitch: number) => Promise<Blob>;
export type ViewSink = (image: Blob, yaw: number, pitch: number) => void;

export class OrbitController {
  private pending: { yaw: number; pitch: number } | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inflight = false;
  calls = 0; // render requests actually sent; tests assert the bound

  constructor(
    private render: RenderFn,
    private onView: ViewSink,
    private debounceMs = 120,
    private onError: (err: unknown) => void = () => {},
  ) {}

  /** Called on every slider tick or drag event. */
  request(yaw: number, pitch: number): void {
    this.pending = { yaw, pitch };
    if (this.timer === null) {
      this.timer = setTimeout(() => {
        this.timer = null;
        void this.flush();
      }, this.debounceMs);
    }
  }

  get busy(): boolean {
    return this.inflight;
  }

  private async flush(): Promise<void> {
    if (this.inflight || this.pending === null) return;
    const { yaw, pitch } = this.pending;
    this.pending = null;
    this.inflight = true;
    this.calls += 1;
    try {
      const image = await this.render(yaw, pitch);
      this.onView(image, yaw, pitch);
    } catch (err) {
      this.onError(err);
    } finally {
      this.inflight = false;
      if (this.pending !== null) void this.flush();
    }
  }
}
