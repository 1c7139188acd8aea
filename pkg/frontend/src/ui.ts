/**
 * Thin DOM layer: reads controls, calls the Studio presenter, paints the
 * state back. No logic of its own beyond file decoding and drawing.
 */
import { AdaptPairFiles, StudioClient } from "./client";
import { Studio, StudioState, canSubmit, poseLabel } from "./state";
import { PITCH_RANGE, YAW_RANGE } from "./types";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string; // data:image/png;base64,....
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

function drawCurve(canvas: HTMLCanvasElement, curve: [number, number][]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || curve.length === 0) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const xs = curve.map((p) => p[0]);
  const ys = curve.map((p) => p[1]);
  const xMax = Math.max(...xs, 1);
  const yMax = Math.max(...ys, 1e-8);
  ctx.strokeStyle = "#4a7";
  ctx.beginPath();
  curve.forEach(([x, y], i) => {
    const px = (x / xMax) * (canvas.width - 8) + 4;
    const py = canvas.height - 4 - (y / yMax) * (canvas.height - 8);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  });
  ctx.stroke();
}

export function mountStudio(root: Document = document): Studio {
  const portraitInput = el<HTMLInputElement>("portrait-file");
  const promptKind = el<HTMLSelectElement>("prompt-kind");
  const promptText = el<HTMLInputElement>("prompt-text");
  const promptFile = el<HTMLInputElement>("prompt-file");
  const submitBtn = el<HTMLButtonElement>("submit");
  const banner = el<HTMLDivElement>("banner");
  const mainView = el<HTMLImageElement>("main-view");
  const poseLab = el<HTMLSpanElement>("pose-label");
  const strip = el<HTMLDivElement>("preview-strip");
  const yawSlider = el<HTMLInputElement>("yaw");
  const pitchSlider = el<HTMLInputElement>("pitch");
  const pairsInput = el<HTMLInputElement>("pair-files");
  const styleName = el<HTMLInputElement>("style-name");
  const adaptBtn = el<HTMLButtonElement>("adapt");
  const jobStatus = el<HTMLDivElement>("job-status");
  const curveCanvas = el<HTMLCanvasElement>("loss-curve");
  const stylePicker = el<HTMLSelectElement>("style-picker");

  yawSlider.min = String(YAW_RANGE[0]);
  yawSlider.max = String(YAW_RANGE[1]);
  pitchSlider.min = String(PITCH_RANGE[0]);
  pitchSlider.max = String(PITCH_RANGE[1]);

  let lastOrbitUrl: string | null = null;

  const paint = (s: StudioState) => {
    submitBtn.disabled = !canSubmit(s);
    adaptBtn.disabled = !studio.canLaunchAdaptation();
    banner.textContent = s.banner ?? "";
    banner.style.display = s.banner ? "block" : "none";

    if (s.orbitView) {
      if (lastOrbitUrl) URL.revokeObjectURL(lastOrbitUrl);
      lastOrbitUrl = URL.createObjectURL(s.orbitView.image);
      mainView.src = lastOrbitUrl;
      poseLab.textContent = poseLabel(s.orbitView.yaw, s.orbitView.pitch);
    } else if (s.edited) {
      mainView.src = `data:image/png;base64,${s.edited}`;
      poseLab.textContent = poseLabel(s.yaw, s.pitch);
    }

    strip.replaceChildren(
      ...s.previews.map((v) => {
        const img = root.createElement("img");
        img.src = `data:image/png;base64,${v.image}`;
        img.title = poseLabel(v.yaw, v.pitch);
        img.className = "preview";
        return img;
      }),
    );

    if (s.job) {
      const p = s.job.progress;
      jobStatus.textContent = `${s.job.status} (${p.step}/${p.total})`;
      drawCurve(curveCanvas, s.job.heldout_curve as [number, number][]);
    }
    stylePicker.replaceChildren(
      ...s.styles.map((name) => {
        const opt = root.createElement("option");
        opt.value = name;
        opt.textContent = name;
        return opt;
      }),
    );
  };

  const studio = new Studio(new StudioClient(), { onChange: paint });

  portraitInput.addEventListener("change", async () => {
    const f = portraitInput.files?.[0];
    studio.setImage(f ? await fileToBase64(f) : null);
  });
  promptKind.addEventListener("change", () => {
    promptText.style.display = promptKind.value === "text" ? "inline" : "none";
    promptFile.style.display = promptKind.value === "image" ? "inline" : "none";
    studio.setPrompt(promptKind.value as "text" | "image", promptText.value);
  });
  promptText.addEventListener("input", () => studio.setPrompt("text", promptText.value));
  promptFile.addEventListener("change", async () => {
    const f = promptFile.files?.[0];
    if (f) studio.setPrompt("image", await fileToBase64(f));
  });
  submitBtn.addEventListener("click", () => void studio.submit());

  const onSlide = () => studio.moveCamera(Number(yawSlider.value), Number(pitchSlider.value));
  yawSlider.addEventListener("input", onSlide);
  pitchSlider.addEventListener("input", onSlide);

  let dragging = false;
  mainView.addEventListener("pointerdown", () => (dragging = true));
  root.addEventListener("pointerup", () => (dragging = false));
  root.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const e = ev as PointerEvent;
    yawSlider.value = String(Number(yawSlider.value) + e.movementX * 0.5);
    pitchSlider.value = String(Number(pitchSlider.value) - e.movementY * 0.5);
    onSlide();
  });

  adaptBtn.addEventListener("click", async () => {
    const files = Array.from(pairsInput.files ?? []);
    if (files.length < 2 || files.length % 2 !== 0) {
      studio.state.banner = "select an even number of files: input/target alternating";
      paint(studio.state);
      return;
    }
    const pairs: AdaptPairFiles[] = [];
    for (let i = 0; i < files.length; i += 2) {
      pairs.push({ input: files[i]!, target: files[i + 1]! });
    }
    await studio.adapt(pairs, styleName.value || "adapted style");
  });

  paint(studio.state);
  return studio;
}
