import init, { sampleDataset, sampleSource, kmeans, couple } from "./pkg/cotfm_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("view");
const ctx = canvas.getContext("2d");
const PALETTE = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];

const state = { source: null, target: null, clusters: null, coupling: null };

function status(msg) {
  $("status").textContent = msg;
}

function int(id) {
  return parseInt($(id).value, 10) || 0;
}

// world [-5, 5]^2 onto the canvas
function px(x, y) {
  const s = canvas.width / 10;
  return [(x + 5) * s, canvas.height - (y + 5) * s];
}

function dots(flat, color, r) {
  ctx.fillStyle = color;
  for (let i = 0; i < flat.length; i += 2) {
    const [u, v] = px(flat[i], flat[i + 1]);
    ctx.fillRect(u - r, v - r, 2 * r, 2 * r);
  }
}

function draw() {
  ctx.fillStyle = "white";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!state.target) return;
  const { source, target, clusters, coupling } = state;
  const t = parseFloat($("t").value);

  if (clusters) {
    const labels = clusters.labels;
    for (let i = 0; i < labels.length; i++) {
      dots(target.subarray(2 * i, 2 * i + 2), PALETTE[labels[i] % PALETTE.length] + "66", 1.5);
    }
  } else {
    dots(target, "#9e9e9e", 1.5);
  }

  if (coupling) {
    const to = coupling.target_of;
    ctx.strokeStyle = "rgba(142, 68, 173, 0.15)";
    ctx.beginPath();
    for (let i = 0; i < to.length; i++) {
      const j = to[i];
      ctx.moveTo(...px(source[2 * i], source[2 * i + 1]));
      ctx.lineTo(...px(target[2 * j], target[2 * j + 1]));
    }
    ctx.stroke();
    const moving = new Float64Array(source.length);
    for (let i = 0; i < to.length; i++) {
      const j = to[i];
      moving[2 * i] = (1 - t) * source[2 * i] + t * target[2 * j];
      moving[2 * i + 1] = (1 - t) * source[2 * i + 1] + t * target[2 * j + 1];
    }
    dots(source, "#1f77b4", 1.2);
    dots(moving, "#ff7f0e", 1.8);
  } else {
    dots(source, "#1f77b4", 1.2);
  }

  if (clusters) {
    const c = clusters.centroids;
    ctx.strokeStyle = "#d62728";
    ctx.lineWidth = 2.5;
    for (let i = 0; i < c.length; i += 2) {
      const [u, v] = px(c[i], c[i + 1]);
      ctx.beginPath();
      ctx.moveTo(u - 6, v - 6); ctx.lineTo(u + 6, v + 6);
      ctx.moveTo(u - 6, v + 6); ctx.lineTo(u + 6, v - 6);
      ctx.stroke();
    }
    ctx.lineWidth = 1;
  }
}

function guarded(f) {
  return () => {
    try {
      f();
    } catch (e) {
      status("error: " + (e.message || e));
    }
    draw();
  };
}

$("sample").onclick = guarded(() => {
  const n = int("n"), seed = int("seed");
  state.target = sampleDataset($("dataset").value, n, seed);
  state.source = sampleSource(n, 1.0, seed + 1);
  state.clusters = null;
  state.coupling = null;
  status(`${n} target points, ${n} source draws`);
});

$("cluster").onclick = guarded(() => {
  if (!state.target) $("sample").onclick();
  state.clusters = kmeans(state.target, int("k"), int("seed"));
  status(`k-means: k=${int("k")}, inertia ${state.clusters.inertia.toFixed(3)}`);
});

$("couple").onclick = guarded(() => {
  if (!state.target) $("sample").onclick();
  const strategy = $("strategy").value;
  const start = performance.now();
  state.coupling = couple(state.source, state.target, strategy, int("batch"), int("k"), int("seed"));
  const ms = performance.now() - start;
  status(`${strategy}: mean squared pairing distance ${state.coupling.cost.toFixed(4)} (${ms.toFixed(0)} ms)`);
});

$("t").oninput = draw;

init().then(() => {
  $("sample").onclick();
});
