import init, { dataset, vote, search } from "../pkg/sdnas_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function status(msg, err = false) {
  $("status").textContent = msg;
  $("status").className = err ? "err" : "";
}

function call(f, req) {
  try {
    return JSON.parse(f(JSON.stringify(req)));
  } catch (e) {
    status(String(e), true);
    return null;
  }
}

function bounds(points) {
  const xs = points.map((p) => p[0]), ys = points.map((p) => p[1]);
  return { x0: Math.min(...xs), x1: Math.max(...xs), y0: Math.min(...ys), y1: Math.max(...ys) };
}

function scatter(ctx, data, b) {
  const { width: w, height: h } = ctx.canvas;
  data.points.forEach((p, i) => {
    ctx.fillStyle = COLORS[data.labels[i] % COLORS.length];
    const x = ((p[0] - b.x0) / (b.x1 - b.x0)) * (w - 10) + 5;
    const y = h - (((p[1] - b.y0) / (b.y1 - b.y0)) * (h - 10) + 5);
    ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
  });
}

function datasetRequest() {
  return { kind: $("ds-kind").value, n: num("ds-n"), noise: num("ds-noise"), classes: num("ds-classes"), seed: num("ds-seed") };
}

function drawDataset() {
  const data = call(dataset, datasetRequest());
  if (!data) return;
  const ctx = $("ds-canvas").getContext("2d");
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  scatter(ctx, data, bounds(data.points));
  status(`${data.points.length} points, ${data.classes} classes`);
}

// teacher vote explorer: three classes, one slider per class per epoch
let teachers = [[0.7, 0.2, 0.1], [0.5, 0.3, 0.2]];
const student = [0.6, 0.3, 0.1];

function sliders() {
  const box = $("vote-rows");
  box.innerHTML = "";
  const rows = [...teachers.map((t, i) => [`epoch t-${teachers.length - i}`, t]), ["student", student]];
  for (const [name, probs] of rows) {
    const div = document.createElement("div");
    div.append(`${name}: `);
    probs.forEach((v, k) => {
      const s = document.createElement("input");
      Object.assign(s, { type: "range", min: 0, max: 1, step: 0.01, value: v });
      s.oninput = () => { probs[k] = Number(s.value); drawVote(); };
      div.append(s);
    });
    box.append(div);
  }
  drawVote();
}

function drawVote() {
  const out = call(vote, { teachers, student });
  if (!out) return;
  const ctx = $("vote-canvas").getContext("2d");
  const { width: w, height: h } = ctx.canvas;
  ctx.clearRect(0, 0, w, h);
  const bw = w / (out.vote.length * 3);
  out.vote.forEach((v, k) => {
    ctx.fillStyle = COLORS[k];
    ctx.fillRect(k * 3 * bw + 4, h - v * (h - 10), bw, v * (h - 10));
    ctx.globalAlpha = 0.4;
    ctx.fillRect(k * 3 * bw + 4 + bw, h - out.student[k] * (h - 10), bw, out.student[k] * (h - 10));
    ctx.globalAlpha = 1;
  });
  $("vote-out").textContent =
    "vote    " + out.vote.map((v) => v.toFixed(3)).join("  ") + "\n" +
    out.metrics.map(([m, v]) => `${m.padEnd(7)} ${v.toFixed(5)}`).join("\n");
}

function drawSearch(res) {
  const g = res.grid;
  const ctx = $("s-regions").getContext("2d");
  const { width: w, height: h } = ctx.canvas;
  const cw = w / g.size, ch = h / g.size;
  ctx.globalAlpha = 0.25;
  g.classes.forEach((c, i) => {
    ctx.fillStyle = COLORS[c % COLORS.length];
    ctx.fillRect((i % g.size) * cw, Math.floor(i / g.size) * ch, cw + 1, ch + 1);
  });
  ctx.globalAlpha = 1;
  scatter(ctx, res.data, { x0: g.lo[0], x1: g.hi[0], y0: g.lo[1], y1: g.hi[1] });

  const c2 = $("s-curves").getContext("2d");
  c2.clearRect(0, 0, w, h);
  const series = [
    ["train", res.logs.map((l) => l.train_loss), "#1f77b4"],
    ["valid", res.logs.map((l) => l.valid_loss), "#d62728"],
    ["lambda_max", res.lambda_max.map((p) => p[1]), "#2ca02c"],
  ];
  const top = Math.max(...series.flatMap((s) => s[1]));
  series.forEach(([name, ys, color], j) => {
    c2.strokeStyle = color;
    c2.beginPath();
    ys.forEach((y, i) => {
      const px = (i / Math.max(1, ys.length - 1)) * (w - 20) + 10;
      const py = h - 10 - (y / top) * (h - 30);
      i ? c2.lineTo(px, py) : c2.moveTo(px, py);
    });
    c2.stroke();
    c2.fillStyle = color;
    c2.fillText(name, 10 + j * 80, 12);
  });

  const edges = res.edges
    .map((e) => `${e.src}->${e.dst}: ` + e.weights.map(([op, v]) => `${op} ${v.toFixed(2)}`).join(", "))
    .join("\n");
  $("s-out").textContent = res.genotype + "\n" + edges;
}

function runSearch() {
  status("searching...");
  setTimeout(() => {
    const req = {
      dataset: { ...datasetRequest(), n: Math.min(num("ds-n"), 600) },
      epochs: num("s-epochs"),
      warmup_epochs: num("s-warmup"),
      window: num("s-window"),
      lambda: num("s-lambda"),
      seed: num("s-seed"),
    };
    const t0 = performance.now();
    const res = call(search, req);
    if (res) {
      drawSearch(res);
      status(`search finished in ${((performance.now() - t0) / 1000).toFixed(1)} s`);
    }
  }, 10);
}

await init();
$("ds-go").onclick = drawDataset;
$("vote-add").onclick = () => { teachers.unshift([1 / 3, 1 / 3, 1 / 3]); sliders(); };
$("vote-drop").onclick = () => { if (teachers.length > 1) teachers.shift(); sliders(); };
$("s-go").onclick = runSearch;
drawDataset();
sliders();
