import init, { combiner_ids, combine, descend, train } from "./pkg/gradbalance_web.js";

const COLORS = ["#1f77b4", "#ff7f0e"];

function fillSelect(id, ids, initial) {
  const sel = document.getElementById(id);
  for (const m of ids) {
    const opt = document.createElement("option");
    opt.value = m;
    opt.textContent = m;
    sel.appendChild(opt);
  }
  sel.value = initial;
  return sel;
}

function arrow(ctx, x0, y0, x1, y1, color, width = 2) {
  const a = Math.atan2(y1 - y0, x1 - x0);
  ctx.strokeStyle = ctx.fillStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.stroke();
  ctx.beginPath();
  ctx.moveTo(x1, y1);
  ctx.lineTo(x1 - 10 * Math.cos(a - 0.4), y1 - 10 * Math.sin(a - 0.4));
  ctx.lineTo(x1 - 10 * Math.cos(a + 0.4), y1 - 10 * Math.sin(a + 0.4));
  ctx.fill();
}

// panel 1: pair of gradients
function setupPair(ids) {
  const canvas = document.getElementById("pair");
  const ctx = canvas.getContext("2d");
  const sel = fillSelect("pair-method", ids, "pcgrad");
  const out = document.getElementById("pair-out");
  const unit = 60;
  const c = canvas.width / 2;
  const g = [[2, 0.5], [-1, 1.5]];
  let drag = -1;

  const toScreen = (v) => [c + v[0] * unit, c - v[1] * unit];
  const fromScreen = (x, y) => [(x - c) / unit, (c - y) / unit];

  function draw() {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#eee";
    for (let i = -3; i <= 3; i++) {
      ctx.beginPath(); ctx.moveTo(c + i * unit, 0); ctx.lineTo(c + i * unit, canvas.height); ctx.stroke();
      ctx.beginPath(); ctx.moveTo(0, c + i * unit); ctx.lineTo(canvas.width, c + i * unit); ctx.stroke();
    }
    g.forEach((v, i) => arrow(ctx, c, c, ...toScreen(v), COLORS[i]));
    try {
      const [dx, dy, w1, w2] = combine(sel.value, g[0][0], g[0][1], g[1][0], g[1][1], 0);
      arrow(ctx, c, c, ...toScreen([dx, dy]), "#000", 3);
      const dots = g.map((v) => (v[0] * dx + v[1] * dy).toFixed(3));
      out.textContent =
        `d       = (${dx.toFixed(3)}, ${dy.toFixed(3)})\n` +
        `weights = ${Number.isNaN(w1) ? "(direction only)" : `(${w1.toFixed(3)}, ${w2.toFixed(3)})`}\n` +
        `g1.d    = ${dots[0]}\ng2.d    = ${dots[1]}\n` +
        `g1.g2   = ${(g[0][0] * g[1][0] + g[0][1] * g[1][1]).toFixed(3)}`;
    } catch (e) {
      out.textContent = String(e);
    }
  }

  canvas.addEventListener("mousedown", (ev) => {
    const p = fromScreen(ev.offsetX, ev.offsetY);
    const dist = g.map((v) => Math.hypot(v[0] - p[0], v[1] - p[1]));
    drag = dist[0] < dist[1] ? 0 : 1;
    g[drag] = p;
    draw();
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (drag < 0) return;
    g[drag] = fromScreen(ev.offsetX, ev.offsetY);
    draw();
  });
  window.addEventListener("mouseup", () => { drag = -1; });
  sel.addEventListener("change", draw);
  draw();
}

// panel 2: landscape descent
function setupLandscape(ids) {
  const canvas = document.getElementById("land");
  const ctx = canvas.getContext("2d");
  const sel = fillSelect("land-method", ids, "mgda");
  const betaIn = document.getElementById("land-beta");
  const lrIn = document.getElementById("land-lr");
  const out = document.getElementById("land-out");
  const span = 3;
  const toScreen = (x, y) => [((x + span) / (2 * span)) * canvas.width, ((span - y) / (2 * span)) * canvas.height];
  const fromScreen = (px, py) => [(px / canvas.width) * 2 * span - span, span - (py / canvas.height) * 2 * span];
  let start = [2.2, -2.0];

  function background(beta) {
    const img = ctx.createImageData(canvas.width, canvas.height);
    for (let py = 0; py < canvas.height; py++) {
      for (let px = 0; px < canvas.width; px++) {
        const [x, y] = fromScreen(px, py);
        const f1 = (x - 1) ** 2 + 0.25 * (y - 1) ** 2;
        const f2 = beta * ((x + 1) ** 2 + 0.25 * (y + 1) ** 2);
        const band = Math.floor(Math.log1p(f1 + f2) * 6) % 2;
        const k = 4 * (py * canvas.width + px);
        img.data[k] = img.data[k + 1] = img.data[k + 2] = band ? 236 : 248;
        img.data[k + 3] = 255;
      }
    }
    ctx.putImageData(img, 0, 0);
    ctx.setLineDash([5, 4]);
    ctx.strokeStyle = "#888";
    ctx.beginPath(); ctx.moveTo(...toScreen(-1, -1)); ctx.lineTo(...toScreen(1, 1)); ctx.stroke();
    ctx.setLineDash([]);
  }

  function draw() {
    const beta = Number(betaIn.value);
    background(beta);
    try {
      const path = descend(sel.value, beta, start[0], start[1], Number(lrIn.value), 2000);
      ctx.strokeStyle = "#c0392b";
      ctx.lineWidth = 2;
      ctx.beginPath();
      for (let i = 0; i < path.length; i += 2) {
        const [px, py] = toScreen(path[i], path[i + 1]);
        if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
      }
      ctx.stroke();
      const n = path.length / 2;
      out.textContent = `${n - 1} steps, end (${path[path.length - 2].toFixed(4)}, ${path[path.length - 1].toFixed(4)})`;
    } catch (e) {
      out.textContent = String(e);
    }
  }

  canvas.addEventListener("click", (ev) => { start = fromScreen(ev.offsetX, ev.offsetY); draw(); });
  for (const el of [sel, betaIn, lrIn]) el.addEventListener("change", draw);
  draw();
}

// panel 3: training curves
function plot(canvas, xs, series, transform) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const ys = series.map((s) => Array.from(s, transform));
  const flat = ys.flat().filter(Number.isFinite);
  if (flat.length === 0) return;
  let lo = Math.min(...flat), hi = Math.max(...flat);
  if (hi - lo < 1e-9) { lo -= 0.5; hi += 0.5; }
  const x0 = xs[0], x1 = xs[xs.length - 1] || 1;
  const pad = 28;
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - pad - 6);
  const sy = (y) => canvas.height - pad - ((y - lo) / (hi - lo)) * (canvas.height - pad - 6);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(hi.toFixed(2), 2, 12);
  ctx.fillText(lo.toFixed(2), 2, canvas.height - pad);
  ctx.fillText(String(x1), canvas.width - 36, canvas.height - 8);
  ys.forEach((s, t) => {
    ctx.strokeStyle = COLORS[t];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.forEach((y, i) => { if (i === 0) ctx.moveTo(sx(xs[i]), sy(y)); else ctx.lineTo(sx(xs[i]), sy(y)); });
    ctx.stroke();
  });
}

function setupTraining(ids) {
  const sel = fillSelect("train-method", ids, "avgnorm");
  const out = document.getElementById("train-out");
  document.getElementById("train-go").addEventListener("click", () => {
    out.textContent = "training...";
    setTimeout(() => {
      try {
        const t0 = performance.now();
        const curves = train(sel.value, Number(document.getElementById("train-scale").value),
          Number(document.getElementById("train-steps").value), 0);
        const xs = Array.from(curves.steps());
        const norms = [0, 1].map((t) => curves.grad_norms(t));
        const cos = [0, 1].map((t) => curves.cos_to_agg(t));
        plot(document.getElementById("train-norm"), xs, norms, (v) => Math.log10(Math.max(v, 1e-12)));
        plot(document.getElementById("train-cos"), xs, cos, (v) => v);
        curves.free();
        out.textContent = `done in ${(performance.now() - t0).toFixed(0)} ms`;
      } catch (e) {
        out.textContent = String(e);
      }
    }, 10);
  });
}

await init();
const ids = combiner_ids();
setupPair(ids);
setupLandscape(ids);
setupTraining(ids);
