import init, { Demo } from "./pkg/projflow_demo.js";

const $ = (id) => document.getElementById(id);

await init();
const demo = new Demo(0);
const J = demo.joints();
const N = demo.frames();
const edges = Array.from(demo.edges());
const reference = demo.reference();
$("status").textContent = "";

const pose = (flat, n) => flat.subarray ? flat.subarray(n * J * 3, (n + 1) * J * 3) : flat.slice(n * J * 3, (n + 1) * J * 3);

// view transform: world (u, v) to canvas pixels, fitted to a bounding box
function fitter(canvas, us, vs, pad = 0.15) {
  const [u0, u1] = [Math.min(...us), Math.max(...us)];
  const [v0, v1] = [Math.min(...vs), Math.max(...vs)];
  const span = Math.max(u1 - u0, v1 - v0) * (1 + 2 * pad) || 1;
  const cu = (u0 + u1) / 2, cv = (v0 + v1) / 2;
  const s = Math.min(canvas.width, canvas.height) / span;
  return {
    to: (u, v) => [canvas.width / 2 + (u - cu) * s, canvas.height / 2 - (v - cv) * s],
    from: (x, y) => [cu + (x - canvas.width / 2) / s, cv - (y - canvas.height / 2) / s],
  };
}

function drawSkeleton(ctx, p, view, color, a = 0, b = 1, width = 2) {
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = width;
  for (let e = 0; e < edges.length; e += 2) {
    const [x0, y0] = view.to(p[edges[e] * 3 + a], p[edges[e] * 3 + b]);
    const [x1, y1] = view.to(p[edges[e + 1] * 3 + a], p[edges[e + 1] * 3 + b]);
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
  }
  for (let j = 0; j < J; j++) {
    const [x, y] = view.to(p[j * 3 + a], p[j * 3 + b]);
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}

// ---- drag a joint -------------------------------------------------------

const dragCanvas = $("drag");
const dctx = dragCanvas.getContext("2d");
let dragState = { joint: -1, kin: null, euc: null };

function dragView() {
  const p = pose(reference, +$("frame").value);
  const us = [], vs = [];
  for (let j = 0; j < J; j++) { us.push(p[j * 3]); vs.push(p[j * 3 + 1]); }
  return fitter(dragCanvas, us, vs, 0.45);
}

function drawDrag() {
  const n = +$("frame").value;
  const view = dragView();
  dctx.clearRect(0, 0, dragCanvas.width, dragCanvas.height);
  drawSkeleton(dctx, pose(reference, n), view, "#bbb");
  if (dragState.euc) drawSkeleton(dctx, dragState.euc, view, "#e07b00");
  if (dragState.kin) drawSkeleton(dctx, dragState.kin, view, "#1f6fd1");
}

function pick(ev, points, view, a, b) {
  const r = ev.target.getBoundingClientRect();
  const x = ev.clientX - r.left, y = ev.clientY - r.top;
  let best = -1, bestD = 100;
  for (let j = 0; j < J; j++) {
    const [px, py] = view.to(points[j * 3 + a], points[j * 3 + b]);
    const d = Math.hypot(px - x, py - y);
    if (d < bestD) { best = j; bestD = d; }
  }
  return best;
}

dragCanvas.addEventListener("mousedown", (ev) => {
  const p = dragState.kin ?? pose(reference, +$("frame").value);
  dragState.joint = pick(ev, p, dragView(), 0, 1);
});
window.addEventListener("mouseup", () => { dragState.joint = -1; });
dragCanvas.addEventListener("mousemove", (ev) => {
  if (dragState.joint < 0) return;
  const n = +$("frame").value;
  const r = dragCanvas.getBoundingClientRect();
  const [x, y] = dragView().from(ev.clientX - r.left, ev.clientY - r.top);
  const z = pose(reference, n)[dragState.joint * 3 + 2];
  try {
    const out = demo.drag(n, dragState.joint, x, y, z, +$("wkin").value);
    dragState.kin = out.slice(0, J * 3);
    dragState.euc = out.slice(J * 3);
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
  }
  drawDrag();
});
$("frame").addEventListener("input", () => {
  $("frameval").textContent = $("frame").value;
  dragState = { joint: -1, kin: null, euc: null };
  drawDrag();
});
$("wkin").addEventListener("input", () => { $("wkinval").textContent = $("wkin").value; });

// ---- inpainting schedule -----------------------------------------------

function plotSchedule() {
  const keys = $("keys").value.split(/[ ,]+/).filter((s) => s !== "").map(Number);
  const S = 101;
  let c;
  try {
    c = demo.schedule(Uint32Array.from(keys), S);
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
    return;
  }
  $("status").textContent = "";
  const row = (k) => Array.from(c.slice(k * S, (k + 1) * S));
  const t = row(0);
  const total = 3 * J * N;
  const series = [
    ["radius / 10", row(1).map((v) => v / 10), "#1f6fd1"],
    ["tau", row(2), "#2a9d3a"],
    ["active share", row(3).map((v) => v / total), "#e07b00"],
    ["mean pi", row(4), "#9b3fb5"],
  ];
  const cv = $("sched"), ctx = cv.getContext("2d");
  const L = 40, B = 30, W = cv.width - L - 140, H = cv.height - B - 10;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(L, 10, W, H);
  ctx.fillStyle = "#555";
  ctx.fillText("t = 0", L, 10 + H + 18);
  ctx.fillText("t = 1", L + W - 24, 10 + H + 18);
  ctx.fillText("1", L - 14, 16);
  ctx.fillText("0", L - 14, 10 + H);
  series.forEach(([name, ys, color], i) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    t.forEach((tv, k) => {
      const x = L + tv * W, y = 10 + H - Math.min(1, ys[k]) * H;
      k ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(name, L + W + 12, 24 + 18 * i);
  });
}
$("plot").addEventListener("click", plotSchedule);

// ---- trajectory-controlled sampling ------------------------------------

const top = $("top"), tctx = top.getContext("2d");
const side = $("side"), sctx = side.getContext("2d");
let waypoints = [];
let motion = null;
let frame = 0;

const refPelvis = [];
for (let n = 0; n < N; n++) refPelvis.push([reference[n * J * 3], reference[n * J * 3 + 2]]);
const topView = fitter(top, refPelvis.map((p) => p[0]).concat([-2, 2]), refPelvis.map((p) => p[1]).concat([-2, 2]), 0.05);

function drawTop() {
  tctx.clearRect(0, 0, top.width, top.height);
  if (motion) {
    tctx.strokeStyle = "#1f6fd1";
    tctx.lineWidth = 2;
    tctx.beginPath();
    for (let n = 0; n < N; n++) {
      const [x, y] = topView.to(motion[n * J * 3], motion[n * J * 3 + 2]);
      n ? tctx.lineTo(x, y) : tctx.moveTo(x, y);
    }
    tctx.stroke();
  }
  tctx.fillStyle = "#d22";
  waypoints.forEach(([u, v], i) => {
    const [x, y] = topView.to(u, v);
    tctx.beginPath();
    tctx.arc(x, y, 5, 0, 2 * Math.PI);
    tctx.fill();
    tctx.fillText(String(i + 1), x + 7, y - 7);
  });
}

top.addEventListener("click", (ev) => {
  if (waypoints.length >= 8) return;
  const r = top.getBoundingClientRect();
  waypoints.push(topView.from(ev.clientX - r.left, ev.clientY - r.top));
  drawTop();
});
$("clear").addEventListener("click", () => { waypoints = []; motion = null; $("resid").textContent = ""; drawTop(); });
$("sample").addEventListener("click", () => {
  if (waypoints.length < 2) {
    $("status").textContent = "place at least two waypoints";
    return;
  }
  try {
    const out = demo.sample_trajectory(Float64Array.from(waypoints.flat()), +$("seed").value, 60);
    motion = out.slice(0, N * J * 3);
    $("resid").textContent = `max hard residual ${out[out.length - 1].toExponential(2)}`;
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
  }
  drawTop();
});

function animate() {
  sctx.clearRect(0, 0, side.width, side.height);
  if (motion) {
    const p = pose(motion, frame);
    const us = [], vs = [];
    for (let j = 0; j < J; j++) { us.push(p[j * 3]); vs.push(p[j * 3 + 1]); }
    drawSkeleton(sctx, p, fitter(side, us, vs, 0.4), "#1f6fd1");
    sctx.fillStyle = "#555";
    sctx.fillText(`frame ${frame + 1} / ${N} (side view)`, 8, 16);
    frame = (frame + 1) % N;
  }
  setTimeout(() => requestAnimationFrame(animate), 50);
}

drawDrag();
plotSchedule();
drawTop();
animate();
