import init, {
  sample_checkins, positional_encoding, time2vec_init, time2vec_curves, build_graph,
} from "./pkg/trajgeos_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

function guard(errId, fn) {
  return () => {
    $(errId).textContent = "";
    try {
      fn();
    } catch (e) {
      $(errId).textContent = String(e.message ?? e);
    }
  };
}

function drawHeatmap() {
  const len = Number($("pe-len").value);
  const width = Number($("pe-width").value);
  const pe = positional_encoding(len, width);
  const c = $("pe-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const cw = c.width / width;
  const ch = c.height / len;
  for (let p = 0; p < len; p++) {
    for (let j = 0; j < width; j++) {
      const v = pe[p * width + j];
      const r = v > 0 ? 255 : Math.round(255 * (1 + v));
      const b = v < 0 ? 255 : Math.round(255 * (1 - v));
      const g = Math.round(255 * (1 - Math.abs(v)));
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(j * cw, p * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
}

function drawTime2Vec() {
  const width = Number($("t2v-width").value);
  const seed = BigInt($("t2v-seed").value);
  const period = Number($("t2v-period").value);
  const params = time2vec_init(width, seed);
  const omega = params.slice(0, width);
  const phase = params.slice(width);
  const samples = 240;
  const curves = time2vec_curves(omega, phase, period, samples);
  $("t2v-params").textContent = omega
    .map((w, i) => `component ${i}: ω=${w.toFixed(3)} φ=${phase[i].toFixed(3)}${i === 0 ? " (linear)" : ""}`)
    .join(" · ");

  const c = $("t2v-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  let lo = Infinity, hi = -Infinity;
  for (const v of curves) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  if (hi - lo < 1e-9) { hi += 1; lo -= 1; }
  const x = (i) => (i / (samples - 1)) * (c.width - 20) + 10;
  const y = (v) => c.height - 10 - ((v - lo) / (hi - lo)) * (c.height - 20);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath(); ctx.moveTo(10, y(0)); ctx.lineTo(c.width - 10, y(0)); ctx.stroke();
  for (let k = 0; k < width; k++) {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.lineWidth = k === 0 ? 2 : 1.25;
    ctx.beginPath();
    for (let i = 0; i < samples; i++) {
      const v = curves[i * width + k];
      if (i === 0) ctx.moveTo(x(i), y(v)); else ctx.lineTo(x(i), y(v));
    }
    ctx.stroke();
  }
}

function drawGraph() {
  const g = JSON.parse(build_graph($("graph-input").value));
  $("graph-stats").textContent =
    `${g.checkins} check-ins (${g.skipped} skipped) → ${g.users} users, ${g.nodes.length} locations, ` +
    `${g.records} records, ${g.sub_trajectories} weekly sub-trajectories (${g.train_sub_trajectories} train); ` +
    `${g.edges.length} edges, ${g.transitions} transitions`;

  const c = $("graph-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const lats = g.nodes.map((n) => n.lat), lons = g.nodes.map((n) => n.lon);
  const [la0, la1] = [Math.min(...lats), Math.max(...lats)];
  const [lo0, lo1] = [Math.min(...lons), Math.max(...lons)];
  const pad = 30;
  const px = (n) => pad + ((n.lon - lo0) / (lo1 - lo0 || 1)) * (c.width - 2 * pad);
  const py = (n) => c.height - pad - ((n.lat - la0) / (la1 - la0 || 1)) * (c.height - 2 * pad);
  const maxTrans = Math.max(1, ...g.edges.map((e) => e.trans));
  for (const e of g.edges) {
    if (e.src === e.dst) continue;
    const a = g.nodes[e.src], b = g.nodes[e.dst];
    ctx.strokeStyle = `rgba(31,119,180,${0.15 + 0.85 * e.trans / maxTrans})`;
    ctx.lineWidth = 1 + 3 * e.trans / maxTrans;
    ctx.beginPath(); ctx.moveTo(px(a), py(a)); ctx.lineTo(px(b), py(b)); ctx.stroke();
  }
  ctx.font = "11px sans-serif";
  for (const n of g.nodes) {
    ctx.fillStyle = "#d62728";
    ctx.beginPath(); ctx.arc(px(n), py(n), 3 + Math.sqrt(n.degree), 0, 2 * Math.PI); ctx.fill();
    ctx.fillStyle = "#222";
    ctx.fillText(n.id, px(n) + 6, py(n) - 6);
  }

  const top = [...g.edges].sort((a, b) => b.trans - a.trans).slice(0, 10);
  const peak = (flow) => flow.indexOf(Math.max(...flow));
  $("graph-edges").innerHTML =
    "<tr><th>from</th><th>to</th><th>transitions</th><th>km</th><th>busiest hour</th></tr>" +
    top.map((e) => `<tr><td>${g.nodes[e.src].id}</td><td>${g.nodes[e.dst].id}</td><td>${e.trans}</td>` +
      `<td>${e.distance_km.toFixed(2)}</td><td>${peak(e.flow)}:00</td></tr>`).join("");
}

await init();
$("graph-input").value = sample_checkins();
$("pe-run").onclick = guard("pe-err", drawHeatmap);
$("t2v-run").onclick = guard("t2v-err", drawTime2Vec);
$("graph-run").onclick = guard("graph-err", drawGraph);
guard("pe-err", drawHeatmap)();
guard("t2v-err", drawTime2Vec)();
guard("graph-err", drawGraph)();
