import init, { pvSurface, angleSweep, solveCase, exampleNames, exampleCase } from "./pkg/hostcap_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const fmt = (x, d = 6) => (x === null || x === undefined ? "" : Number(x).toFixed(d));

function fail(out, e) {
  out.className = "out err";
  out.textContent = String(e.message ?? e);
}

function ok(out, text) {
  out.className = "out";
  out.textContent = text;
}

function runSolve() {
  const out = $("solve-out");
  try {
    const r = JSON.parse(solveCase($("case").value, num("vmin"), num("vmax"), num("theta"), num("eta")));
    const stages = r.stages.map(([s, hc]) => `  ${s.padEnd(12)} ${fmt(hc)}`).join("\n");
    const head = `hc_total ${fmt(r.hc_total)} (final stage ${r.final_stage})\nstages\n${stages}\nbinding: ${r.binding.join(", ") || "none"}\n\n`;
    const rows = r.buses.map((b) => [b.id, fmt(b.v), fmt(b.theta), fmt(b.p), fmt(b.q)].map((c) => String(c).padStart(11)).join(""));
    ok(out, head + ["id", "v", "theta", "p", "q"].map((c) => c.padStart(11)).join("") + "\n" + rows.join("\n"));
  } catch (e) {
    fail(out, e);
  }
}

function colour(t) {
  const r = Math.round(255 * Math.min(1, 2 * t));
  const b = Math.round(255 * Math.min(1, 2 * (1 - t)));
  return `rgb(${r},${Math.round(90 + 100 * (1 - Math.abs(2 * t - 1)))},${b})`;
}

function runSurface() {
  const out = $("surface-out");
  const cv = $("surface-canvas");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  try {
    const s = JSON.parse(pvSurface($("case").value, num("vmin"), num("vmax"), num("steps")));
    const n1 = s.v1.length, n2 = s.v2.length;
    const vals = s.p_sum.filter((x) => x !== null);
    const lo = Math.min(...vals), hi = Math.max(...vals);
    const pad = 40, w = (cv.width - pad) / n1, h = (cv.height - pad) / n2;
    for (let i = 0; i < n1; i++) {
      for (let j = 0; j < n2; j++) {
        const p = s.p_sum[i * n2 + j];
        g.fillStyle = p === null ? "#bbb" : colour(hi > lo ? (p - lo) / (hi - lo) : 1);
        g.fillRect(pad + i * w, cv.height - pad - (j + 1) * h, Math.ceil(w), Math.ceil(h));
      }
    }
    g.fillStyle = "#222";
    g.font = "11px sans-serif";
    g.fillText(`V${s.buses[0]} ${fmt(s.v1[0], 3)} .. ${fmt(s.v1[n1 - 1], 3)}`, pad, cv.height - 12);
    g.save();
    g.translate(14, cv.height - pad);
    g.rotate(-Math.PI / 2);
    g.fillText(`V${s.buses[1]} ${fmt(s.v2[0], 3)} .. ${fmt(s.v2[n2 - 1], 3)}`, 0, 0);
    g.restore();
    let text = `weighted generation from ${fmt(lo)} to ${fmt(hi)}\n`;
    if (s.best) {
      const i = s.v1.indexOf(s.best.v1), j = s.v2.indexOf(s.best.v2);
      g.strokeStyle = "#000";
      g.lineWidth = 2;
      g.beginPath();
      g.arc(pad + (i + 0.5) * w, cv.height - pad - (j + 0.5) * h, Math.max(5, w), 0, 2 * Math.PI);
      g.stroke();
      text += `best V${s.buses[0]}=${fmt(s.best.v1, 4)} V${s.buses[1]}=${fmt(s.best.v2, 4)}\n`;
      text += `P${s.buses[0]}=${fmt(s.best.p1)} P${s.buses[1]}=${fmt(s.best.p2)}\nsum ${fmt(s.best.p_sum)}`;
    } else {
      text += "no feasible point";
    }
    ok(out, text);
  } catch (e) {
    fail(out, e);
  }
}

function plot(cv, xs, series, xMark, yLabel) {
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const pad = 40;
  const all = series.flatMap((s) => s.y);
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi - lo < 1e-9) { lo -= 0.01; hi += 0.01; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const X = (x) => pad + ((x - x0) / (x1 - x0)) * (cv.width - pad - 10);
  const Y = (y) => cv.height - pad - ((y - lo) / (hi - lo)) * (cv.height - pad - 10);
  g.strokeStyle = "#888";
  g.strokeRect(pad, 10, cv.width - pad - 10, cv.height - pad - 10);
  g.fillStyle = "#222";
  g.font = "11px sans-serif";
  g.fillText(fmt(lo, 4), 2, Y(lo));
  g.fillText(fmt(hi, 4), 2, Y(hi) + 8);
  g.fillText(`theta_max ${fmt(x0, 2)} .. ${fmt(x1, 2)} rad`, pad, cv.height - 12);
  g.fillText(yLabel, pad + 6, 24);
  if (xMark > x0 && xMark < x1) {
    g.setLineDash([4, 4]);
    g.strokeStyle = "#555";
    g.beginPath();
    g.moveTo(X(xMark), 10);
    g.lineTo(X(xMark), cv.height - pad);
    g.stroke();
    g.setLineDash([]);
  }
  const palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
  series.forEach((s, k) => {
    g.strokeStyle = palette[k % palette.length];
    g.lineWidth = 1.5;
    g.beginPath();
    s.y.forEach((y, i) => (i ? g.lineTo(X(xs[i]), Y(y)) : g.moveTo(X(xs[i]), Y(y))));
    g.stroke();
    if (s.name) {
      g.fillStyle = g.strokeStyle;
      g.fillText(s.name, cv.width - 60, 24 + 12 * k);
    }
  });
}

function runSweep() {
  const out = $("sweep-out");
  try {
    const r = JSON.parse(angleSweep($("case").value, num("vmin"), num("vmax"), num("theta-to"), num("points")));
    const xs = r.points.map((p) => p.theta_max);
    plot($("sweep-hc"), xs, [{ y: r.points.map((p) => p.hc_total) }], r.critical_angle, "hosting capacity, p.u.");
    const shown = r.bus_ids.slice(0, 8);
    const series = shown.map((id, k) => ({ name: `bus ${id}`, y: r.points.map((p) => p.v[k]) }));
    plot($("sweep-v"), xs, series, r.critical_angle, "magnitude, p.u.");
    const first = r.points[0], last = r.points[r.points.length - 1];
    ok(out, `critical angle ${fmt(r.critical_angle, 5)} rad\nhc at theta_max=0: ${fmt(first.hc_total)}\nhc at theta_max=${fmt(last.theta_max, 3)}: ${fmt(last.hc_total)}`);
  } catch (e) {
    fail(out, e);
  }
}

await init();
for (const name of exampleNames()) {
  const o = document.createElement("option");
  o.value = o.textContent = name;
  $("example").append(o);
}
$("example").addEventListener("change", () => ($("case").value = exampleCase($("example").value)));
$("case").value = exampleCase("3bus");
$("solve").addEventListener("click", runSolve);
$("surface").addEventListener("click", runSurface);
$("sweep").addEventListener("click", runSweep);
runSolve();
