import init, { designCollision, fairAllocation, simulateChoice } from "./pkg/qre_web.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => (Math.abs(v) < 1e-4 && v !== 0 ? v.toExponential(2) : v.toFixed(4));

function table(header, rows) {
  const head = "<tr>" + header.map((h) => `<th>${h}</th>`).join("") + "</tr>";
  const body = rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
  return `<table>${head}${body}</table>`;
}

function bar(v, scale) {
  return `<span class="bar" style="width:${Math.max(0, v * scale).toFixed(1)}px"></span> ${fmt(v)}`;
}

function guard(target, f) {
  try {
    f();
  } catch (e) {
    $(target).innerHTML = `<p class="err">${e}</p>`;
  }
}

function runCollision() {
  guard("collision-out", () => {
    const d = JSON.parse(designCollision(Number($("eps").value)));
    const rows = d.strategies.map((s, i) => [`rover ${i + 1}`, ...s.map(fmt)]);
    $("collision-out").innerHTML =
      `<p>&#8214;C&#8214;<sub>F</sub> = ${fmt(d.c_norm)}, KL to target = ${fmt(d.kl_to_target)}` +
      (d.converged ? "" : " (not converged)") + "</p>" +
      table(["", "beeline", "clockwise", "counterclockwise"], rows);
  });
}

function runFair() {
  $("fair-out").textContent = "running...";
  // let the status text paint before the solver blocks the thread
  setTimeout(() => guard("fair-out", () => {
    const d = JSON.parse(fairAllocation(Number($("rho").value), Number($("alpha").value)));
    const rows = d.areas.map((a, k) => [a, ...d.allocation.map((p) => fmt(p[k])), bar(d.totals[k], 150)]);
    $("fair-out").innerHTML =
      `<p>potential delay = ${fmt(d.potential_delay)} (27 at equal service), ` +
      `&#8214;C&#8214;<sub>F</sub> = ${fmt(d.c_norm)}, ${d.outer_iterations} iterations` +
      (d.converged ? "" : ", stopped at the iteration cap") + "</p>" +
      table(["area", ...d.homes.map((h) => `home ${h}`), "total"], rows);
  }), 10);
}

function runSim() {
  guard("sim-out", () => {
    const costs = Float64Array.from($("costs").value.split(",").map((s) => Number(s.trim())));
    const d = JSON.parse(
      simulateChoice(costs, Number($("lambda").value), Number($("samples").value), Number($("seed").value)),
    );
    const rows = d.logit.map((p, k) => [`action ${k + 1}`, bar(d.frequencies[k], 200), bar(p, 200)]);
    $("sim-out").innerHTML =
      table(["", "simulated", "logit"], rows) + `<p>total variation distance ${fmt(d.total_variation)}</p>`;
  });
}

await init();
$("run-collision").onclick = runCollision;
$("run-fair").onclick = runFair;
$("run-sim").onclick = runSim;
runCollision();
runSim();
