import init, { filterBank, featureMaps, toyCapacity } from "./pkg/demo.js";

const $ = (id) => document.getElementById(id);
const SIDE = 28;
const ink = new Float32Array(SIDE * SIDE);

function drawGrid(values, side, scale, signed) {
  const c = document.createElement("canvas");
  c.width = side;
  c.height = side;
  c.style.width = `${side * scale}px`;
  c.style.height = `${side * scale}px`;
  const ctx = c.getContext("2d");
  const img = ctx.createImageData(side, side);
  let lo = Infinity, hi = -Infinity;
  for (const v of values) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const span = signed ? Math.max(Math.abs(lo), Math.abs(hi)) || 1 : (hi - lo) || 1;
  values.forEach((v, i) => {
    const t = signed ? 0.5 + 0.5 * v / span : (v - lo) / span;
    const g = Math.round(255 * t);
    img.data.set([g, g, g, 255], 4 * i);
  });
  ctx.putImageData(img, 0, 0);
  return c;
}

function figure(canvas, caption) {
  const f = document.createElement("figure");
  f.append(canvas, document.createElement("br"), caption);
  return f;
}

function counts() {
  return [Number($("bars").value), Number($("corners").value), $("squares").checked];
}

function showBank() {
  const [bars, corners, squares] = counts();
  const bank = filterBank(bars, corners, squares);
  const side = bank.side();
  const coeffs = bank.coeffs();
  $("bank").replaceChildren();
  for (let i = 0; i < bank.count(); i++) {
    const slice = coeffs.subarray(i * side * side, (i + 1) * side * side);
    $("bank").append(figure(drawGrid(slice, side, 8, true), bank.label(i)));
  }
  bank.free();
}

function showMaps() {
  const [bars, corners] = counts();
  const view = featureMaps(ink, bars, corners, Number($("q").value), Number($("d").value));
  const side = view.side();
  const values = view.values();
  $("maps").replaceChildren();
  for (let i = 0; i < view.filters(); i++) {
    const map = values.subarray(i * side * side, (i + 1) * side * side);
    $("maps").append(figure(drawGrid(map, side, 6, false), `${i}`));
  }
  view.free();
}

function setupPad() {
  const pad = $("pad");
  const ctx = pad.getContext("2d");
  const cell = pad.width / SIDE;
  let down = false;
  const paint = (e) => {
    const r = pad.getBoundingClientRect();
    const x = (e.clientX - r.left) / cell, y = (e.clientY - r.top) / cell;
    for (let dy = -1; dy <= 1; dy++) {
      for (let dx = -1; dx <= 1; dx++) {
        const cx = Math.floor(x + dx), cy = Math.floor(y + dy);
        if (cx < 0 || cy < 0 || cx >= SIDE || cy >= SIDE) continue;
        const w = dx === 0 && dy === 0 ? 1 : 0.35;
        ink[cy * SIDE + cx] = Math.min(1, ink[cy * SIDE + cx] + w);
        const g = 255 - Math.round(255 * ink[cy * SIDE + cx]);
        ctx.fillStyle = `rgb(${g},${g},${g})`;
        ctx.fillRect(cx * cell, cy * cell, cell, cell);
      }
    }
  };
  const clear = () => {
    ink.fill(0);
    ctx.fillStyle = "#fff";
    ctx.fillRect(0, 0, pad.width, pad.height);
  };
  pad.addEventListener("pointerdown", (e) => { down = true; paint(e); });
  pad.addEventListener("pointermove", (e) => { if (down) paint(e); });
  window.addEventListener("pointerup", () => { if (down) { down = false; guard(showMaps); } });
  $("clear").addEventListener("click", () => { clear(); guard(showMaps); });
  clear();
}

function runSweep() {
  const hidden = new Uint32Array([4, 16, 64, 256]);
  const errors = toyCapacity(hidden, Number($("seed").value));
  const body = $("sweepTable").querySelector("tbody");
  body.replaceChildren();
  hidden.forEach((m, i) => {
    const tr = document.createElement("tr");
    tr.innerHTML = `<td>${m}</td><td>${(100 * errors[i]).toFixed(1)}%</td>`;
    body.append(tr);
  });
}

function guard(f) {
  try {
    f();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

await init();
setupPad();
for (const id of ["bars", "corners", "squares"]) {
  $(id).addEventListener("change", () => guard(() => { showBank(); showMaps(); }));
}
for (const id of ["q", "d"]) $(id).addEventListener("change", () => guard(showMaps));
$("sweep").addEventListener("click", () => guard(runSweep));
guard(() => { showBank(); showMaps(); });
