import init, { arch_resources, isomer_groups, kendall } from "./pkg/zcnas_wasm.js";

const $ = (id) => document.getElementById(id);
const space = () => $("space").value;

function guard(out, f) {
  try {
    out.classList.remove("err");
    f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e.message ?? e);
  }
}

function showResources() {
  guard($("arch-out"), () => {
    const r = JSON.parse(arch_resources(space(), $("arch").value));
    $("arch-out").textContent =
      `params  ${r.params.toLocaleString()}\n` +
      `MACs    ${r.flops.toLocaleString()}\n` +
      `isomer  qkv ${r.total_qkv_dim}, mlp ${r.total_mlp_ratio}, heads ${r.total_heads}`;
  });
}

function showGroups() {
  const out = $("groups-out");
  out.replaceChildren();
  guard($("groups-head"), () => {
    const g = JSON.parse(isomer_groups(space(), +$("embed").value, +$("depth").value));
    const counts = g.groups.map((x) => Number(x.count));
    const max = Math.max(...counts);
    $("groups-head").textContent = `${g.groups.length} groups in this slice; ${g.space_size} architectures in the space`;
    for (const [i, x] of g.groups.slice(0, 400).entries()) {
      const bar = document.createElement("div");
      bar.style.width = `${Math.max(2, (100 * counts[i]) / max)}%`;
      bar.textContent = `q${x.total_qkv_dim} r${x.total_mlp_ratio} h${x.total_heads}: ${x.count}`;
      out.append(bar);
    }
  });
}

const numbers = (s) => new Float64Array(s.trim().split(/[\s,]+/).filter(Boolean).map(Number));

function showTau() {
  guard($("tau-out"), () => {
    $("tau-out").textContent = `tau = ${kendall(numbers($("xs").value), numbers($("ys").value)).toFixed(4)}`;
  });
}

await init();
$("arch").value = "e192-d12" + ":q192r4h3".repeat(12);
$("arch-go").onclick = showResources;
$("groups-go").onclick = showGroups;
$("tau-go").onclick = showTau;
$("space").onchange = () => { showResources(); };
showResources();
