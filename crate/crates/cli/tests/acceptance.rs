//! Acceptance suite. Runs every criterion in order, prints one pass/fail line
//! each and exits non-zero if any failed. Numeric arguments select a subset:
//! `cargo test -p gnn-lab-cli --test acceptance -- 4 5`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gnn_lab::analysis::{auprc, auroc, fit_power_law, spearman, MetricError, Polarity};
use gnn_lab::arch::{
    assemble_network, gps_block, mpnn_block, transformer_block, ArchError, ArchKind, Batch, BlockContext, ModelState,
    NetworkSpec, PreparedMolecule, TaskHeadSpec,
};
use gnn_lab::molgraph::{generate_synthetic_mix, GeneratorSettings, MolGraph, Molecule, TaskLevel};
use gnn_lab::nn::rng::{stream, DropoutKey};
use gnn_lab::nn::{gradient_check, relative_error, AttentionLayout, Layer, Mode, Param, ParamStore, Tensor};
use gnn_lab::pse::laplacian_eigs;
use gnn_lab::train::load_checkpoint;
use gnn_lab::transfer::{read_cache_dir, write_cache_dir};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;

fn random_tensor(seed: u64, label: &str, rows: usize, cols: usize) -> Tensor {
    let mut rng = stream(seed, label, &[]);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

fn molecules(seed: u64, n: usize) -> Vec<Molecule> {
    let settings = GeneratorSettings { n_molecules: n.max(10), max_nodes: 12, ..GeneratorSettings::with_seed(seed) };
    let mut mols = generate_synthetic_mix(&settings).unwrap().molecules;
    mols.truncate(n);
    mols
}

fn small_spec(kind: ArchKind, width: usize, depth: usize) -> NetworkSpec {
    let mut s = NetworkSpec::new(kind, width, depth);
    s.n_heads = 2;
    s.task_heads = vec![
        TaskHeadSpec { name: "graph".into(), out_dim: 3, level: TaskLevel::Graph },
        TaskHeadSpec { name: "node".into(), out_dim: 2, level: TaskLevel::Node },
    ];
    s
}

/// Norm gains, biases and the attention bias table randomized as well.
fn randomized_model(spec: &NetworkSpec, seed: u64) -> ModelState {
    let mut m = assemble_network(spec, seed).unwrap();
    let mut rng = stream(seed, "randomize", &[]);
    for p in m.params.iter_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".gain") || p.name == "bias_table" {
            let base = if p.name.ends_with(".gain") { 1.0 } else { 0.0 };
            for v in p.value.data_mut() {
                *v = base + 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    m
}

fn prepared(mols: &[Molecule], spec: &NetworkSpec) -> Vec<PreparedMolecule> {
    mols.iter().map(|m| PreparedMolecule::new(m, &spec.pse).unwrap()).collect()
}

fn batch_of(prep: &[PreparedMolecule], spec: &NetworkSpec) -> Batch {
    Batch::new(&prep.iter().collect::<Vec<_>>(), spec.n_heads)
}

// 1. Gradients

fn layer_objective(layer: &Layer, x: &Tensor, r: &[f64], seed: u64) -> f64 {
    let (y, _) = layer.forward(x, Mode::Train, &mut stream(seed, "mask", &[])).unwrap();
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn layer_error(layer: &Layer, x: &Tensor, seed: u64) -> f64 {
    let (y, res) = layer.forward(x, Mode::Train, &mut stream(seed, "mask", &[])).unwrap();
    let r = random_tensor(seed, "proj", y.rows(), y.cols());
    let (gx, gp) = layer.backward(&r, &res).unwrap();
    let central = |f: &dyn Fn(f64) -> f64| (f(H) - f(-H)) / (2.0 * H);
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            central(&|h| {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                layer_objective(layer, &xp, r.data(), seed)
            })
        })
        .collect();
    let mut worst = relative_error(gx.data(), &numeric);
    for (k, g) in gp.iter().enumerate() {
        let numeric: Vec<f64> = (0..g.len())
            .map(|i| {
                central(&|h| {
                    let mut l = layer.clone();
                    l.params_mut()[k].data_mut()[i] += h;
                    layer_objective(&l, x, r.data(), seed)
                })
            })
            .collect();
        worst = worst.max(relative_error(g.data(), &numeric));
    }
    worst
}

fn gradients() -> String {
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut note = |e: f64, what: String| {
        assert!(e < GRAD_TOL, "{what}: relative error {e:e}");
        worst = worst.max(e);
        checks += 1;
    };
    for seed in 0..20 {
        let x = random_tensor(seed, "x", 5, 7);
        let layers = [
            Layer::Linear { weight: random_tensor(seed, "w", 7, 4), bias: random_tensor(seed, "b", 1, 4) },
            Layer::Mlp2 {
                w1: random_tensor(seed, "w1", 7, 6),
                b1: random_tensor(seed, "b1", 1, 6),
                w2: random_tensor(seed, "w2", 6, 3),
                b2: random_tensor(seed, "b2", 1, 3),
            },
            Layer::LayerNorm { gain: random_tensor(seed, "g", 1, 7), bias: random_tensor(seed, "lb", 1, 7) },
            Layer::Relu,
            Layer::Dropout { p: 0.3 },
        ];
        for layer in &layers {
            note(layer_error(layer, &x, seed), format!("seed {seed} {layer:?}"));
        }
    }

    for seed in 0..20 {
        let n = 5;
        let mut store = ParamStore::new();
        store.insert(Param::new("bias", random_tensor(seed, "bt", 2, 3), 1.0));
        store.insert(Param::new("w", random_tensor(seed, "w", 4, 4), 1.0));
        store.insert(Param::new("b", random_tensor(seed, "b", 1, 4), 1.0));
        store.insert(Param::new("g", random_tensor(seed, "g", 1, 4), 1.0));
        let mut rng = stream(seed, "buckets", &[]);
        let buckets: Vec<usize> = (0..n * n).map(|_| rng.random_range(0..3)).collect();
        let layout = Arc::new(AttentionLayout {
            offsets: vec![0, 2, n],
            buckets: vec![buckets[..4].to_vec(), buckets[..9].to_vec()],
            n_heads: 2,
            key_padding: None,
        });
        let inputs = [random_tensor(seed, "q", n, 4), random_tensor(seed, "k", n, 4), random_tensor(seed, "v", n, 4)];
        let idx: Arc<[usize]> = vec![0, 2, 2, 4, 1, 3, 0].into();
        let factors: Vec<f64> = (0..n * 4).map(|i| 0.5 + (i % 3) as f64).collect();
        let report = gradient_check(
            &store,
            &inputs,
            |t, s, v| {
                let (w, b, g, bias) = (t.param(s, "w"), t.param(s, "b"), t.param(s, "g"), t.param(s, "bias"));
                let q = t.linear(v[0], w, b)?;
                let q = t.layernorm(q, g, b)?;
                let k = t.relu(v[1]);
                let a = t.attention(q, k, v[2], bias, layout.clone())?;
                let a = t.mul_const(a, factors.clone());
                let gathered = t.gather(a, idx.clone());
                let c = t.concat(&[gathered, gathered]);
                let s = t.scatter_sum(c, idx.clone(), n);
                let y = t.scale(s, 0.7);
                Ok(vec![y, t.add(a, v[2])?])
            },
            seed,
            H,
            64,
        )
        .unwrap();
        note(report.max_rel_error, format!("tape ops seed {seed} ({})", report.worst));
    }

    for seed in 0..20 {
        let mut rng = stream(seed, "targets", &[]);
        let labels: Arc<[f64]> = (0..12).map(|_| f64::from(rng.random_range(0u8..2))).collect();
        let values: Arc<[f64]> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let mask: Arc<[bool]> = (0..12).map(|i| i % 3 != 1).collect();
        let report = gradient_check(
            &ParamStore::new(),
            &[random_tensor(seed, "z", 4, 3), random_tensor(seed, "p", 4, 3)],
            |t, _, v| {
                let bce = t.masked_bce(v[0], labels.clone(), mask.clone()).unwrap();
                let mae = t.masked_mae(v[1], values.clone(), mask.clone()).unwrap();
                Ok(vec![t.mean(&[bce, mae])])
            },
            seed,
            H,
            64,
        )
        .unwrap();
        note(report.max_rel_error, format!("losses seed {seed}"));
    }

    for kind in ArchKind::ALL {
        for seed in 0..20 {
            let spec = small_spec(kind, 8, 1);
            let model = randomized_model(&spec, seed);
            let batch = batch_of(&prepared(&molecules(seed, 2), &spec), &spec);
            let (topo, layout) = (batch.topology.clone(), batch.layout.clone());
            let inputs = [random_tensor(seed, "X", batch.nodes(), 8), random_tensor(seed, "E", topo.edges, 8)];
            let key = DropoutKey::new(seed, 1, 2);
            let report = gradient_check(
                &model.params,
                &inputs,
                |t, store, v| {
                    let ctx = BlockContext { store, mode: Mode::Train, key, dropout_p: 0.2 };
                    match kind {
                        ArchKind::Mpnn => {
                            let (x, e) = mpnn_block(t, &ctx, "core.0", v[0], v[1], &topo)?;
                            Ok(vec![x, e])
                        }
                        ArchKind::Gps => {
                            let (x, e) = gps_block(t, &ctx, "core.0", v[0], v[1], &topo, &layout)?;
                            Ok(vec![x, e])
                        }
                        ArchKind::Transformer => Ok(vec![transformer_block(t, &ctx, "core.0", v[0], &layout)?]),
                    }
                },
                seed,
                H,
                12,
            )
            .unwrap();
            note(report.max_rel_error, format!("{kind} block seed {seed} ({})", report.worst));
        }
        for seed in 0..3 {
            let spec = small_spec(kind, 8, 2);
            let model = randomized_model(&spec, seed);
            let batch = batch_of(&prepared(&molecules(seed + 10, 3), &spec), &spec);
            let key = DropoutKey::new(seed, 0, 0);
            let report = gradient_check(
                &model.params,
                &[],
                |t, store, _| {
                    let m = ModelState { spec: model.spec.clone(), params: store.clone() };
                    let f = m.forward_on_tape(t, &batch, Mode::Train, key, &[]).map_err(|e| match e {
                        ArchError::Nn(e) => e,
                        other => panic!("{other}"),
                    })?;
                    Ok(f.outputs.into_values().collect())
                },
                seed,
                H,
                6,
            )
            .unwrap();
            note(report.max_rel_error, format!("{kind} network seed {seed} ({})", report.worst));
        }
    }
    format!("{checks} checks, worst relative error {worst:.2e}")
}

// 2. Equivariance

fn equivariance() -> String {
    let mut compared = 0usize;
    for kind in ArchKind::ALL {
        let spec = small_spec(kind, 16, 2);
        let model = randomized_model(&spec, 7);
        let prep = prepared(&molecules(3, 4), &spec);
        let key = DropoutKey::new(0, 0, 0);
        let base = model.forward(&batch_of(&prep, &spec), Mode::Eval, key, &[]).unwrap();
        let offsets: Vec<usize> =
            prep.iter().scan(0, |acc, p| Some(std::mem::replace(acc, *acc + p.node_count()))).collect();
        for trial in 0..50u64 {
            let perms: Vec<Vec<usize>> = prep
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut pi: Vec<usize> = (0..p.node_count()).collect();
                    pi.shuffle(&mut stream(trial * 31 + i as u64, "perm", &[]));
                    pi
                })
                .collect();
            let moved: Vec<PreparedMolecule> = prep.iter().zip(&perms).map(|(p, pi)| p.permuted(pi)).collect();
            let out = model.forward(&batch_of(&moved, &spec), Mode::Eval, key, &[]).unwrap();
            assert_eq!(out.outputs["graph"], base.outputs["graph"], "{kind} trial {trial}: graph output moved");
            let (a, b) = (&base.outputs["node"], &out.outputs["node"]);
            for (g, pi) in perms.iter().enumerate() {
                for (i, &p) in pi.iter().enumerate() {
                    assert_eq!(a.row(offsets[g] + i), b.row(offsets[g] + p), "{kind} trial {trial}: node {i}");
                }
            }
            compared += 1;
        }
    }
    format!("{compared} permuted batches bit-identical")
}

// 3. Spectral oracle

type Poly = Vec<i64>;

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = vec![0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..n {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

/// `det(xI − L)` by the Leibniz expansion.
fn char_poly(g: &MolGraph) -> Poly {
    let n = g.node_count();
    let mut l = vec![vec![0i64; n]; n];
    for &(u, v) in g.edges() {
        l[u][v] = -1;
        l[v][u] = -1;
        l[u][u] += 1;
        l[v][v] += 1;
    }
    let mut total = vec![0i64; n + 1];
    for p in permutations(n) {
        let inversions = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| p[i] > p[j]).count();
        let mut term: Poly = vec![if inversions % 2 == 0 { 1 } else { -1 }];
        for (i, &j) in p.iter().enumerate() {
            term = poly_mul(&term, &if i == j { vec![-l[i][j], 1] } else { vec![-l[i][j]] });
        }
        for (k, c) in term.into_iter().enumerate() {
            total[k] += c;
        }
    }
    total
}

/// Integer roots in `0..=bound` by synthetic division, then at most one
/// leftover quadratic.
fn roots(mut poly: Poly, bound: i64) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..=bound {
        while poly.len() > 1 {
            let d = poly.len() - 1;
            let mut q = vec![0i64; d];
            let mut carry = 0;
            for k in (0..=d).rev() {
                carry = poly[k] + carry * r;
                if k > 0 {
                    q[k - 1] = carry;
                }
            }
            if carry != 0 {
                break;
            }
            out.push(r as f64);
            poly = q;
        }
    }
    match poly.len() {
        1 => {}
        3 => {
            let (c, b, a) = (poly[0] as f64, poly[1] as f64, poly[2] as f64);
            let disc = (b * b - 4.0 * a * c).sqrt();
            out.extend([(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)]);
        }
        d => panic!("leftover polynomial of degree {}", d - 1),
    }
    out.sort_by(f64::total_cmp);
    out
}

fn spectral() -> String {
    let mut exhaustive = 0;
    let mut worst = 0.0f64;
    for n in 1..=4 {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        for mask in 0u32..1 << pairs.len() {
            let edges: Vec<_> = pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &p)| p).collect();
            let g = MolGraph::skeleton(n, &edges).unwrap();
            let expect = roots(char_poly(&g), n as i64);
            let got = laplacian_eigs(&g, n).unwrap().eigenvalues;
            assert_eq!(got.len(), expect.len());
            for (a, b) in got.iter().zip(&expect) {
                worst = worst.max((a - b).abs());
                assert!((a - b).abs() < 1e-8, "{edges:?}: {got:?} vs {expect:?}");
            }
            exhaustive += 1;
        }
    }
    assert_eq!(exhaustive, 1 + 2 + 8 + 64);
    for seed in 0..200u64 {
        let n = 1 + (seed as usize % 14);
        let mut rng = stream(seed, "graph", &[]);
        let edges: Vec<_> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.random_bool(0.18)).collect();
        let g = MolGraph::skeleton(n, &edges).unwrap();
        let zeros = laplacian_eigs(&g, n).unwrap().eigenvalues.iter().filter(|v| v.abs() < 1e-8).count();
        assert_eq!(zeros, g.component_count(), "seed {seed}: {edges:?}");
    }
    format!("{exhaustive} graphs exhaustive (worst {worst:.1e}), 200 component counts")
}

// 4. Metric oracles

fn brute_auroc(s: &[f64], y: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1.0 && y[j] == 0.0 {
                pairs += 1.0;
                wins += match s[i].total_cmp(&s[j]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn metrics() -> String {
    let mut rng = stream(2024, "acceptance.auroc", &[]);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 10_000 {
        let n = rng.random_range(2..=12);
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8)) / 5.0).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        match auroc(&s, &y) {
            Ok(a) => {
                let e = (a - brute_auroc(&s, &y)).abs();
                assert!(e < 1e-12, "{s:?} {y:?}");
                worst = worst.max(e);
                checked += 1;
            }
            Err(e) => assert_eq!(e, MetricError::Undefined("single class")),
        }
    }
    assert_eq!(spearman(&[1., 2., 3.], &[3., 1., 2.]).unwrap(), -0.5);
    assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &[1., 1., 0., 0.]).unwrap(), 1.0);
    assert_eq!(auprc(&[0.9, 0.8, 0.7, 0.1], &[0., 0., 0., 1.]).unwrap(), 0.25);
    // Ranking positive, negative, positive: precision 1 at the first hit,
    // 2/3 at the second.
    assert_eq!(auprc(&[0.9, 0.5, 0.1], &[1., 0., 1.]).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);
    format!("{checked} AUROC instances (worst {worst:.1e}), hand cases exact")
}

// 5. Power law

fn power_law() -> String {
    let alpha: f64 = 0.081;
    let critical: f64 = 1e9;
    let pts: Vec<(f64, f64)> =
        [1e3, 1e4, 1e5, 1e6, 1e7, 1e8].iter().map(|&s| (s, (critical / s).powf(alpha))).collect();
    let a = fit_power_law(&pts, Polarity::Lower, critical).unwrap();
    assert!((a.exponent - alpha).abs() < 1e-9 && a.residual_rms < 1e-12, "{a:?}");

    let beta: f64 = 0.110;
    let dc: f64 = 5e6;
    let pts: Vec<(f64, f64)> =
        [0.125, 0.25, 0.5, 1.0].iter().map(|f| f * dc).map(|d| (d, (dc / d).powf(beta))).collect();
    let b = fit_power_law(&pts, Polarity::Lower, dc).unwrap();
    assert!((b.exponent - beta).abs() < 1e-9 && b.residual_rms < 1e-12, "{b:?}");
    format!(
        "alpha error {:.1e}, beta error {:.1e}, residuals {:.1e}/{:.1e}",
        (a.exponent - alpha).abs(),
        (b.exponent - beta).abs(),
        a.residual_rms,
        b.residual_rms
    )
}

// CLI helpers

fn gnn(dir: &Path, args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_gnn-lab"))
        .current_dir(dir)
        .env_remove("GNN_LAB_OUT")
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success(), "gnn-lab {args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect();
    (header, rows)
}

/// Output of the width sweep, shared by the transfer criteria.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn width_128_checkpoint(&self) -> PathBuf {
        self.path().join("width/runs/mpnn_w128_d4_m1_l1_none_s0/model.ckpt")
    }

    /// Trains the width sweep unless it is already there.
    fn ensure_sweep(&self) {
        if self.width_128_checkpoint().is_file() && self.path().join("width/scaling.csv").is_file() {
            return;
        }
        write(self.path(), "width.toml", WIDTH_SWEEP);
        gnn(self.path(), &["--out", ".", "sweep", "width.toml"]);
    }
}

const WIDTH_SWEEP: &str = "arch_kinds = [\"mpnn\"]
widths = [16, 32, 64, 128]
depths = [4]
seeds = [0, 1, 2]
output = \"width\"

[generator]
seed = 0
n_molecules = 2000

[network]
base_width = 32

[train]
epochs = 30
";

// 6. Width scaling

fn width_scaling(ws: &Workspace) -> String {
    ws.ensure_sweep();
    let d = ws.path();
    gnn(d, &["--out", "width/analysis", "analyze", "--scaling", "width/scaling.csv"]);
    let (header, rows) = csv_rows(&d.join("width/analysis/trends.csv"));
    assert_eq!(header, ["arch", "scale_variable", "task", "metric", "spearman"]);
    let row = rows
        .iter()
        .find(|r| r[0] == "mpnn" && r[1] == "width" && r[2] == "*" && r[3] == "standardized_mean")
        .expect("no standardized-mean trend row");
    let rho: f64 = row[4].parse().unwrap();

    let (_, means) = csv_rows(&d.join("width/analysis/standardized_means.csv"));
    let by_width: Vec<String> = means.iter().map(|r| r.join(" ")).collect();
    assert!(rho >= 0.8, "spearman(width, standardized mean) = {rho}; {by_width:?}");
    format!("spearman(width, standardized mean) = {rho}")
}

// 7. Probing

fn probing(ws: &Workspace) -> String {
    ws.ensure_sweep();
    let d = ws.path();
    let ckpt = ws.width_128_checkpoint();
    let before = fs::read(&ckpt).unwrap();
    let spec_before = fs::read(ckpt.with_extension("ckpt.spec.json")).unwrap();
    write(d, "ds.toml", "seed = 7\nkind = \"downstream\"\nn_molecules = 6000\n");
    gnn(d, &["--out", "ds", "datagen", "ds.toml"]);
    let ckpt_arg = ckpt.to_str().unwrap();
    gnn(
        d,
        &[
            "--out",
            "fp",
            "fingerprint",
            "--checkpoint",
            ckpt_arg,
            "--data",
            "ds",
            "--model-id",
            "w128",
            "--plant",
            "planted",
        ],
    );
    gnn(d, &["--out", "probe", "probe", "--data", "fp/planted", "--fingerprints", "fp", "--tasks", "planted"]);

    let (_, rows) = csv_rows(&d.join("probe/probe_summary.csv"));
    let pearson: f64 = rows
        .iter()
        .find(|r| r[0] == "w128:graph_output_nn" && r[1] == "planted" && r[2] == "pearson")
        .expect("no planted pearson row")[3]
        .parse()
        .unwrap();
    assert!(pearson > 0.99, "planted test pearson {pearson}");
    assert_eq!(fs::read(&ckpt).unwrap(), before, "checkpoint bytes changed");
    assert_eq!(fs::read(ckpt.with_extension("ckpt.spec.json")).unwrap(), spec_before);
    load_checkpoint(&ckpt).unwrap();

    let sets = read_cache_dir(&d.join("fp")).unwrap();
    write_cache_dir(&sets, &d.join("fp_copy")).unwrap();
    let (a, b) = (files(&d.join("fp")), files(&d.join("fp_copy")));
    for (name, bytes) in &b {
        assert_eq!(a.get(name), Some(bytes), "{} does not round-trip", name.display());
    }
    format!("planted test pearson {pearson:.4}, checkpoint unchanged, cache round-trips")
}

// 8. Finetuning freeze

fn finetuning(ws: &Workspace) -> String {
    ws.ensure_sweep();
    let d = ws.path();
    write(d, "ft_ds.toml", "seed = 11\nkind = \"downstream\"\nn_molecules = 800\n");
    gnn(d, &["--out", "ft_ds", "datagen", "ft_ds.toml"]);
    write(d, "ft.toml", "epochs = 12\n");
    let ckpt = ws.width_128_checkpoint();
    gnn(
        d,
        &[
            "--out",
            "ft",
            "finetune",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            "ft_ds",
            "--task",
            "downstream_reg",
            "--config",
            "ft.toml",
        ],
    );
    let (header, rows) = csv_rows(&d.join("ft/checksums.csv"));
    assert_eq!(header, ["seed", "epoch", "base_checksum"]);
    let sums: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(sums.len(), 12);
    assert!(sums[..10].iter().all(|s| *s == sums[0]), "checksum moved while frozen: {sums:?}");
    assert_ne!(sums[10], sums[9], "checksum unchanged after unfreezing");

    let base = load_checkpoint(&ckpt).unwrap();
    let mut node_paths = vec!["node_output_nn.".to_owned()];
    node_paths.extend(
        base.spec.task_heads.iter().filter(|h| h.level == TaskLevel::Node).map(|h| format!("task_heads.{}.", h.name)),
    );
    assert!(node_paths.len() > 1 && base.params.iter().any(|p| p.name.starts_with(&node_paths[0])));
    let model = load_checkpoint(&d.join("ft/seed0.ckpt")).unwrap();
    assert!(model.spec.task_heads.iter().all(|h| h.level == TaskLevel::Graph));
    let left: Vec<&str> = model
        .params
        .iter()
        .map(|p| p.name.as_str())
        .filter(|n| node_paths.iter().any(|p| n.starts_with(p.as_str())))
        .collect();
    assert!(left.is_empty(), "node-level parameters survived: {left:?}");
    format!("checksum {} over epochs 1-10, {} at epoch 11, no node paths", sums[0], sums[10])
}

// 9. Determinism

const SMALL_SWEEP: &str = "data = \"data\"
arch_kinds = [\"mpnn\", \"gps\"]
widths = [16]
depths = [2]
seeds = [0, 1]
output = \"sweep\"
[train]
epochs = 3
warmup_epochs = 1
batch_size = 32
";

/// Every command once, inside `dir`, with relative paths only.
fn pipeline(dir: &Path, jobs: &str) {
    fs::create_dir_all(dir).unwrap();
    write(dir, "gen.toml", "seed = 5\nn_molecules = 150\n");
    write(dir, "ds.toml", "seed = 6\nkind = \"downstream\"\nn_molecules = 300\n");
    write(
        dir,
        "pre.toml",
        "arch = \"gps\"\nwidth = 16\ndepth = 2\n[train]\nepochs = 3\nbatch_size = 32\nwarmup_epochs = 1\n",
    );
    write(dir, "sweep.toml", SMALL_SWEEP);
    write(dir, "probe.toml", "epochs = 4\n");
    write(dir, "ft.toml", "epochs = 3\nfreeze_epochs = 1\nhidden_dim = 16\n");
    gnn(dir, &["--out", "data", "datagen", "gen.toml"]);
    gnn(dir, &["--out", "ds", "datagen", "ds.toml"]);
    gnn(dir, &["--jobs", jobs, "--out", ".", "sweep", "sweep.toml"]);
    gnn(dir, &["--out", "model", "pretrain", "--data", "data", "--config", "pre.toml"]);
    gnn(
        dir,
        &[
            "--out",
            "fp",
            "fingerprint",
            "--checkpoint",
            "model/model.ckpt",
            "--data",
            "ds",
            "--taps",
            "graph_output_nn,task_heads.pcba_1328.layer1",
            "--plant",
            "planted",
        ],
    );
    gnn(
        dir,
        &[
            "--out",
            "probe",
            "probe",
            "--data",
            "fp/planted",
            "--fingerprints",
            "fp",
            "--concat",
            "fp",
            "--tasks",
            "planted,downstream_class",
            "--seeds",
            "0,1",
            "--config",
            "probe.toml",
        ],
    );
    gnn(
        dir,
        &[
            "--out",
            "ft",
            "finetune",
            "--checkpoint",
            "model/model.ckpt",
            "--data",
            "ds",
            "--task",
            "downstream_class",
            "--config",
            "ft.toml",
        ],
    );
    gnn(dir, &["--out", "analysis", "analyze", "--scaling", "sweep/scaling.csv"]);
}

fn determinism() -> String {
    let t = tempfile::tempdir().unwrap();
    pipeline(&t.path().join("a"), "1");
    pipeline(&t.path().join("b"), "2");
    let (a, b) = (files(&t.path().join("a")), files(&t.path().join("b")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "different file sets");
    let differ: Vec<&PathBuf> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    assert!(differ.is_empty(), "outputs differ: {differ:?}");
    let kinds: BTreeSet<&str> = a.keys().filter_map(|p| p.extension()?.to_str()).collect();
    for ext in ["csv", "ckpt", "mfpc", "json"] {
        assert!(kinds.contains(ext), "no .{ext} output compared");
    }
    format!("{} files byte-identical across two runs ({})", a.len(), kinds.into_iter().collect::<Vec<_>>().join(", "))
}

// 10. Ablations

const ABLATION_SWEEP: &str = "arch_kinds = [\"mpnn\"]
widths = [32]
depths = [4]
dataset_ablations = [\"none\", \"l1000\", \"pcba\"]
seeds = [0, 1]
output = \"ablation\"

[generator]
seed = 1
n_molecules = 600

[network]
base_width = 32

[train]
epochs = 12
";

fn ablations(ws: &Workspace) -> String {
    ws.ensure_sweep();
    let d = ws.path();
    write(d, "ablation.toml", ABLATION_SWEEP);
    gnn(d, &["--out", ".", "sweep", "ablation.toml"]);
    let (header, rows) = csv_rows(&d.join("ablation/ablation.csv"));
    assert_eq!(
        header,
        [
            "arch",
            "width",
            "depth",
            "molecule_fraction",
            "label_fraction",
            "ablation",
            "task",
            "metric",
            "mean",
            "std",
            "seeds"
        ]
    );
    let tasks = |ablation: &str| -> BTreeSet<String> {
        rows.iter().filter(|r| r[5] == ablation).map(|r| r[6].clone()).collect()
    };
    let all = tasks("none");
    let expect_all: BTreeSet<String> =
        ["l1000_mcf7", "l1000_vcap", "pcba_1328", "pcqm4m_g25", "pcqm4m_n4"].map(String::from).into();
    assert_eq!(all, expect_all);
    assert_eq!(tasks("l1000"), all.iter().filter(|t| !t.starts_with("l1000")).cloned().collect());
    assert_eq!(tasks("pcba"), all.iter().filter(|t| !t.starts_with("pcba")).cloned().collect());
    for r in &rows {
        assert_eq!(r[10], "2", "{r:?}");
        r[8].parse::<f64>().unwrap_or_else(|_| panic!("mean not numeric: {r:?}"));
    }

    // Probe each task-head tap against the graph output.
    let ckpt = ws.width_128_checkpoint();
    let model = load_checkpoint(&ckpt).unwrap();
    let mut taps = vec!["graph_output_nn".to_owned()];
    taps.extend(
        model
            .spec
            .task_heads
            .iter()
            .filter(|h| h.level == TaskLevel::Graph)
            .map(|h| format!("task_heads.{}.layer1", h.name)),
    );
    write(d, "tap_ds.toml", "seed = 9\nkind = \"downstream\"\nn_molecules = 1000\n");
    gnn(d, &["--out", "tap_ds", "datagen", "tap_ds.toml"]);
    gnn(
        d,
        &[
            "--out",
            "taps",
            "fingerprint",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            "tap_ds",
            "--model-id",
            "w128",
            "--taps",
            &taps.join(","),
        ],
    );
    write(d, "tap_probe.toml", "epochs = 10\n");
    gnn(
        d,
        &[
            "--out",
            "tap_probe",
            "probe",
            "--data",
            "tap_ds",
            "--fingerprints",
            "taps",
            "--tasks",
            "downstream_class,downstream_reg",
            "--config",
            "tap_probe.toml",
        ],
    );
    let (header, rows) = csv_rows(&d.join("tap_probe/probe_summary.csv"));
    assert_eq!(header, ["input", "task", "metric", "mean", "std", "seeds", "best_epoch"]);
    let inputs: BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    let expect: BTreeSet<String> = taps.iter().map(|t| format!("w128:{t}")).collect();
    assert_eq!(inputs, expect.iter().map(String::as_str).collect());
    for input in &inputs {
        for task in ["downstream_class", "downstream_reg"] {
            assert!(rows.iter().any(|r| r[0] == *input && r[1] == task), "no {input}/{task} row");
        }
    }
    format!(
        "ablation.csv {} rows over 3 ablations, probe_summary.csv {} rows over {} taps",
        csv_rows(&d.join("ablation/ablation.csv")).1.len(),
        rows.len(),
        taps.len()
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: Box<dyn Fn(&Workspace) -> String>,
}

fn criteria() -> Vec<Criterion> {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    vec![
        Criterion { id: 1, name: "gradient suite", budget: min(2), run: Box::new(|_| gradients()) },
        Criterion { id: 2, name: "equivariance suite", budget: min(1), run: Box::new(|_| equivariance()) },
        Criterion { id: 3, name: "spectral oracle", budget: min(1), run: Box::new(|_| spectral()) },
        Criterion { id: 4, name: "metric oracles", budget: min(1), run: Box::new(|_| metrics()) },
        Criterion {
            id: 5,
            name: "power-law round trip",
            budget: Some(Duration::from_secs(1)),
            run: Box::new(|_| power_law()),
        },
        Criterion { id: 6, name: "width scaling", budget: min(30), run: Box::new(width_scaling) },
        Criterion { id: 7, name: "probing pipeline", budget: min(5), run: Box::new(probing) },
        Criterion { id: 8, name: "finetuning freeze", budget: min(5), run: Box::new(finetuning) },
        Criterion { id: 9, name: "determinism", budget: None, run: Box::new(|_| determinism()) },
        Criterion { id: 10, name: "ablation harness", budget: min(30), run: Box::new(ablations) },
    ]
}

fn main() {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ws = Workspace { dir: tempfile::tempdir().unwrap() };
    let mut failed = Vec::new();
    for c in criteria() {
        if !selected.is_empty() && !selected.contains(&c.id) {
            continue;
        }
        // Criteria that reuse the sweep are timed without it.
        if matches!(c.id, 7 | 8 | 10) {
            let _ = catch_unwind(AssertUnwindSafe(|| ws.ensure_sweep()));
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| (c.run)(&ws)));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(detail) => match c.budget {
                Some(b) if elapsed > b => (false, format!("{detail}; over the {b:?} budget")),
                _ => (true, detail),
            },
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                    .unwrap_or_default();
                (false, msg.lines().next().unwrap_or_default().to_owned())
            }
        };
        println!(
            "criterion {:>2} {} {} ({:.1}s): {detail}",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
