//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `BOOSTNET_ACCEPTANCE=1,2,9` restricts the run to the listed criteria.

mod common;

use std::time::{Duration, Instant};

use boostnet_autodiff::gradcheck::{analytic_grad, central_difference};
use boostnet_autodiff::{
    deformable_conv2d, finite_diff_check, poly_lr, pointwise_fc, Bound, ConvParams, DeformConvParams, Graph,
    InitSpec, ParamStore, SgdConfig, StreamRng, Tensor, Var,
};
use boostnet_core::ablate::{run_ablation, Ablation};
use boostnet_core::boostnet::{BoostNet, StageOutputs};
use boostnet_core::checkpoint;
use boostnet_core::config::RunConfig;
use boostnet_core::eval::{evaluate, ModelSegmenter};
use boostnet_core::image::{BinaryMask, Image, Mask, BACKGROUND, CUP, RIM};
use boostnet_core::metrics::{overlap_error, EvalFrame};
use boostnet_core::polar::{from_polar_mask, to_polar_mask, vflip_mask, vflip_polar, PolarGeometry};
use boostnet_core::synth::{generate_dataset, generate_sample, load_dataset, Split, SynthParams};
use boostnet_core::train::Trainer;
use boostnet_core::Error;
use common::*;

const EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const OFFSET_TOL: f64 = 1e-3;
const INSTANCES: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const ISOLATION_TOL: f64 = 1e-10;
const ABLATION_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ABLATION_BUDGET: Duration = Duration::from_secs(30 * 60);
const MAX_E_CUP: f64 = 0.15;
const MAX_E_DISC: f64 = 0.10;
const MIN_LOSS_DROP: f64 = 0.5;
const MIN_POLAR_JACCARD: f64 = 0.98;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(shape: &[usize], seed: u64, name: &str) -> Tensor<f64> {
    Tensor::init_named(shape, InitSpec::Gaussian { mean: 0.0, std: 1.0 }, seed, name).unwrap()
}

/// Scalarises a map with fixed random weights so every element matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> boostnet_autodiff::Result<Var> {
    let w = g.input(gaussian(g.value(y).shape(), seed, "projection"));
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Offsets whose fractional part stays in `[0.15, 0.85]`.
fn fractional(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = StreamRng::new(seed, "offsets");
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.int_inclusive(-2, 1) as f64 + rng.uniform_range(0.15, 0.85)).collect())
        .unwrap()
}

/// Largest error per op over all instances, with its tolerance.
#[derive(Default)]
struct GradTable(Vec<(String, f64, f64)>);

impl GradTable {
    fn record(&mut self, op: &str, err: f64, tol: f64) {
        match self.0.iter_mut().find(|(name, _, _)| name == op) {
            Some(entry) => entry.1 = entry.1.max(err),
            None => self.0.push((op.to_string(), err, tol)),
        }
    }

    fn check<F>(&mut self, op: &str, tol: f64, at: &Tensor<f64>, f: F)
    where
        F: Fn(&mut Graph<f64>, Var) -> boostnet_autodiff::Result<Var>,
    {
        self.record(op, finite_diff_check(f, at, EPS).unwrap(), tol);
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut t = GradTable::default();
    for seed in 0..INSTANCES {
        let a = gaussian(&[2, 3], seed, "a");
        let b = gaussian(&[2, 3], seed, "b");
        t.check("add/mul/linear_comb/scale", GRAD_TOL, &a, |g, x| {
            let c = g.input(b.clone());
            let s = g.add(x, c)?;
            let m = g.mul(s, x)?;
            let l = g.linear_comb(&[(m, 0.7), (x, -1.3), (c, 2.0)])?;
            let l = g.scale(l, 1.5)?;
            project(g, l, seed)
        });
        let away = Tensor::new(&[2, 3], a.data().iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect()).unwrap();
        t.check("relu", GRAD_TOL, &away, |g, x| {
            let r = g.relu(x)?;
            project(g, r, seed)
        });

        let (stride, pad, k) = [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)][seed as usize % 4];
        let x0 = gaussian(&[2, 3, 6, 5], seed, "x");
        let w0 = gaussian(&[4, 3, k, k], seed, "w");
        let b0 = gaussian(&[4], seed, "b");
        t.check("conv2d input", GRAD_TOL, &x0, |g, x| {
            let (w, b) = (g.input(w0.clone()), g.input(b0.clone()));
            let y = g.conv2d(x, w, b, stride, pad)?;
            project(g, y, seed)
        });
        t.check("conv2d weight", GRAD_TOL, &w0, |g, w| {
            let (x, b) = (g.input(x0.clone()), g.input(b0.clone()));
            let y = g.conv2d(x, w, b, stride, pad)?;
            project(g, y, seed)
        });
        t.check("conv2d bias", GRAD_TOL, &b0, |g, b| {
            let (x, w) = (g.input(x0.clone()), g.input(w0.clone()));
            let y = g.conv2d(x, w, b, stride, pad)?;
            project(g, y, seed)
        });

        let stride = 1 + seed as usize % 2;
        let ho = (6 + 2 - 3) / stride + 1;
        let dx = gaussian(&[2, 2, 6, 6], seed, "dx");
        let dw = gaussian(&[3, 2, 3, 3], seed, "dw");
        let db = gaussian(&[3], seed, "db");
        let off = fractional(&[2, 18, ho, ho], seed);
        let deform = |g: &mut Graph<f64>, x: Var, o: Var, w: Var, b: Var| {
            let y = g.deform_conv2d(x, o, w, b, stride, 1)?;
            project(g, y, seed)
        };
        t.check("deform_conv2d input", GRAD_TOL, &dx, |g, x| {
            let (o, w, b) = (g.input(off.clone()), g.input(dw.clone()), g.input(db.clone()));
            deform(g, x, o, w, b)
        });
        t.check("deform_conv2d weight", GRAD_TOL, &dw, |g, w| {
            let (x, o, b) = (g.input(dx.clone()), g.input(off.clone()), g.input(db.clone()));
            deform(g, x, o, w, b)
        });
        t.check("deform_conv2d bias", GRAD_TOL, &db, |g, b| {
            let (x, o, w) = (g.input(dx.clone()), g.input(off.clone()), g.input(dw.clone()));
            deform(g, x, o, w, b)
        });
        t.check("deform_conv2d offsets", OFFSET_TOL, &off, |g, o| {
            let (x, w, b) = (g.input(dx.clone()), g.input(dw.clone()), g.input(db.clone()));
            deform(g, x, o, w, b)
        });

        let mut store = ParamStore::<f64>::new();
        let dc = DeformConvParams::new(&mut store, "dc", 2, 3, 3, InitSpec::fan_in(18), seed).unwrap();
        *store.get_mut(dc.offset_predictor.weight) =
            Tensor::init_named(&[18, 2, 3, 3], InitSpec::Gaussian { mean: 0.0, std: 0.01 }, seed, "ow").unwrap();
        *store.get_mut(dc.offset_predictor.bias) = fractional(&[18], seed);
        let fc = ConvParams::new(&mut store, "fc", 3, 2, 1, 1, InitSpec::fan_in(3), seed).unwrap();
        *store.get_mut(fc.bias) = gaussian(&[2], seed, "fcb");
        let lx = gaussian(&[1, 2, 5, 5], seed, "lx");
        for (name, tol) in [("dc.offset.weight", OFFSET_TOL), ("dc.offset.bias", OFFSET_TOL), ("dc.weight", GRAD_TOL), ("fc.weight", GRAD_TOL), ("fc.bias", GRAD_TOL)] {
            let id = store.id(name).unwrap();
            t.check(&format!("layer {name}"), tol, store.get(id), |g, w| {
                let mut vars = store.bind_frozen(g).vars().to_vec();
                vars[id.index()] = w;
                let p = Bound::from_vars(vars);
                let x = g.input(lx.clone());
                let y = deformable_conv2d(g, &p, x, &dc)?;
                let y = pointwise_fc(g, &p, y, &fc)?;
                project(g, y, seed)
            });
        }

        let small = gaussian(&[2, 2, 3, 4], seed, "small");
        t.check("bilinear_upsample", GRAD_TOL, &small, |g, x| {
            let y = g.bilinear_upsample(x, 7, 9)?;
            project(g, y, seed)
        });
        let other = gaussian(&[2, 1, 3, 4], seed, "other");
        t.check("concat_channels/crop", GRAD_TOL, &small, |g, x| {
            let o = g.input(other.clone());
            let c = g.concat_channels(&[o, x, o])?;
            let c = g.crop(c, 1, 1, 2, 2)?;
            project(g, c, seed)
        });
        let labels = common::labels(seed, 2, 3);
        let logits = gaussian(&[2, 3, 3, 3], seed, "logits");
        t.check("softmax_ce", GRAD_TOL, &logits, |g, x| g.softmax_ce(x, &labels));

        let mut n = BoostNet::<f64>::new(&tiny_config(), seed).unwrap();
        randomize(&mut n, seed, 0.5);
        let x = input(seed, 1, 16);
        let y = common::labels(seed, 1, 8);
        for e in n.params.entries() {
            let id = n.params.id(&e.name).unwrap();
            let err = finite_diff_check(|g: &mut Graph<f64>, w| loss_with(&n, g, &x, &y, id, w), &e.value, EPS).unwrap();
            let tol = if e.name.contains(".offset.") { OFFSET_TOL } else { GRAD_TOL };
            let key = if e.name.contains(".offset.") { "end-to-end loss (offsets)" } else { "end-to-end loss" };
            t.record(key, err, tol);
        }
    }
    let elapsed = start.elapsed();
    let failing: Vec<String> = t.0.iter().filter(|(_, e, tol)| !(e < tol)).map(|(n, e, _)| format!("{n} {e:.2e}")).collect();
    let worst = t.0.iter().map(|(_, e, tol)| e / tol).fold(0.0, f64::max);
    let e2e = t.0.iter().find(|(n, _, _)| n == "end-to-end loss").map(|r| r.1).unwrap_or(f64::NAN);
    let pass = failing.is_empty() && elapsed < GRAD_BUDGET;
    outcome(
        pass,
        format!(
            "{} op checks x {INSTANCES} instances, worst error/tolerance {worst:.3}, end-to-end {e2e:.2e}, {:.1}s (budget {}s){}",
            t.0.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    )
}

fn stage_values(n: &BoostNet<f64>, x: &Tensor<f64>) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let p = n.params.bind_frozen(&mut g);
    let (_, _, h, w) = x.dims4().unwrap();
    let xv = g.input(x.clone());
    let out = n.forward(&mut g, &p, xv, (h, w)).unwrap();
    let get = |vs: &[Var]| vs.iter().map(|&v| g.value(v).clone()).collect();
    (get(&out.dop), get(&out.bop))
}

fn boosting_algebra() -> Outcome {
    let mut additive = 0;
    let mut projection = 0;
    let mut cases: Vec<(BoostNet<f64>, Tensor<f64>)> = Vec::new();
    for seed in 0..INSTANCES {
        let mut n = BoostNet::<f64>::new(&tiny_config(), seed).unwrap();
        randomize(&mut n, seed, 0.4);
        cases.push((n, input(seed, 2, 16)));
    }
    let full = BoostNet::<f64>::new(&RunConfig::default().model, 0).unwrap();
    cases.push((full, input(99, 1, 64)));
    let total = cases.len();
    for (mut n, x) in cases {
        set_au(&mut n, 1, 1.0, 1.0);
        set_au(&mut n, 2, 1.0, 1.0);
        let (dop, bop) = stage_values(&n, &x);
        let exact = (1..3).all(|m| {
            bop[m].data().iter().zip(bop[m - 1].data()).zip(dop[m].data()).all(|((&b, &p), &d)| b == p + d)
        });
        additive += exact as usize;
        set_au(&mut n, 1, 1.0, 0.0);
        set_au(&mut n, 2, 1.0, 0.0);
        let (_, bop) = stage_values(&n, &x);
        projection += (bop[2].data() == bop[0].data()) as usize;
    }
    outcome(
        additive == total && projection == total,
        format!("[I|I]: BOP_m == BOP_(m-1) + DOP_m bitwise in {additive}/{total} models; [I|0]: BOP_2 == BOP_0 in {projection}/{total}"),
    )
}

fn max_abs_sensitivity(n: &BoostNet<f64>, name: &str, pick: fn(&StageOutputs) -> Var, seed: u64) -> f64 {
    let id = n.params.id(name).unwrap();
    let x = input(seed, 1, 16);
    let r = gaussian(&[1, 3, 8, 8], seed, "weights");
    let f = |g: &mut Graph<f64>, w| {
        let out = forward_with(n, g, &x, id, w)?;
        let rv = g.input(r.clone());
        let prod = g.mul(pick(&out), rv)?;
        Ok::<_, Error>(g.sum(prod)?)
    };
    let numeric = central_difference(&f, n.params.get(id), EPS).unwrap();
    let analytic = analytic_grad(&f, n.params.get(id)).unwrap();
    numeric.data().iter().chain(analytic.data()).fold(0.0f64, |m, v| m.max(v.abs()))
}

fn stage_isolation() -> Outcome {
    let (mut worst_dop0, mut worst_bop1, mut checked) = (0.0f64, 0.0f64, 0);
    let mut weakest_bop2 = f64::INFINITY;
    for seed in 0..3 {
        let mut n = BoostNet::<f64>::new(&tiny_config(), seed).unwrap();
        randomize(&mut n, seed, 0.4);
        let names: Vec<String> = n.params.entries().iter().map(|e| e.name.clone()).collect();
        for name in &names {
            let later = ["dsu1.", "dsu2.", "au1.", "au2."].iter().any(|p| name.starts_with(p));
            if later {
                worst_dop0 = worst_dop0.max(max_abs_sensitivity(&n, name, |o| o.dop[0], seed));
                checked += 1;
            }
            if name.starts_with("dsu2.") || name.starts_with("au2.") {
                worst_bop1 = worst_bop1.max(max_abs_sensitivity(&n, name, |o| o.bop[1], seed));
            }
        }
        weakest_bop2 = weakest_bop2.min(max_abs_sensitivity(&n, "dsu2.res.weight", |o| o.bop[2], seed));
    }
    outcome(
        worst_dop0 < ISOLATION_TOL && worst_bop1 < ISOLATION_TOL && weakest_bop2 > 1e-6,
        format!(
            "{checked} later-stage tensors: max |dDOP_0| {worst_dop0:.1e}, max |dBOP_1/d(dsu2, au2)| {worst_bop1:.1e} (tolerance {ISOLATION_TOL:.0e}); control |dBOP_2/d dsu2| >= {weakest_bop2:.1e}"
        ),
    )
}

struct AblationRun {
    result: Ablation,
    elapsed: Duration,
    loss_drops: Vec<f64>,
}

fn run_benchmark_ablation() -> AblationRun {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.ablation.seeds = ABLATION_SEEDS.to_vec();
    cfg.ablation.stages = vec![0, 1, 2];
    generate_dataset(&cfg.data.synth, cfg.data.n_train, cfg.data.n_test, dir.path()).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    let per_epoch = cfg.iterations_per_epoch(data.train.len());
    let start = Instant::now();
    let mut first = std::collections::HashMap::new();
    let mut last_epoch: std::collections::HashMap<u64, Vec<f64>> = std::collections::HashMap::new();
    let last = cfg.train.epochs - 1;
    let result = run_ablation::<f32>(
        &cfg,
        data.split(Split::Train),
        data.split(Split::Test),
        &mut |seed, m, r| {
            if m == 2 {
                first.entry(seed).or_insert(r.loss);
                if r.epoch == last {
                    last_epoch.entry(seed).or_default().push(r.loss);
                }
            }
            Ok(())
        },
        &mut |arm| {
            let e = &arm.report.mean;
            eprintln!(
                "  seed {} M={}: E_disc {:.4} E_cup {:.4} E_rim {:.4} ({:.0}s)",
                arm.seed,
                arm.stages,
                e.e_disc,
                e.e_cup,
                e.e_rim,
                start.elapsed().as_secs_f64()
            );
            Ok(())
        },
    )
    .unwrap();
    let elapsed = start.elapsed();
    let loss_drops = ABLATION_SEEDS
        .iter()
        .map(|s| {
            let tail = &last_epoch[s];
            assert_eq!(tail.len(), per_epoch);
            1.0 - tail.iter().sum::<f64>() / tail.len() as f64 / first[s]
        })
        .collect();
    AblationRun {
        result,
        elapsed,
        loss_drops,
    }
}

fn boosting_trend(run: &AblationRun) -> Outcome {
    let means = run.result.means(&[0, 1, 2]);
    let (e0, e1, e2) = (&means[0].1, &means[1].1, &means[2].1);
    let cup = e2.e_cup <= e1.e_cup && e1.e_cup <= e0.e_cup;
    let rim = e2.e_rim <= e1.e_rim && e1.e_rim <= e0.e_rim;
    let csv = run.result.to_csv(&[0, 1, 2]);
    let rows: Vec<&str> = csv.lines().collect();
    let shape = rows.len() == 1 + 3 * ABLATION_SEEDS.len() + 3
        && rows[0] == "seed,method,E_disc,E_cup,E_rim"
        && rows[1..].chunks(3).all(|c| {
            c[0].contains(",without boosting,") && c[1].contains(",boosting once,") && c[2].contains(",boosting twice,")
        });
    let on_time = run.elapsed < ABLATION_BUDGET;
    outcome(
        cup && rim && shape && on_time,
        format!(
            "{} seeds, mean E_cup {:.4} -> {:.4} -> {:.4}, mean E_rim {:.4} -> {:.4} -> {:.4} (M=0 -> 1 -> 2); csv rows {}; {:.0}s (budget {}s)",
            ABLATION_SEEDS.len(),
            e0.e_cup,
            e1.e_cup,
            e2.e_cup,
            e0.e_rim,
            e1.e_rim,
            e2.e_rim,
            rows.len(),
            run.elapsed.as_secs_f64(),
            ABLATION_BUDGET.as_secs()
        ),
    )
}

fn training_sanity(run: &AblationRun) -> Outcome {
    let e = run.result.means(&[2])[0].1;
    let min_drop = run.loss_drops.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        e.e_cup < MAX_E_CUP && e.e_disc < MAX_E_DISC && min_drop >= MIN_LOSS_DROP,
        format!(
            "M=2 mean over {} seeds: E_cup {:.4} (< {MAX_E_CUP}), E_disc {:.4} (< {MAX_E_DISC}); smallest train-loss drop {:.1}% (>= {:.0}%)",
            ABLATION_SEEDS.len(),
            e.e_cup,
            e.e_disc,
            100.0 * min_drop,
            100.0 * MIN_LOSS_DROP
        ),
    )
}

fn metric_oracle() -> Outcome {
    let mask = |bits: u32| BinaryMask::new(3, 3, (0..9).map(|i| bits >> i & 1 == 1).collect()).unwrap();
    let masks: Vec<BinaryMask> = (0..512).map(mask).collect();
    let mut mismatches = 0usize;
    for a in 0..512u32 {
        for b in 0..512u32 {
            let set = |m: u32| (0..9).filter(|i| m >> i & 1 == 1).collect::<std::collections::BTreeSet<u32>>();
            let (sa, sb) = (set(a), set(b));
            let union = sa.union(&sb).count();
            let want = if union == 0 { 0.0 } else { 1.0 - sa.intersection(&sb).count() as f64 / union as f64 };
            mismatches += (overlap_error(&masks[a as usize], &masks[b as usize]).unwrap() != want) as usize;
        }
    }
    outcome(mismatches == 0, format!("{} pairs of 3x3 masks, {mismatches} differ from the set oracle", 512 * 512))
}

fn ellipse_mask(size: usize, cx: f64, cy: f64, ax: f64, ay: f64, angle: f64) -> Mask {
    let (c, s) = (angle.cos(), angle.sin());
    let data = (0..size * size)
        .map(|k| {
            let (x, y) = ((k % size) as f64 + 0.5 - cx, (k / size) as f64 + 0.5 - cy);
            let (u, v) = (c * x + s * y, -s * x + c * y);
            if (u / ax).powi(2) + (v / ay).powi(2) <= 1.0 {
                RIM
            } else {
                BACKGROUND
            }
        })
        .collect();
    Mask::new(size, size, data).unwrap()
}

fn jaccard(a: &BinaryMask, b: &BinaryMask) -> f64 {
    1.0 - overlap_error(a, b).unwrap()
}

fn polar_roundtrip() -> Outcome {
    let geom = PolarGeometry { window: 128, angles: 180, radii: 180 };
    let mut shapes = vec![
        ellipse_mask(128, 64.0, 64.0, 40.0, 40.0, 0.0),
        ellipse_mask(128, 64.0, 64.0, 12.0, 12.0, 0.0),
        ellipse_mask(128, 64.0, 64.0, 50.0, 30.0, 0.3),
        ellipse_mask(128, 60.0, 70.0, 25.0, 35.0, 1.1),
    ];
    let synth = SynthParams::default();
    for i in 0..6 {
        let s = generate_sample(&synth, i).unwrap();
        let w = boostnet_core::polar::crop_od_window(&s.image, Some(&s.mask), s.od_center, 128, (0, 0), 0.0).unwrap();
        shapes.push(w.mask.unwrap());
    }
    let mut worst = 1.0f64;
    for m in &shapes {
        let back = from_polar_mask(&to_polar_mask(m, &geom).unwrap(), &geom).unwrap();
        let disc = |k: &Mask| BinaryMask::new(k.height, k.width, k.data.iter().map(|&c| c != BACKGROUND).collect()).unwrap();
        worst = worst.min(jaccard(&disc(m), &disc(&back)));
        if m.count(CUP) > 0 {
            worst = worst.min(jaccard(&m.binary(CUP), &back.binary(CUP)));
        }
    }
    let mut involution = true;
    for seed in 0..INSTANCES {
        let t = gaussian(&[3, 180, 180], seed, "polar");
        let img = Image::new(3, 180, 180, t.data().iter().map(|&v| v as f32).collect()).unwrap();
        let mut rng = StreamRng::new(seed, "polar-mask");
        let mask = Mask::new(180, 180, (0..180 * 180).map(|_| rng.below(3) as u8).collect()).unwrap();
        involution &= vflip_polar(&vflip_polar(&img)) == img && vflip_mask(&vflip_mask(&mask)) == mask;
        involution &= vflip_polar(&img) != img;
    }
    outcome(
        worst >= MIN_POLAR_JACCARD && involution,
        format!(
            "{} disc/ellipse/cup masks at A=R=180: min Jaccard {worst:.4} (>= {MIN_POLAR_JACCARD}); vflip involution exact: {involution}",
            shapes.len() + shapes.iter().filter(|m| m.count(CUP) > 0).count()
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.polar = PolarGeometry { window: 32, angles: 32, radii: 32 };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 3;
    cfg.data.synth.size = 48;
    let train: Vec<_> = (0..5).map(|i| generate_sample(&cfg.data.synth, i).unwrap()).collect();
    let test: Vec<_> = (5..8).map(|i| generate_sample(&cfg.data.synth, i).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut t = Trainer::<f32>::new(&cfg, train.len()).unwrap();
        t.fit(&train, &mut |_| Ok(()), &mut |_, _| Ok(())).unwrap();
        let path = dir.path().join(name);
        checkpoint::save(&t, &path).unwrap();
        let loaded = checkpoint::load::<f32>(&path).unwrap();
        let seg = ModelSegmenter { model: &loaded.model, geometry: cfg.polar.clone(), tta: true };
        let mut report = evaluate(&seg, &test, &cfg.polar, EvalFrame::Cartesian, true).unwrap();
        report.checkpoint_hash = Some(checkpoint::file_hash(&path).unwrap());
        (std::fs::read(&path).unwrap(), report.to_jsonl())
    };
    let (ca, ra) = run("a.ckpt");
    let (cb, rb) = run("b.ckpt");
    outcome(
        ca == cb && ra == rb,
        format!("two runs: checkpoints {} bytes identical: {}; eval reports identical: {}", ca.len(), ca == cb, ra == rb),
    )
}

fn training_constants() -> Outcome {
    let c = RunConfig::default();
    let sgd = c.optim.sgd(1000);
    let checks = [
        ("poly_lr(0) = 0.01", poly_lr(0, &sgd).unwrap() == 0.01),
        ("poly_lr(T) = 0", poly_lr(1000, &sgd).unwrap() == 0.0),
        ("poly power 0.9", c.optim.poly_power == 0.9),
        ("weight decay 0.0005", c.optim.weight_decay == 0.0005),
        ("momentum 0.9", c.optim.momentum == 0.9),
        ("defaults equal optimizer constants", SgdConfig::with_total_iters(1000) == sgd),
        ("jitter 20 px at a 640 window", c.augment.max_jitter_px == 20.0 && c.augment.jitter_reference_window == 640),
        ("scale [0.8, 1.2]", c.augment.scale_min == 0.8 && c.augment.scale_max == 1.2),
        ("full-scale batch 9, 200 epochs, 325/325", {
            let p = RunConfig::full_scale();
            (p.train.batch_size, p.train.epochs, p.data.n_train, p.data.n_test, p.polar.window) == (9, 200, 325, 325, 640)
        }),
        ("test-time flip averaging on", c.eval.tta),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} constants match", checks.len())
        } else {
            format!("mismatched: {}", failed.join(", "))
        },
    )
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("BOOSTNET_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |k: u32| selected.as_ref().is_none_or(|s| s.contains(&k));
    let names = [
        "gradient suite",
        "boosting algebra",
        "stage isolation",
        "boosting trend",
        "training sanity",
        "metric oracle",
        "polar round trip",
        "determinism",
        "training constants",
    ];
    let mut ablation: Option<AblationRun> = None;
    let mut failures = 0;
    for k in 1..=9u32 {
        if !wanted(k) {
            continue;
        }
        if (k == 4 || k == 5) && ablation.is_none() {
            ablation = Some(run_benchmark_ablation());
        }
        let o = match k {
            1 => gradient_suite(),
            2 => boosting_algebra(),
            3 => stage_isolation(),
            4 => boosting_trend(ablation.as_ref().unwrap()),
            5 => training_sanity(ablation.as_ref().unwrap()),
            6 => metric_oracle(),
            7 => polar_roundtrip(),
            8 => determinism(),
            _ => training_constants(),
        };
        failures += (!o.pass) as usize;
        println!("criterion {k} {}: {} | {}", names[k as usize - 1], if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if let Some(run) = &ablation {
        println!("ablation table:\n{}", run.result.to_csv(&[0, 1, 2]).trim_end());
    }
    if failures > 0 {
        std::process::exit(1);
    }
}

