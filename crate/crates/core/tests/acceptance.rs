//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL ...` line
//! with the measured quantities, then asserts.
//!
//! The training criteria (6, 7, 9) share a lock so they never compete for
//! the CPU and their wall-clock budgets stay meaningful.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use claustrum_seg::data_io::{Fold, Manifest, SplitPlan, SplitStrategy};
use claustrum_seg::metrics::{dice_coefficient, hausdorff95, volumetric_similarity};
use claustrum_seg::model::{build_model, dice_loss, dice_loss_grad, ModelConfig, DEFAULT_PARAM_COUNT, REPORTED_PARAM_COUNT};
use claustrum_seg::phantom::{generate_cohort, uniform_counts, PhantomSpec, ScannerStyle};
use claustrum_seg::pipeline::{
    fuse_views, run_experiment, run_kind, ExperimentKind, ExperimentOptions, SliceSampling, TrainSpec,
};
use claustrum_seg::preprocess::{crop_pad_inplane, invert_crop_pad};
use claustrum_seg::rng::{self, SeededRng};
use claustrum_seg::stats::{mann_whitney_u_with, wilcoxon_signed_rank_with, Approach};
use claustrum_seg::views::{from_view, to_view, ViewAxis};
use claustrum_seg::{AxisOrder, Anatomical, Volume, VolumeKind};
use rand::RngExt;

static TRAINING: Mutex<()> = Mutex::new(());

/// Written straight to the process stdout so the line shows up without `--nocapture`.
fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("criterion {criterion}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn within(budget: Duration, elapsed: Duration) -> bool {
    elapsed <= budget
}

fn random_mask(shape: [usize; 3], spacing: [f64; 3], density: f64, r: &mut SeededRng) -> Volume {
    let n = shape.iter().product::<usize>();
    let data = (0..n).map(|_| (rng::unit_f64(r) < density) as u8 as f32).collect();
    Volume::new(shape, spacing, VolumeKind::Mask, data).unwrap()
}

fn points(v: &Volume) -> Vec<[usize; 3]> {
    (0..v.len()).filter(|&i| v.data()[i] != 0.0).map(|i| v.coords(i)).collect()
}

fn oracle_percentile95(mut d: Vec<f64>) -> f64 {
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (d.len() - 1) as f64 * 0.95;
    let lo = h.floor() as usize;
    if lo + 1 >= d.len() {
        return d[d.len() - 1];
    }
    d[lo] + (h - lo as f64) * (d[lo + 1] - d[lo])
}

fn oracle_directed(from: &[[usize; 3]], to: &[[usize; 3]], s: [f64; 3]) -> f64 {
    let d = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    let t: [f64; 3] = std::array::from_fn(|k| (a[k] as f64 - b[k] as f64) * s[k]);
                    (t[0] * t[0] + t[1] * t[1]) + t[2] * t[2]
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    oracle_percentile95(d)
}

#[test]
fn criterion_2_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut r = rng::seeded(2);
    let (mut hd_mismatch, mut overlap_err, mut cases) = (0usize, 0f64, 0usize);
    while cases < 500 {
        let shape = [r.random_range(1..=30), r.random_range(1..=30), r.random_range(1..=30)];
        let spacing = [r.random_range(0.3..3.0), r.random_range(0.3..3.0), r.random_range(0.3..3.0)];
        let n = shape.iter().product::<usize>() as f64;
        let density = r.random_range(1.0 / n..(3000.0 / n).min(0.5));
        let g = random_mask(shape, spacing, density, &mut r);
        let p = random_mask(shape, spacing, r.random_range(1.0 / n..(3000.0 / n).min(0.5)), &mut r);
        let (gp, pp) = (points(&g), points(&p));
        if gp.is_empty() || pp.is_empty() {
            continue;
        }
        cases += 1;
        let want = oracle_directed(&gp, &pp, spacing).max(oracle_directed(&pp, &gp, spacing));
        let got = hausdorff95(&g, &p).unwrap();
        if got.to_bits() != want.to_bits() {
            hd_mismatch += 1;
        }
        let both = gp.iter().filter(|x| p.get(x[0], x[1], x[2]) != 0.0).count() as f64;
        let (ng, np) = (gp.len() as f64, pp.len() as f64);
        let dsc = 2.0 * both / (ng + np);
        let vs = 1.0 - (ng - np).abs() / (ng + np);
        overlap_err = overlap_err
            .max((dice_coefficient(&g, &p).unwrap() - dsc).abs())
            .max((volumetric_similarity(&g, &p).unwrap() - vs).abs());
    }
    let elapsed = start.elapsed();
    let pass = hd_mismatch == 0 && overlap_err <= 1e-12 && within(Duration::from_secs(120), elapsed);
    report(
        2,
        pass,
        &format!(
            "{cases} pairs, HD95 mismatches {hd_mismatch}, max DSC/VS error {overlap_err:.1e}, {:.1}s (limit 120s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn oracle_dice_loss(p: &[f64], g: &[f64], s: f64) -> f64 {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let total: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>();
    -(2.0 * inter + s) / (total + s)
}

#[test]
fn criterion_3_dice_loss() {
    let start = Instant::now();
    let g: Vec<f32> = (0..64).map(|i| (i % 3 == 0) as u8 as f32).collect();
    let perfect = dice_loss(&g, &g, 1.0).unwrap() == -1.0;
    let zeros = vec![0f32; 100];
    let both_empty = dice_loss(&zeros, &zeros, 1.0).unwrap() == -1.0;
    let mut g99 = vec![0f32; 100];
    g99[..99].fill(1.0);
    let missed = dice_loss(&zeros, &g99, 1.0).unwrap() == -1.0 / 100.0;

    let mut r = rng::seeded(3);
    let h = 1e-4;
    let mut worst = 0f64;
    for _ in 0..50 {
        let p: Vec<f32> = (0..64).map(|_| rng::unit_f64(&mut r) as f32).collect();
        let g: Vec<f32> = (0..64).map(|_| (rng::unit_f64(&mut r) < 0.3) as u8 as f32).collect();
        let analytic = dice_loss_grad(&p, &g, 1.0).unwrap();
        let pf: Vec<f64> = p.iter().map(|&x| x as f64).collect();
        let gf: Vec<f64> = g.iter().map(|&x| x as f64).collect();
        for i in 0..64 {
            let mut up = pf.clone();
            let mut down = pf.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (oracle_dice_loss(&up, &gf, 1.0) - oracle_dice_loss(&down, &gf, 1.0)) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    let pass = perfect && both_empty && missed && worst <= 1e-4 && within(Duration::from_secs(60), elapsed);
    report(
        3,
        pass,
        &format!(
            "examples p=g {perfect}, both empty {both_empty}, 99 missed {missed}; 50 random 8x8 cases, worst gradient relative error {worst:.2e} (limit 1e-4), {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn random_order(r: &mut SeededRng) -> AxisOrder {
    let mut dirs = [Anatomical::LeftRight, Anatomical::PosteriorAnterior, Anatomical::InferiorSuperior];
    rng::shuffle(&mut dirs, r);
    AxisOrder::new(dirs).unwrap()
}

#[test]
fn criterion_4_transform_round_trips() {
    let start = Instant::now();
    let mut r = rng::seeded(4);
    let (mut view_failures, mut crop_failures) = (0, 0);
    for _ in 0..200 {
        let shape = [r.random_range(1..=40), r.random_range(1..=40), r.random_range(1..=40)];
        let data = (0..shape.iter().product::<usize>()).map(|_| r.random::<f32>() * 4.0 - 2.0).collect();
        let v = Volume::new(shape, [1.0, 1.2, 0.8], VolumeKind::Image, data)
            .unwrap()
            .with_axis_order(Some(random_order(&mut r)));
        for axis in ViewAxis::ALL {
            if from_view(&to_view(&v, axis).unwrap()).unwrap() != v {
                view_failures += 1;
            }
            // padding only
            let target = (r.random_range(40..=56), r.random_range(40..=56));
            let (mid, rec) = crop_pad_inplane(&v, target, axis).unwrap();
            if invert_crop_pad(&mid, &rec).unwrap() != v {
                crop_failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = view_failures == 0 && crop_failures == 0 && within(Duration::from_secs(60), elapsed);
    report(
        4,
        pass,
        &format!(
            "200 volumes x 3 views: view round-trip failures {view_failures}, crop/pad round-trip failures {crop_failures}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn random_prob(shape: [usize; 3], r: &mut SeededRng) -> Volume {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng::unit_f64(r) as f32).collect();
    Volume::new(shape, [1.0; 3], VolumeKind::Probability, data).unwrap()
}

#[test]
fn criterion_5_fusion_contract() {
    let mut r = rng::seeded(5);
    let (mut endpoint, mut fixed, mut symmetric) = (true, true, true);
    for _ in 0..100 {
        let shape = [r.random_range(1..=16), r.random_range(1..=16), r.random_range(1..=16)];
        let a = random_prob(shape, &mut r);
        let c = random_prob(shape, &mut r);
        let pair = |x: &Volume, y: &Volume| BTreeMap::from([(ViewAxis::Axial, x.clone()), (ViewAxis::Coronal, y.clone())]);
        endpoint &= fuse_views(&pair(&a, &c), 1.0).unwrap().data() == a.data();
        let lambda = rng::unit_f64(&mut r);
        fixed &= fuse_views(&pair(&a, &a), lambda).unwrap().data() == a.data();
        symmetric &= fuse_views(&pair(&a, &c), 0.5).unwrap() == fuse_views(&pair(&c, &a), 0.5).unwrap();
    }
    let pass = endpoint && fixed && symmetric;
    report(
        5,
        pass,
        &format!("100 random volumes: lambda=1 endpoint {endpoint}, fixed point {fixed}, lambda=0.5 symmetry {symmetric}"),
    );
    assert!(pass);
}

/// Reduced-width phantom configuration shared by the training criteria.
fn phantom_spec(epochs: usize, views: Vec<ViewAxis>) -> TrainSpec {
    TrainSpec {
        batch_size: 8,
        learning_rate: 1e-3,
        max_epochs: epochs,
        views,
        slice_sampling: SliceSampling::Foreground { background_ratio: 0.25 },
        model: ModelConfig {
            input_size: (64, 64),
            channel_widths: vec![16, 32, 64],
            ..ModelConfig::default()
        },
        ..TrainSpec::default()
    }
}

fn cohort(counts: BTreeMap<ScannerStyle, usize>, seed: u64, dir: &Path) -> Manifest {
    generate_cohort(&counts, seed, &PhantomSpec::default(), dir).unwrap()
}

const E2E_EPOCHS: usize = 3;

#[test]
fn criterion_6_end_to_end_phantom_training() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let counts = BTreeMap::from([
        (ScannerStyle::A, 8),
        (ScannerStyle::B, 8),
        (ScannerStyle::C, 7),
        (ScannerStyle::D, 7),
    ]);
    let manifest = cohort(counts, 60, dir.path());
    let mut ids: Vec<String> = manifest.subjects.iter().map(|s| s.subject_id.clone()).collect();
    rng::shuffle(&mut ids, &mut rng::seeded(61));
    let plan = SplitPlan {
        strategy: SplitStrategy::StratifiedKfold,
        seed: 61,
        folds: vec![Fold {
            name: "holdout".into(),
            train: ids[..20].to_vec(),
            validation: ids[20..25].to_vec(),
            test: ids[25..].to_vec(),
            fraction: None,
        }],
    };
    let spec = phantom_spec(E2E_EPOCHS, vec![ViewAxis::Axial, ViewAxis::Coronal]);
    let opts = ExperimentOptions {
        name: "phantom-e2e".into(),
        seed: 6,
        combinations: vec![
            vec![ViewAxis::Axial, ViewAxis::Coronal],
            vec![ViewAxis::Axial],
            vec![ViewAxis::Coronal],
        ],
        ..ExperimentOptions::default()
    };
    let rep = run_experiment(&manifest, &plan, &spec, &opts).unwrap();
    let mean = |label: &str, f: fn(&claustrum_seg::pipeline::MetricSummary) -> Option<f64>| {
        f(&rep.combination(label).unwrap().overall).unwrap_or(f64::NAN)
    };
    let dsc = |s: &claustrum_seg::pipeline::MetricSummary| s.dsc.as_ref().map(|x| x.mean);
    let vs = |s: &claustrum_seg::pipeline::MetricSummary| s.vs.as_ref().map(|x| x.mean);
    let (ac, a, c) = (mean("A+C", dsc), mean("A", dsc), mean("C", dsc));
    let ac_vs = mean("A+C", vs);
    let elapsed = start.elapsed();
    let pass = ac >= 0.6
        && ac_vs >= 0.8
        && ac >= a.max(c) - 0.05
        && within(Duration::from_secs(30 * 60), elapsed);
    report(
        6,
        pass,
        &format!(
            "20/5/5 phantoms, {E2E_EPOCHS} epochs: A+C mean DSC {ac:.4} (>= 0.6), mean VS {ac_vs:.4} (>= 0.8); single-view DSC A {a:.4}, C {c:.4} (A+C >= max - 0.05); {:.0}s (limit 1800s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

const ABLATION_EPOCHS: usize = 3;

#[test]
fn criterion_7_fraction_ablation_shape() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = cohort(uniform_counts(10), 70, dir.path());
    let spec = phantom_spec(ABLATION_EPOCHS, vec![ViewAxis::Axial]);
    let kind = ExperimentKind::FractionAblation { steps: vec![0.2, 0.6, 1.0] };
    let opts = ExperimentOptions { seed: 7, ..ExperimentOptions::default() };
    let rep = run_kind(&kind, &manifest, &spec, &opts).unwrap();
    let by_fraction: Vec<(f64, usize, f64)> = rep
        .folds
        .iter()
        .map(|f| (f.fraction.unwrap(), f.n_train, f.summary.dsc.as_ref().map_or(f64::NAN, |s| s.mean)))
        .collect();
    let d = |i: usize| by_fraction[i].2;
    let (early, late) = (d(1) - d(0), d(2) - d(1));
    let elapsed = start.elapsed();
    let pass = d(2) > d(0) && late < early && within(Duration::from_secs(60 * 60), elapsed);
    let curve: Vec<String> = by_fraction
        .iter()
        .map(|(f, n, dsc)| format!("{:.0}% (n={n}) DSC {dsc:.4}", f * 100.0))
        .collect();
    report(
        7,
        pass,
        &format!(
            "40 phantoms: {}; gain 20->60% {early:+.4}, 60->100% {late:+.4}; {:.0}s (limit 3600s)",
            curve.join(", "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Two-sided tail probability from an enumerated null distribution.
fn enumerated_p(null: &[f64], observed: f64) -> f64 {
    let le = null.iter().filter(|&&x| x <= observed + 1e-9).count() as f64;
    let ge = null.iter().filter(|&&x| x >= observed - 1e-9).count() as f64;
    (2.0 * le.min(ge) / null.len() as f64).min(1.0)
}

/// Sample values realising one tie pattern: `groups` consecutive runs of equal magnitudes.
fn tied_values(groups: &[usize]) -> Vec<f64> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(g, &len)| std::iter::repeat_n(g as f64 + 1.0, len))
        .collect()
}

/// Every composition of `n` into positive parts.
fn compositions(n: usize) -> Vec<Vec<usize>> {
    (0..1u32 << (n - 1))
        .map(|cuts| {
            let mut parts = vec![1];
            for b in 0..n - 1 {
                if cuts >> b & 1 == 1 {
                    parts.push(1);
                } else {
                    *parts.last_mut().unwrap() += 1;
                }
            }
            parts
        })
        .collect()
}

fn signed_rank_sum(values: &[f64], signs: u32) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    (0..values.len())
        .filter(|&i| signs >> i & 1 == 1)
        .map(|i| {
            let below = abs.iter().filter(|&&x| x < abs[i]).count() as f64;
            let equal = abs.iter().filter(|&&x| x == abs[i]).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .sum()
}

fn rank_sum_u(pooled: &[f64], in_a: &[bool]) -> f64 {
    let n_a = in_a.iter().filter(|&&b| b).count() as f64;
    let r: f64 = (0..pooled.len())
        .filter(|&i| in_a[i])
        .map(|i| {
            let below = pooled.iter().filter(|&&x| x < pooled[i]).count() as f64;
            let equal = pooled.iter().filter(|&&x| x == pooled[i]).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .sum();
    r - n_a * (n_a + 1.0) / 2.0
}

fn subsets(n: usize, k: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).map(|i| m >> i & 1 == 1).collect())
        .collect()
}

#[test]
fn criterion_8_exact_tests_against_enumeration_and_monte_carlo() {
    let start = Instant::now();
    let mut worst_exhaustive = 0f64;
    let mut configurations = 0usize;
    for n in 1..=8usize {
        for groups in compositions(n) {
            let magnitudes = tied_values(&groups);
            let null: Vec<f64> = (0..1u32 << n).map(|s| signed_rank_sum(&magnitudes, s)).collect();
            for signs in 0..1u32 << n {
                let diffs: Vec<f64> = (0..n).map(|i| if signs >> i & 1 == 1 { magnitudes[i] } else { -magnitudes[i] }).collect();
                let got = wilcoxon_signed_rank_with(&diffs, Approach::Exact).unwrap();
                let want = enumerated_p(&null, signed_rank_sum(&magnitudes, signs));
                worst_exhaustive = worst_exhaustive.max((got.p_value - want).abs());
                configurations += 1;
            }
            for n_a in 1..n {
                let labellings = subsets(n, n_a);
                let null: Vec<f64> = labellings.iter().map(|l| rank_sum_u(&magnitudes, l)).collect();
                for l in &labellings {
                    let a: Vec<f64> = (0..n).filter(|&i| l[i]).map(|i| magnitudes[i]).collect();
                    let b: Vec<f64> = (0..n).filter(|&i| !l[i]).map(|i| magnitudes[i]).collect();
                    let got = mann_whitney_u_with(&a, &b, Approach::Exact).unwrap();
                    let want = enumerated_p(&null, rank_sum_u(&magnitudes, l));
                    worst_exhaustive = worst_exhaustive.max((got.p_value - want).abs());
                    configurations += 1;
                }
            }
        }
    }

    let mut r = rng::seeded(8);
    let draws = 1_000_000;
    let mut worst_mc = 0f64;
    for case in 0..10 {
        let (exact, mc) = if case % 2 == 0 {
            let n = r.random_range(12..=20);
            let diffs: Vec<f64> = (0..n).map(|_| ((r.random::<f64>() - 0.35) * 20.0).round() / 4.0).filter(|&d| d != 0.0).collect();
            let exact = wilcoxon_signed_rank_with(&diffs, Approach::Exact).unwrap().p_value;
            let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            let ranks: Vec<f64> = (0..magnitudes.len())
                .map(|i| signed_rank_sum(&magnitudes, 1 << i))
                .collect();
            let observed: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
            let (mut le, mut ge) = (0u64, 0u64);
            for _ in 0..draws {
                let bits = r.random::<u32>();
                let w: f64 = (0..ranks.len()).filter(|&i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
                le += (w <= observed + 1e-9) as u64;
                ge += (w >= observed - 1e-9) as u64;
            }
            (exact, (2.0 * le.min(ge) as f64 / draws as f64).min(1.0))
        } else {
            let (n_a, n_b) = (r.random_range(9..=14), r.random_range(9..=14));
            let a: Vec<f64> = (0..n_a).map(|_| (r.random::<f64>() * 12.0).round()).collect();
            let b: Vec<f64> = (0..n_b).map(|_| (r.random::<f64>() * 12.0 + 2.0).round()).collect();
            let exact = mann_whitney_u_with(&a, &b, Approach::Exact).unwrap().p_value;
            let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
            let ranks: Vec<f64> = pooled
                .iter()
                .map(|x| {
                    let below = pooled.iter().filter(|&&y| y < *x).count() as f64;
                    let equal = pooled.iter().filter(|&&y| y == *x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect();
            let offset = (n_a * (n_a + 1)) as f64 / 2.0;
            let observed: f64 = ranks[..n_a].iter().sum::<f64>() - offset;
            let mut idx: Vec<usize> = (0..pooled.len()).collect();
            let (mut le, mut ge) = (0u64, 0u64);
            for _ in 0..draws {
                // partial Fisher-Yates: the first n_a slots are a uniform draw of group a
                for i in 0..n_a {
                    let j = r.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                let u: f64 = idx[..n_a].iter().map(|&i| ranks[i]).sum::<f64>() - offset;
                le += (u <= observed + 1e-9) as u64;
                ge += (u >= observed - 1e-9) as u64;
            }
            (exact, (2.0 * le.min(ge) as f64 / draws as f64).min(1.0))
        };
        worst_mc = worst_mc.max((exact - mc).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_exhaustive <= 1e-12 && worst_mc <= 0.02;
    report(
        8,
        pass,
        &format!(
            "{configurations} exhaustive configurations (n <= 8, all tie patterns), worst |p - enumerated| {worst_exhaustive:.1e}; 10 larger cases vs 1e6-draw Monte Carlo, worst |p - mc| {worst_mc:.4} (limit 0.02); {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_determinism() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let base = PhantomSpec { shape: [32, 32, 32], ..PhantomSpec::default() };
    generate_cohort(&uniform_counts(2), 90, &base, &data).unwrap();
    let spec = TrainSpec {
        batch_size: 4,
        learning_rate: 1e-3,
        max_epochs: 1,
        slice_sampling: SliceSampling::Foreground { background_ratio: 0.25 },
        model: ModelConfig {
            input_size: (32, 32),
            channel_widths: vec![4, 8, 16],
            ..ModelConfig::default()
        },
        ..TrainSpec::default()
    };
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string(&spec).unwrap()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let code = claustrum_seg::cli::run([
            "claustrum-seg",
            "experiment",
            "crossval",
            "--folds",
            "2",
            "--manifest",
            data.join("manifest.csv").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "9",
            "--jobs",
            "1",
        ]);
        assert_eq!(code, 0);
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let first = run("run1");
    let second = run("run2");
    let pass = first == second && !first.is_empty();
    report(
        9,
        pass,
        &format!("two seeded crossval runs: metrics.csv {} bytes, byte-identical {}", first.len(), first == second),
    );
    assert!(pass);
}

#[test]
fn criterion_10_parameter_count() {
    let model = build_model(&ModelConfig::default()).unwrap();
    let enumerated = model.enumerate_params();
    let closed_form: usize = model
        .layers()
        .iter()
        .map(|l| l.kernel * l.kernel * l.c_in * l.c_out + l.c_out)
        .sum();
    let pass = model.param_count == enumerated && enumerated == closed_form && enumerated == DEFAULT_PARAM_COUNT;
    report(
        10,
        pass,
        &format!(
            "default config: reported {} = weight-store enumeration {enumerated} = closed form {closed_form} (expected {DEFAULT_PARAM_COUNT}); \
             reference figure {REPORTED_PARAM_COUNT}. Note: no channel-width assignment consistent with 16 conv layers at \
             180x180 input reproduces the reference figure, so the computed count is reported as is \
             ({} below the reference) and channel widths stay configurable",
            model.param_count,
            REPORTED_PARAM_COUNT - DEFAULT_PARAM_COUNT
        ),
    );
    assert!(pass);
}
