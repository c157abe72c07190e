//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Everything is seeded; reruns are bit-for-bit repeatable.

use std::collections::VecDeque;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qmimic::baselines::{cart_fit, cut_learn, CartConfig, CutConfig};
use qmimic::datagen::{record_experience, ActiveStream, ExperienceDataset};
use qmimic::envs::{make_env, EnvKind, MiniBird};
use qmimic::eval::{consecutive_test, fidelity, play_eval, QSource};
use qmimic::interpret::{feature_influence, superpixels};
use qmimic::lmut::{
    best_distinction, get_distinctions, sample_gradient, LmutForest, LmutHyperparams, MdpStats,
    LeafMdp,
};
use qmimic::teacher::{train, DqnConfig, TeacherConfig, TeacherModel, TileConfig};
use qmimic::types::{ActionId, Observation, TransitionRecord};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const PLAY_EPISODES: usize = 100;
const PLAY_SEED_OFFSET: u64 = 1_000_000;

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    println!(
        "acceptance {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn obs(values: &[f64]) -> Observation {
    Observation::new(values.to_vec()).unwrap()
}

fn rec(x: &[f64], action: usize, q: f64) -> TransitionRecord {
    TransitionRecord::new(obs(x), ActionId(action), 0.0, obs(x), q, false).unwrap()
}

/// Streams `n` active-play transitions through gather + split_phase.
fn train_lmut_active(
    env: EnvKind,
    teacher: &TeacherModel,
    seed: u64,
    n: usize,
    hyper: LmutHyperparams,
) -> LmutForest {
    let spec = {
        let e = make_env(env);
        e.spec().clone()
    };
    let mut forest =
        LmutForest::new(spec.feature_count, spec.action_count, teacher.gamma, hyper).unwrap();
    let mut stream = ActiveStream::new(env, seed, 32, n).unwrap();
    let mut seen = 0;
    while seen < n {
        let batch = stream.next_batch(teacher).unwrap();
        seen += batch.len();
        forest.gather(&batch).unwrap();
        forest.split_phase().unwrap();
    }
    forest
}

fn arpe(policy: &dyn QSource, env: EnvKind, seed: u64) -> f64 {
    let mut e = make_env(env);
    play_eval(policy, e.as_mut(), PLAY_EPISODES, seed + PLAY_SEED_OFFSET)
        .unwrap()
        .arpe
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// Mountain Car: default tile teachers plus active LMUT and CUT per seed.
struct McBundle {
    teachers: Vec<TeacherModel>,
    lmut_arpe: Vec<f64>,
    cut_arpe: Vec<f64>,
    elapsed_s: f64,
}

fn mc_teacher_cfg() -> TeacherConfig {
    match TeacherConfig::default_for(EnvKind::MountainCar) {
        TeacherConfig::Tile(c) => TeacherConfig::Tile(TileConfig {
            arpe_threshold: f64::NEG_INFINITY,
            ..c
        }),
        TeacherConfig::Dqn(_) => unreachable!(),
    }
}

fn mc_bundle() -> &'static McBundle {
    static BUNDLE: OnceLock<McBundle> = OnceLock::new();
    BUNDLE.get_or_init(|| {
        let t0 = Instant::now();
        let mut teachers = Vec::new();
        let mut lmut_arpe = Vec::new();
        let mut cut_arpe = Vec::new();
        for &seed in &SEEDS {
            let teacher = train(EnvKind::MountainCar, &mc_teacher_cfg(), seed).unwrap();
            let forest = train_lmut_active(
                EnvKind::MountainCar,
                &teacher,
                seed,
                30_000,
                LmutHyperparams::default(),
            );
            lmut_arpe.push(arpe(&forest, EnvKind::MountainCar, seed));

            let mut env = make_env(EnvKind::MountainCar);
            let cut = cut_learn(env.as_mut(), CutConfig::default(), seed, 30_000).unwrap();
            cut_arpe.push(arpe(&cut, EnvKind::MountainCar, seed));
            teachers.push(teacher);
        }
        McBundle {
            teachers,
            lmut_arpe,
            cut_arpe,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

/// Cart Pole: 16-tiling teachers, active LMUT (alpha 0.1, 60 epochs) and
/// CART on the matched experience dataset, per seed.
struct CpBundle {
    teacher_arpe: Vec<f64>,
    lmut_arpe: Vec<f64>,
    cart_arpe: Vec<f64>,
    elapsed_s: f64,
}

fn cp_teacher_cfg() -> TeacherConfig {
    match TeacherConfig::default_for(EnvKind::CartPole) {
        TeacherConfig::Tile(c) => TeacherConfig::Tile(TileConfig {
            tilings: 16,
            arpe_threshold: f64::NEG_INFINITY,
            ..c
        }),
        TeacherConfig::Dqn(_) => unreachable!(),
    }
}

fn cp_lmut_hyper() -> LmutHyperparams {
    LmutHyperparams {
        alpha: 0.1,
        sgd_epochs: 60,
        ..LmutHyperparams::default()
    }
}

fn cp_bundle() -> &'static CpBundle {
    static BUNDLE: OnceLock<CpBundle> = OnceLock::new();
    BUNDLE.get_or_init(|| {
        let t0 = Instant::now();
        let mut teacher_arpe = Vec::new();
        let mut lmut_arpe = Vec::new();
        let mut cart_arpe = Vec::new();
        for &seed in &SEEDS {
            let teacher = train(EnvKind::CartPole, &cp_teacher_cfg(), seed).unwrap();
            teacher_arpe.push(arpe(&teacher, EnvKind::CartPole, seed));

            let forest =
                train_lmut_active(EnvKind::CartPole, &teacher, seed, 30_000, cp_lmut_hyper());
            lmut_arpe.push(arpe(&forest, EnvKind::CartPole, seed));

            // Matched experience dataset: same teacher settings and seed,
            // same 30k transition budget; train on nine folds.
            let (dataset, _) =
                record_experience(EnvKind::CartPole, &cp_teacher_cfg(), seed, 30_000).unwrap();
            let train_slice = drop_fold(&dataset, 9);
            let trees: Vec<_> = (0..2)
                .map(|a| cart_fit(&train_slice, ActionId(a), CartConfig::default()).unwrap())
                .collect();
            let cart = qmimic::baselines::CartForest { trees };
            cart_arpe.push(arpe(&cart, EnvKind::CartPole, seed));
        }
        CpBundle {
            teacher_arpe,
            lmut_arpe,
            cart_arpe,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

fn drop_fold(dataset: &ExperienceDataset, fold: usize) -> Vec<TransitionRecord> {
    let bounds = dataset.fold_bounds(10);
    let (lo, hi) = (bounds[fold], bounds[fold + 1]);
    let mut out = Vec::new();
    out.extend_from_slice(&dataset.records[..lo]);
    out.extend_from_slice(&dataset.records[hi..]);
    out
}

// ---------------------------------------------------------------------------
// 1. Split-oracle equivalence
// ---------------------------------------------------------------------------

/// Fully independent scorer: two-pass population variance over an explicit
/// partition of the buffered Q values.
fn oracle_reduction(
    buffer: &VecDeque<TransitionRecord>,
    feature: usize,
    threshold: f64,
) -> Option<f64> {
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for r in buffer {
        if r.obs.values()[feature] < threshold {
            left.push(r.q_hat);
        } else {
            right.push(r.q_hat);
        }
    }
    if left.is_empty() || right.is_empty() {
        return None;
    }
    let var = |ys: &[f64]| {
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / ys.len() as f64
    };
    let all: Vec<f64> = buffer.iter().map(|r| r.q_hat).collect();
    let n = all.len() as f64;
    Some(
        var(&all)
            - (left.len() as f64 / n) * var(&left)
            - (right.len() as f64 / n) * var(&right),
    )
}

/// Oracle candidate set: every midpoint between consecutive distinct values.
fn oracle_candidates(buffer: &VecDeque<TransitionRecord>, feature: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = buffer.iter().map(|r| r.obs.values()[feature]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    vals.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
}

#[test]
fn criterion_01_split_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    for trial in 0..1000 {
        let n = rng.random_range(2..=8usize);
        let d = rng.random_range(1..=3usize);
        let buffer: VecDeque<TransitionRecord> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                rec(&x, 0, rng.random_range(-3.0..3.0))
            })
            .collect();

        // Implementation route.
        let distinctions = get_distinctions(&buffer, 1, usize::MAX);
        let got = best_distinction(&buffer, &distinctions, 0.0);

        // Oracle route: exhaustive enumeration, independent arithmetic,
        // documented tie-break (lowest feature, then lowest threshold).
        let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
        for f in 0..d {
            for t in oracle_candidates(&buffer, f) {
                if let Some(g) = oracle_reduction(&buffer, f, t) {
                    if g > 0.0 {
                        candidates.push((f, t, g));
                    }
                }
            }
        }
        let best_gain = candidates
            .iter()
            .map(|&(_, _, g)| g)
            .fold(f64::NEG_INFINITY, f64::max);

        match (got, candidates.is_empty()) {
            (None, true) => {}
            (Some(((gf, gt), _)), false) => {
                let got_gain = oracle_reduction(&buffer, gf, gt).unwrap();
                assert!(
                    got_gain >= best_gain - 1e-9,
                    "trial {trial}: gain {got_gain} below oracle best {best_gain}"
                );
                let near: Vec<_> = candidates
                    .iter()
                    .filter(|(_, _, g)| *g >= best_gain - 1e-9)
                    .collect();
                if near.len() == 1 {
                    assert_eq!(
                        (gf, gt),
                        (near[0].0, near[0].1),
                        "trial {trial}: unique winner mismatch"
                    );
                }
            }
            (got, empty) => panic!("trial {trial}: impl {got:?} vs oracle empty = {empty}"),
        }
        checked += 1;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = checked == 1000 && elapsed < 10.0;
    assert!(
        verdict(
            "01 split-oracle-equivalence",
            pass,
            &format!("{checked} buffers matched brute force in {elapsed:.2}s (< 10s)")
        )
    );
}

// ---------------------------------------------------------------------------
// 2. SGD gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_sgd_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=6usize);
        let weights: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bias = rng.random_range(-2.0..2.0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q = rng.random_range(-5.0..5.0);

        let (gw, gb) = sample_gradient(&weights, bias, &x, q);

        // Central finite differences of L = 1/2 (q - w.x - b)^2.
        let loss = |w: &[f64], b: f64| {
            let pred = b + w.iter().zip(&x).map(|(wv, xv)| wv * xv).sum::<f64>();
            0.5 * (q - pred) * (q - pred)
        };
        let h = 1e-6;
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for j in 0..d {
            let mut up = weights.clone();
            up[j] += h;
            let mut down = weights.clone();
            down[j] -= h;
            let fd = (loss(&up, bias) - loss(&down, bias)) / (2.0 * h);
            diff_sq += (gw[j] - fd) * (gw[j] - fd);
            a_sq += gw[j] * gw[j];
            n_sq += fd * fd;
        }
        let fd_b = (loss(&weights, bias + h) - loss(&weights, bias - h)) / (2.0 * h);
        diff_sq += (gb - fd_b) * (gb - fd_b);
        a_sq += gb * gb;
        n_sq += fd_b * fd_b;

        let rel = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(1e-12);
        worst = worst.max(rel);
    }
    let pass = worst < 1e-5;
    assert!(verdict(
        "02 sgd-gradient-check",
        pass,
        &format!("worst relative error {worst:.2e} over 100 pairs (< 1e-5)")
    ));
}

// ---------------------------------------------------------------------------
// 3. Partition property
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_partition_property() {
    // A real training run: Mountain Car active play on a quick teacher.
    let cfg = TeacherConfig::Tile(TileConfig {
        episodes: 300,
        alpha: 0.3,
        epsilon_start: 0.3,
        epsilon_final: 0.0,
        arpe_threshold: f64::NEG_INFINITY,
        ..TileConfig::default()
    });
    let teacher = train(EnvKind::MountainCar, &cfg, 303).unwrap();
    let forest = train_lmut_active(
        EnvKind::MountainCar,
        &teacher,
        303,
        8_000,
        LmutHyperparams::default(),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut ok = true;
    let mut total_leaves = 0;
    for a in 0..forest.action_count() {
        let cells = forest.leaves_with_cells(ActionId(a));
        total_leaves += cells.len();
        for i in 0..cells.len() {
            for j in (i + 1)..cells.len() {
                ok &= cells[i].1.intersect(&cells[j].1).unwrap().is_none();
            }
        }
        for _ in 0..10_000 {
            let o = obs(&[rng.random_range(-1.5..1.0), rng.random_range(-0.1..0.1)]);
            let hits = cells.iter().filter(|(_, c)| c.contains(&o).unwrap()).count();
            ok &= hits == 1;
        }
        // Buffer conservation: every retained record sits in the leaf
        // whose cell contains it.
        let tree = forest.tree(ActionId(a));
        tree.root.for_each_leaf(&mut |leaf| {
            for r in &leaf.buffer {
                ok &= tree.root.leaf_for(&r.obs).id == leaf.id;
            }
        });
    }
    assert!(verdict(
        "03 partition-property",
        ok,
        &format!("{total_leaves} leaf cells disjoint, 10k routings per tree consistent")
    ));
}

// ---------------------------------------------------------------------------
// 4. MDP formula fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_mdp_formula_fidelity() {
    let mut ok = true;

    // Hand-derived example values of the update-then-increment sequence.
    let mut stats = MdpStats::default();
    stats.record(Some(1), 2.5, -4.0);
    ok &= stats.successors[&Some(1)].p == 1.0; // (0+1)/(0+1)
    ok &= stats.successors[&Some(1)].r == 2.5; // count-0 average
    ok &= stats.q_avg == -4.0;
    stats.record(Some(2), 0.5, 0.0);
    ok &= stats.successors[&Some(2)].p == 0.5; // (0+1)/(1+1) at its instant
    ok &= stats.successors[&Some(1)].p == 1.0; // untouched since its update
    ok &= stats.q_avg == -2.0; // (-4*1 + 0)/2

    // Normalized rows sum to 1 within 1e-12.
    let mut busy = MdpStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..500 {
        let succ = match rng.random_range(0..4) {
            0 => None,
            k => Some(k as u64),
        };
        busy.record(succ, rng.random_range(-1.0..1.0), 0.0);
    }
    let row_sum: f64 = busy.normalized().iter().map(|(_, p, _)| p).sum();
    ok &= (row_sum - 1.0).abs() <= 1e-12;

    // Value iteration reaches a fixed point: an extra synchronous sweep
    // changes nothing beyond 1e-6.
    let mdp = {
        let mut s0 = MdpStats::default();
        s0.record(Some(1), 0.0, 0.0);
        s0.record(Some(0), -1.0, 0.0);
        let mut s1 = MdpStats::default();
        s1.record(Some(1), 1.0, 0.0);
        s1.record(None, 2.0, 0.0);
        LeafMdp {
            leaf_ids: vec![0, 1],
            stats: vec![vec![Some(s0)], vec![Some(s1)]],
        }
    };
    let gamma = 0.9;
    let q = mdp.value_iteration(gamma, 1e-9, 100_000);
    // One more sweep by hand.
    let mut residual: f64 = 0.0;
    for (s, per_action) in mdp.stats.iter().enumerate() {
        for (a, stats) in per_action.iter().enumerate() {
            let stats = stats.as_ref().unwrap();
            let mut value = 0.0;
            for (to, p, r) in stats.normalized() {
                let bootstrap = match to {
                    None => 0.0,
                    Some(id) => q[id as usize]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max),
                };
                value += p * (r + gamma * bootstrap);
            }
            residual = residual.max((value - q[s][a]).abs());
        }
    }
    ok &= residual < 1e-6;

    assert!(verdict(
        "04 mdp-formula-fidelity",
        ok,
        &format!("update-then-increment examples exact; row sum 1±1e-12; extra sweep {residual:.2e}")
    ));
}

// ---------------------------------------------------------------------------
// 5. Piecewise-linear exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_piecewise_linear_exactness() {
    let t0 = Instant::now();
    let mut forest = LmutForest::new(1, 1, 0.99, LmutHyperparams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut seen = 0;
    while seen < 5_000 {
        let batch: Vec<TransitionRecord> = (0..32)
            .map(|_| {
                let x = rng.random_range(-1.0..1.0);
                rec(&[x], 0, 2.0 * x + 1.0)
            })
            .collect();
        seen += batch.len();
        forest.gather(&batch).unwrap();
        forest.split_phase().unwrap();
    }
    let leaves = forest.leaf_count();

    let mut sq = 0.0;
    let n = 2_000;
    for _ in 0..n {
        let x = rng.random_range(-1.0..1.0);
        let e = forest.predict(&obs(&[x]), ActionId(0)).unwrap() - (2.0 * x + 1.0);
        sq += e * e;
    }
    let rmse = (sq / n as f64).sqrt();
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = rmse < 1e-2 && leaves == 1 && elapsed < 30.0;
    assert!(verdict(
        "05 piecewise-linear-exactness",
        pass,
        &format!("rmse {rmse:.2e} (< 1e-2), {leaves} leaf, {elapsed:.2}s (< 30s)")
    ));
}

// ---------------------------------------------------------------------------
// 6. Teacher thresholds
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_teacher_thresholds() {
    let t0 = Instant::now();
    // Defaults carry the thresholds; train() errors if they are missed.
    let cp = train(EnvKind::CartPole, &TeacherConfig::default_for(EnvKind::CartPole), 1);
    let cp_time = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mc = train(
        EnvKind::MountainCar,
        &TeacherConfig::default_for(EnvKind::MountainCar),
        1,
    );
    let mc_time = t1.elapsed().as_secs_f64();

    let cp_arpe = cp.as_ref().map(|m| arpe(m, EnvKind::CartPole, 1));
    let mc_arpe = mc.as_ref().map(|m| arpe(m, EnvKind::MountainCar, 1));
    let pass = matches!(cp_arpe, Ok(a) if a >= 150.0)
        && matches!(mc_arpe, Ok(a) if a >= -160.0)
        && cp_time < 300.0
        && mc_time < 300.0;
    assert!(verdict(
        "06 teacher-thresholds",
        pass,
        &format!(
            "cart-pole ARPE {:?} >= 150 in {cp_time:.1}s; mountain-car ARPE {:?} >= -160 in {mc_time:.1}s",
            cp_arpe.map(|a| (a * 100.0).round() / 100.0),
            mc_arpe.map(|a| (a * 100.0).round() / 100.0),
        )
    ));
}

// ---------------------------------------------------------------------------
// 7. Mimic play performance
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_mimic_play_ordering() {
    let cp = cp_bundle();
    let mc = mc_bundle();

    let ratio_hits = SEEDS
        .iter()
        .enumerate()
        .filter(|&(i, _)| cp.lmut_arpe[i] >= 0.7 * cp.teacher_arpe[i])
        .count();
    let cart_hits = SEEDS
        .iter()
        .enumerate()
        .filter(|&(i, _)| cp.lmut_arpe[i] > cp.cart_arpe[i])
        .count();
    let cut_hits = SEEDS
        .iter()
        .enumerate()
        .filter(|&(i, _)| mc.lmut_arpe[i] > mc.cut_arpe[i])
        .count();

    let elapsed = cp.elapsed_s + mc.elapsed_s;
    let pass = ratio_hits >= 4 && cart_hits >= 4 && cut_hits >= 4 && elapsed < 900.0;
    assert!(verdict(
        "07 mimic-play-ordering",
        pass,
        &format!(
            "cart-pole lmut >= 0.7*teacher on {ratio_hits}/5 (lmut {:?} vs teacher {:?}); \
             lmut > cart on {cart_hits}/5 (cart {:?}); mountain-car lmut > cut on {cut_hits}/5 \
             (lmut {:?} vs cut {:?}); {elapsed:.0}s (< 900s)",
            round2(&cp.lmut_arpe),
            round2(&cp.teacher_arpe),
            round2(&cp.cart_arpe),
            round2(&mc.lmut_arpe),
            round2(&mc.cut_arpe),
        )
    ));
}

fn round2(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 100.0).round() / 100.0).collect()
}

// ---------------------------------------------------------------------------
// 8. Fidelity vs compactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_fidelity_vs_compactness() {
    let hyper = LmutHyperparams {
        alpha: 0.1,
        sgd_epochs: 60,
        min_child: 8,
        min_split_fraction: 0.003,
        buffer_capacity: 1024,
        ..LmutHyperparams::default()
    };
    let mut leaf_hits = 0;
    let mut rmse_hits = 0;
    let mut detail = String::new();
    for &seed in &SEEDS {
        let (dataset, _) =
            record_experience(EnvKind::MountainCar, &mc_teacher_cfg(), seed, 50_000).unwrap();
        let train_slice = drop_fold(&dataset, 9);
        let bounds = dataset.fold_bounds(10);
        let eval_slice = &dataset.records[bounds[9]..bounds[10]];

        let mut forest = LmutForest::new(2, 3, 0.99, hyper.clone()).unwrap();
        for chunk in train_slice.chunks(32) {
            forest.gather(chunk).unwrap();
            forest.split_phase().unwrap();
        }
        let trees: Vec<_> = (0..3)
            .map(|a| cart_fit(&train_slice, ActionId(a), CartConfig::default()).unwrap())
            .collect();
        let cart = qmimic::baselines::CartForest { trees };

        let lmut_preds: Vec<f64> = eval_slice
            .iter()
            .map(|r| forest.predict(&r.obs, r.action).unwrap())
            .collect();
        let cart_preds: Vec<f64> = eval_slice
            .iter()
            .map(|r| cart.predict(&r.obs, r.action).unwrap())
            .collect();
        let targets: Vec<f64> = eval_slice.iter().map(|r| r.q_hat).collect();
        let lmut_rmse = fidelity(&lmut_preds, &targets, forest.leaf_count()).unwrap().rmse;
        let cart_rmse = fidelity(&cart_preds, &targets, cart.leaf_count()).unwrap().rmse;

        if cart.leaf_count() > forest.leaf_count() {
            leaf_hits += 1;
        }
        if lmut_rmse <= 2.0 * cart_rmse {
            rmse_hits += 1;
        }
        detail.push_str(&format!(
            "[seed {seed}: leaves {} vs {}, rmse {:.3} vs {:.3}] ",
            forest.leaf_count(),
            cart.leaf_count(),
            lmut_rmse,
            cart_rmse
        ));
    }
    let pass = leaf_hits >= 4 && rmse_hits >= 4;
    assert!(verdict(
        "08 fidelity-vs-compactness",
        pass,
        &format!("cart > lmut leaves on {leaf_hits}/5, lmut rmse <= 2x cart on {rmse_hits}/5 {detail}")
    ));
}

// ---------------------------------------------------------------------------
// 9. Learning-curve trend
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_learning_curve_trend() {
    let mc = mc_bundle();
    let mut hits = 0;
    let mut detail = String::new();
    for (i, &seed) in SEEDS.iter().enumerate() {
        let teacher = &mc.teachers[i];
        let mut stream = ActiveStream::new(EnvKind::MountainCar, seed, 32, 30_000).unwrap();
        let mut forest = LmutForest::new(2, 3, 0.99, LmutHyperparams::default()).unwrap();
        let curve = consecutive_test(&mut forest, || stream.next_batch(teacher), 30_000).unwrap();
        // RAE at 1k = first point with at least 1000 transitions seen.
        let at_1k = curve
            .iter()
            .find(|p| p.transitions_seen >= 1_000)
            .and_then(|p| p.rae)
            .unwrap();
        let at_30k = curve.last().and_then(|p| p.rae).unwrap();
        if at_30k < at_1k {
            hits += 1;
        }
        detail.push_str(&format!("[seed {seed}: {at_1k:.3} -> {at_30k:.3}] "));
    }
    let pass = hits == 5;
    assert!(verdict(
        "09 learning-curve-trend",
        pass,
        &format!("RAE at 30k below RAE at 1k on {hits}/5 seeds {detail}")
    ));
}

// ---------------------------------------------------------------------------
// 10. Interpretation orderings
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_interpretation_orderings() {
    // Mountain Car: velocity influence above position. Leaf models must
    // be fit to convergence here: the velocity scale (+-0.07) means its
    // weights are naturally two orders larger than the position's, and
    // the weight-importance factor only credits that once SGD has grown
    // the weights to scale.
    let mc = mc_bundle();
    let mc_hyper = LmutHyperparams {
        alpha: 0.3,
        sgd_epochs: 100,
        min_child: 8,
        buffer_capacity: 1024,
        ..LmutHyperparams::default()
    };
    let mut mc_hits = 0;
    for (i, &seed) in SEEDS.iter().enumerate() {
        let forest = train_lmut_active(
            EnvKind::MountainCar,
            &mc.teachers[i],
            seed,
            30_000,
            mc_hyper.clone(),
        );
        let table = feature_influence(&forest);
        if table.influence[1] > table.influence[0] {
            mc_hits += 1; // velocity above position
        }
    }

    // Cart Pole: the pole angle ranks first when mimicking the DQN
    // teacher the finding derives from.
    let dqn_cfg = TeacherConfig::Dqn(DqnConfig {
        episodes: 3_000,
        train_every: 1,
        alpha: 5e-4,
        warmup: 1_000,
        replay_capacity: 20_000,
        arpe_threshold: f64::NEG_INFINITY,
        ..DqnConfig::default()
    });
    let cp_teacher = train(EnvKind::CartPole, &dqn_cfg, 1).unwrap();
    let mut cp_hits = 0;
    for &seed in &SEEDS {
        let forest =
            train_lmut_active(EnvKind::CartPole, &cp_teacher, seed, 30_000, cp_lmut_hyper());
        let ranked = feature_influence(&forest).ranking();
        if ranked[0].0 == 2 {
            cp_hits += 1; // feature 2 is the pole angle
        }
    }

    // MiniBird: aggregate super-pixels concentrate on the most recent
    // frame along a greedy mimic rollout.
    let mb_cfg = TeacherConfig::Dqn(DqnConfig {
        episodes: 4_000,
        alpha: 1e-3,
        arpe_threshold: f64::NEG_INFINITY,
        ..DqnConfig::default()
    });
    let mb_teacher = train(EnvKind::MiniBird, &mb_cfg, 1).unwrap();
    let geometry = MiniBird::geometry();
    let mut mb_hits = 0;
    let mut mb_detail = String::new();
    for &seed in &SEEDS {
        let forest = train_lmut_active(
            EnvKind::MiniBird,
            &mb_teacher,
            seed,
            5_000,
            LmutHyperparams::default(),
        );
        let table = feature_influence(&forest);
        let mut env = make_env(EnvKind::MiniBird);
        let mut counts = [0usize; 4];
        let mut o = env.reset(4242);
        for step in 0..30u64 {
            let sp = superpixels(&forest, &table, &o, geometry).unwrap();
            for (f, _, _) in sp.located {
                counts[f] += 1;
            }
            let action = forest.q_vector(&o).unwrap().greedy();
            match env.step(action) {
                Ok(s) if !s.done => o = s.next_obs,
                _ => o = env.reset(4242 + step + 1),
            }
        }
        let total: usize = counts.iter().sum();
        if counts[0] * 2 > total {
            mb_hits += 1;
        }
        mb_detail.push_str(&format!(
            "[seed {seed}: frame0 {}/{total}] ",
            counts[0]
        ));
    }

    let pass = mc_hits >= 4 && cp_hits >= 4 && mb_hits >= 4;
    assert!(verdict(
        "10 interpretation-orderings",
        pass,
        &format!(
            "mountain-car velocity > position on {mc_hits}/5; cart-pole pole-angle first on \
             {cp_hits}/5; mini-bird frame-0 majority on {mb_hits}/5 {mb_detail}"
        )
    ));
}

// ---------------------------------------------------------------------------
// 11. Determinism and round-trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_determinism_round_trip() {
    // Identical config + seeds through the CLI binary give byte-identical
    // model artifacts.
    let bin = env!("CARGO_BIN_EXE_qmimic");
    let dir = std::env::temp_dir().join("qmimic-acceptance-11");
    let _ = std::fs::remove_dir_all(&dir);
    // Two full reruns of the identical configuration into the same
    // directory (--force reruns every stage from scratch).
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let status = std::process::Command::new(bin)
            .args([
                "pipeline",
                "--env",
                "mountain-car",
                "--seed",
                "7",
                "--n",
                "3000",
                "--teacher.episodes",
                "300",
                "--eval.episodes",
                "5",
                "--force",
                "--out-dir",
                dir.to_str().unwrap(),
            ])
            .output()
            .expect("pipeline runs");
        assert!(
            status.status.success(),
            "pipeline failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        bytes.push(std::fs::read(dir.join("model.json")).unwrap());
    }
    let identical = bytes[0] == bytes[1];

    // Serialize -> parse preserves every prediction bitwise on 1k probes.
    let artifact: serde_json::Value =
        serde_json::from_str(&String::from_utf8(bytes[0].clone()).unwrap()).unwrap();
    let forest = LmutForest::from_json(&artifact["model"].to_string()).unwrap();
    let round_tripped = LmutForest::from_json(&forest.to_json().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut bitwise = true;
    for _ in 0..1_000 {
        let o = obs(&[rng.random_range(-1.5..1.0), rng.random_range(-0.1..0.1)]);
        for a in 0..3 {
            let p0 = forest.predict(&o, ActionId(a)).unwrap();
            let p1 = round_tripped.predict(&o, ActionId(a)).unwrap();
            bitwise &= p0.to_bits() == p1.to_bits();
        }
    }

    let pass = identical && bitwise;
    assert!(verdict(
        "11 determinism-round-trip",
        pass,
        &format!(
            "model.json byte-identical across reruns: {identical}; 1k probe predictions bitwise \
             stable after round-trip: {bitwise}"
        )
    ));
}
