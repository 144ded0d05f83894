//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line; pass criterion numbers or name
//! fragments as arguments to run a subset.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use mfpot::lin3::{self, Mat3};
use mfpot::model::{FidelityConfig, Model, ModelConfig};
use mfpot::structures::{LabeledFrame, Structure};
use mfpot::synthdata::{
    gen_structures, make_dataset, oracle_label, OracleParams, Template, HIGH_FIDELITY, LOW_FIDELITY,
};
use mfpot::train::{
    ablate, evaluate, evaluate_at, frame_gradient, train_high_fidelity_only, train_model,
    train_multi_fidelity, transfer_train, AblationVariant, ExperimentData, Metrics, TrainConfig,
    HIGH,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::Tensor;

type Outcome = Result<String, String>;

/// Model size used for every training criterion: small enough that a
/// 520-frame run takes about a minute on one core.
fn desk(fidelity: FidelityConfig) -> ModelConfig {
    ModelConfig {
        feature_dim: 16,
        hidden_dim: 16,
        n_layers: 3,
        r_atom: 4.0,
        r_bond: 2.8,
        fidelity,
        ..ModelConfig::default()
    }
}

fn desk_training(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 8,
        seed,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Every tensor, including composition weights and the zero-initialized
/// fidelity parameters, drawn uniformly from `[-scale, scale)`.
fn randomized(config: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut model = Model::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut fill = |t: &Tensor, s: f64| {
        let (r, c) = t.shape();
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect()).unwrap()
    };
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in names {
        let t = fill(model.params.get(&name).unwrap(), scale);
        model.params.set(&name, t).unwrap();
    }
    model.composition = fill(&model.composition, 1.0);
    model
}

fn structures(n: usize, max_atoms: usize, seed: u64) -> Vec<Structure> {
    let out: Vec<Structure> = gen_structures(&Template::standard(), 20 * n + 20, seed)
        .unwrap()
        .into_iter()
        .filter(|s| s.n_atoms() <= max_atoms)
        .take(n)
        .collect();
    assert_eq!(out.len(), n, "not enough small structures");
    out
}

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn half_range(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    (hi - lo) / 2.0
}

fn fmt(x: &[f64]) -> String {
    x.iter()
        .map(|v| format!("{v:.4}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn derivative_consistency() -> Outcome {
    let model = randomized(desk(FidelityConfig::all(2)), 1, 0.3);
    let cells = structures(20, 16, 2);
    let (mut worst_force, mut worst_stress, mut checked) = (0.0f64, 0.0f64, 0);
    for (k, s) in cells.iter().enumerate() {
        ensure(s.n_atoms() >= 8, || {
            format!("structure {k} has {} atoms", s.n_atoms())
        })?;
        let fidelity = 1 + k % 2;
        let pred = model.predict(s, fidelity).unwrap();
        let h = 1e-4;
        for i in 0..s.n_atoms() {
            for c in 0..3 {
                let energy_at = |delta: f64| {
                    let mut p = s.positions().to_vec();
                    p[i][c] += delta;
                    model
                        .energy(&s.with_positions(p).unwrap(), fidelity)
                        .unwrap()
                };
                let fd = -(energy_at(h) - energy_at(-h)) / (2.0 * h);
                let f = pred.forces[i][c];
                let tol = 1e-6f64.max(1e-5 * f.abs());
                worst_force = worst_force.max((fd - f).abs() / tol);
                ensure((fd - f).abs() <= tol, || {
                    format!("structure {k} atom {i} axis {c}: analytic {f:e}, numeric {fd:e}")
                })?;
                checked += 1;
            }
        }
        let h = 1e-5;
        let scale = pred
            .stress
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        for a in 0..3 {
            for b in a..3 {
                let energy_at = |delta: f64| {
                    let mut eps = [[0.0; 3]; 3];
                    eps[a][b] += delta / 2.0;
                    eps[b][a] += delta / 2.0;
                    model.energy(&s.strained(&eps), fidelity).unwrap()
                };
                let fd = (energy_at(h) - energy_at(-h)) / (2.0 * h) / s.volume();
                let sig = pred.stress[a][b];
                let tol = 1e-5 * sig.abs().max(scale);
                worst_stress = worst_stress.max((fd - sig).abs() / tol);
                ensure((fd - sig).abs() <= tol, || {
                    format!("structure {k} stress {a}{b}: analytic {sig:e}, numeric {fd:e}")
                })?;
            }
        }
    }
    Ok(format!(
        "{checked} force components on 20 structures; worst error/tolerance {worst_force:.3} (forces), {worst_stress:.3} (stress)"
    ))
}

fn symmetry() -> Outcome {
    let model = randomized(desk(FidelityConfig::all(2)), 3, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = 1e-9;
    for (k, s) in structures(50, 24, 5).iter().enumerate() {
        let fidelity = 1 + k % 2;
        let p = model.predict(s, fidelity).unwrap();
        let shift = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ];
        let axis = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.1..1.0),
        ];
        let rot = lin3::rotation(axis, rng.random_range(0.0..6.2));
        let mut order: Vec<usize> = (0..s.n_atoms()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }

        let same = |q: &mfpot::model::Prediction,
                    what: &str,
                    perm: &[usize],
                    rot: Option<&Mat3>|
         -> Result<(), String> {
            ensure(close(q.energy, p.energy, tol), || {
                format!("{what} energy, structure {k}")
            })?;
            let sigma = rot.map_or(p.stress, |r| {
                lin3::mat_mul(&lin3::mat_mul(&lin3::transpose(r), &p.stress), r)
            });
            for a in 0..3 {
                for b in 0..3 {
                    ensure(close(q.stress[a][b], sigma[a][b], tol), || {
                        format!("{what} stress, structure {k}")
                    })?;
                }
            }
            for (new, &old) in perm.iter().enumerate() {
                let f = rot.map_or(p.forces[old], |r| lin3::vec_mat(p.forces[old], r));
                for c in 0..3 {
                    ensure(close(q.forces[new][c], f[c], tol), || {
                        format!("{what} force, structure {k}")
                    })?;
                }
                ensure(close(q.magmoms[new], p.magmoms[old], tol), || {
                    format!("{what} magmom, structure {k}")
                })?;
            }
            Ok(())
        };
        let identity: Vec<usize> = (0..s.n_atoms()).collect();
        same(
            &model.predict(&s.translated(shift), fidelity).unwrap(),
            "translated",
            &identity,
            None,
        )?;
        same(
            &model
                .predict(&s.translated(shift).wrapped(), fidelity)
                .unwrap(),
            "wrapped",
            &identity,
            None,
        )?;
        same(
            &model.predict(&s.rotated(&rot), fidelity).unwrap(),
            "rotated",
            &identity,
            Some(&rot),
        )?;
        same(
            &model.predict(&s.permuted(&order), fidelity).unwrap(),
            "permuted",
            &order,
            None,
        )?;
    }
    Ok("translation, wrapping, rotation and permutation on 50 structures within 1e-9".into())
}

fn is_fidelity_two_row(name: &str) -> bool {
    name == "embed.fidelity" || name.ends_with(".w_fid")
}

fn fidelity_isolation() -> Outcome {
    let lf: Vec<LabeledFrame> = make_dataset(40, 0, 6, &Template::small()).unwrap();
    ensure(lf.iter().all(|f| f.fidelity == LOW_FIDELITY), || {
        "dataset is not fidelity-1 only".into()
    })?;
    let initial = randomized(desk(FidelityConfig::all(2)), 7, 0.2);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        seed: 8,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };

    let mut zero_grads = 0;
    for frame in &lf {
        let graph = initial.build_graph(&frame.structure).unwrap();
        let g = frame_gradient(&initial, frame, &graph, &cfg).unwrap();
        for (name, grad) in &g.grads {
            ensure(!name.starts_with("readout.2."), || {
                format!("{name} is reachable from fidelity 1")
            })?;
            if is_fidelity_two_row(name) {
                ensure(grad.row(1).iter().all(|&x| x == 0.0), || {
                    format!("{name}: nonzero fidelity-2 gradient")
                })?;
                zero_grads += grad.row(1).len();
            }
        }
    }

    let mut steps = 0;
    let out = train_model(initial.clone(), &lf, &cfg, &mut |_, _| Ok(())).unwrap();
    steps += lf.len().div_ceil(cfg.batch_size) * cfg.epochs;
    ensure(steps == 10, || format!("{steps} steps"))?;
    let after = &out.model;
    let mut moved_rows = 0;
    for (name, t) in initial.params.iter() {
        let now = after.params.get(name).unwrap();
        if name.starts_with("readout.2.") {
            ensure(now == t, || format!("{name} changed"))?;
        }
        if is_fidelity_two_row(name) {
            ensure(now.row(1) == t.row(1), || {
                format!("{name} fidelity-2 row changed")
            })?;
            moved_rows += usize::from(now.row(0) != t.row(0));
        }
    }
    for a in 0..94 {
        ensure(
            after.composition.get(a, 1) == initial.composition.get(a, 1),
            || {
                format!(
                    "composition weight of element {} at fidelity 2 changed",
                    a + 1
                )
            },
        )?;
    }
    ensure(moved_rows > 0, || {
        "fidelity-1 rows did not train either".into()
    })?;
    Ok(format!(
        "{zero_grads} fidelity-2 gradient entries exactly zero over 40 frames; parameters bit-identical after {steps} steps"
    ))
}

fn neutrality() -> Outcome {
    let cells = structures(20, 24, 9);
    let off = randomized(desk(FidelityConfig::none(2)), 10, 0.3);

    let mut on = randomized(desk(FidelityConfig::all(2)), 11, 0.3);
    let names: Vec<String> = on.params.names().map(str::to_string).collect();
    for name in &names {
        if is_fidelity_two_row(name) {
            let (r, c) = on.params.get(name).unwrap().shape();
            on.params.set(name, Tensor::zeros(r, c)).unwrap();
        }
        if let Some(rest) = name.strip_prefix("readout.1.") {
            let head = on.params.get(name).unwrap().clone();
            on.params.set(&format!("readout.2.{rest}"), head).unwrap();
        }
    }
    for a in 0..94 {
        let w = on.composition.get(a, 0);
        on.composition.set(a, 1, w);
    }

    for (k, s) in cells.iter().enumerate() {
        ensure(
            off.predict(s, 1).unwrap() == off.predict(s, 2).unwrap(),
            || format!("toggles off: structure {k} differs across fidelities"),
        )?;
        ensure(
            on.predict(s, 1).unwrap() == on.predict(s, 2).unwrap(),
            || format!("neutral init: structure {k} differs across fidelities"),
        )?;
    }
    Ok("bit-identical predictions across fidelities on 20 structures, both setups".into())
}

fn composition_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let elements = [3u8, 8, 15, 25, 26];
    let truth: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            elements
                .iter()
                .map(|_| rng.random_range(-9.0..-1.0))
                .collect()
        })
        .collect();
    let box_ = [[20.0, 0.0, 0.0], [0.0, 20.0, 0.0], [0.0, 0.0, 20.0]];
    let mut frames = Vec::new();
    for f in 1..=2 {
        for k in 0..40 {
            // the first frames are pure elements, which guarantees full column rank
            let species: Vec<u8> = if k < elements.len() {
                vec![elements[k]; 1 + k]
            } else {
                (0..rng.random_range(2..12))
                    .map(|_| elements[rng.random_range(0..elements.len())])
                    .collect()
            };
            let n = species.len();
            let positions = (0..n).map(|i| [2.0 * i as f64, 0.5, 0.5]).collect();
            let energy = species
                .iter()
                .map(|z| truth[f - 1][elements.iter().position(|e| e == z).unwrap()])
                .sum();
            let s = Structure::new(box_, species, positions).unwrap();
            frames.push(
                LabeledFrame::new(s, f, energy, vec![[0.0; 3]; n], [[0.0; 3]; 3], None).unwrap(),
            );
        }
    }
    let mut model = Model::new(desk(FidelityConfig::all(2)), 0).unwrap();
    model.fit_composition(&frames).unwrap();
    let mut worst = 0.0f64;
    for f in 0..2 {
        for (k, &z) in elements.iter().enumerate() {
            worst = worst.max((model.composition.get(z as usize - 1, f) - truth[f][k]).abs());
        }
    }
    ensure(worst < 1e-8, || format!("weight error {worst:e} eV/atom"))?;

    // the mean fidelity gap on shared structures, before and after the fitted shift
    let data = make_dataset(500, 500, 13, &Template::standard()).unwrap();
    let mut fitted = Model::new(desk(FidelityConfig::all(2)), 0).unwrap();
    fitted.fit_composition(&data).unwrap();
    let (hf, lf) = (OracleParams::high_fidelity(), OracleParams::low_fidelity());
    let (mut gap, mut residual) = (Vec::new(), Vec::new());
    for s in gen_structures(&Template::standard(), 200, 14).unwrap() {
        let n = s.n_atoms() as f64;
        let g = (oracle_label(&s, &hf).unwrap().0 - oracle_label(&s, &lf).unwrap().0) / n;
        let shift = (fitted.composition_total(&s, HIGH_FIDELITY)
            - fitted.composition_total(&s, LOW_FIDELITY))
            / n;
        gap.push(g);
        residual.push(g - shift);
    }
    let absorbed = 1.0 - mean(&residual).abs() / mean(&gap).abs();
    ensure(absorbed > 0.95, || {
        format!("only {:.1}% of the mean gap absorbed", 100.0 * absorbed)
    })?;
    Ok(format!(
        "max weight error {worst:.1e} eV/atom; mean gap {:.4} eV/atom, {:.2}% absorbed",
        mean(&gap),
        100.0 * absorbed
    ))
}

fn overfit() -> Outcome {
    let frames = make_dataset(0, 5, 15, &Template::small()).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 5,
        ..desk_training(0)
    };
    let steps = cfg.epochs * frames.len().div_ceil(cfg.batch_size);
    ensure(steps <= 2000, || format!("{steps} steps"))?;
    let out = train_high_fidelity_only(&frames, desk(FidelityConfig::none(1)), &cfg).unwrap();
    let m = evaluate_at(&out.model, &frames, 1).unwrap();
    ensure(m.energy.mae < 0.005 && m.force.mae < 0.05, || {
        format!(
            "energy MAE {:.5} eV/atom, force MAE {:.4} eV/Å",
            m.energy.mae, m.force.mae
        )
    })?;
    Ok(format!(
        "{steps} steps: energy MAE {:.2} meV/atom, force MAE {:.4} eV/Å",
        1000.0 * m.energy.mae,
        m.force.mae
    ))
}

/// Per-seed test metrics of the learning-curve runs shared by several criteria.
struct Study {
    hf_only_20: Vec<Metrics>,
    hf_only_50: Vec<Metrics>,
    mixed_500_20: Vec<Metrics>,
    mixed_500_50: Vec<Metrics>,
    mixed_200_50: Vec<Metrics>,
    transfer_500_50: Vec<Metrics>,
}

/// Seed-specific pool: 500 LF frames, 50 HF training frames and 100 HF test frames.
fn pool(seed: u64) -> (Vec<LabeledFrame>, Vec<LabeledFrame>, Vec<LabeledFrame>) {
    let data = make_dataset(500, 150, 1000 + seed, &Template::small()).unwrap();
    let lf: Vec<_> = data
        .iter()
        .filter(|f| f.fidelity == LOW_FIDELITY)
        .cloned()
        .collect();
    let mut hf: Vec<_> = data
        .into_iter()
        .filter(|f| f.fidelity == HIGH_FIDELITY)
        .collect();
    let test = hf.split_off(50);
    (lf, hf, test)
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let started = Instant::now();
        let mut s = Study {
            hf_only_20: vec![],
            hf_only_50: vec![],
            mixed_500_20: vec![],
            mixed_500_50: vec![],
            mixed_200_50: vec![],
            transfer_500_50: vec![],
        };
        let base = desk(FidelityConfig::all(2));
        for seed in SEEDS {
            let (lf, hf, test) = pool(seed);
            let cfg = desk_training(seed);
            let hf_only = |n: usize| {
                let out = train_high_fidelity_only(&hf[..n], base, &cfg).unwrap();
                evaluate_at(&out.model, &test, 1).unwrap()
            };
            let mixed = |n_lf: usize, n_hf: usize| {
                let out = train_multi_fidelity(
                    &lf[..n_lf],
                    &hf[..n_hf],
                    base,
                    FidelityConfig::all(2),
                    &cfg,
                )
                .unwrap();
                evaluate_at(&out.model, &test, HIGH).unwrap()
            };
            s.hf_only_20.push(hf_only(20));
            s.hf_only_50.push(hf_only(50));
            s.mixed_500_20.push(mixed(500, 20));
            s.mixed_500_50.push(mixed(500, 50));
            s.mixed_200_50.push(mixed(200, 50));
            let tl = transfer_train(&lf, &hf[..50], base, &cfg).unwrap();
            s.transfer_500_50
                .push(evaluate_at(&tl.model, &test, 1).unwrap());
            println!(
                "    learning-curve runs for seed {seed} done after {:.0} s",
                started.elapsed().as_secs_f64()
            );
        }
        s
    })
}

fn forces(runs: &[Metrics]) -> Vec<f64> {
    runs.iter().map(|m| m.force.mae).collect()
}

fn magmoms(runs: &[Metrics]) -> Vec<f64> {
    runs.iter()
        .map(|m| m.magmom.expect("HF test frames carry magmoms").mae)
        .collect()
}

fn multi_fidelity_benefit() -> Outcome {
    let s = study();
    let mut notes = Vec::new();
    for (n, hf_only, mixed) in [
        (20, &s.hf_only_20, &s.mixed_500_20),
        (50, &s.hf_only_50, &s.mixed_500_50),
    ] {
        let (a, b) = (forces(hf_only), forces(mixed));
        let wins = a.iter().zip(&b).filter(|(x, y)| y < x).count();
        let gain = 1.0 - mean(&b) / mean(&a);
        notes.push(format!(
            "n_HF={n}: HF-only {} vs mixed {} eV/Å, {wins}/3 wins, {:.0}% lower",
            fmt(&a),
            fmt(&b),
            100.0 * gain
        ));
        ensure(wins >= 2, || {
            format!(
                "only {wins}/3 seeds improve at n_HF={n}; {}",
                notes.join("; ")
            )
        })?;
        if n == 20 {
            ensure(gain >= 0.10, || {
                format!("mean improvement {:.1}% at n_HF=20", 100.0 * gain)
            })?;
        }
    }
    Ok(notes.join("; "))
}

fn lf_size_trend() -> Outcome {
    let s = study();
    let points = [
        (0, forces(&s.hf_only_50)),
        (200, forces(&s.mixed_200_50)),
        (500, forces(&s.mixed_500_50)),
    ];
    let text = points
        .iter()
        .map(|(n, x)| format!("n_LF={n}: {:.4}±{:.4}", mean(x), half_range(x)))
        .collect::<Vec<_>>()
        .join(", ");
    for w in points.windows(2) {
        let ((n0, a), (n1, b)) = (&w[0], &w[1]);
        ensure(mean(b) - half_range(b) <= mean(a) + half_range(a), || {
            format!("force MAE rises from n_LF={n0} to n_LF={n1}: {text}")
        })?;
    }
    Ok(format!("mean force MAE {text} eV/Å"))
}

fn ablation_harness() -> Outcome {
    let (lf, hf, test) = pool(0);
    let data = ExperimentData {
        lf: &lf[..100],
        hf_train: &hf[..20],
        hf_test: &test,
    };
    let table = ablate(
        data,
        desk(FidelityConfig::all(2)),
        &desk_training(0),
        &SEEDS,
    )
    .unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.variant.label()).collect();
    ensure(table.rows.len() == 10, || {
        format!("{} rows", table.rows.len())
    })?;
    ensure(
        table
            .rows
            .iter()
            .map(|r| r.variant)
            .eq(AblationVariant::ALL),
        || format!("rows {labels:?}"),
    )?;
    ensure(table.rows.iter().all(|r| r.runs.len() == 3), || {
        "each row needs three seeds".into()
    })?;
    let force = |v| table.row(v).unwrap().mean(2);
    let (f, n) = (force(AblationVariant::Full), force(AblationVariant::None));
    let all = table
        .rows
        .iter()
        .map(|r| format!("{} {:.3}", r.variant.label(), r.mean(2)))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(f <= n, || format!("F {f:.4} > N {n:.4} eV/Å; {all}"))?;
    Ok(format!("10 configurations, mean force MAE (eV/Å): {all}"))
}

fn transfer_comparison() -> Outcome {
    let s = study();
    let (mf, tl) = (magmoms(&s.mixed_500_50), magmoms(&s.transfer_500_50));
    let wins = mf.iter().zip(&tl).filter(|(a, b)| a <= b).count();
    let text = format!(
        "magmom MAE multi-fidelity {} vs transfer {} μB",
        fmt(&mf),
        fmt(&tl)
    );
    ensure(wins >= 2, || format!("{wins}/3 seeds; {text}"))?;
    Ok(format!("{wins}/3 seeds; {text}"))
}

fn magmom_from_lf() -> Outcome {
    let s = study();
    let mut notes = Vec::new();
    for (n, hf_only, mixed) in [
        (20, &s.hf_only_20, &s.mixed_500_20),
        (50, &s.hf_only_50, &s.mixed_500_50),
    ] {
        let (a, b) = (mean(&magmoms(hf_only)), mean(&magmoms(mixed)));
        notes.push(format!("n_HF={n}: HF-only {a:.4} vs mixed {b:.4} μB"));
        let ok = if n == 20 { b < a } else { b <= a };
        ensure(ok, || notes.join("; "))?;
    }
    Ok(notes.join("; "))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_mfpot");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        ensure(out.status.success(), || {
            format!("mfpot {args:?}: {}", String::from_utf8_lossy(&out.stderr))
        })
    };
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    run(&[
        "gen-synth",
        "--n-lf",
        "30",
        "--n-hf",
        "20",
        "--seed",
        "16",
        "--template",
        "small",
        "--out",
        &p("data.jsonl"),
    ])?;
    let config = r#"{"model":{"feature_dim":16,"hidden_dim":16,"n_layers":3,"r_atom":4.0,"r_bond":2.8},
        "train":{"epochs":3,"seed":17},"seed":18}"#;
    fs::write(p("config.json"), config).unwrap();
    for out in ["a", "b"] {
        run(&[
            "train",
            "--config",
            &p("config.json"),
            "--data",
            &p("data.jsonl"),
            "--out",
            &p(out),
        ])?;
    }
    let read = |run: &str, file: &str| fs::read(Path::new(&p(run)).join(file)).unwrap();
    let summary = read("a", "summary.json");
    ensure(summary == read("b", "summary.json"), || {
        "summary.json differs between runs".into()
    })?;
    ensure(
        read("a", "checkpoint.json") == read("b", "checkpoint.json"),
        || "checkpoints differ".into(),
    )?;
    let model = Model::load(Path::new(&p("a")).join("checkpoint.json")).unwrap();
    let frames = mfpot::structures::parse_frames(p("data.jsonl"), 2).unwrap();
    ensure(evaluate(&model, &frames).is_ok(), || {
        "checkpoint does not evaluate".into()
    })?;
    Ok(format!(
        "two runs gave byte-identical summary.json ({} bytes) and checkpoints",
        summary.len()
    ))
}

const CRITERIA: [(&str, fn() -> Outcome); 12] = [
    ("derivative consistency", derivative_consistency),
    ("symmetry", symmetry),
    ("fidelity isolation", fidelity_isolation),
    ("neutrality", neutrality),
    ("composition fit", composition_exactness),
    ("overfit", overfit),
    ("multi-fidelity benefit", multi_fidelity_benefit),
    ("low-fidelity size trend", lf_size_trend),
    ("ablation", ablation_harness),
    ("transfer comparison", transfer_comparison),
    ("magnetic moments from low fidelity", magmom_from_lf),
    ("determinism", cli_determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected = |k: usize, name: &str| {
        filters.is_empty()
            || filters
                .iter()
                .any(|f| f.parse() == Ok(k) || name.contains(f.as_str()))
    };
    let mut failures = 0;
    let mut ran = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let k = i + 1;
        if !selected(k, name) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let text = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {text}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {k:>2} {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {k:>2} {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
