//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).

mod common;

use std::time::Instant;

use common::{brute_force_min_assignment, dense_boxes_intersect, rel_err};
use rand::Rng;

use scenefuse::config::RunConfig;
use scenefuse::fusion::{
    bind_attention, bind_deformable, deformable_aggregate, spatial_self_attention,
    temporal_cross_attention, AttentionParams, DeformableParams,
};
use scenefuse::geometry::{boxes_gap, boxes_intersect, Camera, OrientedBox2D};
use scenefuse::infotheory::{
    conditional_mutual_information, interaction_information, mutual_information, Axis,
    JointDistribution,
};
use scenefuse::instance_init::RigFrame;
use scenefuse::losses::{assignment_cost, focal_loss, hungarian_match, LossWeights};
use scenefuse::metrics::{collision_flags, legacy_grid_collision, PlanEvalConfig, WorldTimeline};
use scenefuse::model::{
    evaluate_scenario, fit_anchors, timeline_at, training_loss, world_at, Model, ModelConfig,
    Trainer,
};
use scenefuse::numeric::{finite_difference_grad, Tape, Tensor, Vid};
use scenefuse::planner::{anchor_similarity, feasible, select, TrajectorySet, UtilityWeights};
use scenefuse::simulator::{
    generate_scenario, mine_knowledge, AgentClass, AgentState, AgentTrack, Behavior, GenSpec,
    Scenario,
};
use scenefuse::Result;

const FD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-5;

// ── criterion 1: gradient correctness ────────────────────────────────────

/// Checks one op: reverse-mode gradient of a weighted output sum against
/// central finite differences, for every coordinate of every input.
fn check_op(
    name: &str,
    seed: u64,
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Vid]) -> Result<Vid>,
) -> f64 {
    let mut rng = scenefuse::rng(seed ^ 0x5eed);
    // forward once to size the cotangent
    let mut tape = Tape::new();
    let ids: Vec<Vid> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &ids).expect("op builds");
    let w: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weights = Tensor::new(tape.shape(out).to_vec(), w).unwrap();

    let loss_of = |tape: &mut Tape, out: Vid, weights: &Tensor| -> f64 {
        let wid = tape.constant(weights);
        let prod = tape.mul(out, wid).unwrap();
        let loss = tape.sum(prod);
        tape.value(loss)[0]
    };

    let mut tape = Tape::new();
    let tracked: Vec<Tensor> = inputs.iter().map(|t| t.clone().tracked()).collect();
    let ids: Vec<Vid> = tracked.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &ids).unwrap();
    let wid = tape.constant(&weights);
    let prod = tape.mul(out, wid).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let ad = tape.grad(ids[k]).unwrap().to_vec();
        let mut eval = |x: &Tensor| -> Result<f64> {
            let mut t = Tape::new();
            let mut vids = Vec::new();
            for (j, inp) in inputs.iter().enumerate() {
                vids.push(if j == k { t.leaf(x) } else { t.leaf(inp) });
            }
            let out = build(&mut t, &vids)?;
            Ok(loss_of(&mut t, out, &weights))
        };
        let fd = finite_difference_grad(&mut eval, input, FD_STEP).unwrap();
        for (a, b) in ad.iter().zip(fd.data()) {
            let e = rel_err(*a, *b);
            assert!(e <= GRAD_TOL, "{name} seed {seed}: grad {a} vs fd {b} (rel {e:.2e})");
            worst = worst.max(e);
        }
    }
    worst
}

fn away_from_kinks<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();

    // every exported differentiable operation, 100 seeds each spread
    // across the op list
    for seed in 0..100u64 {
        let mut rng = scenefuse::rng(seed);
        let a23 = away_from_kinks(&mut rng, vec![2, 3]);
        let b23 = away_from_kinks(&mut rng, vec![2, 3]);
        let a34 = away_from_kinks(&mut rng, vec![3, 4]);
        let pos = Tensor::uniform(&mut rng, vec![2, 3], 0.2, 2.0);
        let row = away_from_kinks(&mut rng, vec![3]);
        let col = away_from_kinks(&mut rng, vec![2, 1]);

        check_op("matmul", seed, &[a23.clone(), a34.clone()], &|t, v| t.matmul(v[0], v[1]));
        check_op("transpose", seed, &[a23.clone()], &|t, v| t.transpose(v[0]));
        check_op("add", seed, &[a23.clone(), b23.clone()], &|t, v| t.add(v[0], v[1]));
        check_op("sub", seed, &[a23.clone(), b23.clone()], &|t, v| t.sub(v[0], v[1]));
        check_op("mul", seed, &[a23.clone(), b23.clone()], &|t, v| t.mul(v[0], v[1]));
        check_op("div", seed, &[a23.clone(), pos.clone()], &|t, v| t.div(v[0], v[1]));
        check_op("neg", seed, &[a23.clone()], &|t, v| Ok(t.neg(v[0])));
        check_op("scale", seed, &[a23.clone()], &|t, v| Ok(t.scale(v[0], -1.7)));
        check_op("add_scalar", seed, &[a23.clone()], &|t, v| Ok(t.add_scalar(v[0], 0.9)));
        check_op("relu", seed, &[a23.clone()], &|t, v| Ok(t.relu(v[0])));
        check_op("sigmoid", seed, &[a23.clone()], &|t, v| Ok(t.sigmoid(v[0])));
        check_op("exp", seed, &[a23.clone()], &|t, v| Ok(t.exp(v[0])));
        check_op("ln", seed, &[pos.clone()], &|t, v| Ok(t.ln(v[0])));
        check_op("abs", seed, &[a23.clone()], &|t, v| Ok(t.abs(v[0])));
        check_op("sqrt", seed, &[pos.clone()], &|t, v| Ok(t.sqrt(v[0])));
        check_op("pow_const", seed, &[pos.clone()], &|t, v| Ok(t.pow_const(v[0], 1.7)));
        check_op("max_const", seed, &[a23.clone()], &|t, v| Ok(t.max_const(v[0], 0.05)));
        check_op("softmax0", seed, &[a23.clone()], &|t, v| t.softmax(v[0], 0));
        check_op("softmax1", seed, &[a23.clone()], &|t, v| t.softmax(v[0], 1));
        check_op("sum", seed, &[a23.clone()], &|t, v| Ok(t.sum(v[0])));
        check_op("mean", seed, &[a23.clone()], &|t, v| Ok(t.mean(v[0])));
        check_op("add_row", seed, &[a23.clone(), row.clone()], &|t, v| t.add_row(v[0], v[1]));
        check_op("repeat_row", seed, &[row.clone()], &|t, v| t.repeat_row(v[0], 4));
        check_op("mul_col", seed, &[a23.clone(), col.clone()], &|t, v| {
            t.mul_col_broadcast(v[0], v[1])
        });
        check_op("concat0", seed, &[a23.clone(), b23.clone()], &|t, v| t.concat(v[0], v[1], 0));
        check_op("concat1", seed, &[a23.clone(), b23.clone()], &|t, v| t.concat(v[0], v[1], 1));
        check_op("slice_rows", seed, &[a34.clone()], &|t, v| t.slice_rows(v[0], 1, 3));
        check_op("slice_cols", seed, &[a34.clone()], &|t, v| t.slice_cols(v[0], 1, 3));
        check_op("gather_rows", seed, &[a34.clone()], &|t, v| {
            t.gather_rows(v[0], vec![2, 0, 2])
        });
        check_op("gather_per_row", seed, &[a34.clone()], &|t, v| {
            t.gather_per_row(v[0], vec![3, 0, 1])
        });
        check_op("reshape", seed, &[a34.clone()], &|t, v| t.reshape(v[0], vec![4, 3]));
        check_op("mask_rows", seed, &[a34.clone()], &|t, v| {
            t.mask_rows_fill(v[0], vec![true, false, true], 0.0)
        });
        check_op("visible_recip", seed, &[pos.clone()], &|t, v| Ok(t.visible_recip(v[0])));

        // bilinear sampling w.r.t. coordinates, away from cell boundaries
        let map = std::rc::Rc::new(Tensor::uniform(&mut rng, vec![2, 8, 8], -1.0, 1.0));
        let coords = Tensor::new(
            vec![3, 2],
            (0..6).map(|_| rng.gen_range(0.5..6.3) + 0.133).collect(),
        )
        .unwrap();
        let map_ref = map.clone();
        check_op("bilinear", seed, &[coords], &|t, v| t.bilinear_sample(map_ref.clone(), v[0]));
    }

    // full fusion→loss pipeline at toy sizes: d=8, N=4, M=3, K=4
    let toy_cfg = ModelConfig {
        query_grid: (2, 2, 1),
        half_xy: 20.0,
        ..ModelConfig::default()
    };
    let spec = GenSpec { cars: 2, pedestrians: 1, duration: 11, ..GenSpec::default() };
    let weights = LossWeights::default();
    let mut worst: f64 = 0.0;
    let mut skipped = 0usize;
    let mut probes = 0usize;
    for seed in 0..100u64 {
        let model = Model::new(toy_cfg.clone(), seed).unwrap();
        let scenario = generate_scenario(3000 + seed, &spec).unwrap();
        let frame = 3;
        let (mut tape, total, binding, _) =
            training_loss(&model, &scenario, frame, &weights).unwrap();
        tape.backward(total).unwrap();

        // probe a handful of parameter coordinates per seed; probes that
        // straddle a kink (two step sizes disagree) are resampled — the
        // check holds at non-kink points
        let mut rng = scenefuse::rng(seed ^ 0xabcd);
        let params = model.params();
        let mut checked_here = 0usize;
        let mut attempts = 0usize;
        while checked_here < 6 && attempts < 24 {
            attempts += 1;
            probes += 1;
            let p_idx = rng.gen_range(0..params.len());
            let (ref name, tensor) = params[p_idx];
            let c_idx = rng.gen_range(0..tensor.len());
            let ad = tape.grad(binding.leaf_ids[p_idx]).unwrap()[c_idx];

            let eval = |delta: f64| -> f64 {
                let mut probe = Model::new(toy_cfg.clone(), seed).unwrap();
                {
                    let mut ps = probe.params_mut();
                    ps[p_idx].1.apply_update(|i, v| if i == c_idx { v + delta } else { v });
                }
                let (_, _, _, b) = training_loss(&probe, &scenario, frame, &weights).unwrap();
                b.total
            };
            let fd1 = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let fd2 = (eval(FD_STEP / 2.0) - eval(-FD_STEP / 2.0)) / FD_STEP;
            // smooth points agree across step sizes to O(h²); anything
            // beyond half the assertion tolerance marks a kink
            if (fd1 - fd2).abs() > 0.5 * GRAD_TOL * fd1.abs().max(fd2.abs()).max(1e-2) {
                skipped += 1;
                continue;
            }
            let e = rel_err(ad, fd2);
            assert!(
                e <= GRAD_TOL,
                "pipeline seed {seed} {name}[{c_idx}]: grad {ad} vs fd {fd2} (rel {e:.2e})"
            );
            worst = worst.max(e);
            checked_here += 1;
        }
        assert!(checked_here >= 4, "seed {seed}: too many kink probes skipped");
    }
    assert!(
        (skipped as f64) < 0.1 * probes as f64,
        "{skipped}/{probes} probes skipped as kinks"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient checks took {elapsed:.1} s (budget 60 s)");
    println!(
        "criterion 1: PASS — gradients match finite differences (worst rel err {worst:.2e}, {elapsed:.1} s)"
    );
}

// ── criterion 2: attention normalization ─────────────────────────────────

#[test]
fn criterion_2_attention_weights_are_normalized() {
    let mut checked = 0usize;
    for seed in 0..334u64 {
        // temporal over a random history depth
        let mut rng = scenefuse::rng(seed);
        let d = 4 + (seed % 5) as usize;
        let p = AttentionParams::new(d, &mut rng);
        let k = rng.gen_range(1..6);
        let stack = Tensor::uniform(&mut rng, vec![k, d], -3.0, 3.0);
        let mut tape = Tape::new();
        let bound = bind_attention(&mut tape, &p);
        let sid = tape.leaf(&stack);
        let (_, w) = temporal_cross_attention(&mut tape, sid, &bound, None).unwrap();
        let sum: f64 = tape.value(w).iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "temporal weights sum {sum}");
        assert!(tape.value(w).iter().all(|&v| v >= 0.0));
        checked += 1;
    }
    for seed in 0..333u64 {
        let mut rng = scenefuse::rng(seed ^ 0x11);
        let d = 4 + (seed % 4) as usize;
        let n = rng.gen_range(1..7);
        let p = AttentionParams::new(d, &mut rng);
        let frame = Tensor::uniform(&mut rng, vec![n, d], -3.0, 3.0);
        let mut tape = Tape::new();
        let bound = bind_attention(&mut tape, &p);
        let fid = tape.leaf(&frame);
        let (_, w) = spatial_self_attention(&mut tape, fid, &bound).unwrap();
        for i in 0..n {
            let sum: f64 = tape.value(w)[i * n..(i + 1) * n].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "spatial weights sum {sum}");
        }
        checked += 1;
    }
    for seed in 0..333u64 {
        let mut rng = scenefuse::rng(seed ^ 0x22);
        let (d, c, views, k) = (6, 3, 2, 3);
        let params = DeformableParams::new(d, c, views, k, &mut rng).unwrap();
        let cams: Vec<Camera> = (0..views)
            .map(|m| Camera::looking([0.0, 0.0, 0.0], 0.4 * m as f64, 8.0, 8.0, 8.0, 8.0, 16, 16))
            .collect();
        let rig = RigFrame {
            cameras: cams,
            features: (0..views)
                .map(|_| std::rc::Rc::new(Tensor::uniform(&mut rng, vec![c, 16, 16], -1.0, 1.0)))
                .collect(),
            depths: (0..views)
                .map(|_| std::rc::Rc::new(Tensor::ones(vec![1, 16, 16])))
                .collect(),
        };
        let n = rng.gen_range(1..4);
        let feats = Tensor::uniform(&mut rng, vec![n, d], -1.0, 1.0);
        let positions = Tensor::uniform(&mut rng, vec![n, 3], 2.0, 10.0);
        let mut tape = Tape::new();
        let bound = bind_deformable(&mut tape, &params);
        let fid = tape.leaf(&feats);
        let pid = tape.leaf(&positions);
        let (_, w) = deformable_aggregate(&mut tape, fid, pid, &rig, &params, &bound).unwrap();
        for i in 0..n {
            let cols = views * k;
            let sum: f64 = tape.value(w)[i * cols..(i + 1) * cols].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "deformable weights sum {sum}");
        }
        checked += 1;
    }
    assert_eq!(checked, 1000);
    println!("criterion 2: PASS — all attention weight vectors sum to 1 over {checked} passes");
}

// ── criterion 3: brute-force oracle equivalence ──────────────────────────

#[test]
fn criterion_3_brute_force_oracles_agree() {
    // Hungarian vs exhaustive permutations, sizes up to 6×6
    let mut rng = scenefuse::rng(42);
    for seed in 0..100u64 {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(rows..=6);
        let mut r = scenefuse::rng(9000 + seed);
        let cost = Tensor::uniform(&mut r, vec![rows, cols], 0.0, 10.0);
        let a = hungarian_match(&cost).unwrap();
        let got = assignment_cost(&cost, &a);
        let want = brute_force_min_assignment(&cost);
        assert!((got - want).abs() <= 1e-9, "hungarian {got} vs brute force {want}");
    }

    // planner select vs exhaustive feasible-max over 1000 seeds
    let w = UtilityWeights::default();
    let mut fallbacks = 0usize;
    for seed in 0..1000u64 {
        let mut rng = scenefuse::rng(7000 + seed);
        let mut world = scenefuse::planner::WorldModel {
            drivable: vec![vec![[-60.0, -60.0], [60.0, -60.0], [60.0, 60.0], [-60.0, 60.0]]],
            static_obstacles: (0..rng.gen_range(0..3))
                .map(|_| {
                    OrientedBox2D::new(
                        [rng.gen_range(0.0..9.0), rng.gen_range(-4.0..4.0)],
                        [rng.gen_range(0.3..1.2), rng.gen_range(0.3..1.2)],
                        rng.gen_range(-1.5..1.5),
                    )
                })
                .collect(),
            dynamic: Vec::new(),
            route: (0..10).map(|k| [k as f64 * 3.0, 0.0]).collect(),
            ego_pose: ([0.0, 0.0], 0.0),
            ego_half_extents: [2.04, 0.92],
        };
        if rng.gen_bool(0.1) {
            // occasionally wall everything off to exercise the fallback
            world.drivable = vec![vec![[-1.0, -1.0], [-0.9, -1.0], [-0.9, 1.0], [-1.0, 1.0]]];
        }
        let modes: Vec<Vec<[f64; 2]>> = (0..6)
            .map(|m| {
                let bend = (m as f64 - 2.5) * rng.gen_range(0.2..0.8);
                (1..=4).map(|k| [k as f64 * 1.2, bend * k as f64 * 0.4]).collect()
            })
            .collect();
        let mut set = TrajectorySet::new(modes, vec![0.0; 6]).unwrap();
        let sel = select(&mut set, &world, &w).unwrap();

        // oracle: exhaustive max over the feasible set, lowest index wins
        let mut best: Option<usize> = None;
        for i in 0..6 {
            if !sel.feasible[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if sel.utilities[i] > sel.utilities[b] => Some(i),
                other => other,
            };
        }
        match best {
            Some(b) => {
                assert!(!sel.fallback);
                assert_eq!(sel.index, b, "seed {seed}");
            }
            None => {
                assert!(sel.fallback);
                fallbacks += 1;
                let min_risk = (0..6)
                    .min_by(|&a, &b| sel.risks[a].partial_cmp(&sel.risks[b]).unwrap())
                    .unwrap();
                assert_eq!(sel.risks[sel.index], sel.risks[min_risk]);
            }
        }
    }
    assert!(fallbacks > 0, "the fallback path was never exercised");

    // oriented-box intersection vs the dense-sampling oracle
    let mut rng = scenefuse::rng(31);
    let mut tested = 0usize;
    let mut agree = 0usize;
    let mut pairs = 0usize;
    while pairs < 10_000 {
        pairs += 1;
        let a = OrientedBox2D::new(
            [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            [rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5)],
            rng.gen_range(-3.1..3.1),
        );
        let b = OrientedBox2D::new(
            [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            [rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5)],
            rng.gen_range(-3.1..3.1),
        );
        if boxes_gap(&a, &b).abs() <= 1e-3 {
            continue; // near-touching cases excuse the discretized oracle
        }
        tested += 1;
        let got = boxes_intersect(&a, &b);
        let oracle = dense_boxes_intersect(&a, &b, 1000);
        if got == oracle {
            agree += 1;
        }
    }
    let rate = agree as f64 / tested as f64;
    assert!(rate >= 0.999, "oracle agreement {rate:.5} below 99.9% ({agree}/{tested})");
    println!(
        "criterion 3: PASS — hungarian, select and box oracles agree (box agreement {:.3}% on {} pairs)",
        100.0 * rate,
        tested
    );
}

// ── criterion 4: corrected collision protocol demonstrations ─────────────

#[test]
fn criterion_4_corrected_protocol_beats_legacy_grid() {
    let cfg = PlanEvalConfig::default();
    let plan: Vec<[f64; 2]> = (1..=6).map(|k| [k as f64, 0.0]).collect();

    // shipped small-obstacle scene: 0.3 m wide, between 0.5 m cell centers
    let small = WorldTimeline {
        static_obstacles: vec![OrientedBox2D::new([3.0, 0.5], [0.15, 0.15], 0.0)],
        dynamic: Vec::new(),
    };
    let corrected = collision_flags(&plan, ([0.0, 0.0], 0.0), &small, &cfg, true).unwrap();
    let legacy = legacy_grid_collision(&plan, ([0.0, 0.0], 0.0), &small, &cfg, 0.5).unwrap();
    assert!(corrected.iter().any(|&f| f), "corrected protocol must flag the contact");
    assert!(legacy.iter().all(|&f| !f), "0.5 m grid must miss the small obstacle");

    // shipped rotating-ego scene: verdict flips when yaw estimation is off
    let turn: Vec<[f64; 2]> = (1..=6)
        .map(|k| {
            let a = k as f64 / 6.0 * std::f64::consts::FRAC_PI_2;
            [4.0 * a.sin(), 4.0 * (1.0 - a.cos())]
        })
        .collect();
    let last = turn[5];
    let beside = WorldTimeline {
        static_obstacles: vec![OrientedBox2D::new([last[0], last[1] + 1.5], [0.2, 0.2], 0.0)],
        dynamic: Vec::new(),
    };
    let with_yaw = collision_flags(&turn, ([0.0, 0.0], 0.0), &beside, &cfg, true).unwrap();
    let without_yaw = collision_flags(&turn, ([0.0, 0.0], 0.0), &beside, &cfg, false).unwrap();
    assert!(with_yaw.iter().any(|&f| f));
    assert!(without_yaw.iter().all(|&f| !f));
    println!("criterion 4: PASS — small-obstacle and rotating-ego scenes separate the protocols");
}

// ── criterion 5: closed-form checks ──────────────────────────────────────

#[test]
fn criterion_5_closed_forms_hold() {
    // anchor similarity
    let traj: Vec<[f64; 2]> = (1..=5).map(|k| [k as f64, 0.3 * k as f64]).collect();
    assert!((anchor_similarity(&traj, &traj).unwrap() - 1.0).abs() <= 1e-12);
    let c = 0.8;
    let offset: Vec<[f64; 2]> = traj.iter().map(|p| [p[0] + c, p[1]]).collect();
    assert!((anchor_similarity(&traj, &offset).unwrap() - (-c * c).exp()).abs() <= 1e-12);

    // focal loss closed form
    let p = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
    let focal = focal_loss(&p, 0, 0.25, 2.0).unwrap();
    assert!((focal - 0.25 * 0.25 * 2.0_f64.ln()).abs() <= 1e-12);

    // XOR triple interaction information
    let mut table = vec![0.0; 8];
    for i in 0..2usize {
        for t in 0..2usize {
            let b = i ^ t;
            table[(b * 2 + i) * 2 + t] = 0.25;
        }
    }
    let xor = JointDistribution::new([2, 2, 2], table).unwrap();
    assert!((interaction_information(&xor).unwrap() + 2.0_f64.ln()).abs() <= 1e-12);

    // decomposition identity on 100 random tables
    for seed in 0..100u64 {
        let mut rng = scenefuse::rng(400 + seed);
        let arities = [2 + (seed % 2) as usize, 2 + (seed % 3) as usize, 2];
        let n: usize = arities.iter().product();
        let counts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let p = JointDistribution::from_counts(arities, counts).unwrap();
        let joint = mutual_information(&p, &[Axis::I, Axis::T]).unwrap();
        let vision = mutual_information(&p, &[Axis::I]).unwrap();
        let extra = conditional_mutual_information(&p, Axis::T, Axis::I).unwrap();
        assert!((joint - vision - extra).abs() <= 1e-12, "decomposition failed on seed {seed}");
    }
    println!("criterion 5: PASS — similarity, focal, XOR and decomposition identities hold");
}

// ── criterion 6: toy end-to-end training ─────────────────────────────────

fn mean_total_loss(model: &Model, scenarios: &[Scenario], weights: &LossWeights) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in scenarios {
        for f in model.cfg.history..s.duration - model.cfg.plan_horizon {
            let (_, _, _, b) = training_loss(model, s, f, weights).unwrap();
            sum += b.total;
            count += 1;
        }
    }
    sum / count as f64
}

/// Prediction quality with the current agent state given (the trained
/// objective): modes decoded in the ground-truth agent frame.
fn mean_min_ade(model: &Model, scenarios: &[Scenario]) -> f64 {
    let w = UtilityWeights::default();
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in scenarios {
        let frame = model.cfg.history;
        let eval = evaluate_scenario(model, s, frame, &w).unwrap();
        for (modes, gt) in &eval.agent_frame_predictions {
            let m = scenefuse::metrics::min_ade_fde(modes, gt).unwrap();
            sum += m.min_ade;
            count += 1;
        }
    }
    assert!(count > 0, "no agent predictions to score");
    sum / count as f64
}

#[test]
fn criterion_6_toy_training_end_to_end() {
    let start = Instant::now();
    let spec = GenSpec::default();
    let train: Vec<Scenario> =
        (0..25).map(|i| generate_scenario(1000 + i, &spec).unwrap()).collect();
    let held_out: Vec<Scenario> =
        (0..10).map(|i| generate_scenario(2000 + i, &spec).unwrap()).collect();

    // the untrained reference keeps its placeholder anchors; anchor
    // clustering is part of training
    let model = Model::new(ModelConfig::default(), 7).unwrap();
    let weights = LossWeights::default();
    let untrained_ade = mean_min_ade(&model, &held_out);

    let mut model = model;
    fit_anchors(&mut model, &train, 7).unwrap();
    let initial = mean_total_loss(&model, &train, &weights);

    let schedule: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            (model.cfg.history..s.duration - model.cfg.plan_horizon).map(move |f| (si, f))
        })
        .collect();
    let mut trainer = Trainer::new(model, weights, 1e-2);
    for step in 0..200 {
        let batch: Vec<(&Scenario, usize)> = (0..4)
            .map(|k| {
                let (si, f) = schedule[(step * 4 + k) % schedule.len()];
                (&train[si], f)
            })
            .collect();
        trainer.step_batch(&batch).unwrap();
    }
    let model = trainer.into_model();

    let final_loss = mean_total_loss(&model, &train, &weights);
    let ratio = final_loss / initial;
    assert!(ratio < 0.5, "loss ratio {ratio:.3} (initial {initial:.2}, final {final_loss:.2})");

    let trained_ade = mean_min_ade(&model, &held_out);
    let ade_ratio = trained_ade / untrained_ade;
    assert!(
        ade_ratio < 0.5,
        "minADE ratio {ade_ratio:.3} (untrained {untrained_ade:.2} m, trained {trained_ade:.2} m)"
    );

    // selected plans collide nowhere a feasible collision-free anchor exists
    let w = UtilityWeights::default();
    let eval_cfg = PlanEvalConfig::default();
    let mut checked_scenes = 0usize;
    for s in &held_out {
        let frame = model.cfg.history;
        let world = world_at(s, frame, model.cfg.plan_horizon);
        let timeline = timeline_at(s, frame, model.cfg.plan_horizon);
        let admits = model.plan_anchors.anchors.iter().any(|anchor| {
            feasible(anchor, &world).unwrap()
                && collision_flags(anchor, s.ego_pose(frame), &timeline, &eval_cfg, true)
                    .unwrap()
                    .iter()
                    .all(|&f| !f)
        });
        if !admits {
            continue;
        }
        checked_scenes += 1;
        let eval = evaluate_scenario(&model, s, frame, &w).unwrap();
        let plan = &eval.ego_plan.modes[eval.selection.index];
        let flags =
            collision_flags(plan, s.ego_pose(frame), &timeline, &eval_cfg, true).unwrap();
        assert!(
            flags.iter().all(|&f| !f),
            "selected plan collides in {} although a safe anchor exists",
            s.id
        );
    }
    assert!(checked_scenes > 0, "no held-out scene admitted a safe anchor");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "toy training took {elapsed:.0} s (budget 600 s)");
    println!(
        "criterion 6: PASS — loss ratio {ratio:.3}, minADE ratio {ade_ratio:.3}, {checked_scenes} safe scenes collision-free ({elapsed:.0} s)"
    );
}

// ── criterion 7: knowledge-mining rules ──────────────────────────────────

#[test]
fn criterion_7_mining_rules_on_scripted_scene() {
    let rig = scenefuse::simulator::RigConfig::desk(8);
    let still = |x: f64, y: f64| AgentState { position: [x, y, 0.75], yaw: 0.0, speed: 0.0 };
    let car = |x: f64, y: f64, lane: Option<usize>| AgentTrack {
        class: AgentClass::Car,
        lane,
        behavior: Behavior::Straight,
        states: vec![still(x, y); 2],
    };
    let scenario = Scenario {
        id: "scripted".into(),
        seed: 0,
        duration: 2,
        ego_behavior: Behavior::Straight,
        ego: vec![AgentState { position: [0.0, 0.0, 0.0], yaw: 0.0, speed: 0.0 }; 2],
        route: vec![[0.0, 0.0], [1.0, 0.0]],
        agents: vec![
            car(10.0, 5.0, Some(1)),  // 10 m ahead, 5 m lateral
            car(28.0, 0.0, Some(0)),  // 28 m ahead, same lane as the leader below
            car(100.0, 0.0, Some(0)), // 100 m ahead: outside every bound
        ],
        map: scenefuse::simulator::MapData {
            drivable: Vec::new(),
            lanes: Vec::new(),
            signs: vec![[25.0, 2.0]],
            lights: vec![[45.0, 0.0]],
        },
        rig,
        annotations: Vec::new(),
    };
    let mined = mine_knowledge(&scenario, 0);
    assert_eq!(mined.dynamic, vec![0, 1], "dynamic selections");
    assert_eq!(mined.signs, vec![0], "sign at 25 m ahead is selected");
    assert!(mined.lights.is_empty(), "light at 45 m exceeds the 30 m bound");
    println!("criterion 7: PASS — scripted scene selections match the mining rules exactly");
}

// ── criterion 8: mode-count ablation harness ─────────────────────────────

#[test]
fn criterion_8_mode_ablation_harness() {
    let start = Instant::now();
    let root = std::env::temp_dir().join("scenefuse_accept_ablate");
    let _ = std::fs::remove_dir_all(&root);
    let cfg = RunConfig {
        seed: 5,
        scenario_dir: root.join("scenarios"),
        params_path: root.join("model.omsk"),
        out_dir: root.join("out"),
        scenario_count: 25,
        ..RunConfig::default()
    };
    scenefuse::cli::cmd_generate(&cfg).unwrap();
    let (path, table) = scenefuse::cli::cmd_ablate_modes(&cfg, &[1, 2, 3, 4, 5, 6, 10]).unwrap();
    assert!(path.exists());
    let lines: Vec<&str> = table.trim_end().lines().collect();
    assert_eq!(lines.len(), 8, "header plus seven mode counts");
    assert_eq!(
        lines[0],
        "mode_count,l2_1s,l2_2s,l2_3s,l2_avg,cr_1s,cr_2s,cr_3s,cr_avg"
    );
    for (row, &m) in lines[1..].iter().zip(&[1usize, 2, 3, 4, 5, 6, 10]) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 9, "row schema has exactly 9 columns");
        assert_eq!(cols[0], m.to_string());
        for v in &cols[1..] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "ablation took {elapsed:.0} s (budget 1800 s)");
    println!("criterion 8: PASS — ablation table structure matches ({elapsed:.0} s)");
}

// ── criterion 9: determinism and serialization ───────────────────────────

#[test]
fn criterion_9_determinism_and_serialization() {
    let root = std::env::temp_dir().join("scenefuse_accept_determinism");
    let _ = std::fs::remove_dir_all(&root);
    let cfg = RunConfig {
        seed: 77,
        scenario_dir: root.join("scenarios"),
        params_path: root.join("model.omsk"),
        out_dir: root.join("out"),
        scenario_count: 4,
        train_steps: 10,
        ..RunConfig::default()
    };
    scenefuse::cli::cmd_generate(&cfg).unwrap();
    scenefuse::cli::cmd_train(&cfg).unwrap();

    // identical (config, seed) reproduce byte-identical CSV bodies
    let a = scenefuse::cli::cmd_eval(&cfg).unwrap();
    let b = scenefuse::cli::cmd_eval(&cfg).unwrap();
    assert_eq!(a.csv, b.csv);
    let curve_a = std::fs::read(cfg.out_dir.join("loss_curve.csv")).unwrap();
    scenefuse::cli::cmd_train(&cfg).unwrap();
    let curve_b = std::fs::read(cfg.out_dir.join("loss_curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b);

    // parameter container round-trips bit-exactly
    let first = std::fs::read(&cfg.params_path).unwrap();
    let model = Model::load(cfg.model_config(), cfg.seed, &cfg.params_path).unwrap();
    let copy = cfg.out_dir.join("model_copy.omsk");
    model.save(&copy).unwrap();
    let second = std::fs::read(&copy).unwrap();
    assert_eq!(first, second, "save→load→save must be bit-exact");
    println!("criterion 9: PASS — byte-identical outputs and bit-exact parameter round-trip");
}
